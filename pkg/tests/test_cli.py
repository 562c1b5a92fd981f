import json
from pathlib import Path

import numpy as np
import pytest

from spde_reflect.cli import (
    ConfigError, parse_config, config_hash, run, main,
    build_space, build_model, build_sim,
)


MINIMAL = """
[model]
family = porous
r = 2.0
"""

SMALL_RUN = """
[space]
n_modes = 8
gamma = 2.0
q_decay = 0.75

[model]
family = porous
r = 2.0

[coupling]
n = 20

[sim]
dt = 5e-4
horizon = 0.1
n_paths = 128
master_seed = 404
checkpoints = 0, 0.02, 0.05, 0.1
x0 = 1.2
y0 = -1.2

[experiments]
which = survival, lemma31, supermartingale, chain
lemma31_t = 0.05

[conditions]
which = meanvalue, a1prime
samples = 1000
mv_samples = 20000
kappa = 8.0
"""


def test_parse_minimal_fills_defaults():
    cfg = parse_config(MINIMAL)
    assert cfg["space"]["n_modes"] == 16
    assert cfg["sim"]["dt"] == 1e-4
    assert cfg["model"]["psi_scale"] == 1.0
    assert cfg["output"]["directory"] == "results"
    assert cfg["experiments"]["which"] == ()


def test_parse_missing_required():
    with pytest.raises(ConfigError, match="family"):
        parse_config("[space]\nn_modes = 8\n")


def test_parse_duplicate_key():
    text = MINIMAL + "\n[sim]\ndt = 1e-3\ndt = 1e-4\n"
    with pytest.raises(ConfigError, match="duplicate key"):
        parse_config(text)


def test_parse_unknown_key_and_section():
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config(MINIMAL + "\n[sim]\nwibble = 3\n")
    with pytest.raises(ConfigError, match="unknown section"):
        parse_config(MINIMAL + "\n[nonsense]\n")


def test_parse_line_numbers_reported():
    text = "[model]\nfamily = porous\nr = 2.0\nnot a kv line\n"
    with pytest.raises(ConfigError, match="line 4"):
        parse_config(text)


def test_parse_bad_value_type():
    with pytest.raises(ConfigError, match="bad value"):
        parse_config(MINIMAL + "\n[sim]\nn_paths = hello\n")


def test_cross_field_kappa_rule():
    text = MINIMAL + "\n[conditions]\nwhich = a1prime\nkappa = 0.5\n"
    with pytest.raises(ConfigError, match="kappa > r - 1"):
        parse_config(text)


def test_cross_field_family_rules():
    with pytest.raises(ConfigError, match="r >= 1"):
        parse_config("[model]\nfamily = porous\nr = 0.5\n")
    with pytest.raises(ConfigError, match="r in \\(0, 1\\)"):
        parse_config("[model]\nfamily = fastdiff\nr = 1.5\n")
    with pytest.raises(ConfigError, match="p >= 2"):
        parse_config("[model]\nfamily = plaplace\np = 1.0\n")
    with pytest.raises(ConfigError, match="gamma = 1"):
        parse_config("[model]\nfamily = plaplace\np = 2.0\n"
                     "[space]\ngamma = 2.0\n")


def test_cross_field_glue_rule():
    with pytest.raises(ConfigError, match="glue_eps"):
        parse_config(MINIMAL + "\n[coupling]\nn = 10\nglue_eps = 0.2\n")


def test_config_hash_stable_and_sensitive():
    a = config_hash(parse_config(MINIMAL))
    b = config_hash(parse_config(MINIMAL + "\n# a comment\n"))
    assert a == b
    c = config_hash(parse_config(MINIMAL + "\n[sim]\ndt = 2e-4\n"))
    assert a != c
    # writing a default explicitly does not change the canonical hash
    d = config_hash(parse_config(MINIMAL + "\n[space]\nn_modes = 16\n"))
    assert a == d


def test_builders(porous_space):
    cfg = parse_config(SMALL_RUN)
    sp = build_space(cfg)
    assert sp.n_modes == 8 and sp.weighted
    model = build_model(cfg)
    assert model.family.kind == "porous"
    sim = build_sim(cfg)
    assert sim.checkpoint_times == (0.0, 0.02, 0.05, 0.1)


def test_run_happy_path(tmp_path):
    cfg = parse_config(SMALL_RUN)
    code = run(cfg, out_dir=tmp_path, threads=1)
    assert code == 0
    dest = tmp_path / config_hash(cfg)
    summary = json.loads((dest / "summary.json").read_text())
    assert summary["failed_checks"] == []
    assert summary["results"]["lemma31"]["ok"]
    assert (dest / "survival.csv").exists()
    assert (dest / "manifest.json").exists()
    header = (dest / "survival.csv").read_text().splitlines()[0]
    assert header == "time,estimate,std_err"


def test_run_repeat_is_byte_identical(tmp_path):
    cfg = parse_config(SMALL_RUN)
    run(cfg, out_dir=tmp_path / "a", threads=1)
    run(cfg, out_dir=tmp_path / "b", threads=2)
    h = config_hash(cfg)
    for name in ("summary.json", "survival.csv", "supermartingale.csv"):
        fa = (tmp_path / "a" / h / name).read_bytes()
        fb = (tmp_path / "b" / h / name).read_bytes()
        assert fa == fb, name


def test_run_negative_control_exits_nonzero(tmp_path):
    # a deliberately wrong K' makes the escape bound fail on the vacuous
    # grid point (delta below the initial distance has probability one)
    text = SMALL_RUN.replace("lemma31_t = 0.05",
                             "lemma31_t = 0.1\nlemma31_kprime = -10\n"
                             "lemma31_deltas = 0.5, 2, 4")
    cfg = parse_config(text)
    code = run(cfg, out_dir=tmp_path, threads=1)
    assert code == 1
    dest = tmp_path / config_hash(cfg)
    failures = json.loads((dest / "failures.json").read_text())
    assert {"check": "lemma31", "flag": "ok"} in failures["failed_checks"]


def test_seed_override_changes_hash(tmp_path):
    cfg = parse_config(SMALL_RUN)
    base = config_hash(cfg)
    code = run(cfg, out_dir=tmp_path, seed=777, threads=1)
    assert code == 0
    dirs = [p.name for p in tmp_path.iterdir()]
    assert base not in dirs and len(dirs) == 1


def _write(tmp_path, text):
    p = tmp_path / "cfg.cfg"
    p.write_text(text)
    return str(p)


def test_main_run_subcommand(tmp_path, capsys):
    path = _write(tmp_path, SMALL_RUN)
    code = main(["run", "--config", path, "--out", str(tmp_path / "out"),
                 "--threads", "1"])
    assert code == 0
    assert "ok" in capsys.readouterr().out


def test_main_check_conditions(tmp_path, capsys):
    path = _write(tmp_path, SMALL_RUN)
    code = main(["check-conditions", "--config", path])
    assert code == 0
    out = capsys.readouterr().out
    assert "a1prime" in out and "pass" in out


def test_main_oracle(tmp_path, capsys):
    path = _write(tmp_path, SMALL_RUN)
    assert main(["oracle", "--config", path]) == 0
    assert "mode1" in capsys.readouterr().out


def test_main_couple_and_fit_rate(tmp_path, capsys):
    path = _write(tmp_path, SMALL_RUN)
    assert main(["couple", "--config", path, "--threads", "1",
                 "--out", str(tmp_path / "c")]) == 0
    assert (tmp_path / "c" / "survival.csv").exists()
    paths_csv = (tmp_path / "c" / "paths.csv").read_text().splitlines()
    assert paths_csv[0] == "path,time,x_mode1,h_dist,q_dist,tau_n,glued"
    assert len(paths_csv) == 1 + 128 * 4   # one row per (path, checkpoint)
    assert main(["fit-rate", "--config", path, "--threads", "1"]) == 0
    assert "decay rate" in capsys.readouterr().out


def test_run_dump_paths_and_aggregate(tmp_path):
    cfg = parse_config(SMALL_RUN + "\n[output]\ndump_paths = true\n")
    assert run(cfg, out_dir=tmp_path, threads=1) == 0
    dest = tmp_path / config_hash(cfg)
    assert (dest / "paths.csv").exists()
    summary = json.loads((dest / "summary.json").read_text())
    agg = summary["experiment_result"]
    assert agg["config_hash"] == config_hash(cfg)
    for name, ser in agg["estimates"].items():
        assert len(ser["value"]) == len(ser["std_err"]) == len(ser["grid"])
    assert agg["pass_flags"]["lemma31"] is True


def test_main_config_error_exit_code(tmp_path, capsys):
    path = _write(tmp_path, "[model]\nfamily = porous\nr = 0.1\n")
    assert main(["run", "--config", path]) == 2
    assert "config error" in capsys.readouterr().err
