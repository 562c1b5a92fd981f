import numpy as np
import pytest

from spde_reflect import make_space, h_norm
from spde_reflect.models import ModelSpec, Porous, PLaplace
from spde_reflect.coupling import CouplingParams
from spde_reflect.integrator import (
    SimConfig, StepOverflow, gen_noise, noise_block, step_single,
    step_coupled, make_coupling_state, run_paths, BLOCK_ROWS,
)
from conftest import e_k


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(dt=0.2, horizon=0.1, n_paths=1, master_seed=1)
    with pytest.raises(ValueError):
        SimConfig(dt=0.01, horizon=0.1, n_paths=1, master_seed=1,
                  checkpoint_times=(0.2,))
    with pytest.raises(ValueError):
        SimConfig(dt=0.01, horizon=0.1, n_paths=1, master_seed=1, scheme="ha")


def test_noise_deterministic():
    a = gen_noise(42, 3, 10, 8, 1e-3)
    b = gen_noise(42, 3, 10, 8, 1e-3)
    np.testing.assert_array_equal(a, b)
    c = gen_noise(43, 3, 10, 8, 1e-3)
    assert np.any(a != c)
    d = gen_noise(42, 4, 10, 8, 1e-3)
    assert np.any(a != d)


def test_noise_path_purity_across_batch_sizes():
    # path p's draws do not depend on how many paths are requested
    small = gen_noise(42, 0, 3, 8, 1e-3)
    large = gen_noise(42, 0, 2 * BLOCK_ROWS + 7, 8, 1e-3)
    np.testing.assert_array_equal(small, large[:, :3])
    # and a window can be generated standalone
    window = gen_noise(42, 0, 5, 8, 1e-3, path_lo=BLOCK_ROWS - 2)
    np.testing.assert_array_equal(window, large[:, BLOCK_ROWS - 2:BLOCK_ROWS + 3])


def test_noise_moments_and_independence():
    dt = 0.25
    draws = gen_noise(7, 0, 2_000, 500, dt)   # 10^6 per channel
    flat = draws.reshape(3, -1)
    n = flat.shape[1]
    bound = 4.0 / np.sqrt(n) * np.sqrt(dt)
    assert np.all(np.abs(flat.mean(axis=1)) < bound)
    assert np.all(np.abs(flat.var(axis=1) / dt - 1.0) < 0.01)
    for a in range(3):
        for b in range(a + 1, 3):
            corr = np.corrcoef(flat[a], flat[b])[0, 1]
            assert abs(corr) < 4e-3


def test_block_rows_fixed_contract():
    # the determinism contract pins the block layout
    assert BLOCK_ROWS == 256
    blk = noise_block(1, 2, 3, 4, 10, 6)
    assert blk.shape == (10, 6)


def test_step_single_deterministic_drift(porous_space, porous_linear):
    dt = 1e-3
    cfg = SimConfig(dt=dt, horizon=1.0, n_paths=1, master_seed=0,
                    scheme="explicit")
    z = np.zeros(16)
    out = step_single(porous_space, porous_linear, cfg, e_k(16, 1), 0.0, 0,
                      noise=(z, z))
    np.testing.assert_allclose(out, (1.0 - np.pi ** 2 * dt) * e_k(16, 1),
                               atol=1e-14)
    cfg2 = SimConfig(dt=dt, horizon=1.0, n_paths=1, master_seed=0,
                     scheme="semi_implicit")
    out2 = step_single(porous_space, porous_linear, cfg2, e_k(16, 1), 0.0, 0,
                       noise=(z, z))
    np.testing.assert_allclose(out2, np.exp(-np.pi ** 2 * dt) * e_k(16, 1),
                               atol=1e-14)


def test_step_single_overflow(porous_space):
    m = ModelSpec(Porous(r=3.0))
    cfg = SimConfig(dt=1e-3, horizon=1.0, n_paths=1, master_seed=0,
                    scheme="explicit")
    with pytest.raises(StepOverflow):
        x = np.full(16, 1e160)
        step_single(porous_space, m, cfg, x, 0.0, 0,
                    noise=(np.zeros(16), np.zeros(16)))


def test_ou_variance_oracle(porous_space, porous_linear):
    # module-level integration oracle at reduced path count; the acceptance
    # suite pins the full configuration
    t = 0.1
    cfg = SimConfig(dt=1e-4, horizon=t, n_paths=4000, master_seed=31415,
                    checkpoint_times=(0.0, t))
    rec = run_paths(porous_space, porous_linear, None, cfg, "single",
                    x0=np.zeros(16), threads=1)
    c1 = rec.x_coeffs[:, 1, 0] / np.pi      # H-mode coordinate
    target = (1.0 - np.exp(-2.0 * np.pi ** 2 * t)) / (2.0 * np.pi ** 2)
    se = target * np.sqrt(2.0 / (cfg.n_paths - 1))
    assert abs(np.var(c1, ddof=1) - target) < 3.0 * se


def test_strong_convergence_order():
    # fixed Brownian refinement: coarse increments are sums of fine ones
    sp = make_space(8, 1.0, weighted=True, q_decay=0.75)
    m = ModelSpec(Porous(r=2.0))
    horizon = 0.05
    levels = [4e-4, 2e-4, 1e-4]
    ref_dt = 2.5e-5
    gen = np.random.default_rng(77)
    n_fine = int(round(horizon / ref_dt))
    fine = gen.standard_normal((n_fine, 8)) * np.sqrt(ref_dt)
    x0 = e_k(8, 1, 1.0)

    def integrate(dt):
        cfg = SimConfig(dt=dt, horizon=horizon, n_paths=1, master_seed=0,
                        scheme="semi_implicit")
        stride = int(round(dt / ref_dt))
        x = x0[None, :]
        steps = int(round(horizon / dt))
        for k in range(steps):
            inc = fine[k * stride:(k + 1) * stride].sum(axis=0)[None, :]
            x = step_single(sp, m, cfg, x, k * dt, k,
                            noise=(np.zeros((1, 8)), inc))
        return x[0]

    ref = integrate(ref_dt)
    errs = [h_norm(sp, integrate(dt) - ref) for dt in levels]
    assert errs[0] > errs[1] > errs[2]
    order = np.log2(errs[0] / errs[2]) / 2.0
    assert order >= 0.5


def test_coupled_glued_from_start(porous_space, porous_linear):
    params = CouplingParams(n=5)
    cfg = SimConfig(dt=1e-3, horizon=0.01, n_paths=1, master_seed=5,
                    checkpoint_times=(0.0, 0.01))
    x0 = e_k(16, 1, 0.3)
    st = make_coupling_state(porous_space, params, x0, x0.copy())
    assert st.coupled.all()
    assert st.tau_n[0] == 0.0 and st.t_n[0] == 0.0
    for k in range(10):
        st = step_coupled(porous_space, porous_linear, params, cfg, st)
        np.testing.assert_array_equal(st.x, st.y)


def test_coupled_synchronous_noise_cancels(porous_space, porous_linear):
    # below the reflection band with B = 0 the difference is deterministic
    params = CouplingParams(n=1)
    dt = 1e-3
    cfg = SimConfig(dt=dt, horizon=0.1, n_paths=1, master_seed=6)
    eps = 0.01
    x0 = e_k(16, 1, eps * np.pi)    # H-distance eps, far below 1/2
    st = make_coupling_state(porous_space, params, x0, np.zeros(16))
    for k in range(100):
        st = step_coupled(porous_space, porous_linear, params, cfg, st)
    # linear contraction of the difference: eps * exp(-pi^2 t)
    expected = eps * np.exp(-np.pi ** 2 * 0.1)
    got = float(h_norm(porous_space, st.x - st.y)[0])
    assert got == pytest.approx(expected, rel=1e-9)


def test_run_paths_driver_transparency(porous_space, porous_linear):
    params = CouplingParams(n=2)
    cfg = SimConfig(dt=1e-3, horizon=0.02, n_paths=1, master_seed=11,
                    checkpoint_times=(0.0, 0.01, 0.02))
    x0 = e_k(16, 1, 0.3 * np.pi)
    y0 = -x0
    rec = run_paths(porous_space, porous_linear, params, cfg, "coupled",
                    x0=x0, y0=y0, threads=1)
    st = make_coupling_state(porous_space, params, x0, y0)
    for k in range(20):
        st = step_coupled(porous_space, porous_linear, params, cfg, st)
        if st.step_index == 10:
            np.testing.assert_array_equal(rec.x_coeffs[0, 1], st.x[0])
    np.testing.assert_array_equal(rec.x_coeffs[0, 2], st.x[0])
    np.testing.assert_array_equal(rec.y_coeffs[0, 2], st.y[0])


def test_run_paths_worker_count_deterministic(porous_space, porous_r2):
    params = CouplingParams(n=5)
    cfg = SimConfig(dt=1e-3, horizon=0.05, n_paths=3 * BLOCK_ROWS + 17,
                    master_seed=12, checkpoint_times=(0.0, 0.05))
    x0 = e_k(16, 1, 0.2 * np.pi)
    y0 = -x0
    rec1 = run_paths(porous_space, porous_r2, params, cfg, "coupled",
                     x0=x0, y0=y0, threads=1)
    rec4 = run_paths(porous_space, porous_r2, params, cfg, "coupled",
                     x0=x0, y0=y0, threads=4)
    np.testing.assert_array_equal(rec1.x_coeffs, rec4.x_coeffs)
    np.testing.assert_array_equal(rec1.y_coeffs, rec4.y_coeffs)
    np.testing.assert_array_equal(rec1.tau_n, rec4.tau_n)


def test_run_paths_single_matches_marginal_law(porous_space, porous_linear):
    # Prop-style marginal check: coupled X-component statistics match
    # single-run statistics within Monte Carlo noise
    t = 0.05
    params = CouplingParams(n=1)
    cfg = SimConfig(dt=2e-4, horizon=t, n_paths=4000, master_seed=13,
                    checkpoint_times=(t,))
    x0 = e_k(16, 1, 0.45 * np.pi)
    y0 = -x0
    coupled = run_paths(porous_space, porous_linear, params, cfg, "coupled",
                        x0=x0, y0=y0, threads=1)
    single = run_paths(porous_space, porous_linear, None,
                       SimConfig(dt=2e-4, horizon=t, n_paths=4000,
                                 master_seed=14, checkpoint_times=(t,)),
                       "single", x0=x0, threads=1)
    a = coupled.x_coeffs[:, 0, 0]
    b = single.x_coeffs[:, 0, 0]
    se_mean = np.sqrt(np.var(a) / a.size + np.var(b) / b.size)
    assert abs(a.mean() - b.mean()) < 3.0 * se_mean
    se_var = np.sqrt(2.0) * np.var(a, ddof=1) * np.sqrt(2.0 / (a.size - 1))
    assert abs(np.var(a, ddof=1) - np.var(b, ddof=1)) < 3.0 * se_var


def test_glued_forever_in_ensemble(ex41_space, porous_r2):
    params = CouplingParams(n=20)
    cfg = SimConfig(dt=2e-4, horizon=0.3, n_paths=128, master_seed=15,
                    checkpoint_times=(0.0, 0.1, 0.2, 0.3))
    x0 = e_k(16, 1, 0.15 * np.pi ** 2)
    rec = run_paths(ex41_space, porous_r2, params, cfg, "coupled",
                    x0=x0, y0=-x0, threads=1)
    glued = rec.coupled & rec.live
    assert np.any(glued), "expected some paths to glue in this configuration"
    for j, t in enumerate(rec.checkpoint_times):
        sel = glued & (rec.t_n <= t)
        np.testing.assert_array_equal(rec.x_coeffs[sel, j],
                                      rec.y_coeffs[sel, j])
    # tau_n is never later than the gluing time
    both = ~np.isnan(rec.tau_n) & ~np.isnan(rec.t_n)
    assert np.all(rec.tau_n[both] <= rec.t_n[both])


def test_run_paths_overflow_isolated(porous_space):
    # a deliberately unstable explicit configuration: overflowing paths are
    # reported and frozen, healthy paths keep running
    m = ModelSpec(Porous(r=3.0))
    cfg = SimConfig(dt=0.05, horizon=0.5, n_paths=8, master_seed=16,
                    checkpoint_times=(0.5,), scheme="explicit")
    x0 = e_k(16, 8, 5.0)
    rec = run_paths(porous_space, m, None, cfg, "single", x0=x0, threads=1)
    assert len(rec.failures) > 0
    assert np.sum(rec.failed) == len(rec.failures)


def test_moment_bound_stability_in_modes(porous_r2):
    # time-integrated V-norm moments stay finite and stable as N grows
    moments = {}
    for n_modes in (8, 12, 16):
        sp = make_space(n_modes, 1.0, weighted=True, q_decay=0.75)
        cfg = SimConfig(dt=5e-4, horizon=0.2, n_paths=256, master_seed=17,
                        checkpoint_times=(0.0, 0.2))
        rec = run_paths(sp, porous_r2, None, cfg, "single",
                        x0=e_k(n_modes, 1, 1.0), record_v_norms=True,
                        threads=1)
        acc = rec.v_accum_x[:, 1]
        moments[n_modes] = (np.mean(acc), np.mean(acc ** 2))
    for p_idx in (0, 1):
        vals = [moments[n][p_idx] for n in (8, 12, 16)]
        assert all(np.isfinite(vals))
        assert max(vals) <= 1.5 * min(vals)
