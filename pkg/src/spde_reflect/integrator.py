"""Euler-Maruyama time stepping for single and coupled trajectories.

Noise
-----
All randomness comes from counter-based Philox streams keyed by
(master_seed, step_index, channel, path_block):  path p lives in block
p // BLOCK_ROWS, and because numpy fills arrays from the stream in C order,
the draws of path p never depend on how many paths follow it or on how the
work is partitioned.  Worker counts therefore cannot perturb results.

Schemes
-------
``explicit``       x' = x + dt A(t, x) + noise
``semi_implicit``  exponential integrator on the stiff diagonal split
                   A = -mu L + (A + mu L): the factor exp(-lambda_i mu dt)
                   is applied exactly, the residual enters through
                   phi1(z) = (1 - e^-z)/z, and the additive noise carries
                   the matching exact Ornstein-Uhlenbeck variance.  For the
                   linear families the per-mode transition is exact in law,
                   which is what the oracle comparisons rely on.

The coupled step advances both components with shared channels per the
reflection construction, then updates stopping-time records at the new step
boundary: tau_n (distance first <= 1/n), tau_{n,delta} (first >= delta), and
the gluing time (first <= glue_eps, after which the pair is evolved as a
single trajectory and mirrored).
"""

from __future__ import annotations

import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .spaces import SpectralSpace, h_norm, q_norm, v_norm
from .models import ModelSpec, ZeroDiffusion, b_diag, drift_and_split_rate
from .coupling import CouplingParams, coupled_diffusion_increments

__all__ = [
    "BLOCK_ROWS", "SimConfig", "CouplingState", "PathEnsembleRecord",
    "StepOverflow", "noise_block", "gen_noise", "philox_generator",
    "step_single", "step_coupled", "make_coupling_state", "run_paths",
    "default_threads",
]

BLOCK_ROWS = 256              # fixed global noise-block height (determinism contract)
_MIX_CONST = 0x9E3779B97F4A7C15


def _splitmix64(x: int) -> int:
    x = (x + _MIX_CONST) & 0xFFFFFFFFFFFFFFFF
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & 0xFFFFFFFFFFFFFFFF
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & 0xFFFFFFFFFFFFFFFF
    return z ^ (z >> 31)


def _mix(*values: int) -> int:
    acc = 0
    for v in values:
        acc = _splitmix64(acc ^ (int(v) & 0xFFFFFFFFFFFFFFFF))
    return acc


def philox_generator(master_seed: int, *labels: int) -> np.random.Generator:
    """Derived stream for auxiliary sampling (inequality checkers, tests)."""
    key = [int(master_seed) & 0xFFFFFFFFFFFFFFFF, _mix(master_seed, *labels)]
    return np.random.Generator(np.random.Philox(key=key))


_TLS = threading.local()


def _keyed_generator(key0: int, key1: int) -> np.random.Generator:
    # reusing a thread-local Philox avoids re-seeding entropy per block;
    # resetting the full state makes the stream identical to a fresh
    # construction with the same key
    bg = getattr(_TLS, "philox", None)
    if bg is None:
        bg = np.random.Philox(key=[0, 0])
        _TLS.philox = bg
        _TLS.gen = np.random.Generator(bg)
        _TLS.state = bg.state
    st = _TLS.state
    st["state"]["key"][0] = key0
    st["state"]["key"][1] = key1
    st["state"]["counter"][:] = 0
    st["buffer_pos"] = 4
    st["has_uint32"] = 0
    st["uinteger"] = 0
    bg.state = st
    return _TLS.gen


def noise_block(master_seed: int, step: int, channel: int, block: int,
                rows: int, n_modes: int) -> np.ndarray:
    """Standard-normal block, a pure function of its key tuple."""
    gen = _keyed_generator(int(master_seed) & 0xFFFFFFFFFFFFFFFF,
                           _mix(master_seed, step, 0x10 + channel, block))
    return gen.standard_normal((rows, n_modes))


def gen_noise(master_seed: int, step_index: int, n_paths: int, n_modes: int,
              dt: float, channels=(0, 1, 2), path_lo: int = 0) -> np.ndarray:
    """N(0, dt) increments for paths [path_lo, path_lo + n_paths).

    Returns an array of shape (len(channels), n_paths, n_modes).  Each value
    is a deterministic function of (master_seed, path index, step_index,
    channel); channels are mutually independent streams.
    """
    out = np.empty((len(channels), n_paths, n_modes))
    lo = path_lo
    hi = path_lo + n_paths
    first = lo // BLOCK_ROWS
    last = (hi - 1) // BLOCK_ROWS
    for b in range(first, last + 1):
        b_lo = b * BLOCK_ROWS
        r0 = max(lo, b_lo) - b_lo
        r1 = min(hi, b_lo + BLOCK_ROWS) - b_lo
        for ci, ch in enumerate(channels):
            blk = noise_block(master_seed, step_index, ch, b, r1, n_modes)
            out[ci, max(lo, b_lo) - lo:min(hi, b_lo + BLOCK_ROWS) - lo] = blk[r0:r1]
    return out * np.sqrt(dt)


@dataclass(frozen=True)
class SimConfig:
    dt: float
    horizon: float
    n_paths: int
    master_seed: int
    checkpoint_times: tuple = ()
    scheme: str = "semi_implicit"
    n_modes: int | None = None      # optional cross-check against the space

    def __post_init__(self):
        if not 0.0 < self.dt <= self.horizon:
            raise ValueError("need 0 < dt <= horizon")
        if self.scheme not in ("semi_implicit", "explicit"):
            raise ValueError("scheme must be semi_implicit or explicit")
        if self.n_paths < 1:
            raise ValueError("n_paths must be >= 1")
        cps = tuple(float(t) for t in self.checkpoint_times)
        if any(t < 0.0 or t > self.horizon + 1e-12 for t in cps):
            raise ValueError("checkpoint_times must lie in [0, horizon]")
        if list(cps) != sorted(cps):
            raise ValueError("checkpoint_times must be sorted")
        object.__setattr__(self, "checkpoint_times", cps)

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def checkpoint_steps(self) -> list:
        return [int(round(t / self.dt)) for t in self.checkpoint_times]


class StepOverflow(RuntimeError):
    """A state coefficient became non-finite during stepping."""

    def __init__(self, time: float, mode: int, path: int = 0):
        self.time = float(time)
        self.mode = int(mode)
        self.path = int(path)
        super().__init__(
            f"state overflow at t={time:g} (path {path}, mode {mode + 1})")


@dataclass
class CouplingState:
    """Batched coupled-pair state with stopping-time records.

    Arrays carry a leading path axis; a single trajectory pair is the P = 1
    case.  ``coupled`` paths satisfy x = y exactly and stay glued.
    """
    x: np.ndarray
    y: np.ndarray
    time: float
    step_index: int
    coupled: np.ndarray
    tau_n: np.ndarray            # nan until hit
    dist_at_tau_n: np.ndarray
    t_n: np.ndarray              # gluing time, nan until hit
    delta_grid: np.ndarray
    tau_delta: np.ndarray        # (P, D), nan until hit
    failed: np.ndarray

    @property
    def n_paths(self) -> int:
        return self.x.shape[0]


def _boundary_update(space: SpectralSpace, params: CouplingParams,
                     state: CouplingState) -> None:
    """Record stopping times at the current step boundary and glue."""
    live = ~state.failed
    dist = h_norm(space, state.x - state.y)
    hit = live & np.isnan(state.tau_n) & (dist <= 1.0 / params.n)
    state.tau_n[hit] = state.time
    state.dist_at_tau_n[hit] = dist[hit]
    for j, delta in enumerate(state.delta_grid):
        hd = live & np.isnan(state.tau_delta[:, j]) & (dist >= delta)
        state.tau_delta[hd, j] = state.time
    glue = live & ~state.coupled & (dist <= params.glue_eps)
    if np.any(glue):
        state.y[glue] = state.x[glue]
        state.t_n[glue] = state.time
        state.coupled |= glue


def make_coupling_state(space: SpectralSpace, params: CouplingParams,
                        x0: np.ndarray, y0: np.ndarray,
                        delta_grid=()) -> CouplingState:
    x0 = np.atleast_2d(np.asarray(x0, dtype=float)).copy()
    y0 = np.atleast_2d(np.asarray(y0, dtype=float)).copy()
    if x0.shape != y0.shape:
        raise ValueError("x0 and y0 must have the same shape")
    p = x0.shape[0]
    d = len(delta_grid)
    state = CouplingState(
        x=x0, y=y0, time=0.0, step_index=0,
        coupled=np.zeros(p, dtype=bool),
        tau_n=np.full(p, np.nan), dist_at_tau_n=np.full(p, np.nan),
        t_n=np.full(p, np.nan),
        delta_grid=np.asarray(delta_grid, dtype=float),
        tau_delta=np.full((p, d), np.nan),
        failed=np.zeros(p, dtype=bool),
    )
    _boundary_update(space, params, state)
    return state


def _split_factors(space: SpectralSpace, dt: float, mu: np.ndarray):
    """Exponential-integrator factors (decay, phi1, noise scale) for rate mu."""
    z = space.lambdas * (mu[..., None] * dt)
    decay = np.exp(-z)
    tiny = z < 1e-12
    zs = np.where(tiny, 1.0, z)
    em = -np.expm1(-zs)
    phi1 = np.where(tiny, 1.0, em / zs)
    nfac = np.where(tiny, 1.0, np.sqrt(-np.expm1(-2.0 * zs) / (2.0 * zs)))
    return decay, phi1, nfac


def _step_core(space: SpectralSpace, scheme: str, dt: float, x: np.ndarray,
               dr: np.ndarray, mu: np.ndarray, noise: np.ndarray,
               factors=None) -> np.ndarray:
    if scheme == "explicit":
        return x + dt * dr + noise
    decay, phi1, nfac = factors if factors is not None else \
        _split_factors(space, dt, mu)
    resid = dr + space.lambdas * x * mu[..., None]
    return decay * x + dt * phi1 * resid + nfac * noise


def _single_noise(space: SpectralSpace, model: ModelSpec, t: float,
                  x: np.ndarray, dW1: np.ndarray, dW2: np.ndarray) -> np.ndarray:
    root_w = np.sqrt(space.h_weights)
    out = space.q_coeffs * (dW2 / root_w)
    if not isinstance(model.b_spec, ZeroDiffusion):
        out = out + b_diag(space, model, t, x) * (dW1 / root_w)
    return out


def _needs_b(model: ModelSpec) -> bool:
    return not isinstance(model.b_spec, ZeroDiffusion)


def _advance_single(space: SpectralSpace, model: ModelSpec, config: SimConfig,
                    xb: np.ndarray, t: float, step_index: int,
                    path_lo: int, noise=None) -> np.ndarray:
    if noise is None:
        dws = gen_noise(config.master_seed, step_index, xb.shape[0],
                        space.n_modes, config.dt, channels=(0, 1),
                        path_lo=path_lo)
        dw1, dw2 = dws[0], dws[1]
    else:
        dw1, dw2 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in noise)
    with np.errstate(invalid="ignore", over="ignore"):
        dr, mu = drift_and_split_rate(space, model, t, xb)
        add = _single_noise(space, model, t, xb, dw1, dw2)
        return _step_core(space, config.scheme, config.dt, xb, dr, mu, add)


def step_single(space: SpectralSpace, model: ModelSpec, config: SimConfig,
                x: np.ndarray, t: float, step_index: int,
                *, noise=None, path_lo: int = 0) -> np.ndarray:
    """One marginal-equation step from t; noise drawn from the keyed streams.

    ``noise`` may supply explicit (dW1, dW2) arrays (used by tests and by
    the deterministic-drift examples).  Raises StepOverflow on non-finite
    output.
    """
    x = np.asarray(x, dtype=float)
    batch = x.ndim > 1
    xb = np.atleast_2d(x)
    out = _advance_single(space, model, config, xb, t, step_index,
                          path_lo, noise)
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))[0]
        raise StepOverflow(t + config.dt, int(bad[-1]), int(bad[0]))
    return out if batch else out[0]


def step_coupled(space: SpectralSpace, model: ModelSpec,
                 params: CouplingParams, config: SimConfig,
                 state: CouplingState, *, noise=None,
                 path_lo: int = 0, synchronous: bool = False) -> CouplingState:
    """Advance the coupled pair one step and update stopping-time records."""
    if state.time >= config.horizon - 1e-12:
        raise ValueError("state is already at the horizon")
    t = state.time
    p = state.n_paths
    if noise is None:
        channels = (1,) if synchronous else (1, 2)
        if _needs_b(model):
            channels = (0,) + channels
        dws = gen_noise(config.master_seed, state.step_index, p,
                        space.n_modes, config.dt, channels=channels,
                        path_lo=path_lo)
        zero = np.zeros((p, space.n_modes))
        got = dict(zip(channels, dws))
        dw1 = got.get(0, zero)
        dw2 = got[1]
        dw3 = got.get(2, zero)
    else:
        dw1, dw2, dw3 = (np.atleast_2d(np.asarray(a, dtype=float)) for a in noise)
    with np.errstate(invalid="ignore", over="ignore"):
        if synchronous:
            dx_noise = _single_noise(space, model, t, state.x, dw1, dw2)
            dy_noise = _single_noise(space, model, t, state.y, dw1, dw2)
        else:
            dx_noise, dy_noise = coupled_diffusion_increments(
                space, model, params, state.x, state.y, t, dw1, dw2, dw3)
        dr_x, mu_x = drift_and_split_rate(space, model, t, state.x)
        dr_y, mu_y = drift_and_split_rate(space, model, t, state.y)
        mu = np.maximum(mu_x, mu_y)
        factors = None if config.scheme == "explicit" else \
            _split_factors(space, config.dt, mu)
        new_x = _step_core(space, config.scheme, config.dt, state.x, dr_x, mu,
                           dx_noise, factors)
        new_y = _step_core(space, config.scheme, config.dt, state.y, dr_y, mu,
                           dy_noise, factors)
    new_y[state.coupled] = new_x[state.coupled]
    # freeze newly broken paths instead of aborting the batch
    bad = ~(np.all(np.isfinite(new_x), axis=-1) & np.all(np.isfinite(new_y), axis=-1))
    bad &= ~state.failed
    if np.any(bad):
        new_x[bad] = np.nan
        new_y[bad] = np.nan
    keep = state.failed
    new_x[keep] = state.x[keep]
    new_y[keep] = state.y[keep]
    out = replace(state, x=new_x, y=new_y, time=t + config.dt,
                  step_index=state.step_index + 1,
                  failed=state.failed | bad)
    _boundary_update(space, params, out)
    return out


@dataclass
class PathEnsembleRecord:
    """Per-path checkpoint observables of a Monte Carlo run."""
    which: str
    checkpoint_times: np.ndarray
    x_coeffs: np.ndarray                 # (P, C, N)
    y_coeffs: np.ndarray | None          # coupled runs only
    h_dist: np.ndarray | None            # (P, C) H-norm of x - y
    q_dist: np.ndarray | None
    v_accum_x: np.ndarray | None         # (P, C) int_0^t |X_s|_V^{1+r} ds
    v_accum_y: np.ndarray | None
    tau_n: np.ndarray | None
    dist_at_tau_n: np.ndarray | None
    t_n: np.ndarray | None
    coupled: np.ndarray | None
    delta_grid: np.ndarray
    tau_delta: np.ndarray | None
    failed: np.ndarray
    failures: list
    master_seed: int
    dt: float
    n: int | None = None

    @property
    def n_paths(self) -> int:
        return self.x_coeffs.shape[0]

    @property
    def live(self) -> np.ndarray:
        return ~self.failed


def default_threads() -> int:
    env = os.environ.get("SPDE_REFLECT_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def run_paths(space: SpectralSpace, model: ModelSpec,
              params: CouplingParams | None, config: SimConfig,
              which: str = "coupled", *, x0: np.ndarray, y0: np.ndarray = None,
              delta_grid=(), record_v_norms: bool = False,
              threads: int | None = None) -> PathEnsembleRecord:
    """Monte Carlo driver: simulate all paths and collect observables.

    ``which`` selects single-marginal runs, the reflection coupling, or the
    synchronous coupling (shared noise, no reflection channel).  ``x0`` and
    ``y0`` are initial coefficient vectors shared by every path.  Output is
    a deterministic function of (config, space, model, params) regardless of
    the thread count.
    """
    if which not in ("single", "coupled", "synchronous"):
        raise ValueError("which must be single, coupled or synchronous")
    if which != "single" and (params is None or y0 is None):
        raise ValueError("coupled runs need coupling params and y0")
    if config.n_modes is not None and config.n_modes != space.n_modes:
        raise ValueError("config.n_modes disagrees with the space")
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (space.n_modes,):
        raise ValueError("x0 must be a single coefficient vector")
    cps = config.checkpoint_steps()
    if len(cps) == 0:
        raise ValueError("config.checkpoint_times must be nonempty")
    if len(set(cps)) != len(cps):
        raise ValueError("checkpoint_times collide after snapping to steps")
    n_paths = config.n_paths
    n_cp = len(cps)
    nm = space.n_modes
    times = np.array([k * config.dt for k in cps])

    x_out = np.empty((n_paths, n_cp, nm))
    pair = which != "single"
    y_out = np.empty((n_paths, n_cp, nm)) if pair else None
    h_out = np.empty((n_paths, n_cp)) if pair else None
    q_out = np.empty((n_paths, n_cp)) if pair else None
    va_x = np.empty((n_paths, n_cp)) if record_v_norms else None
    va_y = np.empty((n_paths, n_cp)) if (record_v_norms and pair) else None
    tau_n = np.full(n_paths, np.nan) if pair else None
    dist_tau = np.full(n_paths, np.nan) if pair else None
    t_n = np.full(n_paths, np.nan) if pair else None
    coupled = np.zeros(n_paths, dtype=bool) if pair else None
    tau_delta = np.full((n_paths, len(delta_grid)), np.nan) if pair else None
    failed = np.zeros(n_paths, dtype=bool)
    failures: list = []

    r_exp = 1.0 + model.family.r

    def run_rows(lo: int, hi: int):
        rows = hi - lo
        local_fail: list = []
        if pair:
            st = make_coupling_state(space, params,
                                     np.tile(x0, (rows, 1)),
                                     np.tile(np.asarray(y0, dtype=float), (rows, 1)),
                                     delta_grid=delta_grid)
        else:
            xb = np.tile(x0, (rows, 1))
        acc_x = np.zeros(rows)
        acc_y = np.zeros(rows)
        ci = 0
        cp_set = {k: i for i, k in enumerate(cps)}

        def record(step_idx, xb_now, yb_now):
            i = cp_set[step_idx]
            x_out[lo:hi, i] = xb_now
            if pair:
                y_out[lo:hi, i] = yb_now
                d = xb_now - yb_now
                h_out[lo:hi, i] = h_norm(space, d)
                q_out[lo:hi, i] = q_norm(space, d)
            if record_v_norms:
                va_x[lo:hi, i] = acc_x
                if pair:
                    va_y[lo:hi, i] = acc_y

        n_steps = config.n_steps
        for k in range(n_steps + 1):
            xb_now = st.x if pair else xb
            yb_now = st.y if pair else None
            if k in cp_set:
                record(k, xb_now, yb_now)
            if k == n_steps:
                break
            if record_v_norms:
                live = ~(st.failed if pair else np.zeros(rows, dtype=bool))
                vx = np.where(live, v_norm(space, xb_now, model.family), 0.0)
                acc_x = acc_x + config.dt * vx ** r_exp
                if pair:
                    vy = np.where(live, v_norm(space, yb_now, model.family), 0.0)
                    acc_y = acc_y + config.dt * vy ** r_exp
            if pair:
                prev_failed = st.failed.copy()
                st = step_coupled(space, model, params, config, st,
                                  path_lo=lo, synchronous=(which == "synchronous"))
                new_bad = st.failed & ~prev_failed
                for p_idx in np.flatnonzero(new_bad):
                    local_fail.append((lo + int(p_idx), st.time, "overflow"))
            else:
                trial = _advance_single(space, model, config, xb,
                                        k * config.dt, k, lo)
                prev = failed[lo:hi].copy()
                bad = ~np.all(np.isfinite(trial), axis=-1) & ~prev
                if np.any(bad):
                    trial[bad] = np.nan
                    for p_idx in np.flatnonzero(bad):
                        local_fail.append((lo + int(p_idx),
                                           (k + 1) * config.dt, "overflow"))
                    failed[lo:hi] |= bad
                trial[prev] = xb[prev]
                xb = trial
        if pair:
            tau_n[lo:hi] = st.tau_n
            dist_tau[lo:hi] = st.dist_at_tau_n
            t_n[lo:hi] = st.t_n
            coupled[lo:hi] = st.coupled
            if len(delta_grid):
                tau_delta[lo:hi] = st.tau_delta
            failed[lo:hi] = st.failed
        return local_fail

    # one contiguous batch per worker; batch boundaries are block-aligned so
    # the noise stream content is independent of the batching
    n_workers = threads if threads is not None else default_threads()
    n_blocks = (n_paths + BLOCK_ROWS - 1) // BLOCK_ROWS
    n_batches = max(1, min(n_workers, n_blocks))
    per = (n_blocks + n_batches - 1) // n_batches
    bounds = []
    for b0 in range(0, n_blocks, per):
        lo = b0 * BLOCK_ROWS
        hi = min((b0 + per) * BLOCK_ROWS, n_paths)
        bounds.append((lo, hi))
    if n_batches <= 1 or len(bounds) == 1:
        for lo, hi in bounds:
            failures.extend(run_rows(lo, hi))
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            for fl in pool.map(lambda b: run_rows(*b), bounds):
                failures.extend(fl)
    failures.sort(key=lambda f: f[0])

    return PathEnsembleRecord(
        which=which, checkpoint_times=times,
        x_coeffs=x_out, y_coeffs=y_out,
        h_dist=h_out, q_dist=q_out,
        v_accum_x=va_x, v_accum_y=va_y,
        tau_n=tau_n, dist_at_tau_n=dist_tau, t_n=t_n, coupled=coupled,
        delta_grid=np.asarray(delta_grid, dtype=float), tau_delta=tau_delta,
        failed=failed, failures=failures,
        master_seed=config.master_seed, dt=config.dt,
        n=params.n if params is not None else None,
    )
