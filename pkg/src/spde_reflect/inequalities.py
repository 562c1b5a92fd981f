"""Numerical verification of the structural inequalities and spectrum gates.

Every checker follows the same protocol: draw a mixed batch of sample
states (smooth, rough, and near-collision pairs, since the one-sided
bounds are tightest near the diagonal), fit the free constant by
minimizing/maximizing over the batch, then confirm zero violations at a
safety-shaved constant on a fresh batch.  Fitting means optimizing over
samples, never proving; reports always carry sample counts and the worst
margin seen.

Spectrum conditions for power-law data q_i = c i^-delta, lambda_i =
(pi i)^(2 gamma) are decided exactly by the exponent of i in the
supremand, with a brute-force numeric scan available as a sanity check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spaces import SpectralSpace, h_norm, q_norm, v_norm, to_grid, quad, grad_to_grid
from .models import (
    ModelSpec, ZeroDiffusion, pairing_drift_diff, b_hs_diff,
    signed_power, beta_sup,
)
from .integrator import philox_generator

__all__ = [
    "ConditionReport", "SpectrumParams",
    "sample_states", "sample_state_pairs",
    "check_A1prime", "check_A1doubleprime", "check_interpolation_Q",
    "check_spectrum_condition", "check_scalar_mean_value",
    "nash_exponent_gate", "fit_coercivity",
    "kappa_porous_example", "kappa_plaplace_example", "kappa_fastdiff_interval",
    "scan_supremand", "lipschitz_K_bound",
]

_REL_TOL = 1e-9


@dataclass
class ConditionReport:
    condition_id: str
    sample_count: int
    violation_count: int
    fitted_constants: dict
    worst_margin: float
    verdict: str                     # pass | fail | vacuous
    notes: str = ""

    def as_dict(self) -> dict:
        return {
            "condition_id": self.condition_id,
            "sample_count": self.sample_count,
            "violation_count": self.violation_count,
            "fitted_constants": {k: float(v) for k, v in self.fitted_constants.items()},
            "worst_margin": float(self.worst_margin),
            "verdict": self.verdict,
            "notes": self.notes,
        }


def _verdict(sample_count: int, violations: int) -> str:
    if sample_count == 0:
        return "vacuous"
    return "pass" if violations == 0 else "fail"


def sample_states(space: SpectralSpace, gen: np.random.Generator,
                  n: int) -> np.ndarray:
    """Mixed batch of coefficient vectors: smooth, rough, and rescaled."""
    nm = space.n_modes
    idx = np.arange(1, nm + 1, dtype=float)
    kind = gen.integers(0, 3, size=n)
    out = gen.standard_normal((n, nm))
    out[kind == 0] *= idx ** -2.0          # smooth, few effective modes
    out[kind == 1] *= idx ** -0.6          # rough, slowly decaying
    # kind == 2: flat white coefficients
    scale = np.exp(gen.normal(0.0, 1.0, size=n))
    return out * scale[:, None]


def sample_state_pairs(space: SpectralSpace, gen: np.random.Generator,
                       n: int):
    """Pairs (v1, v2) with a near-collision third (v2 = v1 + eps e_j)."""
    v1 = sample_states(space, gen, n)
    v2 = sample_states(space, gen, n)
    near = gen.random(n) < (1.0 / 3.0)
    k = int(np.sum(near))
    if k:
        eps = 10.0 ** gen.uniform(-6.0, -1.0, size=k)
        j = gen.integers(0, space.n_modes, size=k)
        pert = np.zeros((k, space.n_modes))
        pert[np.arange(k), j] = eps
        v2[near] = v1[near] + pert
    # guard exact collisions
    same = np.all(v1 == v2, axis=-1)
    if np.any(same):
        v2[same, 0] += 1e-8
    return v1, v2


def lipschitz_K_bound(model: ModelSpec) -> float:
    """Model-derived constant K for the one-sided monotonicity bounds."""
    fam = model.family
    c0 = getattr(model.b_spec, "c0", 0.0)
    if fam.kind == "porous":
        base = max(fam.phi_slope, 0.0)
    elif fam.kind == "fastdiff":
        base = max(beta_sup(fam), 0.0)
    else:
        base = 0.0
    return base + 0.5 * c0 * c0


def _a1_lhs(space, model, t, v1, v2):
    lhs = pairing_drift_diff(space, model, t, v1, v2)
    if not isinstance(model.b_spec, ZeroDiffusion):
        lhs = lhs + 0.5 * b_hs_diff(space, model, t, v1, v2) ** 2
    return lhs


def _fit_theta(lhs, dn, dq, denom, K, safety):
    slack = K * dn * dn - lhs
    ratios = slack / denom
    theta_fit = float(np.min(ratios))
    return max(theta_fit, 0.0) * safety


def check_A1prime(space: SpectralSpace, model: ModelSpec, kappa: float,
                  n_samples: int = 10_000, *, seed: int = 1234,
                  K: float | None = None, theta: float | None = None,
                  safety: float = 0.9, t: float = 0.0) -> ConditionReport:
    """One-sided bound with the Q-norm defect term, r >= 1 regime.

    With user-supplied (K, theta) the batch is checked directly; otherwise
    theta is fitted on one batch (given the model-derived K) and validated
    on a fresh one.
    """
    r = model.family.r
    if r < 1.0:
        raise ValueError("check_A1prime applies to families with r >= 1")
    if kappa <= r - 1.0:
        raise ValueError("kappa must exceed r - 1")
    if K is None:
        K = lipschitz_K_bound(model)
    gen = philox_generator(seed, 0xA1)

    def defect(v1, v2):
        dn = h_norm(space, v1 - v2)
        dq = q_norm(space, v1 - v2)
        # dn^(r+1-k) dq^k computed through the bounded ratio dq/dn
        return dn, dq, dn ** (r + 1.0) * (dq / dn) ** kappa

    fitted_theta = theta
    if theta is None:
        v1, v2 = sample_state_pairs(space, gen, n_samples)
        dn, dq, denom = defect(v1, v2)
        fitted_theta = _fit_theta(_a1_lhs(space, model, t, v1, v2),
                                  dn, dq, denom, K, safety)
    v1, v2 = sample_state_pairs(space, gen, n_samples)
    lhs = _a1_lhs(space, model, t, v1, v2)
    dn, dq, denom = defect(v1, v2)
    rhs = K * dn * dn - fitted_theta * denom
    scale = np.abs(lhs) + K * dn * dn + np.abs(rhs)
    margins = rhs - lhs
    bad = margins < -_REL_TOL * scale
    return ConditionReport(
        condition_id="A1prime",
        sample_count=n_samples,
        violation_count=int(np.sum(bad)),
        fitted_constants={"K": K, "theta": fitted_theta, "kappa": kappa},
        worst_margin=float(np.min(margins)),
        verdict=_verdict(n_samples, int(np.sum(bad))),
    )


def check_A1doubleprime(space: SpectralSpace, model: ModelSpec, kappa: float,
                        n_samples: int = 10_000, *, seed: int = 1234,
                        K: float | None = None, theta: float | None = None,
                        safety: float = 0.9, t: float = 0.0) -> ConditionReport:
    """Fast-diffusion variant with the V-norm denominator, r in (0, 1)."""
    fam = model.family
    if fam.kind != "fastdiff":
        raise ValueError("check_A1doubleprime applies to the fast-diffusion family")
    if kappa <= 0.0:
        raise ValueError("kappa must be positive")
    r = fam.r
    if K is None:
        K = lipschitz_K_bound(model)
    gen = philox_generator(seed, 0xA2)

    def defect(v1, v2):
        dn = h_norm(space, v1 - v2)
        dq = q_norm(space, v1 - v2)
        vmax = np.maximum(v_norm(space, v1, fam), v_norm(space, v2, fam))
        return dn, dq, dn * dn * (dq / dn) ** kappa / vmax ** (1.0 - r)

    fitted_theta = theta
    if theta is None:
        v1, v2 = sample_state_pairs(space, gen, n_samples)
        dn, dq, denom = defect(v1, v2)
        fitted_theta = _fit_theta(_a1_lhs(space, model, t, v1, v2),
                                  dn, dq, denom, K, safety)
    v1, v2 = sample_state_pairs(space, gen, n_samples)
    lhs = _a1_lhs(space, model, t, v1, v2)
    dn, dq, denom = defect(v1, v2)
    rhs = K * dn * dn - fitted_theta * denom
    scale = np.abs(lhs) + K * dn * dn + np.abs(rhs)
    margins = rhs - lhs
    bad = margins < -_REL_TOL * scale
    return ConditionReport(
        condition_id="A1doubleprime",
        sample_count=n_samples,
        violation_count=int(np.sum(bad)),
        fitted_constants={"K": K, "theta": fitted_theta, "kappa": kappa},
        worst_margin=float(np.min(margins)),
        verdict=_verdict(n_samples, int(np.sum(bad))),
    )


def check_interpolation_Q(space: SpectralSpace, kappa: float, *,
                          r: float | None = None, p: float | None = None,
                          variant: str = "porous",
                          n_samples: int = 10_000, seed: int = 1234,
                          safety: float = 0.9) -> ConditionReport:
    """Interpolation bounds tying the Q-norm to the H- and V-norms.

    variant 'porous':   |x|_Q^2 <= C |x|^(2(k-1-r)/k) |x|_{1+r}^(2(1+r)/k)
    variant 'plaplace': |x|_Q^2 <= C |x|^(2(k-p)/k)  m(|grad x|^2)^(p/k)
    variant 'fastdiff': |u|_{r+1}^2 |u|^(k-2) >= eta |u|_Q^k
    """
    gen = philox_generator(seed, 0x1F)

    def parts(x):
        dq = q_norm(space, x)
        dn = h_norm(space, x)
        g = to_grid(space, x)
        if variant == "porous":
            if r is None:
                raise ValueError("porous variant needs r")
            lq = quad(space, np.abs(g) ** (1.0 + r)) ** (1.0 / (1.0 + r))
            return dq ** 2, dn ** (2.0 * (kappa - 1.0 - r) / kappa) * \
                lq ** (2.0 * (1.0 + r) / kappa)
        if variant == "plaplace":
            if p is None:
                raise ValueError("plaplace variant needs p")
            dg2 = quad(space, grad_to_grid(space, x) ** 2)
            return dq ** 2, dn ** (2.0 * (kappa - p) / kappa) * dg2 ** (p / kappa)
        if variant == "fastdiff":
            if r is None:
                raise ValueError("fastdiff variant needs r")
            lq = quad(space, np.abs(g) ** (1.0 + r)) ** (1.0 / (1.0 + r))
            return lq ** 2 * dn ** (kappa - 2.0), dq ** kappa
        raise ValueError(f"unknown variant {variant!r}")

    x = sample_states(space, gen, n_samples)
    lhs, rhs = parts(x)
    if variant == "fastdiff":
        eta_fit = float(np.min(lhs / rhs)) * safety
        const = {"eta": eta_fit}
        x = sample_states(space, gen, n_samples)
        lhs, rhs = parts(x)
        margins = lhs - eta_fit * rhs
        scale = np.abs(lhs) + eta_fit * rhs
    else:
        c_fit = float(np.max(lhs / rhs)) / safety
        const = {"C": c_fit}
        x = sample_states(space, gen, n_samples)
        lhs, rhs = parts(x)
        margins = c_fit * rhs - lhs
        scale = np.abs(lhs) + c_fit * rhs
    bad = margins < -_REL_TOL * scale
    const["kappa"] = kappa
    return ConditionReport(
        condition_id=f"interpolation_{variant}",
        sample_count=n_samples,
        violation_count=int(np.sum(bad)),
        fitted_constants=const,
        worst_margin=float(np.min(margins)),
        verdict=_verdict(n_samples, int(np.sum(bad))),
    )


@dataclass(frozen=True)
class SpectrumParams:
    """Closed-form spectrum data q_i = c i^-delta, lambda_i = (pi i)^(2 gamma)."""
    gamma: float
    delta: float
    d: int = 1
    r: float | None = None
    p: float | None = None
    kappa: float | None = None
    eps: float | None = None
    c: float = 1.0


def kappa_porous_example(gamma: float, r: float, delta: float, d: int = 1) -> float:
    return gamma * (1.0 + r) / (delta * d)


def kappa_plaplace_example(p: float, delta: float) -> float:
    return p / delta


def kappa_fastdiff_interval(gamma: float, r: float, delta: float, d: int = 1):
    """Admissible kappa interval (before intersecting with [2, inf))."""
    lo = (2.0 * gamma * (1.0 + r) - d * (1.0 - r)) / (d * delta * (1.0 + r))
    hi = 2.0 * gamma / (d * delta)
    return lo, hi


def _supremand_exponent(which: str, params: SpectrumParams) -> float:
    g, dl = params.gamma, params.delta
    if which == "*E":
        if params.kappa is None or params.r is None:
            raise ValueError("*E needs kappa and r")
        return -2.0 * g + 2.0 * params.kappa * dl / (1.0 + params.r)
    if which == "**E":
        if params.kappa is None or params.p is None:
            raise ValueError("**E needs kappa and p")
        return dl - params.p / params.kappa
    if which == "SB":
        if params.kappa is None or params.eps is None:
            raise ValueError("SB needs kappa and eps")
        return dl + 2.0 * g * (params.eps - 1.0) / params.kappa
    if which == "EI":
        return -2.0 * dl
    raise ValueError(f"unknown spectrum condition {which!r}")


def scan_supremand(which: str, params: SpectrumParams, i_max: int = 1_000_000):
    """Numeric scan of the supremand over i <= i_max (sanity route)."""
    i = np.arange(1, i_max + 1, dtype=float)
    lam = (np.pi * i) ** (2.0 * params.gamma)
    q = params.c * i ** (-params.delta)
    if which == "*E":
        vals = lam ** -1.0 * q ** (-2.0 * params.kappa / (1.0 + params.r))
    elif which == "**E":
        vals = q ** -1.0 * i ** (-params.p / params.kappa)
    elif which == "SB":
        vals = np.abs(q) ** -1.0 * lam ** ((params.eps - 1.0) / params.kappa)
    elif which == "EI":
        vals = np.cumsum(q * q)
    else:
        raise ValueError(f"unknown spectrum condition {which!r}")
    return vals


def check_spectrum_condition(which: str, params: SpectrumParams) -> ConditionReport:
    """Exact exponent verdict for the four spectrum gates.

    For the sup-type gates finiteness is equivalent to a nonpositive
    exponent of i; for the Hilbert-Schmidt sum it needs exponent < -1.
    The report also carries the worked kappa formulas where defined.
    """
    exp = _supremand_exponent(which, params)
    if which == "EI":
        finite = exp < -1.0
    else:
        finite = exp <= 0.0
    consts = {"exponent": exp}
    if params.r is not None and params.r >= 1.0:
        consts["kappa_example_porous"] = kappa_porous_example(
            params.gamma, params.r, params.delta, params.d)
    if params.p is not None:
        consts["kappa_example_plaplace"] = kappa_plaplace_example(
            params.p, params.delta)
    if params.r is not None and 0.0 < params.r < 1.0:
        lo, hi = kappa_fastdiff_interval(params.gamma, params.r,
                                         params.delta, params.d)
        consts["kappa_interval_lo"] = lo
        consts["kappa_interval_hi"] = hi
    return ConditionReport(
        condition_id=f"spectrum_{which}",
        sample_count=1,
        violation_count=0 if finite else 1,
        fitted_constants=consts,
        worst_margin=-exp if which != "EI" else -(exp + 1.0),
        verdict="pass" if finite else "fail",
        notes="finite iff i-exponent of the supremand is nonpositive"
              if which != "EI" else "summable iff i-exponent < -1",
    )


def check_scalar_mean_value(r: float, n_samples: int = 1_000_000, *,
                            seed: int = 1234) -> ConditionReport:
    """Pointwise bound (s1-s2)(s1^r - s2^r) >= r |s1-s2|^2 (|s1| v |s2|)^(r-1).

    Heavy-tailed sampling with sign flips, exact ties, and near-zero values;
    the 0/0 quotient at s1 = s2 = 0 is taken as 0 by convention.
    """
    if not 0.0 < r < 1.0:
        raise ValueError("r must lie in (0, 1)")
    gen = philox_generator(seed, 0x3C)
    t1 = gen.standard_cauchy(n_samples)
    t2 = gen.standard_cauchy(n_samples)
    s1 = np.clip(np.sign(t1) * np.abs(t1) ** 1.5, -1e6, 1e6)
    s2 = np.clip(np.sign(t2) * np.abs(t2) ** 1.5, -1e6, 1e6)
    tie = gen.random(n_samples) < 0.05
    s2[tie] = s1[tie]
    tiny = gen.random(n_samples) < 0.10
    s2[tiny] = s1[tiny] * (1.0 + 1e-9)
    zero = gen.random(n_samples) < 0.02
    s1[zero] = 0.0
    lhs = (s1 - s2) * (signed_power(s1, r) - signed_power(s2, r))
    mx = np.maximum(np.abs(s1), np.abs(s2))
    with np.errstate(divide="ignore", invalid="ignore"):
        rhs = np.where(mx > 0.0, r * (s1 - s2) ** 2 * mx ** (r - 1.0), 0.0)
    margins = lhs - rhs
    scale = np.abs(lhs) + np.abs(rhs)
    # near-tie pairs subtract almost equal powers; allow for the
    # cancellation roundoff |s1-s2| * (|s1|^r + |s2|^r) * O(eps)
    cancel = np.abs(s1 - s2) * (np.abs(s1) ** r + np.abs(s2) ** r)
    bad = margins < -(_REL_TOL * scale + 1e-13 * cancel)
    return ConditionReport(
        condition_id="scalar_mean_value",
        sample_count=n_samples,
        violation_count=int(np.sum(bad)),
        fitted_constants={"r": r},
        worst_margin=float(np.min(margins)),
        verdict=_verdict(n_samples, int(np.sum(bad))),
    )


def nash_exponent_gate(m: float, r: float, *, gamma: float | None = None,
                       d: int | None = None, delta: float | None = None,
                       kappa: float | None = None):
    """Gate m < 2(1+r)/(1-r), plus the worked eps-window when spectrum data
    is supplied (eps = (2 gamma - kappa d delta) / (2 gamma))."""
    if m <= 0.0 or not 0.0 < r < 1.0:
        raise ValueError("need m > 0 and r in (0, 1)")
    bound = 2.0 * (1.0 + r) / (1.0 - r)
    ok = m < bound
    consts = {"m": m, "bound": bound}
    notes = ""
    if None not in (gamma, d, delta, kappa):
        eps = (2.0 * gamma - kappa * d * delta) / (2.0 * gamma)
        eps_hi = (1.0 - r) * m / (2.0 * (1.0 + r))
        consts.update({"eps": eps, "eps_hi": eps_hi})
        ok = ok and (0.0 < eps < eps_hi)
        notes = "eps window (0, (1-r) m / (2(1+r))) checked"
    return ok, ConditionReport(
        condition_id="nash_gate",
        sample_count=1,
        violation_count=0 if ok else 1,
        fitted_constants=consts,
        worst_margin=bound - m,
        verdict="pass" if ok else "fail",
        notes=notes,
    )


def fit_coercivity(space: SpectralSpace, model: ModelSpec,
                   n_samples: int = 10_000, *, seed: int = 1234,
                   theta: float | None = None, safety: float = 0.9,
                   t: float = 0.0) -> ConditionReport:
    """Coercivity surrogate <A(v), v> + |B(v)|_HS^2 / 2 <= C(1+|v|^2) - theta |v|_V^(1+r)."""
    fam = model.family
    if theta is None:
        if model.theta is not None:
            theta = 0.5 * model.theta
        elif fam.kind == "porous":
            theta = 0.5 * fam.psi_scale
        elif fam.kind == "fastdiff":
            theta = 0.5 * fam.r
        else:
            # the V-norm mixes field and gradient; stay below the
            # Poincare-limited coefficient
            theta = 0.2
    gen = philox_generator(seed, 0xC0)

    def lhs_of(v):
        zero = np.zeros_like(v)
        out = pairing_drift_diff(space, model, t, v, zero)
        if not isinstance(model.b_spec, ZeroDiffusion):
            out = out + 0.5 * b_hs_diff(space, model, t, v, zero) ** 2
        return out

    v = sample_states(space, gen, n_samples)
    lhs = lhs_of(v)
    vn = v_norm(space, v, fam) ** (1.0 + fam.r)
    hn2 = h_norm(space, v) ** 2
    c_fit = float(np.max((lhs + theta * vn) / (1.0 + hn2))) / safety
    # the diffusion part is covered outright by its Lipschitz bound
    c_fit = max(c_fit, 0.0) + 0.5 * getattr(model.b_spec, "c0", 0.0) ** 2
    v = sample_states(space, gen, n_samples)
    lhs = lhs_of(v)
    vn = v_norm(space, v, fam) ** (1.0 + fam.r)
    hn2 = h_norm(space, v) ** 2
    margins = c_fit * (1.0 + hn2) - theta * vn - lhs
    scale = np.abs(lhs) + c_fit * (1.0 + hn2) + theta * vn
    bad = margins < -_REL_TOL * scale
    return ConditionReport(
        condition_id="coercivity",
        sample_count=n_samples,
        violation_count=int(np.sum(bad)),
        fitted_constants={"C": c_fit, "theta": theta},
        worst_margin=float(np.min(margins)),
        verdict=_verdict(n_samples, int(np.sum(bad))),
    )
