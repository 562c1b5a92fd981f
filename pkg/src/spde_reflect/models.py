"""Drift and diffusion operators for the three nonlinear SPDE families.

Families
--------
* ``Porous(r, psi_scale, phi_slope)``  -- generalized diffusion with
  pointwise nonlinearity Psi(s) = psi_scale * |s|^(r-1) s, r >= 1, plus the
  linear zero-order term phi_slope * s.  Lives on the weighted space.
* ``PLaplace(p)`` -- div(|grad v|^(p-2) grad v), p >= 2, on the unweighted
  (L2) space with gamma = 1.
* ``FastDiff(r, beta0, beta_amp, beta_freq)`` -- Psi(s) = |s|^r sgn(s) with
  r in (0, 1) plus the time coefficient beta(t) = beta0 + beta_amp *
  sin(beta_freq * t).  Weighted space.

The drift returns the Galerkin projection of A(t, v) in sine coefficients.
``pairing_drift_diff`` evaluates the dual pairing
<A(t,v1) - A(t,v2), v1 - v2> in the family's closed form (quadrature for
the pointwise products, exact spectral inversion of -L for the zero-order
terms); it is the independent route used by the inequality checkers and is
deliberately not derived from ``drift``.

Diffusion coefficients B are either zero or diagonal Lipschitz maps
b_i(v) = c0 * tanh(c_i(v)) * a_i acting mode by mode, where c_i(v) is the
H-orthonormal coefficient of v (so tanh's 1-Lipschitz bound gives the
Hilbert-Schmidt Lipschitz property in the ambient metric).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spaces import (
    SpectralSpace, to_grid, from_grid, grad_to_grid, quad,
    h_inner, h_mode_coeffs, rowblock_matmul,
)

__all__ = [
    "Porous", "PLaplace", "FastDiff",
    "ZeroDiffusion", "LipschitzDiagonal",
    "ModelSpec", "DriftOverflowError",
    "drift", "drift_and_split_rate", "pairing_drift_diff",
    "apply_B", "b_hs_diff", "b_diag", "unit_base",
    "signed_power", "beta_value", "beta_sup", "default_theta",
    "make_space_for",
]


@dataclass(frozen=True)
class Porous:
    r: float
    psi_scale: float = 1.0
    phi_slope: float = 0.0
    kind: str = field(default="porous", init=False, repr=False)

    def __post_init__(self):
        if self.r < 1.0:
            raise ValueError("porous family requires r >= 1")
        if self.psi_scale <= 0.0:
            raise ValueError("psi_scale must be positive")


@dataclass(frozen=True)
class PLaplace:
    p: float
    kind: str = field(default="plaplace", init=False, repr=False)

    def __post_init__(self):
        if self.p < 2.0:
            raise ValueError("p-Laplacian family requires p >= 2")

    @property
    def r(self) -> float:
        return self.p - 1.0


@dataclass(frozen=True)
class FastDiff:
    r: float
    beta0: float = 0.0
    beta_amp: float = 0.0
    beta_freq: float = 0.0
    kind: str = field(default="fastdiff", init=False, repr=False)

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise ValueError("fast-diffusion family requires r in (0, 1)")


@dataclass(frozen=True)
class ZeroDiffusion:
    c0: float = 0.0


@dataclass(frozen=True)
class LipschitzDiagonal:
    """Diagonal B with per-mode maps b_i(v) = c0 * tanh(c_i(v)) * base_i.

    ``base`` should satisfy sum base_i^2 = 1 so c0 is the Hilbert-Schmidt
    Lipschitz constant of B.
    """
    c0: float
    base: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=float))
        if self.c0 < 0:
            raise ValueError("c0 must be nonnegative")


def unit_base(n_modes: int, decay: float = 1.0) -> np.ndarray:
    """Convenience normalized amplitude profile a_i ~ i^-decay."""
    a = np.arange(1, n_modes + 1, dtype=float) ** (-decay)
    return a / np.sqrt(np.sum(a * a))


@dataclass(frozen=True)
class ModelSpec:
    family: Porous | PLaplace | FastDiff
    b_spec: ZeroDiffusion | LipschitzDiagonal = ZeroDiffusion()
    theta: float | None = None


class DriftOverflowError(FloatingPointError):
    """Drift evaluation produced a non-finite coefficient."""

    def __init__(self, mode_index: int, message: str | None = None):
        self.mode_index = int(mode_index)
        super().__init__(message or f"non-finite drift in mode {mode_index + 1}")


def signed_power(s: np.ndarray, r: float) -> np.ndarray:
    """|s|^(r-1) s for r >= 1, |s|^r sgn(s) for r in (0,1); same formula."""
    return np.sign(s) * np.abs(s) ** r


def beta_value(family: FastDiff, t: float) -> float:
    return family.beta0 + family.beta_amp * np.sin(family.beta_freq * t)


def beta_sup(family: FastDiff) -> float:
    return family.beta0 + abs(family.beta_amp)


def default_theta(model: ModelSpec) -> float:
    """Model-level monotonicity strength used by checkers when unset."""
    if model.theta is not None:
        return model.theta
    fam = model.family
    if fam.kind == "porous":
        return fam.psi_scale
    if fam.kind == "fastdiff":
        return fam.r
    return 1.0


def make_space_for(model: ModelSpec, n_modes: int, gamma: float = 1.0, **kw):
    """Space with the weighting convention matching the family."""
    from .spaces import make_space
    weighted = model.family.kind != "plaplace"
    if model.family.kind == "plaplace" and gamma != 1.0:
        raise ValueError("p-Laplacian space requires gamma = 1")
    return make_space(n_modes, gamma, weighted=weighted, **kw)


def _check_finite(out: np.ndarray) -> np.ndarray:
    if not np.all(np.isfinite(out)):
        bad = np.argwhere(~np.isfinite(out))
        raise DriftOverflowError(int(bad[0][-1]))
    return out


def drift_and_split_rate(space: SpectralSpace, model: ModelSpec, t: float,
                         v: np.ndarray):
    """Galerkin drift plus the per-path stiffness rate used for splitting.

    The rate mu is the largest pointwise slope of the nonlinearity over the
    realized field values, so that A(v) + mu L v has a non-amplifying
    explicit residual; the exponential integrator treats -mu L exactly.
    For the linear cases (porous r = 1, p = 2) the split is exact and the
    residual vanishes.
    """
    fam = model.family
    v = np.asarray(v, dtype=float)
    if fam.kind == "porous":
        if fam.r == 1.0:
            psi = fam.psi_scale * v
            mu = np.full(v.shape[:-1], fam.psi_scale)
        else:
            g = to_grid(space, v)
            psi = from_grid(space, fam.psi_scale * signed_power(g, fam.r))
            amp = np.max(np.abs(g), axis=-1)
            mu = fam.psi_scale * fam.r * amp ** (fam.r - 1.0)
        out = -space.lambdas * psi + fam.phi_slope * v
    elif fam.kind == "fastdiff":
        g = to_grid(space, v)
        psi = from_grid(space, signed_power(g, fam.r))
        amp = np.max(np.abs(g), axis=-1)
        # slope at the largest amplitude; unbounded slopes near zero are
        # cut off by the amplitude itself (drift is bounded there)
        with np.errstate(divide="ignore"):
            mu = np.where(amp > 0.0, fam.r * amp ** (fam.r - 1.0), 0.0)
        out = -space.lambdas * psi + beta_value(fam, t) * v
    elif fam.kind == "plaplace":
        dg = grad_to_grid(space, v)
        if fam.p == 2.0:
            w = dg
            mu = np.ones(v.shape[:-1])
        else:
            w = np.abs(dg) ** (fam.p - 2.0) * dg
            mu = (fam.p - 1.0) * np.max(np.abs(dg), axis=-1) ** (fam.p - 2.0)
        # <A(v), e_i> = -m(w * e_i') by integration by parts
        out = -rowblock_matmul(w * space.quad_w, space.dsine.T)
    else:
        raise ValueError(f"unknown family: {fam!r}")
    return out, mu


def drift(space: SpectralSpace, model: ModelSpec, t: float,
          v: np.ndarray, *, check: bool = True) -> np.ndarray:
    """Galerkin projection of A(t, v); batches over leading axes of v."""
    with np.errstate(over="ignore", invalid="ignore"):
        out, _ = drift_and_split_rate(space, model, t, v)
    if check:
        _check_finite(out)
    return out


def pairing_drift_diff(space: SpectralSpace, model: ModelSpec, t: float,
                       v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """Dual pairing <A(t,v1) - A(t,v2), v1 - v2> in closed form."""
    fam = model.family
    v1 = np.asarray(v1, dtype=float)
    v2 = np.asarray(v2, dtype=float)
    d = v1 - v2
    if fam.kind == "plaplace":
        dg1 = grad_to_grid(space, v1)
        dg2 = grad_to_grid(space, v2)
        if fam.p == 2.0:
            w1, w2 = dg1, dg2
        else:
            w1 = np.abs(dg1) ** (fam.p - 2.0) * dg1
            w2 = np.abs(dg2) ** (fam.p - 2.0) * dg2
        return -quad(space, (w1 - w2) * (dg1 - dg2))
    g1 = to_grid(space, v1)
    g2 = to_grid(space, v2)
    if fam.kind == "porous":
        psi_term = fam.psi_scale * quad(
            space, (signed_power(g1, fam.r) - signed_power(g2, fam.r)) * (g1 - g2))
        zero_order = fam.phi_slope
    else:  # fastdiff
        psi_term = quad(
            space, (signed_power(g1, fam.r) - signed_power(g2, fam.r)) * (g1 - g2))
        zero_order = beta_value(fam, t)
    # the zero-order term pairs through (-L)^-1, i.e. the weighted metric
    return -psi_term + zero_order * np.sum(d * d / space.lambdas, axis=-1)


def b_diag(space: SpectralSpace, model: ModelSpec, t: float,
           v: np.ndarray) -> np.ndarray:
    """Per-mode diffusion amplitudes b_i(v); zeros for the zero spec."""
    spec = model.b_spec
    v = np.asarray(v, dtype=float)
    if isinstance(spec, ZeroDiffusion):
        return np.zeros_like(v)
    c = h_mode_coeffs(space, v)
    return spec.c0 * np.tanh(c) * spec.base


def apply_B(space: SpectralSpace, model: ModelSpec, t: float,
            v: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Diagonal action B(t, v) w on a state w."""
    return b_diag(space, model, t, v) * np.asarray(w, dtype=float)


def b_hs_diff(space: SpectralSpace, model: ModelSpec, t: float,
              v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
    """Hilbert-Schmidt norm of B(t,v1) - B(t,v2) at truncation."""
    if isinstance(model.b_spec, ZeroDiffusion):
        v1 = np.asarray(v1, dtype=float)
        return np.zeros(v1.shape[:-1])
    db = b_diag(space, model, t, v1) - b_diag(space, model, t, v2)
    return np.sqrt(np.sum(db * db, axis=-1))
