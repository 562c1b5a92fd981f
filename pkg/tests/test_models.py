import numpy as np
import pytest

from spde_reflect import make_space, h_norm
from spde_reflect.models import (
    ModelSpec, Porous, PLaplace, FastDiff, ZeroDiffusion, LipschitzDiagonal,
    DriftOverflowError, drift, pairing_drift_diff, apply_B, b_hs_diff,
    unit_base, signed_power,
)
from spde_reflect.inequalities import fit_coercivity
from conftest import e_k


def test_family_validation():
    with pytest.raises(ValueError):
        Porous(r=0.5)
    with pytest.raises(ValueError):
        Porous(r=2.0, psi_scale=0.0)
    with pytest.raises(ValueError):
        PLaplace(p=1.5)
    with pytest.raises(ValueError):
        FastDiff(r=1.0)


def test_drift_linear_porous(porous_space, porous_linear):
    d = drift(porous_space, porous_linear, 0.0, e_k(16, 1))
    np.testing.assert_allclose(d, -np.pi ** 2 * e_k(16, 1), atol=1e-10)


def test_drift_plaplace_p2(plap_space, plap_p2):
    d = drift(plap_space, plap_p2, 0.0, e_k(16, 1))
    np.testing.assert_allclose(d, -np.pi ** 2 * e_k(16, 1), atol=1e-9)


def test_drift_porous_r3_analytic(porous_space):
    # (sqrt2 sin)^3 = (3 sqrt2/2) sin(pi x) - (sqrt2/2) sin(3 pi x)
    m = ModelSpec(Porous(r=3.0))
    d = drift(porous_space, m, 0.0, e_k(16, 1))
    assert d[0] == pytest.approx(-1.5 * np.pi ** 2, rel=1e-12)
    assert d[2] == pytest.approx(0.5 * (3.0 * np.pi) ** 2, rel=1e-12)
    assert np.max(np.abs(d[[1] + list(range(3, 16))])) < 1e-10


def test_drift_quadrature_oracle():
    # oversampled quadrature is the independent route for the projection
    m = ModelSpec(Porous(r=3.0))
    coarse = make_space(12, 1.0, oversample=4)
    fine = make_space(12, 1.0, oversample=64)
    gen = np.random.default_rng(4)
    v = gen.standard_normal(12) * np.arange(1, 13.0) ** -1.5
    d_coarse = drift(coarse, m, 0.0, v)
    d_fine = drift(fine, m, 0.0, v)
    np.testing.assert_allclose(d_coarse, d_fine, atol=1e-6)


def test_drift_fastdiff_zero_at_origin(porous_space, fastdiff_half):
    d = drift(porous_space, fastdiff_half, 0.0, np.zeros(16))
    np.testing.assert_array_equal(d, np.zeros(16))


def test_fastdiff_beta_term(porous_space):
    m = ModelSpec(FastDiff(r=0.5, beta0=2.0))
    base = ModelSpec(FastDiff(r=0.5))
    v = e_k(16, 1, 0.3)
    np.testing.assert_allclose(
        drift(porous_space, m, 0.0, v) - drift(porous_space, base, 0.0, v),
        2.0 * v, atol=1e-12)


def test_drift_overflow_flagged(porous_space):
    m = ModelSpec(Porous(r=3.0))
    huge = np.full(16, 1e200)
    with pytest.raises(DriftOverflowError) as exc:
        drift(porous_space, m, 0.0, huge)
    assert 1 <= exc.value.mode_index + 1 <= 16


def test_pairing_equal_points(porous_space, porous_r2):
    gen = np.random.default_rng(5)
    v = gen.standard_normal(16)
    assert pairing_drift_diff(porous_space, porous_r2, 0.0, v, v) == 0.0


def test_pairing_linear_porous(porous_space, porous_linear):
    got = pairing_drift_diff(porous_space, porous_linear, 0.0,
                             e_k(16, 1), np.zeros(16))
    assert got == pytest.approx(-1.0, rel=1e-12)


def test_pairing_plaplace_p2(plap_space, plap_p2):
    got = pairing_drift_diff(plap_space, plap_p2, 0.0, e_k(16, 1), np.zeros(16))
    assert got == pytest.approx(-np.pi ** 2, rel=1e-10)


def test_pairing_porous_phi_term(porous_space):
    m = ModelSpec(Porous(r=1.0, phi_slope=2.0))
    d = e_k(16, 1)
    base = pairing_drift_diff(porous_space, ModelSpec(Porous(r=1.0)), 0.0,
                              d, np.zeros(16))
    got = pairing_drift_diff(porous_space, m, 0.0, d, np.zeros(16))
    assert got - base == pytest.approx(2.0 / np.pi ** 2, rel=1e-12)


def test_linear_case_equivalence(plap_space):
    # porous r=1 and p-Laplacian p=2 share the drift on 100 random vectors
    gen = np.random.default_rng(6)
    v = gen.standard_normal((100, 16))
    d1 = drift(plap_space, ModelSpec(Porous(r=1.0)), 0.0, v)
    d2 = drift(plap_space, ModelSpec(PLaplace(p=2.0)), 0.0, v)
    assert np.max(np.abs(d1 - d2)) < 1e-8


@pytest.mark.parametrize("family,weighted", [
    (Porous(r=1.0), True),
    (Porous(r=2.0), True),
    (PLaplace(p=3.0), False),
    (FastDiff(r=0.5), True),
])
def test_monotonicity_sign(family, weighted):
    # pairing of the drift difference admits a one-sided linear bound
    sp = make_space(12, 1.0, weighted=weighted)
    m = ModelSpec(family)
    gen = np.random.default_rng(7)
    v1 = gen.standard_normal((10_000, 12)) * np.arange(1, 13.0) ** -1.0
    v2 = gen.standard_normal((10_000, 12)) * np.arange(1, 13.0) ** -1.0
    pair = pairing_drift_diff(sp, m, 0.0, v1, v2)
    d2 = h_norm(sp, v1 - v2) ** 2
    k_fit = np.max(pair / d2)
    assert k_fit <= 1e-9  # all these families are dissipative (B = 0)


def test_hemicontinuity_surrogate(porous_space, porous_r2):
    # s -> <A(v1 + s v2), v> has no isolated jumps: refining the s-grid
    # halves the largest increment
    gen = np.random.default_rng(8)
    v1 = gen.standard_normal(16) * np.arange(1, 17.0) ** -1.0
    v2 = gen.standard_normal(16) * np.arange(1, 17.0) ** -1.0
    v = gen.standard_normal(16) * np.arange(1, 17.0) ** -1.0

    def values(n_grid):
        s = np.linspace(-1.0, 1.0, n_grid)
        states = v1[None, :] + s[:, None] * v2[None, :]
        d = drift(porous_space, porous_r2, 0.0, states)
        return d @ v

    coarse = np.max(np.abs(np.diff(values(101))))
    fine = np.max(np.abs(np.diff(values(201))))
    assert fine <= 0.75 * coarse


@pytest.mark.parametrize("family,weighted", [
    (Porous(r=2.0), True),
    (PLaplace(p=3.0), False),
    (FastDiff(r=0.5), True),
])
def test_coercivity_surrogate(family, weighted):
    sp = make_space(12, 1.0, weighted=weighted)
    rep = fit_coercivity(sp, ModelSpec(family), 10_000)
    assert rep.verdict == "pass"


def test_coercivity_with_diffusion():
    sp = make_space(12, 1.0, weighted=True)
    m = ModelSpec(Porous(r=2.0),
                  b_spec=LipschitzDiagonal(1.0, unit_base(12)))
    rep = fit_coercivity(sp, m, 10_000)
    assert rep.verdict == "pass"


def test_apply_B_zero(porous_space, porous_linear):
    gen = np.random.default_rng(9)
    v, w = gen.standard_normal((2, 16))
    np.testing.assert_array_equal(
        apply_B(porous_space, porous_linear, 0.0, v, w), np.zeros(16))
    assert b_hs_diff(porous_space, porous_linear, 0.0, v, w) == 0.0


def test_b_hs_diff_same_point(porous_space):
    m = ModelSpec(Porous(r=1.0), b_spec=LipschitzDiagonal(1.0, unit_base(16)))
    gen = np.random.default_rng(10)
    v = gen.standard_normal(16)
    assert b_hs_diff(porous_space, m, 0.0, v, v) == 0.0


def test_b_hs_lipschitz_property(porous_space):
    c0 = 1.7
    m = ModelSpec(Porous(r=1.0), b_spec=LipschitzDiagonal(c0, unit_base(16)))
    gen = np.random.default_rng(11)
    v1 = gen.standard_normal((10_000, 16))
    v2 = gen.standard_normal((10_000, 16))
    lhs = b_hs_diff(porous_space, m, 0.0, v1, v2)
    rhs = c0 * h_norm(porous_space, v1 - v2)
    assert np.all(lhs <= rhs * (1.0 + 1e-12))


def test_signed_power_matches_definition():
    s = np.array([-2.0, -0.5, 0.0, 0.5, 2.0])
    np.testing.assert_allclose(signed_power(s, 3.0), np.abs(s) ** 2 * s)
    np.testing.assert_allclose(signed_power(s, 0.5),
                               np.sign(s) * np.abs(s) ** 0.5)


def test_unit_base_normalized():
    b = unit_base(16)
    assert np.sum(b * b) == pytest.approx(1.0)
