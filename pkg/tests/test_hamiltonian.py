import pytest
import numpy as np
from hypothesis import given, settings, strategies as st

from src.domain_grid import Box
from src.errors import HamiltonianDomainError
from src.hamiltonian import (AffineWeight, AnisotropicNorm, BoundaryDistanceWeight, ConstantWeight, IsotropicPower,
                             PlateauRadial, TabulatedRadial, WeightedIsotropic, bisect_extents, conjugate_l, eval_h,
                             polar_value, radial_extent, support_values, unit_directions)

lambdas = st.floats(min_value=0.05, max_value=5.0, allow_nan=False)
angles = st.floats(min_value=0.0, max_value=2 * np.pi, allow_nan=False)


@pytest.fixture
def anisotropic():
    return AnisotropicNorm([[4.0, 0.0], [0.0, 1.0]])


def test_eval_isotropic_euclidean():
    """H(p) = |p| for the s = 1 member"""
    assert eval_h(IsotropicPower(1.0), (0.3, 0.7), (3.0, 4.0)) == pytest.approx(5.0)


def test_eval_isotropic_quadratic():
    assert eval_h(IsotropicPower(2.0), (0.0, 0.0), (3.0, 4.0)) == pytest.approx(12.5)


def test_eval_weighted_divides_by_weight():
    spec = WeightedIsotropic(ConstantWeight(2.0))
    assert eval_h(spec, (0.5, 0.5), (3.0, 4.0)) == pytest.approx(2.5)


def test_eval_rejects_non_finite_momentum():
    with pytest.raises(ValueError):
        eval_h(IsotropicPower(1.0), (0.0, 0.0), (np.nan, 1.0))


def test_weighted_raises_where_weight_vanishes():
    spec = WeightedIsotropic(BoundaryDistanceWeight(Box()))
    with pytest.raises(HamiltonianDomainError):
        eval_h(spec, (0.0, 0.5), (1.0, 0.0))


def test_boundary_distance_weight_has_local_flag():
    spec = WeightedIsotropic(BoundaryDistanceWeight(Box()))
    assert spec.flags.d == 'local'
    assert spec.alpha(1.0) == 0.0
    assert spec.big_m(1.0) == pytest.approx(0.5)


def test_affine_weight_bounds():
    w = AffineWeight(1.0, 1.0, 0.0, (0.0, 0.0, 1.0, 1.0))
    assert w.lower_bound() == pytest.approx(1.0)
    assert w.upper_bound() == pytest.approx(2.0)
    spec = WeightedIsotropic(w)
    assert spec.flags.d == 'global'
    assert spec.alpha(2.0) == pytest.approx(2.0)
    assert spec.big_m(2.0) == pytest.approx(4.0)


def test_constant_weight_must_be_positive():
    with pytest.raises(ValueError):
        ConstantWeight(0.0)


def test_anisotropic_rejects_indefinite_matrix():
    with pytest.raises(ValueError):
        AnisotropicNorm([[1.0, 0.0], [0.0, -1.0]])


def test_plateau_values():
    spec = PlateauRadial(0.5, 0.75)
    values = spec.h(np.zeros((4, 2)), np.array([[0.25, 0], [0.6, 0], [0.75, 0], [1.0, 0]]))
    assert values == pytest.approx([0.25, 0.5, 0.5, 0.75])
    assert spec.flags.e is False


def test_plateau_conjugate_on_flat_level():
    """The plateau level set is the ball of radius b"""
    spec = PlateauRadial(0.5, 0.75)
    assert conjugate_l(spec, (0.0, 0.0), (1.0, 0.0), 0.5) == pytest.approx(0.75, abs=1e-3)
    assert conjugate_l(spec, (0.0, 0.0), (0.0, 1.0), 0.4) == pytest.approx(0.4, abs=1e-3)


def test_plateau_left_gap_jumps_at_breakpoint():
    spec = PlateauRadial(0.5, 0.75)
    assert spec.left_gap(0.5, 0.01) == pytest.approx(0.26)


def test_anisotropic_conjugate(anisotropic):
    """L for diag(4, 1) along e1 is 1/2"""
    assert conjugate_l(anisotropic, (0.0, 0.0), (1.0, 0.0), 1.0) == pytest.approx(0.5, rel=1e-3)
    assert conjugate_l(anisotropic, (0.0, 0.0), (0.0, 1.0), 1.0) == pytest.approx(1.0, rel=1e-3)


def test_radial_extent_matches_closed_forms(anisotropic):
    e = np.array([np.cos(0.3), np.sin(0.3)])
    for spec in (IsotropicPower(1.0), IsotropicPower(2.0), anisotropic, PlateauRadial(),
                 WeightedIsotropic(AffineWeight(1.0, 1.0, 0.0, (0, 0, 1, 1)))):
        for lam in (0.3, 1.0, 2.5):
            closed = spec.extents(np.array([[0.4, 0.2]]), e[None, :], lam)[0, 0]
            assert radial_extent(spec, (0.4, 0.2), e, lam) == pytest.approx(closed, rel=1e-7, abs=1e-9)


def test_radial_extent_validates_inputs():
    spec = IsotropicPower(1.0)
    with pytest.raises(ValueError):
        radial_extent(spec, (0, 0), (1.0, 1.0), 1.0)
    with pytest.raises(ValueError):
        radial_extent(spec, (0, 0), (1.0, 0.0), -1.0)


def test_conjugate_rejects_coarse_direction_set():
    with pytest.raises(ValueError):
        conjugate_l(IsotropicPower(1.0), (0, 0), (1.0, 0.0), 1.0, n_dirs=4)


def test_support_values_shape():
    q = unit_directions(5)
    out = support_values(IsotropicPower(1.0), np.zeros((3, 2)), q, 2.0)
    assert out.shape == (3, 5)
    assert out == pytest.approx(np.full((3, 5), 2.0))


def test_anisotropic_support_close_to_exact(anisotropic):
    for q in unit_directions(12):
        approx = conjugate_l(anisotropic, (0, 0), q, 1.3)
        assert approx == pytest.approx(anisotropic.exact_support(q, 1.3), rel=1e-2)


@settings(max_examples=40, deadline=None)
@given(lam=lambdas, theta=angles, scale=st.floats(min_value=0.0, max_value=10.0))
def test_conjugate_positively_homogeneous(lam, theta, scale):
    spec = AnisotropicNorm([[2.0, 0.5], [0.5, 1.0]])
    q = np.array([np.cos(theta), np.sin(theta)])
    assert conjugate_l(spec, (0, 0), scale * q, lam) == pytest.approx(scale * conjugate_l(spec, (0, 0), q, lam),
                                                                      rel=1e-9, abs=1e-12)


@settings(max_examples=40, deadline=None)
@given(lam=lambdas, theta=angles, step=st.floats(min_value=0.0, max_value=2.0))
def test_conjugate_monotone_in_lambda(lam, theta, step):
    q = np.array([np.cos(theta), np.sin(theta)])
    for spec in (IsotropicPower(2.0), PlateauRadial(), AnisotropicNorm([[4.0, 0.0], [0.0, 1.0]])):
        assert conjugate_l(spec, (0, 0), q, lam) <= conjugate_l(spec, (0, 0), q, lam + step) + 1e-12


@settings(max_examples=40, deadline=None)
@given(lam=lambdas, theta1=angles, theta2=angles, r1=st.floats(min_value=0.0, max_value=3.0),
       r2=st.floats(min_value=0.0, max_value=3.0))
def test_conjugate_subadditive(lam, theta1, theta2, r1, r2):
    """L(x, q1 + q2) <= L(x, q1) + L(x, q2) for every built-in kind"""
    q1 = r1 * np.array([np.cos(theta1), np.sin(theta1)])
    q2 = r2 * np.array([np.cos(theta2), np.sin(theta2)])
    for spec in (IsotropicPower(1.0), IsotropicPower(2.0), AnisotropicNorm([[2.0, 0.5], [0.5, 1.0]]), PlateauRadial(),
                 WeightedIsotropic(AffineWeight(1.0, 1.0, 0.0, (0, 0, 1, 1)))):
        whole = conjugate_l(spec, (0.3, 0.6), q1 + q2, lam)
        parts = conjugate_l(spec, (0.3, 0.6), q1, lam) + conjugate_l(spec, (0.3, 0.6), q2, lam)
        assert whole <= parts + 1e-9 * (1.0 + parts)


@settings(max_examples=30, deadline=None)
@given(lam=lambdas, theta=angles)
def test_conjugate_within_coercivity_bounds(lam, theta):
    q = np.array([np.cos(theta), np.sin(theta)])
    for spec in (IsotropicPower(1.0), AnisotropicNorm([[4.0, 0.0], [0.0, 1.0]]),
                 WeightedIsotropic(AffineWeight(1.0, 1.0, 0.0, (0, 0, 1, 1)))):
        value = conjugate_l(spec, (0.3, 0.3), q, lam)
        assert spec.alpha(lam) - 1e-9 <= value <= spec.big_m(lam) + 1e-9


@settings(max_examples=30, deadline=None)
@given(lam=lambdas, theta=angles)
def test_polar_at_most_one_inside_sublevel(lam, theta):
    spec = AnisotropicNorm([[4.0, 0.0], [0.0, 1.0]])
    e = np.array([np.cos(theta), np.sin(theta)])
    p = 0.99 * radial_extent(spec, (0, 0), e, lam) * e
    assert polar_value(spec, (0, 0), p, lam) <= 1.0 + 1e-6


def test_metric_scale_consistency():
    """L_lambda = phi(lambda) * L_1 for families that scale"""
    q = np.array([0.6, 0.8])
    for spec in (IsotropicPower(2.0), AnisotropicNorm([[4.0, 0.0], [0.0, 1.0]]), PlateauRadial()):
        for lam in (0.25, 0.5, 3.0):
            ratio = spec.metric_scale(lam) / spec.metric_scale(1.0)
            assert conjugate_l(spec, (0, 0), q, lam) == pytest.approx(ratio * conjugate_l(spec, (0, 0), q, 1.0),
                                                                      rel=1e-9)


def test_bisect_extents_handles_zero_lambda():
    out = bisect_extents(IsotropicPower(1.0), np.zeros((2, 2)), unit_directions(4), 0.0)
    assert np.all(out == 0.0)


def test_describe_reports_kind_and_flags():
    doc = PlateauRadial().describe()
    assert doc['kind'] == 'plateau-radial'
    assert doc['flags']['e'] is False


@pytest.fixture
def tabulated():
    # 2x1 grid, 4 directions, lambdas 0, 1, 2; rho = lambda * (1 + node)
    lambdas = [0.0, 1.0, 2.0]
    table = np.zeros((2, 4, 3))
    for node in range(2):
        for k, lam in enumerate(lambdas):
            table[node, :, k] = lam * (1 + node)
    return TabulatedRadial(table, lambdas, origin=(0.0, 0.0), h=1.0, nx=2, ny=1)


def test_tabulated_interpolates_lambda(tabulated):
    e = np.array([[1.0, 0.0]])
    assert tabulated.extents(np.array([[0.0, 0.0]]), e, 0.5)[0, 0] == pytest.approx(0.5)
    assert tabulated.extents(np.array([[1.0, 0.0]]), e, 1.5)[0, 0] == pytest.approx(3.0)


def test_tabulated_h_inverts_extents(tabulated):
    assert tabulated.h(np.array([[1.0, 0.0]]), np.array([[0.0, 3.0]]))[0] == pytest.approx(1.5)
    assert tabulated.alpha(1.0) == pytest.approx(1.0)
    assert tabulated.big_m(1.0) == pytest.approx(2.0)


def test_tabulated_rejects_decreasing_profiles():
    table = np.zeros((1, 4, 2))
    table[:, :, 0] = 1.0
    with pytest.raises(ValueError):
        TabulatedRadial(table, [0.0, 1.0], origin=(0, 0), h=1.0, nx=1, ny=1)
