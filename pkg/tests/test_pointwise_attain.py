import pytest
import numpy as np

from src.domain_grid import Annulus, Box, ScalarField, build_domain
from src.errors import ChainStallError, ReportError
from src.finsler_dist import EdgeWeights
from src.hamiltonian import IsotropicPower, PlateauRadial
from src.pointwise_attain import (PointwiseField, ascent_chain, attainment_set, chain_checks, mu_local,
                                  plateau_control, pointwise_h, verify_inclusion)


@pytest.fixture
def box():
    return build_domain(Box(), 0.125)


@pytest.fixture
def eikonal(box):
    return EdgeWeights(IsotropicPower(1.0), box)


@pytest.fixture
def ramp(box):
    return ScalarField(box.coords()[:, 0].copy(), 'ramp')


def test_mu_local_of_ramp(box, eikonal, ramp):
    centre = box.node_index(4, 4)
    assert mu_local(eikonal.spec, box, ramp, centre, 3 * box.h, edge_weights=eikonal) == pytest.approx(1.0, rel=1e-9)


def test_mu_local_oblique_ramp_is_close(box, eikonal):
    u = box.coords() @ np.array([0.6, 0.8])
    value = mu_local(eikonal.spec, box, u, box.node_index(4, 4), 3 * box.h, edge_weights=eikonal)
    assert value == pytest.approx(1.0, rel=0.05)
    assert value <= 1.0 + 1e-9


def test_mu_local_on_plateau_takes_breakpoint(box):
    """a slope of 0.6 sits on the flat level of H, so the smallest level is 0.5"""
    ew = EdgeWeights(PlateauRadial(0.5, 0.75), box)
    u = 0.6 * box.coords()[:, 0]
    assert mu_local(ew.spec, box, u, box.node_index(4, 4), 2 * box.h, edge_weights=ew) == pytest.approx(0.5, abs=1e-6)


def test_mu_local_of_constant_is_zero(box, eikonal):
    assert mu_local(eikonal.spec, box, np.ones(box.n_nodes), 40, 2 * box.h, edge_weights=eikonal) == 0.0


def test_mu_local_validates_arguments(box, eikonal, ramp):
    with pytest.raises(ValueError):
        mu_local(eikonal.spec, box, ramp, 40, box.h, edge_weights=eikonal)
    ring = build_domain(Annulus(r_in=0.5, r_out=1.0), 0.125)
    hole = int(np.flatnonzero(~ring.inside)[0])
    with pytest.raises(ValueError):
        mu_local(eikonal.spec, ring, np.zeros(ring.n_nodes), hole, 0.5)


def test_bisection_agrees_with_scaled_inversion(box, ramp):
    """a non-scaling Hamiltonian goes through bisection and lands on the same value"""
    ew = EdgeWeights(IsotropicPower(1.0), box)
    scaled = mu_local(ew.spec, box, ramp, 40, 3 * box.h, edge_weights=ew)
    with pytest.MonkeyPatch.context() as mp:
        mp.setattr(IsotropicPower, 'metric_scale', lambda self, lam: None)
        fresh = EdgeWeights(IsotropicPower(1.0), box)
        bisected = mu_local(fresh.spec, box, ramp, 40, 3 * box.h, tol_lambda=1e-8, edge_weights=fresh)
    assert bisected == pytest.approx(scaled, abs=1e-7)


def test_pointwise_field_of_ramp(box, eikonal, ramp):
    pw = pointwise_h(eikonal.spec, box, ramp, edge_weights=eikonal, workers=1)
    assert pw.mu_of_r.shape == (box.n_nodes, 2)
    assert pw.h_du[box.interior_nodes] == pytest.approx(np.ones(len(box.interior_nodes)), rel=1e-9)
    assert pw.monotonicity_violations == 0
    assert pw.sup_value() == pytest.approx(1.0)
    assert pw.as_field().name == 'h_du'


def test_pointwise_radii_validation(box, eikonal, ramp):
    with pytest.raises(ValueError):
        pointwise_h(eikonal.spec, box, ramp, radii=[2 * box.h, 3 * box.h], edge_weights=eikonal)
    with pytest.raises(ValueError):
        pointwise_h(eikonal.spec, box, ramp, radii=[3 * box.h, box.h], edge_weights=eikonal)


def test_pointwise_skips_nan_nodes(box, eikonal, ramp):
    values = ramp.values.copy()
    values[40] = np.nan
    pw = pointwise_h(eikonal.spec, box, values, radii=[2 * box.h], edge_weights=eikonal, workers=1)
    assert np.isnan(pw.h_du[40])
    assert np.isfinite(pw.h_du[41])


def _field(h_du):
    h_du = np.asarray(h_du, dtype=float)
    interior = np.array([False, True, True, True, True])
    return PointwiseField(radii=np.array([0.5]), mu_of_r=h_du[:, None], h_du=h_du, interior=interior)


def test_attainment_set_threshold():
    pw = _field([3.0, 1.0, 0.97, 0.5, np.nan])
    assert attainment_set(pw, 0.05).tolist() == [1, 2]
    assert attainment_set(pw, 0.0).tolist() == [1]
    assert attainment_set(pw).tolist() == [1, 2]
    with pytest.raises(ValueError):
        attainment_set(pw, -0.1)


def test_attainment_set_grows_with_tau():
    pw = _field([0.0, 1.0, 0.9, 0.8, 0.7])
    sizes = [len(attainment_set(pw, tau)) for tau in (0.0, 0.15, 0.25, 0.5)]
    assert sizes == sorted(sizes)


def test_ascent_chain_runs_along_ramp(box, eikonal, ramp):
    x0 = box.node_index(4, 4)
    up = ascent_chain(eikonal.spec, box, ramp, x0, 1.0, 'up', eikonal)
    down = ascent_chain(eikonal.spec, box, ramp, x0, 1.0, 'down', eikonal)
    assert box.boundary_mask[up.end] and box.boundary_mask[down.end]
    assert box.coords([up.end])[0] == pytest.approx([1.0, 0.5])
    assert box.coords([down.end])[0] == pytest.approx([0.0, 0.5])
    for inc, d in up.steps + down.steps:
        assert inc == pytest.approx(d, abs=1e-9)

    checks = chain_checks(eikonal, ramp, up, down)
    assert checks['endpoints_on_boundary']
    assert checks['max_step_defect'] <= 1e-9
    assert checks['additivity_error'] <= 1e-9
    assert checks['length_rel_error'] <= 1e-9
    assert checks['slope_gap'] == pytest.approx(0.0, abs=1e-9)
    assert checks['inside_fraction'] == 1.0


def test_chain_starting_on_boundary_is_trivial(box, eikonal, ramp):
    chain = ascent_chain(eikonal.spec, box, ramp, 0, 1.0, 'up', eikonal)
    assert chain.nodes == [0]
    assert chain.length() == 0.0


def test_chain_stalls_when_mu_is_too_large(box, eikonal, ramp):
    x0 = box.node_index(4, 4)
    with pytest.raises(ChainStallError) as info:
        ascent_chain(eikonal.spec, box, ramp, x0, 2.0, 'up', eikonal)
    assert info.value.node == x0
    assert info.value.gap < 0


def test_ascent_chain_validates_arguments(box, eikonal, ramp):
    with pytest.raises(ValueError):
        ascent_chain(eikonal.spec, box, ramp, 40, 1.0, 'sideways', eikonal)
    with pytest.raises(ValueError):
        ascent_chain(eikonal.spec, box, ramp, 40, 0.0, 'up', eikonal)


def test_verify_inclusion_against_itself(box, eikonal, ramp):
    report = verify_inclusion(eikonal.spec, box, ramp, {'copy': ramp}, edge_weights=eikonal, workers=1,
                              n_chain_seeds=2)
    verdict = report.inclusion_verdicts['copy']
    assert verdict['inclusion_fraction'] == 1.0
    assert verdict['outside_fraction'] == 0.0
    assert verdict['reverse_inclusion_fraction'] == 1.0
    assert report.mu == pytest.approx(1.0)
    assert 1 <= len(report.chains) <= 2
    assert all('stalled' in c for c in report.chains)
    doc = report.to_dict(box)
    assert doc['set_size'] == len(report.set)
    assert set(doc['inclusion_verdicts']) == {'copy'}


def test_verify_inclusion_names_unnamed_fields(box, eikonal, ramp):
    report = verify_inclusion(eikonal.spec, box, ramp, [ramp.values], edge_weights=eikonal, workers=1,
                              n_chain_seeds=0)
    assert list(report.inclusion_verdicts) == ['other_0']
    assert report.chains == []


def test_verify_inclusion_empty_set_raises(box, eikonal):
    u = np.full(box.n_nodes, np.nan)
    u[box.boundary_nodes] = 0.0
    with pytest.raises(ReportError):
        verify_inclusion(eikonal.spec, box, u, {}, edge_weights=eikonal, workers=1)


def test_plateau_control_on_ramp(box, eikonal, ramp):
    gap, node = plateau_control(eikonal.spec, box, ramp, box.node_index(4, 4), 1.0, 0.25, eikonal)
    assert gap == pytest.approx(0.0, abs=1e-12)
    assert box.inside[node]
    with pytest.raises(ValueError):
        plateau_control(eikonal.spec, box, ramp, box.node_index(4, 4), 1.0, 10.0, eikonal)
