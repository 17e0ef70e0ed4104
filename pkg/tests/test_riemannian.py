import numpy as np
import pytest

from oracles import load_frozen
from sttomo.acceptance import constructed_pair, control_metric, straightened_pair
from sttomo.errors import RankDeficient
from sttomo.fourier import LatticeM, random_synthetic_m
from sttomo.identity import identity_rays
from sttomo.metric import Minkowski, ProductMetric, SpatialDomain, random_bump_metric
from sttomo.riemannian import (b21_factorization_check, boundary_distance_table, boundary_pairs,
                               direction_set, normal_rays, product_projection_gap, product_transform_gap,
                               reduced_integrand_check, riemannian_pipeline, riemannian_transform)
from sttomo.straighten import tensor_difference

DOM = SpatialDomain(2)


def test_direction_set_in_two_dimensions_is_trivial():
    ds = direction_set(2)
    np.testing.assert_array_equal(ds.ps, [[1.0]])
    assert ds.entries == [(1, 1)]
    assert ds.cond == 1.0


def test_direction_set_in_three_dimensions():
    ds = direction_set(3)
    assert ds.entries == [(1, 1), (1, 2), (2, 2)]
    assert ds.cond == pytest.approx(load_frozen()["direction_cond_n3"], rel=1e-12)
    with pytest.raises(RankDeficient):
        direction_set(3, cond_bound=1.0)
    with pytest.raises(ValueError):
        direction_set(4)


def test_direction_set_solve_round_trip(rng):
    ds = direction_set(3)
    entries = rng.normal(size=(3, 7, 2))
    values = np.einsum("de,e...->d...", ds.matrix, entries)
    np.testing.assert_allclose(ds.solve(values), entries, atol=1e-12)


def test_minkowski_distances_are_chords():
    tab = boundary_distance_table(Minkowski(DOM), 12, cone=None)
    assert tab.converged.all()
    np.testing.assert_allclose(tab.d, np.linalg.norm(tab.y - tab.x, axis=1), atol=1e-10)


def test_cone_restricts_chord_directions():
    x, y = boundary_pairs(DOM, 24, cone=0.2)
    assert len(x) > 0
    d = y - x
    assert np.all(np.abs(d[:, 0]) / np.linalg.norm(d, axis=1) >= np.cos(0.2) - 1e-12)
    assert len(boundary_pairs(DOM, 24, cone=None)[0]) == 24 * 23


def test_isometric_metrics_share_distance_tables(special_pair):
    g1, g2, _ = special_pair
    t1 = boundary_distance_table(g1, 16)
    t2 = boundary_distance_table(g2, 16)
    assert t1.converged.all() and t2.converged.all()
    np.testing.assert_allclose(t1.d, t2.d, atol=1e-6)


def test_normal_rays_start_on_the_boundary_heading_inwards():
    for sign in (1.0, -1.0):
        for X in normal_rays(DOM, 5, tilt=0.1, sign=sign):
            assert np.linalg.norm(X.z) == pytest.approx(DOM.r_omega, abs=1e-12)
            assert np.linalg.norm(X.zeta) == pytest.approx(1.0, abs=1e-12)
            assert X.z @ X.zeta < 0


def test_b21_vanishes_on_normal_rays_and_grows_with_the_tilt():
    h1 = random_bump_metric(DOM, 1e-2, seed=1, special_form=True)
    h2 = random_bump_metric(DOM, 1e-2, seed=5, special_form=True)
    rep = b21_factorization_check(h1, h2, count=3, n_samples=64)
    assert rep.normal_max <= 1e-6
    assert rep.exponent >= 0.9
    assert rep.passed
    assert rep.as_dict()["passed"] is True


def test_reduced_integrand_divides_out_psi():
    m = random_synthetic_m(2, seed=4, max_wavenumber=2.0, sigma=0.3, components="lambda")
    x = np.array([[0.1, -0.2], [0.4, 0.3], [-0.5, 0.0]])
    etas = np.array([[1.0, 2.0], [-3.0, 0.5], [2.0, -1.0]])
    assert reduced_integrand_check(m, x, etas, [1.0]) <= 1e-12


def test_pipeline_accepts_an_isometric_pair_and_rejects_a_control():
    g1, g2, _ = constructed_pair(DOM, 1e-2, seed=0)
    rep = riemannian_pipeline(g1, g2, 1e-2, lattice_n=17)
    assert rep.passed, rep.reasons
    assert rep.cond == 1.0
    bad = riemannian_pipeline(g1, control_metric(DOM, 1e-2), 1e-2, lattice_n=17)
    assert not bad.passed
    assert bad.as_dict()["reasons"]


def test_product_flow_projects_onto_the_spatial_flow():
    p = ProductMetric(random_bump_metric(DOM, 1e-2, seed=1))
    assert product_projection_gap(p, identity_rays(DOM, 4), 1.0) == 0.0


def test_product_transform_matches_spatial_transform():
    p1 = ProductMetric(random_bump_metric(DOM, 1e-2, seed=1))
    p3 = ProductMetric(control_metric(DOM, 1e-2, special_form=False))
    _, _, t1, t3, axes = straightened_pair(p1, p3, 17)
    m = LatticeM.from_difference(tensor_difference(t1, t3, axes))
    etas = np.array([[2.0, 1.0], [3.0, -2.0], [1.0, 5.0]])
    assert product_transform_gap(m, etas, [1.0]) <= 1e-6
    assert np.any(riemannian_transform(m, etas, [1.0]) != 0.0)
