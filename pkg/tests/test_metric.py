import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import bump_matrix, load_frozen
from sttomo.errors import GridTooCoarse, NotBoundaryFixing, Singular
from sttomo.metric import (BumpDiffeo, BumpMetric, ComposedDiffeo, IdentityDiffeo, Minkowski, ProductMetric,
                           SpatialDomain, classify_covector, closeness_seminorm, eval_metric, inverse_metric,
                           pullback_metric, random_bump_diffeo, random_bump_metric, special_block_defect)

DOM = SpatialDomain(2)


def single_bump(eps, center=(0.1, -0.2), width=0.4, lam=1.0):
    return BumpMetric(DOM, eps, [center], [width], [lam], [[0.0, 0.0]], np.zeros((1, 2, 2)))


def test_lapse_at_bump_center():
    g = single_bump(1e-2)
    G = eval_metric(g, [0.1, -0.2])
    assert G[0, 0] == pytest.approx(-(1.0 + 1e-2), abs=1e-15)
    np.testing.assert_array_equal(G[1:, 1:], np.eye(2))


def test_metric_is_flat_outside_bumps(bump):
    far = np.array([[0.999, 0.0], [0.0, -0.999], [2.0, 2.0]])
    np.testing.assert_array_equal(eval_metric(bump, far), np.broadcast_to(np.diag([-1.0, 1, 1]), (3, 3, 3)))


def test_matches_hand_written_matrix(bump, rng):
    x = rng.uniform(-1, 1, (100, 2))
    np.testing.assert_allclose(eval_metric(bump, x), bump_matrix(bump, x), atol=1e-15)


@given(seed=st.integers(0, 10_000), eps=st.floats(1e-4, 5e-2),
       x=st.tuples(st.floats(-0.9, 0.9), st.floats(-0.9, 0.9)))
def test_inverse_residual(seed, eps, x):
    g = random_bump_metric(DOM, eps, seed=seed)
    M = inverse_metric(g, np.array(x))
    assert np.linalg.norm(M @ eval_metric(g, np.array(x)) - np.eye(3)) < 1e-12


@given(seed=st.integers(0, 10_000), eps=st.floats(1e-4, 5e-2))
def test_small_perturbations_stay_lorentzian(seed, eps):
    g = random_bump_metric(DOM, eps, seed=seed)
    x = DOM.boundary_points(16) * 0.5
    w = np.linalg.eigvalsh(eval_metric(g, x))
    assert np.all(w[:, 0] < 0) and np.all(w[:, 1:] > 0)


def test_singular_metric_raises():
    g = single_bump(-1.0)  # lapse vanishes at the bump center
    with pytest.raises(Singular):
        inverse_metric(g, [0.1, -0.2])


def test_special_form_inverse_keeps_block_pattern(rng):
    g = random_bump_metric(DOM, 3e-2, seed=4, special_form=True)
    x = rng.uniform(-0.7, 0.7, (50, 2))
    assert special_block_defect(inverse_metric(g, x)) < 1e-14
    assert special_block_defect(eval_metric(g, x)) == 0.0


def test_seminorm_matches_dense_oracle(bump):
    dense = load_frozen()["seminorm_k2_dense"]
    assert closeness_seminorm(bump, k=2, grid=64) == pytest.approx(dense, rel=1e-2)


def test_seminorm_scales_with_eps(bump):
    a = closeness_seminorm(bump, k=1, grid=48)
    b = closeness_seminorm(bump.scaled(2e-2), k=1, grid=48)
    assert b == pytest.approx(2 * a, rel=1e-12)


def test_seminorm_order_beyond_jet_uses_differences():
    g = pullback_metric(random_bump_metric(DOM, 1e-2, seed=1), random_bump_diffeo(DOM, 5e-3, seed=2))
    assert closeness_seminorm(g, k=3, grid=48) >= closeness_seminorm(g, k=2, grid=48)


def test_seminorm_refuses_coarse_grid(bump):
    with pytest.raises(GridTooCoarse):
        closeness_seminorm(bump, grid=4)


def test_classify_covector():
    g = Minkowski(DOM)
    z = np.zeros(3)
    assert classify_covector(g, z, [-1.0, 1.0, 0.0]) == ("null", True)
    assert classify_covector(g, z, [-2.0, 1.0, 0.0]) == ("timelike", True)
    assert classify_covector(g, z, [2.0, 1.0, 0.0]) == ("timelike", False)
    assert classify_covector(g, z, [0.5, 1.0, 0.0])[0] == "spacelike"


def test_domain_validation():
    with pytest.raises(ValueError):
        SpatialDomain(4)
    with pytest.raises(ValueError):
        SpatialDomain(2, r_omega=1.5, rho=1.25)
    with pytest.raises(ValueError):
        SpatialDomain(2, H_offset=-0.5)
    assert SpatialDomain(3).H_offset == -1.25


def test_boundary_points_lie_on_the_sphere():
    for n in (2, 3):
        d = SpatialDomain(n)
        np.testing.assert_allclose(np.linalg.norm(d.boundary_points(37), axis=1), 1.0, atol=1e-15)


def test_diffeo_must_fix_the_boundary():
    with pytest.raises(NotBoundaryFixing):
        BumpDiffeo(DOM, [[0.5, 0.0]], [0.6], [[0.01, 0.0]])


def test_pullback_of_minkowski_is_dpsi_gram(rng):
    psi = random_bump_diffeo(DOM, 2e-2, seed=3)
    g = pullback_metric(Minkowski(DOM), psi)
    x = rng.uniform(-0.8, 0.8, (20, 2))
    G = eval_metric(g, x)
    D = psi.jet(x, 1)[1]
    np.testing.assert_allclose(G[:, 1:, 1:], np.swapaxes(D, 1, 2) @ D, atol=1e-15)
    np.testing.assert_allclose(G[:, 0, 0], -1.0, atol=1e-15)
    np.testing.assert_allclose(G[:, 0, 1:], 0.0, atol=1e-15)


def test_pullback_derivatives_by_differences(bump, rng):
    g = pullback_metric(bump, random_bump_diffeo(DOM, 5e-3, seed=2))
    x = rng.uniform(-0.6, 0.6, (6, 2))
    jet = g.jet(x, 2)
    for order in (1, 2):
        for k in range(2):
            def central(h):
                e = np.zeros(2)
                e[k] = h
                return (g.jet(x + e, order - 1)[order - 1] - g.jet(x - e, order - 1)[order - 1]) / (2 * h)
            fd = (4 * central(5e-5) - central(1e-4)) / 3
            np.testing.assert_allclose(jet[order][..., k], fd, atol=1e-9)


def test_composed_diffeo_chain_rule(rng):
    a = random_bump_diffeo(DOM, 2e-2, seed=5)
    b = random_bump_diffeo(DOM, 2e-2, seed=6)
    c = ComposedDiffeo(a, b)
    x = rng.uniform(-0.6, 0.6, (5, 2))
    J = c.jet(x, 3)
    np.testing.assert_allclose(J[0], a(b(x)), atol=1e-15)
    for order in (1, 2, 3):
        for k in range(2):
            def central(h):
                e = np.zeros(2)
                e[k] = h
                return (c.jet(x + e, order - 1)[order - 1] - c.jet(x - e, order - 1)[order - 1]) / (2 * h)
            # Richardson step: the bumps have large fourth derivatives
            fd = (4 * central(5e-5) - central(1e-4)) / 3
            np.testing.assert_allclose(J[order][..., k], fd, atol=1e-7)


def test_diffeo_inverse_round_trip(rng):
    psi = random_bump_diffeo(DOM, 2e-2, seed=3)
    x = rng.uniform(-0.9, 0.9, (64, 2))
    np.testing.assert_allclose(psi.inverse(psi(x)), x, atol=1e-13)
    np.testing.assert_array_equal(IdentityDiffeo(2)(x), x)


def test_product_metric_keeps_only_h(bump, rng):
    p = ProductMetric(bump)
    x = rng.uniform(-0.8, 0.8, (10, 2))
    G, dG = p.jet(x, 1)
    G0, dG0 = bump.jet(x, 1)
    np.testing.assert_array_equal(G[:, 1:, 1:], G0[:, 1:, 1:])
    np.testing.assert_array_equal(G[:, 0, 0], -1.0)
    np.testing.assert_array_equal(dG[:, 0], 0.0)
    np.testing.assert_array_equal(dG[:, 1:, 1:], dG0[:, 1:, 1:])
