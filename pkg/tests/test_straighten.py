import numpy as np
import pytest

from sttomo.acceptance import straightened_pair
from sttomo.metric import BumpMetric, Minkowski, SpatialDomain, eval_metric, random_bump_metric
from sttomo.straighten import (build_straightening, pullback_full, special_form_residual,
                               tensor_difference)

DOM = SpatialDomain(2)


def lattice_points(axes):
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(axes))


@pytest.fixture(scope="module")
def bump_straightening(bump):
    return build_straightening(bump, lattice_n=17)


def test_flat_metric_gives_identity():
    st = build_straightening(Minkowski(DOM), lattice_n=9)
    y = lattice_points(st.default_axes())
    psi, D = st.jet(y, 1)
    np.testing.assert_allclose(psi, y, atol=1e-13)
    np.testing.assert_allclose(D, np.broadcast_to(np.eye(2), D.shape), atol=1e-13)


def test_special_form_metric_is_already_straight():
    g = random_bump_metric(DOM, 2e-2, seed=3, special_form=True)
    st = build_straightening(g, lattice_n=9)
    y = lattice_points(st.default_axes())
    np.testing.assert_allclose(st(y), y, atol=1e-13)


def test_map_is_close_to_identity(bump, bump_straightening):
    y = lattice_points(bump_straightening.default_axes())
    C = np.max(np.abs(bump_straightening(y) - y)) / bump.eps
    assert 0 < C < 2.0


def test_round_trip(bump_straightening):
    axes = build_straightening(Minkowski(DOM), lattice_n=33).default_axes()
    y = lattice_points(axes)[::23]
    np.testing.assert_allclose(bump_straightening.inverse(bump_straightening(y)), y, atol=1e-9)


def test_lattice_route_agrees_with_certified_route_at_nodes(bump, bump_straightening):
    lat = build_straightening(bump, mode="lattice", lattice_n=17)
    y = lattice_points(lat.default_axes())[::5]
    a, Da = lat.jet(y, 1)
    b, Db = bump_straightening.jet(y, 1)
    np.testing.assert_allclose(a, b, atol=1e-10)
    np.testing.assert_allclose(Da, Db, atol=1e-8)


def test_derivative_by_differences(bump_straightening):
    y = np.array([[0.1, 0.3], [-0.4, -0.2]])
    D = bump_straightening.jet(y, 1)[1]
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        fd = (bump_straightening(y + e) - bump_straightening(y - e)) / (2 * h)
        np.testing.assert_allclose(D[:, :, k], fd, atol=1e-8)


def test_straightened_special_pair_has_special_form(special_pair):
    _, g2, _ = special_pair
    st = build_straightening(g2, lattice_n=17)
    assert special_form_residual(pullback_full(g2, st), st.default_axes()) <= 1e-6


def test_residual_measures_a_known_violation():
    # omega_1 = eps * a * b(x) survives straightening because h is already special
    eps, a = 1e-2, 0.7
    g = BumpMetric(DOM, eps, [[0.0, 0.0]], [0.5], [0.0], [[a, 0.0]], np.zeros((1, 2, 2)))
    st = build_straightening(g, lattice_n=17)
    axes = (np.linspace(-1, 1, 17), np.linspace(-1, 1, 17))  # contains the bump center
    assert abs(special_form_residual(pullback_full(g, st), axes) - eps * a) <= 1e-6


def test_difference_against_flat_metric_follows_block_inverse():
    lam = 0.6
    g = BumpMetric(DOM, 2e-2, [[0.1, 0.0]], [0.5], [lam], [[0.0, 0.0]], np.zeros((1, 2, 2)), special_form=True)
    axes = (np.linspace(-0.9, 0.9, 11),) * 2
    td = tensor_difference(Minkowski(DOM), g, axes)
    G = eval_metric(g, lattice_points(axes)).reshape(11, 11, 3, 3)
    np.testing.assert_allclose(td.m, np.diag([-1.0, 1, 1]) - np.linalg.inv(G), atol=1e-15)
    np.testing.assert_allclose(td.m_lambda, 1.0 / -G[..., 0, 0] - 1.0, atol=1e-15)
    assert np.all(td.m_lambda <= 0)          # lam_tilde >= 1 when the coefficient is positive
    assert td.truncated == 0.0


def test_difference_reports_the_truncated_block(bump):
    # the tolerance follows the special-form residual, so a general metric is
    # accepted but the removed entries are reported
    axes = (np.linspace(-0.9, 0.9, 9),) * 2
    td = tensor_difference(Minkowski(DOM), bump, axes)
    assert 0 < td.truncated <= td.tolerance
    assert td.tolerance == pytest.approx(10 * special_form_residual(bump, axes))
    assert np.all(td.m[..., 1, :] == 0) and np.all(td.m[..., 0, 1] == 0)


def test_pullback_pair_is_matched_after_straightening(special_pair):
    g1, g2, _ = special_pair
    _, _, gt1, gt2, axes = straightened_pair(g1, g2, 17)
    td = tensor_difference(gt1, gt2, axes)
    assert td.sup_norm() <= 1e-4


def test_straightened_metric_has_no_derivatives(bump, bump_straightening):
    with pytest.raises(ValueError):
        pullback_full(bump, bump_straightening).jet(np.zeros((1, 2)), 1)
    with pytest.raises(ValueError):
        build_straightening(bump, mode="spline")
