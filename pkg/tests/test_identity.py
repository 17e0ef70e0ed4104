import numpy as np
import pytest

from sttomo.acceptance import control_metric
from sttomo.errors import ScatteringMismatch
from sttomo.flow import PhaseState
from sttomo.identity import (B_blocks, field_difference_direct, hamiltonian_field_difference, identity_records,
                             identity_rays, integral_identity_residual, weighted_ray_transform)
from sttomo.metric import Minkowski, SpatialDomain, pullback_metric, random_bump_diffeo, random_bump_metric

DOM = SpatialDomain(2)
RAYS = identity_rays(DOM, 3)


@pytest.fixture(scope="module")
def record(general_pair):
    g1, g2, _ = general_pair
    return identity_records(g1, g2, RAYS[:1], 512)[0]


def test_field_difference_two_routes(general_pair, rng):
    g1, g2, _ = general_pair
    X = np.concatenate([np.zeros((20, 1)), rng.uniform(-0.7, 0.7, (20, 2)), rng.normal(size=(20, 3))], axis=1)
    np.testing.assert_allclose(hamiltonian_field_difference(g1, g2, X), field_difference_direct(g1, g2, X),
                               atol=1e-10)
    one = hamiltonian_field_difference(g1, g2, PhaseState(X[0, :3], X[0, 3:]))
    np.testing.assert_allclose(one, hamiltonian_field_difference(g1, g2, X[:1])[0])


def test_composite_returns_to_its_start(record):
    assert np.max(np.abs(record.F[-1] - record.F[0])) <= 1e-6
    assert np.max(np.abs(record.F - record.F[0])) > 1e-4


def test_residual_at_default_samples(record):
    residual, closed, fd = integral_identity_residual(record)
    assert residual <= 1e-6
    assert closed <= 1e-6 and fd <= 1e-6


def test_finite_differences_match_closed_form(record):
    assert np.max(np.abs(record.Fprime_fd - record.Fprime_closed)) <= 1e-5


def test_residual_converges_at_fourth_order(general_pair):
    g1, g2, _ = general_pair
    a, b = (identity_records(g1, g2, RAYS[1:2], N, check_scattering=False, fd_delta=None)[0].residual
            for N in (128, 256))
    assert np.log2(a / b) >= 3.5


def test_equal_metrics_give_zero(bump):
    rec = identity_records(bump, bump, RAYS[:1], 64, fd_delta=None)[0]
    assert rec.residual == 0.0
    assert np.all(rec.transform == 0.0)


def test_flat_pair_has_no_B(rng):
    flat = Minkowski(DOM)
    rec = identity_records(flat, flat, RAYS[:1], 16)[0]
    assert np.max(np.abs(rec.B)) < 1e-13


def test_negative_control(general_pair):
    g1, _, _ = general_pair
    g3 = control_metric(DOM, seed=0, special_form=False)
    with pytest.raises(ScatteringMismatch):
        identity_records(g1, g3, RAYS[:1], 128, fd_delta=None)
    rec = identity_records(g1, g3, RAYS[:1], 128, check_scattering=False, fd_delta=None)[0]
    assert rec.residual >= 1e-3


def test_B_is_linear_in_eps():
    base = random_bump_metric(DOM, 1.0, seed=1)
    peaks = []
    for e in (1e-2, 5e-3):
        g1 = base.scaled(e)
        g2 = pullback_metric(g1, random_bump_diffeo(DOM, 0.5 * e, seed=2))
        recs = identity_records(g1, g2, RAYS[:2], 64, check_scattering=False, fd_delta=None)
        peaks.append(max(r.max_B() for r in recs))
    assert 1.8 <= peaks[0] / peaks[1] <= 2.2


def test_blocks_and_transform_helpers(general_pair, record):
    g1, g2, _ = general_pair
    X0 = RAYS[0]
    B11, B12, B21, B22 = B_blocks(g1, g2, X0, [0.0, record.ell], n_samples=128)
    assert B11.shape == (2, 3, 3)
    np.testing.assert_allclose(B11[-1], np.zeros((3, 3)), atol=1e-14)    # nothing left to flow at s = l
    w = weighted_ray_transform(g1, g2, X0, n_samples=128, check_scattering=False)
    assert w.shape == (3,) and w[0] == 0.0


def test_sample_count_validated(bump):
    with pytest.raises(ValueError):
        identity_records(bump, bump, RAYS[:1], 63)
