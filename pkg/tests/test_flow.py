import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sttomo.errors import GrazingRay, NoExit
from sttomo.flow import (PhaseState, hamiltonian, hamiltonian_batch, integrate_bicharacteristic,
                         integrate_riemannian, minkowski_variational, propagate, raise_for_status,
                         variational_flow)
from sttomo.metric import Minkowski, SpatialDomain, random_bump_metric

DOM = SpatialDomain(2)
X0 = PhaseState([0.0, -1.1, 0.05], [-1.0, 1.0, 0.0])


def symplectic_form(D):
    O = np.zeros((2 * D, 2 * D))
    O[:D, D:] = np.eye(D)
    O[D:, :D] = -np.eye(D)
    return O


@pytest.mark.parametrize("flat", [True, False])
def test_minkowski_rays_are_straight(flat):
    g = Minkowski(DOM) if flat else random_bump_metric(DOM, 0.0, seed=1)
    xi = np.array([0.6, 0.8])
    X = PhaseState([0.0, -0.3, 0.2], np.r_[-1.0, xi])
    tr = integrate_bicharacteristic(g, X, mode="param", s=1.7)
    s = tr.s[:, None]
    np.testing.assert_allclose(tr.z, X.z + s * np.r_[1.0, xi], atol=1e-13)
    np.testing.assert_allclose(tr.zeta, np.broadcast_to(X.zeta, tr.zeta.shape), atol=1e-15)


def test_exit_close_to_minkowski_exit(bump):
    ref = integrate_bicharacteristic(Minkowski(DOM), X0).exit_state
    a = integrate_bicharacteristic(bump, X0).exit_state
    fine = integrate_bicharacteristic(bump, X0, step=bump.domain.rho * 2.5e-4).exit_state
    # the default step is already converged against a four times finer run
    assert np.max(np.abs(a.z - fine.z)) < 1e-10
    C = np.max(np.abs(a.z - ref.z)) / bump.eps
    assert 0 < C < 5.0


def test_riemannian_geodesic_stays_near_the_line(bump):
    x0 = np.array([-1.0, 0.1])
    tr = integrate_riemannian(bump, x0)
    dev = np.max(np.linalg.norm(tr.z - (x0 + tr.s[:, None] * np.array([1.0, 0.0])), axis=1))
    assert dev / bump.eps < 5.0
    assert tr.drift < 1e-10


def test_special_form_keeps_normal_covector():
    g = random_bump_metric(DOM, 3e-2, seed=7, special_form=True)
    tr = integrate_riemannian(g, [-1.0, 0.2])
    fine = integrate_riemannian(g, [-1.0, 0.2], step=g.domain.rho * 1e-4)
    np.testing.assert_allclose(tr.zeta, np.broadcast_to([1.0, 0.0], tr.zeta.shape), atol=1e-14)
    np.testing.assert_allclose(tr.exit_state.z, fine.exit_state.z, atol=1e-12)


def test_minkowski_variational_block():
    J = variational_flow(Minkowski(DOM), X0, 0.8)
    np.testing.assert_allclose(J, minkowski_variational(2, 0.8)[0], atol=1e-15)
    assert minkowski_variational(2, 0.8)[0][0, 3] == -0.8


def test_variational_matches_finite_differences(bump):
    X = PhaseState([0.0, -0.9, 0.1], [-1.05, 0.95, 0.2])
    J = variational_flow(bump, X, 1.0)
    v0 = X.as_vector()
    h = 1e-5
    fd = np.empty((6, 6))
    for j in range(6):
        e = np.zeros(6)
        e[j] = h
        ends = []
        for sgn in (1, -1):
            v = v0 + sgn * e
            r = propagate(bump, v[None, :3], v[None, 3:], until="param", s_end=1.0)
            ends.append(np.r_[r.q[0], r.p[0]])
        fd[:, j] = (ends[0] - ends[1]) / (2 * h)
    np.testing.assert_allclose(J, fd, atol=1e-6)


@given(seed=st.integers(0, 1000), s=st.floats(0.2, 1.5))
def test_variational_matrix_is_symplectic(seed, s):
    g = random_bump_metric(DOM, 2e-2, seed=seed)
    J = variational_flow(g, X0, s, step=5e-3)
    O = symplectic_form(3)
    assert np.max(np.abs(J.T @ O @ J - O)) < 1e-9


def test_hamiltonian_conserved(bump):
    tr = integrate_bicharacteristic(bump, X0)
    assert tr.drift < 1e-10
    assert hamiltonian(bump, X0) == pytest.approx(0.0, abs=1e-15)


def test_backward_flow_returns(bump):
    q0 = np.array([[0.0, -0.5, 0.1], [0.0, 0.2, -0.3]])
    p0 = np.array([[-1.1, 1.0, 0.2], [-1.0, -0.3, 0.9]])
    fwd = propagate(bump, q0, p0, until="param", s_end=0.9)
    back = propagate(bump, fwd.q, fwd.p, until="param", s_end=-0.9)
    np.testing.assert_allclose(back.q, q0, atol=1e-12)
    np.testing.assert_allclose(back.p, p0, atol=1e-12)


def test_time_shift_invariance(bump):
    a = integrate_bicharacteristic(bump, X0).exit_state
    shifted = PhaseState(X0.z + np.array([3.0, 0, 0]), X0.zeta)
    b = integrate_bicharacteristic(bump, shifted).exit_state
    np.testing.assert_allclose(b.z - a.z, [3.0, 0, 0], atol=1e-12)
    np.testing.assert_array_equal(a.zeta, b.zeta)


def test_batch_equals_single_rays(bump):
    q0 = np.array([[0.0, -1.1, 0.05], [0.0, -1.05, -0.3], [0.0, 0.0, -1.1]])
    p0 = np.array([[-1.0, 1.0, 0.0], [-1.1, 1.0, 0.3], [-1.0, 0.1, 1.0]])
    batch = propagate(bump, q0, p0, until="exit")
    for i in range(3):
        one = propagate(bump, q0[i:i + 1], p0[i:i + 1], until="exit")
        np.testing.assert_array_equal(one.q[0], batch.q[i])


def test_failures_are_reported(bump):
    with pytest.raises(NoExit):
        raise_for_status(propagate(bump, X0.z[None], X0.zeta[None], until="exit", budget=0.05))
    away = PhaseState([0.0, -1.1, 0.0], [-1.0, -1.0, 0.0])
    with pytest.raises(GrazingRay):
        integrate_bicharacteristic(bump, away)


def test_exit_point_on_boundary(bump):
    q0 = np.array([[0.0, -1.1, 0.05], [0.0, -1.05, -0.3]])
    p0 = np.array([[-1.0, 1.0, 0.0], [-1.1, 1.0, 0.3]])
    res = propagate(bump, q0, p0, until="exit")
    np.testing.assert_allclose(np.linalg.norm(res.q[:, 1:], axis=1), 1.0, atol=1e-11)
    assert np.all(res.status == 0)
    np.testing.assert_allclose(hamiltonian_batch(bump, res.q, res.p), hamiltonian_batch(bump, q0, p0), atol=1e-13)
