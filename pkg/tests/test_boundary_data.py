import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from oracles import distance_pairs, grid_sample_pairs, load_frozen, oracle_pairs
from sttomo.acceptance import eikonal_configurations
from sttomo.boundary_data import (BoundaryEvent, eikonal_defects, local_tau_table, minkowski_tau, pair_grid,
                                  recover_scattering_from_tau, riemannian_distance, riemannian_distance_batch,
                                  scattering_relation, tau_gradient, tau_table, time_separation,
                                  time_separation_batch)
from sttomo.flow import PhaseState, hamiltonian
from sttomo.identity import identity_rays
from sttomo.metric import Minkowski, SpatialDomain

DOM = SpatialDomain(2)
FROZEN = load_frozen()


def test_minkowski_table_closed_form():
    grid = pair_grid(DOM, 6, 6, kappa=1.3)
    tab = tau_table(Minkowski(DOM), grid)
    np.testing.assert_allclose(tab.tau, minkowski_tau(grid.z, grid.y), atol=1e-12)
    assert set(tab.status) == {"ok"}


def test_causality_edge_cases():
    g = Minkowski(DOM)
    z = BoundaryEvent(0.0, (1.0, 0.0))
    assert time_separation(g, z, BoundaryEvent(-1.0, (-1.0, 0.0))) == 0.0     # in the past
    assert time_separation(g, z, BoundaryEvent(1.0, (-1.0, 0.0))) == 0.0      # spacelike
    _, status = time_separation_batch(g, [z.z, z.z], [[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0]])
    assert list(status) == ["not_causal", "not_causal"]


@given(t1=st.floats(2.1, 4.0), t2=st.floats(2.1, 4.0), a=st.floats(0, 2 * np.pi), b=st.floats(0, 2 * np.pi))
def test_reverse_triangle_inequality_flat(t1, t2, a, b):
    z = np.array([0.0, 1.0, 0.0])
    w = np.array([t1, np.cos(a), np.sin(a)])
    y = np.array([t1 + t2, np.cos(b), np.sin(b)])
    tau, _ = time_separation_batch(Minkowski(DOM), [z, w, z], [w, y, y])
    assert tau[2] >= tau[0] + tau[1] - 1e-12


def test_bump_tau_matches_bruteforce_oracle(bump):
    pairs = oracle_pairs()
    tau, status = time_separation_batch(bump, [p[0] for p in pairs], [p[1] for p in pairs])
    assert list(status) == ["ok"] * len(pairs)
    np.testing.assert_allclose(tau, FROZEN["tau_bruteforce"], atol=1e-4)


def test_grid_spot_check_against_oracle(bump):
    z, y = grid_sample_pairs(DOM)
    tau, status = time_separation_batch(bump, z, y)
    assert np.all(status == "ok")
    np.testing.assert_allclose(tau, FROZEN["tau_grid_bruteforce"], atol=1e-4)


def test_tau_is_invariant_under_boundary_fixing_pullback(general_pair):
    g1, g2, _ = general_pair
    grid = pair_grid(DOM, 3, 3, kappa=1.05)
    a, b = tau_table(g1, grid), tau_table(g2, grid)
    assert np.all(a.status == "ok")
    np.testing.assert_allclose(a.tau, b.tau, atol=1e-8)


def test_tau_is_invariant_under_time_shift(bump):
    z, y = oracle_pairs()[1]
    a = time_separation_batch(bump, [z], [y])[0]
    b = time_separation_batch(bump, [z + [5.0, 0, 0]], [y + [5.0, 0, 0]])[0]
    assert a[0] == b[0]


def test_scattering_relation_agrees_for_pullback_pair(general_pair):
    g1, g2, _ = general_pair
    for X in identity_rays(DOM, 3):
        a = scattering_relation(g1, X)
        b = scattering_relation(g2, X)
        np.testing.assert_allclose(a.exit.z, b.exit.z, atol=1e-6)
        np.testing.assert_allclose(a.exit.zeta, b.exit.zeta, atol=1e-6)


def test_scattering_rejects_bad_entries(bump):
    with pytest.raises(ValueError, match="timelike"):
        scattering_relation(bump, PhaseState([0.0, -1.0, 0.0], [-0.5, 1.0, 0.0]))
    with pytest.raises(ValueError, match="boundary"):
        scattering_relation(bump, PhaseState([0.0, -0.5, 0.0], [-1.5, 1.0, 0.0]))
    with pytest.raises(ValueError, match="into the domain"):
        scattering_relation(bump, PhaseState([0.0, -1.0, 0.0], [-1.5, -1.0, 0.0]))


def test_exit_covector_recovered_from_tau(bump):
    X = identity_rays(DOM, 4)[1]
    ex = scattering_relation(bump, X).exit
    table = local_tau_table(bump, X.z, ex.z)
    rec = recover_scattering_from_tau(table, H_entry=hamiltonian(bump, X))
    np.testing.assert_allclose(rec, ex.zeta, atol=1e-4)


def test_minkowski_tau_gradient():
    g = Minkowski(DOM)
    z = np.array([0.0, 1.0, 0.0])
    y = np.array([2.6, -0.6, 0.8])
    d = y - z
    tau = np.sqrt(d[0] ** 2 - d[1:] @ d[1:])
    grad = tau_gradient(g, z, y)
    np.testing.assert_allclose(grad, np.r_[d[0], -d[1:]] / tau, atol=1e-6)


def test_eikonal(bump):
    z, y = eikonal_configurations(DOM, 2, 7)
    assert np.max(eikonal_defects(bump, z, y)) < 5e-3


def test_euclidean_distance():
    x, y = np.array([[1.0, 0.0], [0.0, -1.0]]), np.array([[-0.6, 0.8], [0.0, 1.0]])
    d, ok = riemannian_distance_batch(Minkowski(DOM), x, y)
    np.testing.assert_allclose(d, np.linalg.norm(x - y, axis=1), atol=1e-14)
    assert ok.all()


def test_distance_matches_lattice_oracle(bump):
    ref = FROZEN["dijkstra"]
    d, ok = riemannian_distance_batch(bump, np.array(ref["x"]), np.array(ref["y"]))
    assert ok.all()
    np.testing.assert_allclose(d, ref["d"], atol=1e-3)


def test_distance_symmetry(bump):
    x, y = distance_pairs()
    assert riemannian_distance(bump, x[0], y[0]) == pytest.approx(riemannian_distance(bump, y[0], x[0]), abs=1e-10)
