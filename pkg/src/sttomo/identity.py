"""The integral identity obtained by differentiating a composite flow.

For two metrics and an initial phase state ``X0`` outside the domain put

    F(s) = X_{g2}(l - s, X_{g1}(s, X0)),

where ``l`` is the exit parameter.  When the scattering data of the two
metrics agree, ``F(0) = F(l)``, and the derivative

    F'(s) = dX_{g2}/dX0 (l - s, X_{g1}(s)) (V_{g1} - V_{g2})(X_{g1}(s))

integrates to zero.  This module samples ``F`` on a uniform grid,
evaluates ``F'`` both by finite differences and by the closed form, and
derives the weighted ray transform carried by the covector components.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from . import kernels
from .errors import ScatteringMismatch
from .flow import PhaseState, propagate, raise_for_status
from .metric import StationaryMetric

SCATTER_TOL = 1e-5
DEFAULT_SAMPLES = 512


@dataclass
class IdentityRecord:
    """Sampled identity along one ray.

    ``F``, ``Fprime_closed`` and ``Fprime_fd`` have shape ``(N + 1, 2D)``;
    ``B`` has shape ``(N + 1, 2D, 2D)``.  ``residual`` is the norm of the
    quadrature of the closed-form derivative, which vanishes for equal
    scattering data.  ``consistency_closed`` and ``consistency_fd`` compare
    each quadrature with ``F(l) - F(0)``.
    """

    X0: PhaseState
    ell: float
    s: np.ndarray
    F: np.ndarray
    Fprime_closed: np.ndarray
    Fprime_fd: np.ndarray
    B: np.ndarray
    residual: float
    consistency_closed: float
    consistency_fd: float
    transform: np.ndarray
    scatter_gap: float

    @property
    def D(self) -> int:
        return self.F.shape[1] // 2

    def blocks(self):
        """``(B11, B12, B21, B22)`` as arrays over the samples."""
        D = self.D
        return (self.B[:, :D, :D], self.B[:, :D, D:], self.B[:, D:, :D], self.B[:, D:, D:])

    def max_B(self) -> float:
        return float(np.max(np.linalg.norm(self.B, ord=2, axis=(1, 2))))


def _field(g, q, p, spatial=False):
    """Hamilton vector field with the raw metric derivatives."""
    off = 0 if spatial else 1
    jet = g.spatial_jet(q, 1) if spatial else g.jet(q[:, 1:], 1)
    Ginv, dGinv, _ = kernels.inverse_jet(jet[0], jet[1], None)
    qd, pd, _ = kernels.hamilton_rhs(Ginv, dGinv, None, p, None, off)
    return np.concatenate([qd, pd], axis=1)


def inverse_difference(g1: StationaryMetric, g2: StationaryMetric, x, spatial: bool = False):
    """``m = g1^-1 - g2^-1`` and its spatial gradient (derivative index last).

    With ``spatial`` only the Riemannian parts enter.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    if spatial:
        j1, j2 = g1.spatial_jet(x, 1), g2.spatial_jet(x, 1)
    else:
        j1, j2 = g1.jet(x, 1), g2.jet(x, 1)
    a = kernels.inverse_jet(j1[0], j1[1], None)
    b = kernels.inverse_jet(j2[0], j2[1], None)
    return a[0] - b[0], a[1] - b[1]


def hamiltonian_field_difference(g1: StationaryMetric, g2: StationaryMetric, X,
                                 spatial: bool = False) -> np.ndarray:
    """``(m zeta, -1/2 grad_x m zeta.zeta)``; the time slot of the gradient is zero.

    ``X`` is a :class:`PhaseState` or a ``(B, 2D)`` array of states.
    """
    if isinstance(X, PhaseState):
        return hamiltonian_field_difference(g1, g2, X.as_vector()[None], spatial)[0]
    X = np.atleast_2d(np.asarray(X, dtype=float))
    D = X.shape[1] // 2
    off = 0 if spatial else 1
    z, zeta = X[:, :D], X[:, D:]
    m, dm = inverse_difference(g1, g2, z[:, off:], spatial)
    top = np.einsum("bij,bj->bi", m, zeta)
    bottom = np.zeros_like(zeta)
    bottom[:, off:] = -0.5 * np.einsum("bijk,bi,bj->bk", dm, zeta, zeta)
    return np.concatenate([top, bottom], axis=1)


def field_difference_direct(g1, g2, X, spatial: bool = False) -> np.ndarray:
    """``V_{g1}(X) - V_{g2}(X)`` from the two Hamilton systems separately."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    D = X.shape[1] // 2
    return _field(g1, X[:, :D], X[:, D:], spatial) - _field(g2, X[:, :D], X[:, D:], spatial)


FD_DELTA = 1e-3
_FD_OFFSETS = np.array([-2.0, -1.0, 1.0, 2.0])
_FD_WEIGHTS = np.array([1.0, -8.0, 8.0, -1.0]) / 12.0


def _stencil_derivative(g1, g2, q1, p1, remain, nsteps, delta, spatial):
    """Fourth-order central difference of ``F`` at every sample point.

    ``F(s_k + j delta)`` is obtained by moving ``X_{g1}(s_k)`` by ``j delta``
    along the ``g1`` flow (one Runge-Kutta step) and then flowing ``g2``
    for ``l - s_k - j delta`` with the step count used at ``s_k``.  The
    integration error is then a smooth function of the offset and drops
    out of the difference quotient.
    """
    M, D = q1.shape
    J = len(_FD_OFFSETS)
    off = np.repeat(_FD_OFFSETS * delta, M)
    qa = np.tile(q1, (J, 1))
    pa = np.tile(p1, (J, 1))
    mid = propagate(g1, qa, pa, spatial=spatial, until="param", s_end=off,
                    n_steps=np.ones(J * M, dtype=int))
    rest = np.tile(remain, J) - off
    fin = propagate(g2, mid.q, mid.p, spatial=spatial, until="param", s_end=rest,
                    n_steps=np.tile(np.maximum(nsteps, 1), J))
    vals = np.concatenate([fin.q, fin.p], axis=1).reshape(J, M, 2 * D)
    return np.tensordot(_FD_WEIGHTS, vals, axes=1) / delta


def _free_variational(free, D, s):
    """Flat-space linearisation ``[[I, s S], [0, I]]`` with ``S`` the sign matrix in ``free``."""
    out = np.broadcast_to(free, (len(s), 2 * D, 2 * D)).copy()
    out[:, :D, D:] *= s[:, None, None]
    return out


def exit_parameter(g: StationaryMetric, X0: PhaseState, step=None) -> float:
    res = propagate(g, X0.z[None], X0.zeta[None], until="exit", step=step)
    raise_for_status(res)
    return float(res.s[0])


def identity_records(g1: StationaryMetric, g2: StationaryMetric, states, n_samples: int = DEFAULT_SAMPLES,
                     check_scattering: bool = True, scatter_tol: float = SCATTER_TOL,
                     fd_delta: float | None = FD_DELTA, spatial: bool = False):
    """Identity records for a list of initial states, batched over rays.

    Each ray uses ``n_samples`` (even) uniform steps of its own exit
    parameter ``l`` under ``g1``.  The flows of ``g2`` from the sample
    points share that step, so every composite ``F(s_k)`` is integrated
    on the same grid.  ``fd_delta=None`` skips the finite-difference route
    (its fields are then NaN), which roughly halves the cost.  With
    ``spatial`` the states live in the phase space of the Riemannian part
    and ``B`` is measured against ``[[I, (l - s) I], [0, I]]``.
    """
    N = int(n_samples)
    if N % 2 or N < 4:
        raise ValueError("n_samples must be an even integer >= 4")
    states = list(states)
    R = len(states)
    z0 = np.array([X.z for X in states], dtype=float)
    p0 = np.array([X.zeta for X in states], dtype=float)
    D = z0.shape[1]
    off = 0 if spatial else 1
    first = propagate(g1, z0, p0, spatial=spatial, until="exit")
    raise_for_status(first)
    ell = first.s
    ray = propagate(g1, z0, p0, spatial=spatial, until="param", s_end=ell, n_steps=np.full(R, N),
                    record=True)
    q1 = ray.record["q"]                 # (N + 1, R, D)
    p1 = ray.record["p"]
    k = np.arange(N + 1)
    s = k[:, None] * (ell[None, :] / N)   # (N + 1, R)
    # g2 flows from every sample point, for the remaining parameter l - s_k
    q_start = q1.reshape(-1, D)
    p_start = p1.reshape(-1, D)
    remain = (ell[None, :] - s).reshape(-1)
    nsteps = np.broadcast_to((N - k)[:, None], (N + 1, R)).reshape(-1)
    run = nsteps > 0
    qF, pF = q_start.copy(), p_start.copy()
    JF = np.broadcast_to(np.eye(2 * D), (len(qF), 2 * D, 2 * D)).copy()
    res = propagate(g2, q_start[run], p_start[run], spatial=spatial, until="param", s_end=remain[run],
                    n_steps=nsteps[run], variational=True)
    qF[run], pF[run], JF[run] = res.q, res.p, res.J
    F = np.concatenate([qF, pF], axis=1).reshape(N + 1, R, 2 * D)
    J = JF.reshape(N + 1, R, 2 * D, 2 * D)
    X1 = np.concatenate([q1, p1], axis=2)
    dV = hamiltonian_field_difference(g1, g2, X1.reshape(-1, 2 * D), spatial).reshape(N + 1, R, 2 * D)
    Fp = np.einsum("krij,krj->kri", J, dV)
    if fd_delta is None:
        Ffd_all = np.full_like(Fp, np.nan)
    else:
        Ffd_all = _stencil_derivative(g1, g2, q_start, p_start, remain, nsteps,
                                      fd_delta, spatial).reshape(N + 1, R, 2 * D)
    free = np.eye(2 * D)
    free[:D, D:] = np.diag(np.r_[np.zeros(off), np.ones(D - off)]) - np.diag(np.r_[np.ones(off), np.zeros(D - off)])
    records = []
    for r in range(R):
        sr = s[:, r]
        gap = float(np.max(np.abs(F[-1, r] - F[0, r])))
        if check_scattering and gap > scatter_tol:
            raise ScatteringMismatch(f"ray {r}: exit states differ by {gap:.3e}")
        Ffd = Ffd_all[:, r]
        I_closed = simpson(Fp[:, r], x=sr, axis=0)
        I_fd = simpson(Ffd, x=sr, axis=0)
        jump = F[-1, r] - F[0, r]
        Bm = J[:, r] - _free_variational(free, D, ell[r] - sr)
        # weighted transform integrand from the blocks directly
        zeta = p1[:, r]
        m, dm = inverse_difference(g1, g2, q1[:, r, off:], spatial)
        grad = np.zeros_like(zeta)
        grad[:, off:] = np.einsum("kijl,ki,kj->kl", dm, zeta, zeta)
        B21 = Bm[:, D:, :D]
        B22 = Bm[:, D:, D:]
        integrand = (grad - 2.0 * np.einsum("kij,kjl,kl->ki", B21, m, zeta)
                     + np.einsum("kij,kj->ki", B22, grad))
        transform = simpson(integrand, x=sr, axis=0)
        records.append(IdentityRecord(
            X0=states[r], ell=float(ell[r]), s=sr, F=F[:, r], Fprime_closed=Fp[:, r], Fprime_fd=Ffd,
            B=Bm, residual=float(np.max(np.abs(I_closed))),
            consistency_closed=float(np.max(np.abs(I_closed - jump))),
            consistency_fd=float(np.max(np.abs(I_fd - jump))),
            transform=transform, scatter_gap=gap))
    return records


def F_curve(g1, g2, X0: PhaseState, n_samples: int = DEFAULT_SAMPLES, check_scattering: bool = True):
    return identity_records(g1, g2, [X0], n_samples, check_scattering)[0]


def integral_identity_residual(record: IdentityRecord):
    """``(residual, consistency_closed, consistency_fd)`` for one record."""
    return record.residual, record.consistency_closed, record.consistency_fd


def B_blocks(g1, g2, X0: PhaseState, s, n_samples: int = DEFAULT_SAMPLES):
    """The four blocks of ``B`` at the sample nearest to each requested ``s``."""
    rec = F_curve(g1, g2, X0, n_samples, check_scattering=False)
    idx = np.clip(np.rint(np.atleast_1d(s) / rec.ell * (len(rec.s) - 1)).astype(int), 0, len(rec.s) - 1)
    return tuple(b[idx] for b in rec.blocks())


def weighted_ray_transform(g1, g2, X0: PhaseState, n_samples: int = DEFAULT_SAMPLES,
                           check_scattering: bool = True) -> np.ndarray:
    return F_curve(g1, g2, X0, n_samples, check_scattering).transform


def identity_rays(domain, count: int, varrho: float = -1.05, max_tilt: float = 0.6):
    """Initial states on the boundary with covector ``(varrho, xi)`` pointing inward.

    ``xi`` is the inward normal tilted by a deterministic angle in
    ``[-max_tilt, max_tilt]`` so the family sweeps across the interior.
    """
    x = domain.boundary_points(count)
    nrm = -x / np.linalg.norm(x, axis=1, keepdims=True)
    tilt = max_tilt * np.cos(np.pi * (np.arange(count) + 0.5) * 0.618033988749895 * 7)
    if domain.n == 2:
        t = np.stack([-nrm[:, 1], nrm[:, 0]], axis=1)
    else:
        ref = np.where(np.abs(nrm[:, :1]) < 0.9, np.eye(3)[0], np.eye(3)[1])
        t = np.cross(nrm, ref)
        t /= np.linalg.norm(t, axis=1, keepdims=True)
    xi = np.cos(tilt)[:, None] * nrm + np.sin(tilt)[:, None] * t
    states = []
    for i in range(count):
        states.append(PhaseState(np.concatenate([[0.0], x[i]]), np.concatenate([[varrho], xi[i]])))
    return states
