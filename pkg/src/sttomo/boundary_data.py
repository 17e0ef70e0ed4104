"""Boundary measurements: time separation, boundary distance, scattering data.

The time separation between two events is computed by shooting: the
geodesic from ``z`` is parametrised on the fixed interval ``[0, ell]`` with
``ell = |y - z|`` (Euclidean spacetime length) and Newton's method adjusts the
initial covector until the end point hits ``y``.  Because the Hamiltonian is
conserved, the proper time of that geodesic is ``ell * sqrt(-2 H)``.  This is
the same geodesic as the proper-time parametrisation, rescaled.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateRoot, NoConvergence, NonsmoothTau
from .flow import PhaseState, hamiltonian_batch, propagate, raise_for_status
from .metric import SpatialDomain, StationaryMetric, classify_covector

SHOOT_TOL = 1e-11       # Newton stopping rule on the end-point residual
TAU_TOL = 5e-7          # documented accuracy of a single shooting solve
MAX_NEWTON = 50
CHORD_SWITCH = 1e-6     # below this residual the last Jacobian is reused


@dataclass(frozen=True)
class BoundaryEvent:
    t: float
    x: tuple

    @property
    def z(self) -> np.ndarray:
        return np.concatenate([[self.t], np.asarray(self.x, dtype=float)])


@dataclass
class ShootResult:
    zeta: np.ndarray
    ell: np.ndarray
    residual: np.ndarray
    iterations: np.ndarray
    converged: np.ndarray


def shoot(metric: StationaryMetric, z, y, *, spatial: bool = False, tol: float = SHOOT_TOL,
          maxiter: int = MAX_NEWTON, step: float | None = None) -> ShootResult:
    """Solve the two-point problem for a batch of endpoint pairs.

    Returns initial covectors ``zeta`` such that the flow of ``zeta`` from
    ``z`` reaches ``y`` at parameter ``ell = |y - z|``.  Pairs that do not
    converge are flagged in ``converged``; nothing is silently zeroed.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    B, D = z.shape
    delta = y - z
    ell = np.linalg.norm(delta, axis=1)
    trivial = ell < 1e-14
    zeta = np.zeros_like(delta)
    zeta[~trivial] = delta[~trivial] / ell[~trivial, None]
    if not spatial:
        zeta[:, 0] *= -1.0  # Minkowski covector of the straight segment
    A = np.zeros((B, D, D))
    have_A = np.zeros(B, dtype=bool)
    residual = np.where(trivial, 0.0, np.inf)
    iterations = np.zeros(B, dtype=int)
    converged = trivial.copy()
    gave_up = np.zeros(B, dtype=bool)
    while True:
        todo = np.nonzero(~converged & ~gave_up)[0]
        if len(todo) == 0:
            break
        # full Newton while far away, then a chord step with the last Jacobian
        need_var = (~have_A[todo]) | (residual[todo] > CHORD_SWITCH)
        for var, sel in ((True, todo[need_var]), (False, todo[~need_var])):
            if len(sel) == 0:
                continue
            res = propagate(metric, z[sel], zeta[sel], spatial=spatial, until="param",
                            s_end=ell[sel], step=step, variational=var)
            r = res.q - y[sel]
            rn = np.max(np.abs(r), axis=1)
            residual[sel] = rn
            if var:
                A[sel] = res.J[:, :D, D:]
                have_A[sel] = True
            ok = rn <= tol
            converged[sel[ok]] = True
            upd, ru = sel[~ok], r[~ok]
            cap = iterations[upd] >= maxiter
            gave_up[upd[cap]] = True
            go = upd[~cap]
            if len(go):
                zeta[go] -= np.linalg.solve(A[go], ru[~cap][..., None])[..., 0]
                iterations[go] += 1
    return ShootResult(zeta, ell, residual, iterations, converged)


def _tau_from_shot(metric, z, shot):
    H = hamiltonian_batch(metric, z, shot.zeta)
    future = shot.zeta[:, 0] < 0.0
    tau = np.where((H < 0) & future, shot.ell * np.sqrt(np.maximum(-2.0 * H, 0.0)), 0.0)
    return tau, H


def time_separation_batch(g: StationaryMetric, z, y, step: float | None = None):
    """Time separation for a batch of event pairs.

    Returns ``(tau, status)`` where status is ``"ok"``, ``"not_causal"`` or
    ``"no_convergence"`` (tau is NaN there).  Only time differences enter,
    so the computation is exactly invariant under common time shifts.
    """
    z = np.atleast_2d(np.asarray(z, dtype=float)).copy()
    y = np.atleast_2d(np.asarray(y, dtype=float)).copy()
    y[:, 0] -= z[:, 0]
    z[:, 0] = 0.0
    B = len(z)
    tau = np.zeros(B)
    status = np.array(["not_causal"] * B, dtype=object)
    cand = y[:, 0] > 0.0
    if cand.any():
        idx = np.nonzero(cand)[0]
        shot = shoot(g, z[idx], y[idx], step=step)
        t, _ = _tau_from_shot(g, z[idx], shot)
        t = np.where(shot.converged, t, np.nan)
        tau[idx] = t
        status[idx] = np.where(~shot.converged, "no_convergence", np.where(t > 0, "ok", "not_causal"))
    return tau, status


def time_separation(g: StationaryMetric, z: BoundaryEvent, y: BoundaryEvent,
                    step: float | None = None) -> float:
    """Supremum of proper time over causal curves from ``z`` to ``y``."""
    tau, status = time_separation_batch(g, z.z[None], y.z[None], step=step)
    if status[0] == "no_convergence":
        raise NoConvergence(f"shooting from {z} to {y} did not converge in {MAX_NEWTON} iterations")
    return float(tau[0])


def minkowski_tau(z, y) -> np.ndarray:
    z = np.atleast_2d(z)
    y = np.atleast_2d(y)
    d = y - z
    q = d[:, 0] ** 2 - np.sum(d[:, 1:] ** 2, axis=1)
    return np.where((d[:, 0] > 0) & (q > 0), np.sqrt(np.maximum(q, 0.0)), 0.0)


@dataclass
class PairGrid:
    z: np.ndarray
    y: np.ndarray


def pair_grid(domain: SpatialDomain, n_src: int, n_dst: int, kappa=1.05, t0: float = 0.0,
              cone: float | None = None) -> PairGrid:
    """Boundary event pairs with the first event at ``t = 0``.

    The second event sits at time ``kappa * |x - y| + t0``; ``kappa`` may be a
    scalar or an ``(n_src, n_dst)`` array.  Targets are offset by half a
    lattice step so no pair has coincident spatial points.  With ``cone``
    set, only pairs whose chord makes an angle at most ``cone`` with the
    normal of the reference hyperplane are kept.
    """
    xs = domain.boundary_points(n_src)
    if domain.n == 2:
        phi = 2.0 * np.pi * (np.arange(n_dst) + 0.5) / n_dst
        ys = domain.r_omega * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    else:
        ys = domain.boundary_points(2 * n_dst)[1::2]
    X = np.repeat(xs, n_dst, axis=0)
    Y = np.tile(ys, (n_src, 1))
    dist = np.linalg.norm(Y - X, axis=1)
    k = np.broadcast_to(np.asarray(kappa, dtype=float), (n_src, n_dst)).ravel()
    t = k * dist + t0
    keep = np.ones(len(X), dtype=bool)
    if cone is not None:
        cosang = np.abs(Y[:, 0] - X[:, 0]) / np.maximum(dist, 1e-300)
        keep = cosang >= np.cos(cone)
    Z = np.concatenate([np.zeros((len(X), 1)), X], axis=1)[keep]
    Yz = np.concatenate([t[:, None], Y], axis=1)[keep]
    return PairGrid(Z, Yz)


@dataclass
class TauTable:
    z: np.ndarray
    y: np.ndarray
    tau: np.ndarray
    status: np.ndarray

    def records(self):
        for a, b, t, s in zip(self.z, self.y, self.tau, self.status):
            yield {"z": [float(v) for v in a], "y": [float(v) for v in b],
                   "tau": None if not np.isfinite(t) else float(t), "status": str(s)}


def tau_table(g: StationaryMetric, grid: PairGrid, step: float | None = None) -> TauTable:
    """Time separation on every pair of ``grid``; failures are flagged, not raised."""
    tau, status = time_separation_batch(g, grid.z, grid.y, step=step)
    return TauTable(grid.z, grid.y, tau, status)


# ---------------------------------------------------------------------------
# scattering relation


@dataclass
class ScatteringDatum:
    entry: PhaseState
    exit: PhaseState
    ell: float


def _check_entry(g, z, zeta):
    x = z[1:]
    r = g.domain.r_omega
    if abs(np.linalg.norm(x) - r) > 1e-10:
        raise ValueError("entry point must lie on the boundary cylinder")
    kind, future = classify_covector(g, z, zeta)
    if kind != "timelike" or not future:
        raise ValueError("entry covector must be timelike and future-pointing")
    v = np.linalg.solve(g.jet(x[None], 0)[0][0], zeta)
    if float(x @ v[1:]) >= 0:
        raise ValueError("entry covector must point into the domain")


def scattering_batch(g: StationaryMetric, z0, zeta0, step: float | None = None, variational=False):
    """Exit states for a batch of entry states (no precondition checks)."""
    res = propagate(g, z0, zeta0, until="exit", step=step, variational=variational)
    raise_for_status(res)
    return res


def scattering_relation(g: StationaryMetric, entry: PhaseState,
                        step: float | None = None) -> ScatteringDatum:
    """Exit state and exit parameter of the bicharacteristic through ``entry``."""
    _check_entry(g, entry.z, entry.zeta)
    res = scattering_batch(g, entry.z[None], entry.zeta[None], step=step)
    return ScatteringDatum(entry, PhaseState(res.q[0], res.p[0]), float(res.s[0]))


def tangent_frame(x) -> np.ndarray:
    """Orthonormal basis of the tangent space of the sphere at ``x`` (rows)."""
    x = np.asarray(x, dtype=float)
    nu = x / np.linalg.norm(x)
    if len(x) == 2:
        return np.array([[-nu[1], nu[0]]])
    a = np.eye(3)[np.argmin(np.abs(nu))]
    u1 = a - (a @ nu) * nu
    u1 /= np.linalg.norm(u1)
    u2 = np.cross(nu, u1)
    return np.stack([u1, u2])


@dataclass
class LocalTauTable:
    """Time separation from a fixed event to boundary events near ``y``.

    ``offsets`` lists the stencil in units of ``h``: entry ``(0, m)`` moves
    time by ``m h``; entry ``(i, m)`` with ``i >= 1`` moves along the
    tangent direction ``i`` by arc length ``m h``.
    """

    y: np.ndarray
    h: float
    frame: np.ndarray
    offsets: list
    values: np.ndarray
    field: dict = field(default_factory=dict)

    def value(self, axis, m):
        return self.values[self.offsets.index((axis, m))]


STENCIL = (-2, -1, 1, 2)


def local_stencil_events(domain: SpatialDomain, y, h: float):
    y = np.asarray(y, dtype=float)
    x = y[1:]
    r = domain.r_omega
    frame = tangent_frame(x)
    offsets, events = [], []
    for m in STENCIL:
        offsets.append((0, m))
        events.append(np.concatenate([[y[0] + m * h], x]))
    for i, u in enumerate(frame, start=1):
        for m in STENCIL:
            phi = m * h / r
            xm = np.cos(phi) * x + np.sin(phi) * r * u
            offsets.append((i, m))
            events.append(np.concatenate([[y[0]], xm]))
    return frame, offsets, np.array(events)


def local_tau_tables(g: StationaryMetric, zs, ys, h: float = 1e-3, step=None) -> list:
    """Time separation from each ``zs[i]`` on a small stencil around ``ys[i]``.

    All stencils are solved in one batch.
    """
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    parts = [local_stencil_events(g.domain, y, h) for y in ys]
    ev = np.concatenate([p[2] for p in parts])
    zz = np.repeat(zs, [len(p[2]) for p in parts], axis=0)
    tau, status = time_separation_batch(g, zz, ev, step=step)
    out, start = [], 0
    for y, (frame, offsets, e) in zip(ys, parts):
        sl = slice(start, start + len(e))
        start += len(e)
        if np.any(status[sl] != "ok"):
            raise NonsmoothTau("time separation not positive on the whole stencil")
        out.append(LocalTauTable(y.copy(), h, frame, offsets, tau[sl]))
    return out


def local_tau_table(g: StationaryMetric, z, y, h: float = 1e-3, step=None) -> LocalTauTable:
    """Measure the time separation from ``z`` on a small stencil around ``y``."""
    return local_tau_tables(g, [z], [y], h=h, step=step)[0]


def recover_scattering_from_tau(table: LocalTauTable, H_entry: float = -0.5,
                                nonsmooth_tol: float = 1e-3, root_tol: float = 1e-8) -> np.ndarray:
    """Exit covector from boundary time-separation values alone.

    Uses centred differences for ``d_t tau`` and the tangential gradient
    (the ``h`` and ``2h`` stencils must agree, and are then combined),
    the eikonal relation with the Minkowski boundary metric for the normal
    derivative (exiting, i.e. negative, root), and returns
    ``-grad tau`` rescaled so that the Hamiltonian equals ``H_entry``.
    """
    h = table.h
    n_tan = len(table.frame)
    grads = []
    for axis in range(n_tan + 1):
        d1 = (table.value(axis, 1) - table.value(axis, -1)) / (2 * h)
        d2 = (table.value(axis, 2) - table.value(axis, -2)) / (4 * h)
        if abs(d1 - d2) > nonsmooth_tol * max(1.0, abs(d1)):
            raise NonsmoothTau(f"stencils disagree along axis {axis}: {d1:.6g} vs {d2:.6g}")
        # Richardson combination of the two centred stencils (five-point rule)
        grads.append((4.0 * d1 - d2) / 3.0)
    tau_t = grads[0]
    tau_T = np.array(grads[1:])
    disc = tau_t**2 - np.sum(tau_T**2) - 1.0
    if disc <= root_tol * max(1.0, tau_t**2):
        raise DegenerateRoot(f"eikonal discriminant {disc:.3e} near zero (grazing exit)")
    tau_nu = -np.sqrt(disc)
    x = table.y[1:]
    nu = x / np.linalg.norm(x)
    grad_x = tau_nu * nu + tau_T @ table.frame
    grad = np.concatenate([[tau_t], grad_x])
    return -grad * np.sqrt(-2.0 * H_entry)


def _gradient_events(y, h):
    y = np.asarray(y, dtype=float)
    D = len(y)
    ev = np.repeat(y[None], 2 * D, axis=0)
    for i in range(D):
        ev[2 * i, i] += h
        ev[2 * i + 1, i] -= h
    return ev


def tau_gradients(g: StationaryMetric, zs, ys, h: float = 1e-3, step=None) -> np.ndarray:
    """Second-order centred-difference gradients of ``tau(z_i, .)`` at ``y_i``, in one batch."""
    zs = np.atleast_2d(np.asarray(zs, dtype=float))
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    D = ys.shape[1]
    ev = np.concatenate([_gradient_events(y, h) for y in ys])
    zz = np.repeat(zs, 2 * D, axis=0)
    tau, status = time_separation_batch(g, zz, ev, step=step)
    if np.any(status != "ok"):
        raise NonsmoothTau("time separation not positive around an evaluation point")
    tau = tau.reshape(len(ys), D, 2)
    return (tau[..., 0] - tau[..., 1]) / (2 * h)


def tau_gradient(g: StationaryMetric, z, y, h: float = 1e-3, step=None) -> np.ndarray:
    """Second-order centred-difference gradient of ``tau(z, .)`` at an event ``y``."""
    return tau_gradients(g, [z], [y], h=h, step=step)[0]


def eikonal_defects(g: StationaryMetric, zs, ys, h: float = 1e-3, step=None) -> np.ndarray:
    """``|g^-1(grad tau, grad tau) + 1|`` at each ``y_i``, with the metric at ``y_i``."""
    ys = np.atleast_2d(np.asarray(ys, dtype=float))
    grad = tau_gradients(g, zs, ys, h=h, step=step)
    Ginv = np.linalg.inv(g.jet(ys[:, 1:], 0)[0])
    return np.abs(np.einsum("bi,bij,bj->b", grad, Ginv, grad) + 1.0)


def eikonal_defect(g: StationaryMetric, z, y, h: float = 1e-3, step=None) -> float:
    return float(eikonal_defects(g, [z], [y], h=h, step=step)[0])


# ---------------------------------------------------------------------------
# Riemannian boundary distance


def riemannian_distance_batch(g: StationaryMetric, x, y, step: float | None = None):
    """Distances for the spatial part ``h`` of ``g`` between point batches."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    y = np.atleast_2d(np.asarray(y, dtype=float))
    shot = shoot(g, x, y, spatial=True, step=step)
    H = hamiltonian_batch(g, x, shot.zeta, spatial=True)
    d = shot.ell * np.sqrt(np.maximum(2.0 * H, 0.0))
    d = np.where(shot.converged, d, np.nan)
    return d, shot.converged


def riemannian_distance(g: StationaryMetric, x, y, step: float | None = None) -> float:
    d, ok = riemannian_distance_batch(g, np.asarray(x)[None], np.asarray(y)[None], step=step)
    if not ok[0]:
        raise NoConvergence("Riemannian shooting did not converge")
    return float(d[0])
