"""Bicharacteristic flow of ``H = 1/2 <g^-1 zeta, zeta>`` and its linearisation.

All integrations go through :func:`propagate`, a batched fixed-step
classical Runge-Kutta integrator.  Each ray carries its own step size and
step count; finished rays drop out of the batch.  Two stopping rules exist:

* ``until="param"``: stop at a prescribed (possibly negative) parameter;
* ``until="exit"``: stop at the first outward crossing of the domain
  boundary, located by bisection on a partial step.

The same code handles the spacetime system (phase space of dimension
2(1+n), only spatial derivatives of the metric) and the purely spatial
Riemannian system for ``h``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import GrazingRay, NoExit
from .metric import StationaryMetric

STEP_FACTOR = 1e-3
BISECT_TOL = 1e-12
GRAZING_TOL = 1e-6


def default_step(metric: StationaryMetric) -> float:
    return STEP_FACTOR * metric.domain.rho


@dataclass
class PhaseState:
    z: np.ndarray
    zeta: np.ndarray

    def __post_init__(self):
        self.z = np.asarray(self.z, dtype=float)
        self.zeta = np.asarray(self.zeta, dtype=float)

    def as_vector(self) -> np.ndarray:
        return np.concatenate([self.z, self.zeta])


@dataclass
class Trajectory:
    """Sampled bicharacteristic.  ``ell`` is the final flow parameter."""

    s: np.ndarray
    z: np.ndarray
    zeta: np.ndarray
    H: np.ndarray
    ell: float
    exit_state: PhaseState | None
    J: np.ndarray | None = None

    @property
    def drift(self) -> float:
        return float(np.max(np.abs(self.H - self.H[0])))


@dataclass
class FlowResult:
    """Final states of a batch of rays.

    ``status`` is 0 for success, 1 for a ray that never left its budget,
    2 for a grazing or missing ray.
    """

    s: np.ndarray
    q: np.ndarray
    p: np.ndarray
    J: np.ndarray | None
    status: np.ndarray
    steps: np.ndarray
    record: dict | None = field(default=None, repr=False)


class _Field:
    """Right-hand side of the Hamiltonian system for a batch of rays."""

    def __init__(self, metric: StationaryMetric, spatial: bool, variational: bool):
        self.metric = metric
        self.spatial = spatial
        self.variational = variational
        self.off = 0 if spatial else 1
        self.order = 2 if variational else 1

    def inverse(self, x, order):
        jet = self.metric.spatial_jet(x, order) if self.spatial else self.metric.jet(x, order)
        if order == 0:
            return [np.linalg.inv(jet[0])]
        return kernels.inverse_jet(jet[0], jet[1], jet[2] if order >= 2 else None)

    def __call__(self, q, p, J):
        Ginv, dGinv, d2Ginv = self.inverse(q[:, self.off:], self.order)
        return kernels.hamilton_rhs(Ginv, dGinv, d2Ginv, p, J, self.off)


def _rk4(F, q, p, J, h):
    hq = h[:, None]
    hJ = h[:, None, None]
    a1, b1, c1 = F(q, p, J)
    a2, b2, c2 = F(q + 0.5 * hq * a1, p + 0.5 * hq * b1, None if J is None else J + 0.5 * hJ * c1)
    a3, b3, c3 = F(q + 0.5 * hq * a2, p + 0.5 * hq * b2, None if J is None else J + 0.5 * hJ * c2)
    a4, b4, c4 = F(q + hq * a3, p + hq * b3, None if J is None else J + hJ * c3)
    qn = q + hq / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    pn = p + hq / 6.0 * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    Jn = None if J is None else J + hJ / 6.0 * (c1 + 2.0 * c2 + 2.0 * c3 + c4)
    return qn, pn, Jn


def hamiltonian_batch(metric, q, p, spatial=False):
    q = np.atleast_2d(q)
    p = np.atleast_2d(p)
    x = q[:, 0 if spatial else 1:]
    jet = metric.spatial_jet(x, 0) if spatial else metric.jet(x, 0)
    Ginv = np.linalg.inv(jet[0])
    return 0.5 * np.einsum("bi,bij,bj->b", p, Ginv, p)


def hamiltonian(g: StationaryMetric, state: PhaseState) -> float:
    """``1/2 <g^-1(x) zeta, zeta>``."""
    return float(hamiltonian_batch(g, state.z, state.zeta)[0])


def _flat_propagate(metric, q0, p0, spatial, until, s_end, step, variational, record, r2, n_steps=None):
    off = 0 if spatial else 1
    B, D = q0.shape
    x0 = q0[:, off:]
    G = metric.spatial_jet(x0[:1], 0)[0][0] if spatial else metric.jet(x0[:1], 0)[0][0]
    Ginv = np.linalg.inv(G)
    v = p0 @ Ginv.T
    vx = v[:, off:]
    status = np.zeros(B, dtype=int)
    if until == "param":
        s = np.asarray(s_end, dtype=float) * np.ones(B)
    else:
        a = np.einsum("bi,bi->b", vx, vx)
        b = np.einsum("bi,bi->b", x0, vx)
        c = np.einsum("bi,bi->b", x0, x0) - r2
        disc = b * b - a * c
        s = np.full(B, np.nan)
        with np.errstate(invalid="ignore", divide="ignore"):
            root = (-b + np.sqrt(np.maximum(disc, 0.0))) / a
        ok = (disc > 0) & (a > 0) & (root > 0)
        s[ok] = root[ok]
        cosang = np.abs(b + a * np.where(ok, root, 0.0)) / np.sqrt(np.maximum(a * r2, 1e-300))
        status[~ok | (cosang < GRAZING_TOL)] = 2
        s[status == 2] = 0.0
    q = q0 + s[:, None] * v
    J = None
    if variational:
        J = np.broadcast_to(np.eye(2 * D), (B, 2 * D, 2 * D)).copy()
        J[:, :D, D:] = s[:, None, None] * Ginv[None]
    if n_steps is None:
        steps = np.maximum(1, np.ceil(np.abs(s) / step)).astype(int)
    else:
        steps = np.asarray(n_steps, dtype=int) * np.ones(B, dtype=int)
    rec = None
    if record:
        nmax = int(steps.max())
        frac = np.arange(nmax + 1)[:, None] / np.maximum(steps, 1)[None, :]
        frac = np.where(frac <= 1.0, frac, np.nan)
        ss = frac * s[None, :]
        rec = {"s": ss, "q": q0[None] + ss[..., None] * v[None],
               "p": np.where(np.isnan(ss)[..., None], np.nan, p0[None])}
    return FlowResult(s, q, p0.copy(), J, status, steps, rec)


def propagate(metric: StationaryMetric, q0, p0, *, spatial: bool = False, until: str = "exit",
              s_end=None, step: float | None = None, n_steps=None, variational: bool = False,
              record: bool = False, budget: float | None = None, J0=None) -> FlowResult:
    """Integrate a batch of rays.

    Parameters
    ----------
    q0, p0 : (B, D) arrays
        Initial positions and covectors.  In spacetime mode ``D = n + 1``
        and the first slot is time; in spatial mode ``D = n``.
    until : ``"exit"`` or ``"param"``
    s_end : scalar or (B,) array, used with ``until="param"``; may be negative.
    n_steps : optional per-ray step counts for ``until="param"``.  When
        omitted each ray uses ``ceil(|s_end| / step)`` equal steps.
    budget : parameter budget for ``until="exit"`` (default ``40 rho / |v|``).
    J0 : optional initial variational matrix (default identity).
    """
    q0 = np.atleast_2d(np.asarray(q0, dtype=float))
    p0 = np.atleast_2d(np.asarray(p0, dtype=float))
    B, D = q0.shape
    off = 0 if spatial else 1
    step = default_step(metric) if step is None else float(step)
    r2 = metric.domain.r_omega ** 2
    if metric.flat and J0 is None:
        return _flat_propagate(metric, q0, p0, spatial, until, s_end, step, variational, record, r2,
                               n_steps if until == "param" else None)

    F = _Field(metric, spatial, variational)
    q, p = q0.copy(), p0.copy()
    J = None
    if variational:
        J = (np.broadcast_to(np.eye(2 * D), (B, 2 * D, 2 * D)).copy() if J0 is None
             else np.array(J0, dtype=float).reshape(B, 2 * D, 2 * D))
    s = np.zeros(B)
    status = np.zeros(B, dtype=int)
    done_steps = np.zeros(B, dtype=int)

    if until == "param":
        s_end = np.asarray(s_end, dtype=float) * np.ones(B)
        if n_steps is None:
            n_steps = np.maximum(1, np.ceil(np.abs(s_end) / step)).astype(int)
        n_steps = np.asarray(n_steps, dtype=int) * np.ones(B, dtype=int)
        h = np.where(n_steps > 0, s_end / np.maximum(n_steps, 1), 0.0)
        total = n_steps
    elif until == "exit":
        h = np.full(B, step)
        speed = np.linalg.norm(hamilton_velocity(F, q, p)[:, off:], axis=1)
        if budget is None:
            budget = 40.0 * metric.domain.rho / np.maximum(speed, 1e-300)
        total = np.ceil(np.asarray(budget) * np.ones(B) / step).astype(int)
    else:
        raise ValueError(f"unknown stopping rule {until!r}")

    active = total > 0
    entered = np.einsum("bi,bi->b", q[:, off:], q[:, off:]) < r2 * (1 - 1e-14)
    crossing = np.zeros(B, dtype=bool)
    rho2 = metric.domain.rho ** 2
    rec_q, rec_p, rec_s = ([q.copy()], [p.copy()], [s.copy()]) if record else (None, None, None)

    while active.any():
        idx = np.nonzero(active)[0]
        qn, pn, Jn = _rk4(F, q[idx], p[idx], None if J is None else J[idx], h[idx])
        if until == "exit":
            fn = np.einsum("bi,bi->b", qn[:, off:], qn[:, off:]) - r2
            cross = entered[idx] & (fn >= 0.0)
            crossing[idx[cross]] = True
            active[idx[cross]] = False
            keep = ~cross
            idx, qn, pn = idx[keep], qn[keep], pn[keep]
            if Jn is not None:
                Jn = Jn[keep]
            entered[idx] |= fn[keep] < 0.0
            # left the enclosing ball without ever entering: a miss
            far = (~entered[idx]) & (np.einsum("bi,bi->b", qn[:, off:], qn[:, off:]) > rho2) \
                & (np.einsum("bi,bi->b", qn[:, off:], pn[:, off:]) > 0)
            status[idx[far]] = 2
            active[idx[far]] = False
        q[idx], p[idx] = qn, pn
        if J is not None:
            J[idx] = Jn
        s[idx] += h[idx]
        done_steps[idx] += 1
        if until == "param":
            fin = done_steps[idx] >= total[idx]
            active[idx[fin]] = False
            s[idx[fin]] = s_end[idx[fin]]
        else:
            over = done_steps[idx] >= total[idx]
            status[idx[over]] = 1
            active[idx[over]] = False
        if record:
            rq = np.full_like(q, np.nan)
            rp = np.full_like(p, np.nan)
            rs = np.full_like(s, np.nan)
            rq[idx], rp[idx], rs[idx] = q[idx], p[idx], s[idx]
            rec_q.append(rq)
            rec_p.append(rp)
            rec_s.append(rs)

    if until == "exit" and crossing.any():
        idx = np.nonzero(crossing)[0]
        qb, pb = q[idx], p[idx]
        Jb = None if J is None else J[idx]
        lo = np.zeros(len(idx))
        hi = h[idx].copy()
        while np.max(hi - lo) > BISECT_TOL:
            mid = 0.5 * (lo + hi)
            qm, _, _ = _rk4(F, qb, pb, None, mid)
            inside = np.einsum("bi,bi->b", qm[:, off:], qm[:, off:]) < r2
            lo = np.where(inside, mid, lo)
            hi = np.where(inside, hi, mid)
        theta = 0.5 * (lo + hi)
        qe, pe, Je = _rk4(F, qb, pb, Jb, theta)
        q[idx], p[idx] = qe, pe
        if J is not None:
            J[idx] = Je
        s[idx] += theta
        done_steps[idx] += 1
        v = hamilton_velocity(F, qe, pe)[:, off:]
        x = qe[:, off:]
        cosang = np.einsum("bi,bi->b", x, v) / (np.linalg.norm(x, axis=1) * np.linalg.norm(v, axis=1))
        status[idx[cosang < GRAZING_TOL]] = 2
        if record:
            rq = np.full_like(q, np.nan)
            rp = np.full_like(p, np.nan)
            rs = np.full_like(s, np.nan)
            rq[idx], rp[idx], rs[idx] = qe, pe, s[idx]
            rec_q.append(rq)
            rec_p.append(rp)
            rec_s.append(rs)

    rec = None
    if record:
        rec = {"s": np.array(rec_s), "q": np.array(rec_q), "p": np.array(rec_p)}
    return FlowResult(s, q, p, J, status, done_steps, rec)


def hamilton_velocity(F: _Field, q, p):
    Ginv = F.inverse(q[:, F.off:], 0)[0]
    return np.einsum("bij,bj->bi", Ginv, p)


def raise_for_status(res: FlowResult, what: str = "ray"):
    if np.any(res.status == 1):
        raise NoExit(f"{int(np.sum(res.status == 1))} {what}(s) did not exit within the budget")
    if np.any(res.status == 2):
        raise GrazingRay(f"{int(np.sum(res.status == 2))} {what}(s) graze or miss the domain")


def _compact(rec, b):
    s = rec["s"][:, b]
    keep = ~np.isnan(s)
    return s[keep], rec["q"][keep, b], rec["p"][keep, b]


def integrate_bicharacteristic(g: StationaryMetric, X0: PhaseState, mode: str = "until_exit",
                               s: float | None = None, step: float | None = None,
                               variational: bool = False) -> Trajectory:
    """Single spacetime ray with samples at every integrator step."""
    until = "exit" if mode == "until_exit" else "param"
    res = propagate(g, X0.z[None], X0.zeta[None], until=until, s_end=s, step=step,
                    variational=variational, record=True)
    raise_for_status(res)
    ss, zz, pp = _compact(res.record, 0)
    H = hamiltonian_batch(g, zz, pp)
    exit_state = PhaseState(res.q[0], res.p[0]) if until == "exit" else None
    return Trajectory(ss, zz, pp, H, float(res.s[0]), exit_state,
                      None if res.J is None else res.J[0])


def integrate_riemannian(g: StationaryMetric, x0, s: float | None = None, step: float | None = None,
                         xi0=None, variational: bool = False) -> Trajectory:
    """Spatial geodesic of ``h`` leaving ``x0`` with covector ``xi0`` (default ``e_1``).

    Integrates to parameter ``s`` or, when ``s`` is None, to the exit of the
    domain.
    """
    x0 = np.asarray(x0, dtype=float)
    if xi0 is None:
        xi0 = np.zeros_like(x0)
        xi0[0] = 1.0
    until = "exit" if s is None else "param"
    res = propagate(g, x0[None], np.asarray(xi0, dtype=float)[None], spatial=True, until=until,
                    s_end=s, step=step, variational=variational, record=True)
    raise_for_status(res)
    ss, xx, pp = _compact(res.record, 0)
    H = hamiltonian_batch(g, xx, pp, spatial=True)
    exit_state = PhaseState(res.q[0], res.p[0]) if until == "exit" else None
    return Trajectory(ss, xx, pp, H, float(res.s[0]), exit_state,
                      None if res.J is None else res.J[0])


def variational_flow(g: StationaryMetric, X0: PhaseState, s: float, step: float | None = None):
    """``dX(s)/dX(0)`` as a 2(1+n) square matrix."""
    res = propagate(g, X0.z[None], X0.zeta[None], until="param", s_end=s, step=step,
                    variational=True)
    return res.J[0]


def minkowski_variational(n: int, s) -> np.ndarray:
    """``[[I, s delta], [0, I]]`` with ``delta`` the Minkowski sign matrix."""
    D = n + 1
    s = np.atleast_1d(np.asarray(s, dtype=float))
    out = np.broadcast_to(np.eye(2 * D), (len(s), 2 * D, 2 * D)).copy()
    sign = np.ones(D)
    sign[0] = -1.0
    out[:, np.arange(D), D + np.arange(D)] = s[:, None] * sign[None]
    return out
