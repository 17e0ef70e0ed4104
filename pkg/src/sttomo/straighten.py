"""Straightening of h-geodesics normal to the reference hyperplane.

For ``y = (y^1, y')`` let ``x(s, y')`` be the unit-speed h-geodesic that
leaves ``(H_offset, y')`` with covector ``e_1``.  The straightening map is
``psi(y) = x(y^1 - H_offset, y')``.  In the coordinates ``y`` the metric
``h`` has first row and column ``(1, 0, ..., 0)``; when ``omega`` vanishes
along these geodesics the one-form also loses its first component.

Two evaluation routes exist.  ``certified`` re-integrates the geodesic for
every query point; ``lattice`` integrates one ray per lattice column and
records the state at the lattice nodes, which is exact at the nodes and
multilinearly interpolated elsewhere.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .errors import FoldDetected, FormViolation
from .flow import default_step, propagate, raise_for_status
from .metric import Diffeomorphism, SpatialDomain, StationaryMetric, pullback_jet


def _entry_parameter(domain: SpatialDomain, yp):
    """Parameter at which the line from ``(H, y')`` along ``e_1`` meets the domain.

    Returns ``inf`` for lines that miss the domain.  Before this parameter
    the metric is flat, so the flow is the identity there.
    """
    r2 = domain.r_omega**2 - np.sum(yp**2, axis=1)
    out = np.full(len(yp), np.inf)
    hit = r2 > 0
    out[hit] = -np.sqrt(r2[hit]) - domain.H_offset
    return np.maximum(out, 0.0)


class Straightening(Diffeomorphism):
    """The map ``psi`` built from the h-geodesic flow of ``g``."""

    max_order = 1

    def __init__(self, g: StationaryMetric, step: float | None = None, mode: str = "certified",
                 lattice_n: int = 33):
        if mode not in ("certified", "lattice"):
            raise ValueError("mode must be 'certified' or 'lattice'")
        self.g = g
        self.domain = g.domain
        self.n = g.n
        self.step = default_step(g) if step is None else float(step)
        self.mode = mode
        self.lattice_n = lattice_n
        self._interp = None
        self._cache = {}

    # -- certified point evaluation ------------------------------------------------
    def _integrate_points(self, y):
        n, H = self.n, self.domain.H_offset
        s = y[:, 0] - H
        yp = y[:, 1:]
        s0 = np.minimum(_entry_parameter(self.domain, yp), np.maximum(s, 0.0))
        x = y.copy()
        D = np.broadcast_to(np.eye(n), (len(y), n, n)).copy()
        run = s > s0
        if run.any():
            idx = np.nonzero(run)[0]
            B = len(idx)
            q0 = np.concatenate([np.full((B, 1), H) + s0[idx, None], yp[idx]], axis=1)
            p0 = np.zeros((B, n))
            p0[:, 0] = 1.0
            J0 = np.broadcast_to(np.eye(2 * n), (B, 2 * n, 2 * n)).copy()
            J0[:, :n, n:] = s0[idx, None, None] * np.eye(n)
            res = propagate(self.g, q0, p0, spatial=True, until="param", s_end=s[idx] - s0[idx],
                            step=self.step, variational=True, J0=J0)
            raise_for_status(res)
            x[idx] = res.q
            vel = np.linalg.solve(self.g.spatial_jet(res.q, 0)[0], res.p[..., None])[..., 0]
            D[idx, :, 0] = vel
            D[idx, :, 1:] = res.J[:, :n, 1:n]
        return x, D

    # -- lattice evaluation --------------------------------------------------------
    def lattice_jet(self, axes):
        """``psi`` and ``D psi`` on the tensor lattice spanned by ``axes``.

        ``axes[0]`` must be uniformly spaced.  One geodesic per column is
        integrated with a step that divides the lattice spacing, so the
        values at the nodes carry no interpolation error.
        """
        key = tuple(tuple(np.round(a, 15)) for a in axes)
        if key in self._cache:
            return self._cache[key]
        n, H = self.n, self.domain.H_offset
        a0 = np.asarray(axes[0], dtype=float)
        N0 = len(a0)
        d0 = a0[1] - a0[0]
        if not np.allclose(np.diff(a0), d0, rtol=1e-12, atol=1e-14):
            raise ValueError("first lattice axis must be uniform")
        m = max(1, int(np.ceil(d0 / self.step)))
        hstep = d0 / m
        mesh = np.meshgrid(*[np.asarray(a, dtype=float) for a in axes[1:]], indexing="ij")
        yp = np.stack([c.ravel() for c in mesh], axis=1)
        C = len(yp)
        psi = np.zeros((N0, C, n))
        Dpsi = np.broadcast_to(np.eye(n), (N0, C, n, n)).copy()
        psi[:, :, 0] = a0[:, None]
        psi[:, :, 1:] = yp[None]
        s_entry = _entry_parameter(self.domain, yp) + H          # entry abscissa
        # first node index at or after the entry point, per column
        j0 = np.searchsorted(a0, s_entry - 1e-15, side="left")
        live = j0 < N0
        cols = np.nonzero(live)[0]
        if len(cols):
            start = np.maximum(s_entry[cols], H)
            # phase 1: from the entry point to the first node inside
            B = len(cols)
            q = np.concatenate([start[:, None], yp[cols]], axis=1)
            p = np.zeros((B, n))
            p[:, 0] = 1.0
            J = np.broadcast_to(np.eye(2 * n), (B, 2 * n, 2 * n)).copy()
            J[:, :n, n:] = (start - H)[:, None, None] * np.eye(n)
            gap = a0[j0[cols]] - start
            need = gap > 0
            if need.any():
                res = propagate(self.g, q[need], p[need], spatial=True, until="param",
                                s_end=gap[need], step=self.step, variational=True, J0=J[need])
                raise_for_status(res)
                q[need], p[need], J[need] = res.q, res.p, res.J
            # phase 2: march node to node
            jcol = j0[cols].copy()
            self._store(psi, Dpsi, jcol, cols, q, p, J)
            for j in range(int(jcol.min()), N0 - 1):
                act = np.nonzero(jcol == j)[0]
                if len(act) == 0:
                    continue
                res = propagate(self.g, q[act], p[act], spatial=True, until="param",
                                s_end=np.full(len(act), d0), n_steps=np.full(len(act), m),
                                step=hstep, variational=True, J0=J[act])
                raise_for_status(res)
                q[act], p[act], J[act] = res.q, res.p, res.J
                jcol[act] += 1
                self._store(psi, Dpsi, jcol[act], cols[act], q[act], p[act], J[act])
        shape = tuple(len(a) for a in axes)
        out = (psi.reshape(shape + (n,)), Dpsi.reshape(shape + (n, n)))
        det = np.linalg.det(out[1])
        if np.any(det <= 0):
            raise FoldDetected(f"det D psi reaches {det.min():.3e} on the lattice")
        self._cache[key] = out
        return out

    def _store(self, psi, Dpsi, rows, cols, q, p, J):
        n = self.n
        psi[rows, cols] = q
        vel = np.linalg.solve(self.g.spatial_jet(q, 0)[0], p[..., None])[..., 0]
        Dpsi[rows, cols, :, 0] = vel
        Dpsi[rows, cols, :, 1:] = J[:, :n, 1:n]

    def default_axes(self):
        """Lattice covering the domain, aligned with the hyperplane offset."""
        r = self.domain.r_omega
        H = self.domain.H_offset
        N = self.lattice_n
        d = 2 * r / (N - 1)
        k = int(np.floor((-r - H) / d + 1e-9))
        a0 = H + d * np.arange(k, k + N + 1)
        other = np.linspace(-r, r, N)
        return (a0,) + (other,) * (self.n - 1)

    def _interpolator(self):
        if self._interp is None:
            axes = self.default_axes()
            psi, D = self.lattice_jet(axes)
            N = psi.shape[:-1]
            mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
            vals = np.concatenate([(psi - mesh).reshape(N + (self.n,)),
                                   D.reshape(N + (self.n * self.n,))], axis=-1)
            self._interp = RegularGridInterpolator(axes, vals, method="linear", bounds_error=False,
                                                   fill_value=None)
        return self._interp

    # -- Diffeomorphism interface --------------------------------------------------
    def jet(self, x, order=0):
        if order > 1:
            raise ValueError("straightening maps provide first derivatives only")
        y = np.atleast_2d(np.asarray(x, dtype=float))
        if self.mode == "certified":
            psi, D = self._integrate_points(y)
        else:
            v = self._interpolator()(y)
            n = self.n
            psi = y + v[:, :n]
            D = v[:, n:].reshape(-1, n, n)
        if np.any(np.linalg.det(D) <= 0):
            raise FoldDetected("det D psi is not positive at a sampled point")
        return [psi, D][: order + 1]

    def inverse(self, x, tol: float = 1e-13, maxiter: int = 30):
        """Newton inversion; converged points drop out of later iterations."""
        xb = np.atleast_2d(np.asarray(x, dtype=float))
        y = xb.copy()
        todo = np.arange(len(y))
        for _ in range(maxiter):
            psi, D = self.jet(y[todo], 1)
            r = psi - xb[todo]
            bad = np.max(np.abs(r), axis=1) > tol
            todo, r, D = todo[bad], r[bad], D[bad]
            if len(todo) == 0:
                break
            y[todo] -= np.linalg.solve(D, r[..., None])[..., 0]
        return y[0] if np.ndim(x) == 1 else y


def build_straightening(g: StationaryMetric, step: float | None = None, mode: str = "certified",
                        lattice_n: int = 33, check: bool = True) -> Straightening:
    """Construct the straightening map of the spatial part of ``g``.

    With ``check`` the default lattice is integrated immediately, which
    raises :class:`FoldDetected` if the map folds anywhere on it.
    """
    st = Straightening(g, step=step, mode=mode, lattice_n=lattice_n)
    if check:
        st.lattice_jet(st.default_axes())
    return st


class StraightenedMetric(StationaryMetric):
    """``(Id x psi)^* g`` for a straightening map; values only (no derivatives)."""

    max_order = 0

    def __init__(self, g: StationaryMetric, psi: Straightening):
        super().__init__(g.domain)
        self.base, self.psi = g, psi
        self.min_width = g.min_width

    def jet(self, x, order=0):
        if order > 0:
            raise ValueError("straightened metrics are sampled without derivatives")
        p = self.psi.jet(x, 1)
        return pullback_jet(self.base.jet(p[0], 0), p + [None, None], 0)

    def on_lattice(self, axes):
        psi, D = self.psi.lattice_jet(axes)
        shape = psi.shape[:-1]
        P = psi.reshape(-1, self.n)
        Dp = D.reshape(-1, self.n, self.n)
        G = pullback_jet(self.base.jet(P, 0), [P, Dp, None, None], 0)[0]
        return G.reshape(shape + (self.dim, self.dim))


def pullback_full(g: StationaryMetric, psi: Straightening) -> StraightenedMetric:
    return StraightenedMetric(g, psi)


def special_form_residual(gt: StationaryMetric, lattice) -> float:
    """Max over the lattice of ``|h11 - 1|``, ``|h1j|`` (j >= 2) and ``|omega_1|``.

    ``lattice`` is either a tuple of axes (tensor lattice) or a point array.
    """
    G = _matrices(gt, lattice)
    G = G.reshape(-1, gt.dim, gt.dim)
    parts = [np.abs(G[:, 1, 1] - 1.0), np.abs(G[:, 0, 1])]
    if gt.dim > 2:
        parts.append(np.abs(G[:, 1, 2:]).max(axis=1))
    return float(max(np.max(p) for p in parts))


def _matrices(gt, lattice):
    if isinstance(lattice, tuple):
        if isinstance(gt, StraightenedMetric):
            return gt.on_lattice(lattice)
        mesh = np.stack(np.meshgrid(*lattice, indexing="ij"), axis=-1)
        pts = mesh.reshape(-1, gt.n)
        return gt.jet(pts, 0)[0].reshape(mesh.shape[:-1] + (gt.dim, gt.dim))
    return gt.jet(np.atleast_2d(lattice), 0)[0]


@dataclass
class TensorDifference:
    """``m = g1^-1 - g2^-1`` on a tensor lattice, split into its blocks.

    ``truncated`` is the largest entry removed when the block pattern was
    enforced; ``grad_*`` are centred lattice differences with the derivative
    index last.
    """

    axes: tuple
    m: np.ndarray
    m_lambda: np.ndarray
    m_omega: np.ndarray
    m_h: np.ndarray
    grad_lambda: np.ndarray
    grad_omega: np.ndarray
    grad_h: np.ndarray
    truncated: float
    tolerance: float

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.m)))


def _lattice_grad(f, axes):
    spacing = [a[1] - a[0] for a in axes]
    nd = len(axes)
    g = np.gradient(f, *spacing, axis=tuple(range(nd)))
    if nd == 1:
        g = [g]
    return np.stack(g, axis=-1)


def tensor_difference(gt1: StationaryMetric, gt2: StationaryMetric, axes) -> TensorDifference:
    """Form ``m`` on the lattice and enforce the special block pattern.

    Entries that must vanish in special form are zeroed; if the removed
    mass exceeds ten times the larger special-form residual of the two
    metrics, :class:`FormViolation` is raised.
    """
    axes = tuple(np.asarray(a, dtype=float) for a in axes)
    G1 = _matrices(gt1, axes)
    G2 = _matrices(gt2, axes)
    M = np.linalg.inv(G1) - np.linalg.inv(G2)
    res = max(special_form_residual(gt1, axes), special_form_residual(gt2, axes))
    tol = 10.0 * max(res, 1e-13)
    mask = np.zeros((gt1.dim, gt1.dim), dtype=bool)
    mask[0, 1] = mask[1, 0] = True
    mask[1, :] = True
    mask[:, 1] = True
    removed = float(np.max(np.abs(M[..., mask]))) if M.size else 0.0
    if removed > tol:
        raise FormViolation(f"zeroing the block pattern removes {removed:.3e} > {tol:.3e}")
    M = M.copy()
    M[..., mask] = 0.0
    m_lam = M[..., 0, 0]
    m_om = M[..., 0, 1:]
    m_h = M[..., 1:, 1:]
    return TensorDifference(axes, M, m_lam, m_om, m_h, _lattice_grad(m_lam, axes),
                            _lattice_grad(m_om, axes), _lattice_grad(m_h, axes), removed, tol)
