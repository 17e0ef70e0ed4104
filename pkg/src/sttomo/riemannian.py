"""Purely spatial version of the pipeline.

Only the Riemannian part ``h`` matters here: boundary distances replace
time separations, the identity lives in the 2n-dimensional phase space of
``h``, and the frequency cutoff is ``chi_p``.  In two dimensions ``chi_p``
is identically one, so there is no excluded cone.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .boundary_data import riemannian_distance_batch
from .errors import RankDeficient
from .flow import PhaseState, propagate, raise_for_status
from .fourier import CutoffSpec, _padded_dft, cutoff, psi_p, transform_A
from .identity import identity_records
from .metric import ProductMetric, SpatialDomain, StationaryMetric
from .straighten import build_straightening, pullback_full, special_form_residual, tensor_difference

RIEMANNIAN_MU = 0.05
COND_BOUND = 10.0


# --------------------------------------------------------------------------
# boundary distances


@dataclass
class DistanceTable:
    x: np.ndarray
    y: np.ndarray
    d: np.ndarray
    converged: np.ndarray


def boundary_pairs(domain: SpatialDomain, count: int, cone: float | None = 0.2):
    """All ordered pairs of ``count`` boundary points, optionally restricted to a cone.

    The cone keeps chords within ``cone`` radians of the normal direction
    ``e_1`` of the reference hyperplane (either orientation).
    """
    pts = domain.boundary_points(count)
    i, j = np.nonzero(~np.eye(count, dtype=bool))
    x, y = pts[i], pts[j]
    if cone is not None:
        d = y - x
        cosang = np.abs(d[:, 0]) / np.linalg.norm(d, axis=1)
        keep = cosang >= np.cos(cone)
        x, y = x[keep], y[keep]
    return x, y


def boundary_distance_table(g: StationaryMetric, count: int, cone: float | None = 0.2,
                            step: float | None = None) -> DistanceTable:
    x, y = boundary_pairs(g.domain, count, cone)
    d, ok = riemannian_distance_batch(g, x, y, step=step)
    return DistanceTable(x, y, d, ok)


# --------------------------------------------------------------------------
# B21 along normal and tilted rays


def normal_rays(domain: SpatialDomain, count: int, tilt: float = 0.0, sign: float = 1.0):
    """Rays entering through the half of the boundary facing ``-sign e_1``.

    The covector is ``sign e_1`` rotated by ``tilt`` in the ``(e_1, e_2)``
    plane; foot points are spread over the transverse coordinate.
    """
    n = domain.n
    r = domain.r_omega
    u = np.linspace(-0.6, 0.6, count) * r
    states = []
    for k in range(count):
        xi = np.zeros(n)
        xi[0] = sign * np.cos(tilt)
        xi[1] = np.sin(tilt)
        perp = np.zeros(n)
        perp[1] = u[k]
        # first intersection of the line perp + t xi with the boundary sphere
        b = perp @ xi
        c = perp @ perp - r * r
        t = -b - np.sqrt(b * b - c)
        states.append(PhaseState(perp + t * xi, xi))
    return states


@dataclass
class B21Report:
    """``normal_max`` is the largest ``|B21|`` entry along ``+-e_1`` rays.

    For the tilted ladder, ``exponent`` is the least-squares slope of
    ``log |B21|`` against ``log sin(tilt)`` and ``reduced`` holds
    ``|B21| / sin(tilt)``, the quantity that must stay bounded.
    """

    normal_max: float
    tilts: list
    tilted_max: list
    reduced: list
    exponent: float
    min_exponent: float
    normal_tol: float

    @property
    def passed(self) -> bool:
        return self.normal_max <= self.normal_tol and self.exponent >= self.min_exponent

    def as_dict(self):
        return {"normal_max": self.normal_max, "tilts": list(self.tilts),
                "tilted_max": list(self.tilted_max), "reduced": list(self.reduced),
                "exponent": self.exponent, "min_exponent": self.min_exponent,
                "normal_tol": self.normal_tol, "passed": self.passed}


def b21_max(h1, h2, states, n_samples: int = 128) -> float:
    recs = identity_records(h1, h2, states, n_samples, check_scattering=False, fd_delta=None,
                            spatial=True)
    return float(max(np.max(np.abs(r.blocks()[2])) for r in recs))


def b21_factorization_check(h1: StationaryMetric, h2: StationaryMetric, count: int = 5,
                            tilts=(0.025, 0.05, 0.1, 0.2), n_samples: int = 128,
                            normal_tol: float = 1e-6, min_exponent: float = 0.9) -> B21Report:
    """``B21`` along rays with covector ``+-e_1`` and along tilted rays.

    Both metrics are expected in straightened form, so the normal rays are
    straight lines and ``B21`` vanishes there.  Off the normal direction
    ``B21`` must carry at least one factor of ``sin(tilt)``; for metrics
    whose first row is exactly Euclidean the leading term is in fact
    quadratic, so the fitted exponent is close to two.
    """
    dom = h1.domain
    normal = normal_rays(dom, count, 0.0, 1.0) + normal_rays(dom, count, 0.0, -1.0)
    nmax = b21_max(h1, h2, normal, n_samples)
    tilted = np.array([b21_max(h1, h2, normal_rays(dom, count, a, 1.0), n_samples) for a in tilts])
    s = np.sin(np.asarray(tilts, dtype=float))
    if np.all(tilted > 0):
        exponent = float(np.polyfit(np.log(s), np.log(tilted), 1)[0])
    else:
        exponent = float("inf")
    return B21Report(nmax, [float(t) for t in tilts], tilted.tolist(), (tilted / s).tolist(),
                     exponent, min_exponent, normal_tol)


# --------------------------------------------------------------------------
# transverse directions


@dataclass
class DirectionSet:
    """Directions ``p`` and the map from ``m p.p`` values to independent entries.

    ``entries`` lists the index pairs ``(i, j)`` (spatial, 0-based, both at
    least 1) recovered by ``solve``.
    """

    ps: np.ndarray
    matrix: np.ndarray
    entries: list
    cond: float

    def solve(self, values):
        """Least-squares entries from values of shape ``(len(ps), ...)``."""
        v = np.asarray(values)
        flat = v.reshape(len(self.ps), -1)
        sol, *_ = np.linalg.lstsq(self.matrix, flat, rcond=None)
        return sol.reshape((len(self.entries),) + v.shape[1:])


def direction_set(n: int, cond_bound: float = COND_BOUND) -> DirectionSet:
    if n == 2:
        ps = np.array([[1.0]])
        entries = [(1, 1)]
    elif n == 3:
        ang = np.array([0.0, 0.25, 0.5, 0.75]) * np.pi
        ps = np.stack([np.cos(ang), np.sin(ang)], axis=1)
        entries = [(1, 1), (1, 2), (2, 2)]
    else:
        raise ValueError("direction sets exist for n = 2 and n = 3")
    rows = []
    for p in ps:
        row = []
        for i, j in entries:
            a, b = p[i - 1], p[j - 1]
            row.append(a * b * (1.0 if i == j else 2.0))
        rows.append(row)
    A = np.array(rows)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= 1e-12 * sv[0]:
        raise RankDeficient("direction set does not determine the quadratic form")
    cond = float(sv[0] / sv[-1])
    if cond > cond_bound:
        raise RankDeficient(f"recovery matrix condition number {cond:.3g} exceeds {cond_bound}")
    return DirectionSet(ps, A, entries, cond)


# --------------------------------------------------------------------------
# pipeline


class SpatialEmbedding:
    """Wraps an ``n x n`` field so the spacetime transform sees ``0 (+) m``."""

    def __init__(self, inner):
        self.inner = inner
        self.n = inner.n
        self.dim = inner.n + 1

    def matrix_grad(self, x):
        M, G = self.inner.matrix_grad(x)
        lead = M.shape[:-2]
        D, n = self.dim, self.n
        Mo = np.zeros(lead + (D, D))
        Go = np.zeros(lead + (D, D, n))
        Mo[..., 1:, 1:] = M[..., 1:, 1:] if M.shape[-1] == D else M
        Go[..., 1:, 1:, :] = G[..., 1:, 1:, :] if G.shape[-3] == D else G
        return Mo, Go

    def contracted_grad(self, x, zeta):
        _, G = self.matrix_grad(x)
        return np.einsum("...ijk,...i,...j->...k", G, zeta, zeta)


def riemannian_transform(m, etas, p, mu: float = RIEMANNIAN_MU, **kw):
    """Straight-ray transform of ``grad(m xi.xi)`` with the ``chi_p`` cutoff.

    ``m`` exposes ``matrix_grad`` for the spatial block (in the lower-right
    corner of a spacetime field or as a bare ``n x n`` field).
    """
    n = np.shape(etas)[-1]
    spec = CutoffSpec(mu, "riemannian", tuple(np.atleast_1d(p))) if n > 2 else None
    return transform_A(SpatialEmbedding(m), -1.0, etas, p, spec, **kw)


def reduced_integrand_check(m, x, etas, p) -> float:
    """Largest gap between ``grad(m xi.xi)/psi_p^2`` and ``grad(m' p.p)``.

    Valid for fields whose first spatial row and column vanish, where the
    common factor ``psi_p(eta)^2`` divides out exactly.
    """
    from .fourier import xi_from_eta_p
    etas = np.atleast_2d(etas)
    xi = xi_from_eta_p(etas, p)
    ps = psi_p(etas, p)
    _, G = SpatialEmbedding(m).matrix_grad(x)
    Gs = G[..., 1:, 1:, :]
    full = np.einsum("pijk,ei,ej->epk", Gs, xi, xi)
    pp = np.atleast_1d(np.asarray(p, dtype=float))
    red = np.einsum("pijk,i,j->pk", Gs[:, 1:, 1:, :], pp, pp)
    return float(np.max(np.abs(full / ps[:, None, None] ** 2 - red[None])))


@dataclass
class RiemannianReport:
    eps: float
    sup_m: float
    special_residual: float
    grad_norm: float
    recovered_norm: float
    bound: float
    ratio: float
    cond: float
    passed: bool
    reasons: list

    def as_dict(self):
        return {k: (list(v) if isinstance(v, list) else v) for k, v in self.__dict__.items()}


def _spatial_difference(h1, h2, lattice_n, step):
    s1 = build_straightening(h1, step=step, lattice_n=lattice_n)
    s2 = build_straightening(h2, step=step, lattice_n=lattice_n)
    axes = s1.default_axes()
    t1, t2 = pullback_full(h1, s1), pullback_full(h2, s2)
    td = tensor_difference(t1, t2, axes)
    res = max(special_form_residual(t1, axes), special_form_residual(t2, axes))
    return td, res


def riemannian_pipeline(h1: StationaryMetric, h2: StationaryMetric, eps: float, lattice_n: int = 33,
                        mu: float = RIEMANNIAN_MU, slack: float = 1.0, grad_tol: float = 1e-4,
                        floor: float = 1e-6, step: float | None = None, pad: int = 2) -> RiemannianReport:
    """Straighten, difference, transform and recover the spatial block.

    The metrics are used through their Riemannian parts only.  ``m`` is the
    spatial block of the straightened difference.  Its transverse entries
    are recovered from the quadratic forms ``m^ p.p`` over the direction
    set, restricted to frequencies where ``chi_p = 1`` and ``psi_p^2`` is
    at least ``mu``; ``||theta m^_ij||`` there is compared with ``sqrt(eps)
    ||grad m|| + floor``.
    """
    td, res = _spatial_difference(ProductMetric(h1), ProductMetric(h2), lattice_n, step)
    n = h1.n
    mhat, theta, vol = _padded_dft(td.m_h, td.axes, pad)
    theta = theta.reshape(-1, n)
    mhat = mhat.reshape(len(theta), n, n)
    w = np.sum(theta**2, axis=1)
    grad = float(np.sqrt(np.sum(w[:, None, None] * np.abs(mhat) ** 2) * vol))
    ds = direction_set(n)
    good = w > 0
    vals = []
    for p in ds.ps:
        if n > 2:
            good &= cutoff(theta, CutoffSpec(mu, "riemannian", tuple(p))) >= 1.0
        e1 = theta[:, 0] ** 2
        den = e1 + (theta[:, 1:] @ p) ** 2
        ps2 = np.divide(e1, den, out=np.zeros_like(e1), where=den > 0)
        good &= ps2 >= mu
        vals.append(np.einsum("bij,i,j->b", mhat[:, 1:, 1:], p, p))
    rec = ds.solve(np.array(vals))           # (entries, B)
    rec_norm = float(np.sqrt(np.sum(w[good] * np.sum(np.abs(rec[:, good]) ** 2, axis=0)) * vol))
    bound = float(np.sqrt(eps) * grad + floor)
    ratio = rec_norm / bound
    reasons = []
    if ratio > slack:
        reasons.append(f"recovered-entry ratio {ratio:.3g} > {slack}")
    if grad > grad_tol:
        reasons.append(f"||grad m|| = {grad:.3e} > {grad_tol}")
    return RiemannianReport(float(eps), float(np.max(np.abs(td.m))), float(res), grad, rec_norm, bound,
                            float(ratio), ds.cond, not reasons, reasons)


# --------------------------------------------------------------------------
# product metrics


def product_projection_gap(g: StationaryMetric, states, s_end: float, step: float | None = None) -> float:
    """Largest gap between the spatial projection of spacetime rays of ``g``
    and the geodesics of its Riemannian part with the same initial covector.

    Meaningful for product metrics ``-dt^2 + h``, where the two flows share
    their spatial equations.
    """
    z0 = np.array([X.z for X in states], dtype=float)
    p0 = np.array([X.zeta for X in states], dtype=float)
    a = propagate(g, z0, p0, until="param", s_end=s_end, step=step)
    b = propagate(g, z0[:, 1:], p0[:, 1:], spatial=True, until="param", s_end=s_end, step=step)
    raise_for_status(a)
    raise_for_status(b)
    return float(max(np.max(np.abs(a.q[:, 1:] - b.q)), np.max(np.abs(a.p[:, 1:] - b.p))))


def product_transform_gap(m, etas, p, varrho: float = -1.05, **kw) -> float:
    """Relative gap between the spacetime transform of ``m`` and the spatial transform of its ``h`` block.

    For the difference of two straightened product metrics the time row and
    column of ``m`` vanish, so the two agree up to quadrature round-off at
    any ``varrho``.
    """
    n = np.shape(etas)[-1]
    spec = None if n == 2 else CutoffSpec(RIEMANNIAN_MU, "riemannian", tuple(np.atleast_1d(p)))
    lor = transform_A(m, varrho, etas, p, spec, **kw)
    rie = riemannian_transform(m, etas, p, **kw)
    scale = max(float(np.max(np.abs(rie))), 1e-300)
    return float(np.max(np.abs(lor - rie)) / scale)
