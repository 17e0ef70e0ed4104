"""Stationary Lorentzian metrics near Minkowski space.

A stationary metric on R x R^n is stored through its spacetime matrix

    G(x) = [[-lam(x), omega(x)^T],
            [omega(x), h(x)    ]],

which does not depend on t.  Every metric object exposes ``jet(x, order)``:
for a batch of spatial points ``x`` of shape (B, n) it returns the list
``[G, dG, d2G][:order + 1]`` with shapes (B, D, D), (B, D, D, n) and
(B, D, D, n, n) where D = n + 1.  Derivative indices are always trailing and
always spatial.

Perturbations are built from the unit-peak compact bump
``b(u) = exp(1 - 1/(1 - |u|^2))`` on sub-balls of the domain, so every
derivative is available in closed form.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import FormViolation, GridTooCoarse, NotBoundaryFixing, Singular

NULL_TOL = 1e-10
COND_BOUND = 1e8


@dataclass(frozen=True)
class SpatialDomain:
    """Open ball of radius ``r_omega`` inside the enclosing ball ``B_rho``.

    The reference hyperplane is ``{x^1 = H_offset}``; by default it touches
    the enclosing ball at ``x^1 = -rho``.
    """

    n: int = 2
    r_omega: float = 1.0
    rho: float = 1.25
    H_offset: float | None = None

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"spatial dimension must be 2 or 3, got {self.n}")
        if not 0 < self.r_omega < self.rho:
            raise ValueError("need 0 < r_omega < rho")
        if self.H_offset is None:
            object.__setattr__(self, "H_offset", -float(self.rho))
        if abs(self.H_offset) <= self.r_omega:
            raise ValueError("hyperplane H must lie outside the domain")

    @property
    def dim(self) -> int:
        return self.n + 1

    def inside(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,...i->...", x, x) < self.r_omega**2

    def boundary_points(self, count: int) -> np.ndarray:
        """Deterministic, roughly uniform sample of the boundary sphere."""
        r = self.r_omega
        if self.n == 2:
            phi = 2.0 * np.pi * np.arange(count) / count
            return r * np.stack([np.cos(phi), np.sin(phi)], axis=1)
        # Fibonacci sphere
        k = np.arange(count) + 0.5
        z = 1.0 - 2.0 * k / count
        phi = np.pi * (1.0 + 5**0.5) * k
        s = np.sqrt(1.0 - z * z)
        return r * np.stack([z, s * np.cos(phi), s * np.sin(phi)], axis=1)


def minkowski_matrix(n: int) -> np.ndarray:
    eta = np.eye(n + 1)
    eta[0, 0] = -1.0
    return eta


def _as_batch(x, n):
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != n:
        raise ValueError(f"expected points with {n} coordinates, got shape {x.shape}")
    return x, single


class StationaryMetric:
    """Base class.  Subclasses implement :meth:`jet`."""

    flat = False
    special_form = False
    max_order = 2
    min_width: float | None = None

    def __init__(self, domain: SpatialDomain):
        self.domain = domain
        self.n = domain.n
        self.dim = domain.n + 1

    def jet(self, x, order=0):
        raise NotImplementedError

    def spatial_jet(self, x, order=0):
        """Jet of the Riemannian part ``h`` alone."""
        return [a[:, 1:, 1:] for a in self.jet(x, order)]

    def fields(self, x):
        """Return ``(lam, omega, h)`` at a batch of points."""
        G = self.jet(np.atleast_2d(x), 0)[0]
        return -G[:, 0, 0], G[:, 0, 1:].copy(), G[:, 1:, 1:].copy()

    def riemannian_part(self) -> "ProductMetric":
        return ProductMetric(self)


class Minkowski(StationaryMetric):
    """The flat metric ``-dt^2 + dx^2``."""

    flat = True
    special_form = True
    max_order = 3

    def jet(self, x, order=0):
        x = np.atleast_2d(x)
        B, n, D = x.shape[0], self.n, self.dim
        out = [np.broadcast_to(minkowski_matrix(n), (B, D, D)).copy()]
        for k in range(1, order + 1):
            out.append(np.zeros((B, D, D) + (n,) * k))
        return out


class BumpMetric(StationaryMetric):
    """``lam = 1 + eps sum a_k b_k``, ``omega = eps sum w_k b_k``, ``h = e + eps sum A_k b_k``.

    With ``special_form`` the first covector slot of every ``w_k`` and the
    first row and column of every ``A_k`` are zero, so ``omega_1 = 0`` and
    ``h_1j = delta_1j`` hold identically.
    """

    max_order = 3

    def __init__(self, domain, eps, centers, widths, lam_coef, omega_coef, h_coef,
                 special_form=False):
        super().__init__(domain)
        n = domain.n
        self.eps = float(eps)
        self.centers = np.asarray(centers, dtype=float).reshape(-1, n)
        self.widths = np.asarray(widths, dtype=float).reshape(-1)
        K = len(self.widths)
        self.lam_coef = np.asarray(lam_coef, dtype=float).reshape(K)
        self.omega_coef = np.array(omega_coef, dtype=float).reshape(K, n)
        A = np.array(h_coef, dtype=float).reshape(K, n, n)
        self.h_coef = 0.5 * (A + np.swapaxes(A, 1, 2))
        self.special_form = bool(special_form)
        if self.special_form:
            self.omega_coef[:, 0] = 0.0
            self.h_coef[:, 0, :] = 0.0
            self.h_coef[:, :, 0] = 0.0
        reach = np.linalg.norm(self.centers, axis=1) + self.widths
        if K and np.any(reach >= domain.r_omega):
            raise ValueError("every bump must be compactly supported inside the domain")
        self.min_width = float(self.widths.min()) if K else None
        C = np.zeros((K, n + 1, n + 1))
        C[:, 0, 0] = -self.lam_coef
        C[:, 0, 1:] = self.omega_coef
        C[:, 1:, 0] = self.omega_coef
        C[:, 1:, 1:] = self.h_coef
        self._coef = C

    def scaled(self, eps) -> "BumpMetric":
        return BumpMetric(self.domain, eps, self.centers, self.widths, self.lam_coef,
                          self.omega_coef, self.h_coef, self.special_form)

    def perturbation_jet(self, x, order=0):
        """Jet of ``(G - eta) / eps`` up to third order."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        B, D = x.shape[0], self.dim
        if len(self.widths) == 0:
            return [np.zeros((B, D, D) + (self.n,) * k) for k in range(order + 1)]
        b = kernels.bump_jet(x, self.centers, self.widths, order)
        # contract the bump index; derivative indices move behind (i, j)
        return [np.moveaxis(np.tensordot(b[k], self._coef, axes=([1], [0])), (-2, -1), (1, 2))
                for k in range(order + 1)]

    def jet(self, x, order=0):
        if order > self.max_order:
            raise ValueError("bump metrics provide derivatives up to order 3")
        P = self.perturbation_jet(x, order)
        out = [minkowski_matrix(self.n)[None] + self.eps * P[0]]
        out.extend(self.eps * p for p in P[1:])
        return out


class ProductMetric(StationaryMetric):
    """``-dt^2 + h`` with ``h`` borrowed from another stationary metric."""

    special_form = False

    def __init__(self, source: StationaryMetric):
        super().__init__(source.domain)
        self.source = source
        self.max_order = source.max_order
        self.min_width = source.min_width
        self.flat = source.flat

    def jet(self, x, order=0):
        src = self.source.jet(x, order)
        out = []
        for k, a in enumerate(src):
            b = np.zeros_like(a)
            b[:, 1:, 1:] = a[:, 1:, 1:]
            if k == 0:
                b[:, 0, 0] = -1.0
            out.append(b)
        return out


def _random_centers(rng, domain, widths, margin=0.02):
    n = domain.n
    out = np.empty((len(widths), n))
    for k, w in enumerate(widths):
        rmax = domain.r_omega - w - margin
        d = rng.normal(size=n)
        d /= np.linalg.norm(d)
        out[k] = d * rmax * rng.uniform(0.0, 1.0) ** (1.0 / n)
    return out


def random_bump_metric(domain: SpatialDomain, eps: float, n_bumps: int = 3, seed: int = 0,
                       special_form: bool = False, width_range=(0.35, 0.55)) -> BumpMetric:
    """Seeded random member of the bump family with O(1) coefficients."""
    rng = np.random.default_rng(seed)
    n = domain.n
    widths = rng.uniform(*width_range, size=n_bumps)
    centers = _random_centers(rng, domain, widths)
    lam = rng.uniform(-1.0, 1.0, size=n_bumps)
    om = rng.uniform(-1.0, 1.0, size=(n_bumps, n))
    A = rng.uniform(-1.0, 1.0, size=(n_bumps, n, n))
    return BumpMetric(domain, eps, centers, widths, lam, om, A, special_form=special_form)


def eval_metric(g: StationaryMetric, x) -> np.ndarray:
    """Spacetime matrix at a point (or a batch of points)."""
    xb, single = _as_batch(x, g.n)
    G = g.jet(xb, 0)[0]
    return G[0] if single else G


def inverse_metric(g: StationaryMetric, x, cond_bound: float = COND_BOUND) -> np.ndarray:
    """Exact inverse of the spacetime matrix.

    Raises :class:`Singular` when the condition number exceeds ``cond_bound``.
    For special-form metrics the block pattern of the inverse is checked.
    """
    xb, single = _as_batch(x, g.n)
    G = g.jet(xb, 0)[0]
    cond = np.linalg.cond(G)
    if np.any(~np.isfinite(cond)) or np.any(cond > cond_bound):
        raise Singular(f"metric condition number {np.max(cond):.3e} exceeds {cond_bound:.1e}")
    Ginv = np.linalg.inv(G)
    if g.special_form:
        res = special_block_defect(Ginv)
        if res > 1e-12:
            raise FormViolation(f"inverse lost the special block pattern (defect {res:.2e})")
    return Ginv[0] if single else Ginv


def special_block_defect(M) -> float:
    """Largest deviation of a batch of spacetime matrices from the block pattern.

    The pattern is: entries (0,1), (1,0) vanish, row/column 1 is (.., 1, 0, ..).
    """
    M = np.asarray(M)
    if M.ndim == 2:
        M = M[None]
    parts = [np.abs(M[:, 0, 1]), np.abs(M[:, 1, 0]), np.abs(M[:, 1, 1] - 1.0)]
    if M.shape[1] > 2:
        parts += [np.abs(M[:, 1, 2:]).max(axis=1), np.abs(M[:, 2:, 1]).max(axis=1)]
    return float(max(np.max(p) for p in parts))


def lattice(domain: SpatialDomain, N: int, half_width: float | None = None) -> np.ndarray:
    """Regular N^n lattice over the cube [-r, r]^n, flattened to (N^n, n)."""
    r = domain.r_omega if half_width is None else half_width
    ax = np.linspace(-r, r, N)
    mesh = np.meshgrid(*([ax] * domain.n), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=1)


def closeness_seminorm(g: StationaryMetric, k: int = 2, grid: int = 64) -> float:
    """Sampled C^k seminorm of ``(lam - 1, omega, h - e)``.

    The maximum is taken over an ``grid^n`` lattice on the cube around the
    domain and over all derivatives of order at most ``k``.  It is a lower
    bound for the true norm.  Orders beyond the analytic jets of ``g`` are
    obtained by centred differences at the lattice spacing.
    """
    spacing = 2.0 * g.domain.r_omega / (grid - 1)
    if g.min_width is not None and spacing > g.min_width:
        raise GridTooCoarse(f"grid spacing {spacing:.3g} exceeds narrowest bump width {g.min_width:.3g}")
    if k > g.max_order + 1:
        raise ValueError(f"order {k} needs more derivatives than this metric provides")
    x = lattice(g.domain, grid)
    eta = minkowski_matrix(g.n)
    analytic = min(k, g.max_order)
    best = 0.0
    for chunk in np.array_split(x, max(1, len(x) // 4096)):
        if isinstance(g, BumpMetric):
            jets = [g.eps * p for p in g.perturbation_jet(chunk, analytic)]
        else:
            jets = g.jet(chunk, analytic)
            jets[0] = jets[0] - eta[None]
        for a in jets:
            best = max(best, float(np.max(np.abs(a))))
        if k > analytic:
            # one order beyond the analytic jet, by centred differences
            for ax in range(g.n):
                e = np.zeros(g.n)
                e[ax] = spacing
                diff = (g.jet(chunk + e, analytic)[-1] - g.jet(chunk - e, analytic)[-1]) / (2 * spacing)
                best = max(best, float(np.max(np.abs(diff))))
    return best


def classify_covector(g: StationaryMetric, z, zeta, null_tol: float = NULL_TOL):
    """Causal class and time orientation of a covector at a spacetime point.

    Returns ``(kind, future)`` where ``kind`` is ``"timelike"``, ``"null"`` or
    ``"spacelike"`` and ``future`` is True when the dual vector pairs
    negatively with ``d/dt`` (equivalently ``zeta_0 < 0``).
    """
    z = np.asarray(z, dtype=float)
    zeta = np.asarray(zeta, dtype=float)
    Ginv = inverse_metric(g, z[1:])
    q = float(zeta @ Ginv @ zeta)
    if abs(q) <= null_tol * float(zeta @ zeta):
        kind = "null"
    elif q < 0:
        kind = "timelike"
    else:
        kind = "spacelike"
    return kind, bool(zeta[0] < 0)


# ---------------------------------------------------------------------------
# diffeomorphisms and pullbacks


class Diffeomorphism:
    """Spatial map with derivatives.

    ``jet(x, order)`` returns ``[y, Dy, D2y, D3y][:order + 1]`` with
    ``Dy[b, i, j] = d y_i / d x_j`` and further derivative indices trailing.
    """

    n: int
    max_order = 3

    def jet(self, x, order=0):
        raise NotImplementedError

    def __call__(self, x):
        xb, single = _as_batch(x, self.n)
        y = self.jet(xb, 0)[0]
        return y[0] if single else y

    def inverse(self, y, tol: float = 1e-13, maxiter: int = 50):
        """Newton inversion started at ``x = y``."""
        yb, single = _as_batch(y, self.n)
        x = yb.copy()
        for _ in range(maxiter):
            val, D = self.jet(x, 1)
            r = val - yb
            if np.max(np.abs(r)) <= tol:
                break
            x = x - np.linalg.solve(D, r[..., None])[..., 0]
        return x[0] if single else x


class IdentityDiffeo(Diffeomorphism):
    def __init__(self, n):
        self.n = n

    def jet(self, x, order=0):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        B, n = x.shape
        out = [x.copy()]
        if order >= 1:
            out.append(np.broadcast_to(np.eye(n), (B, n, n)).copy())
        for k in range(2, order + 1):
            out.append(np.zeros((B, n) + (n,) * k))
        return out


class BumpDiffeo(Diffeomorphism):
    """``psi(x) = x + sum_k v_k b_k(x)`` with bumps compactly inside the domain."""

    def __init__(self, domain, centers, widths, vectors):
        self.domain = domain
        self.n = domain.n
        self.centers = np.asarray(centers, dtype=float).reshape(-1, self.n)
        self.widths = np.asarray(widths, dtype=float).reshape(-1)
        self.vectors = np.asarray(vectors, dtype=float).reshape(-1, self.n)
        reach = np.linalg.norm(self.centers, axis=1) + self.widths
        if np.any(reach >= domain.r_omega):
            raise NotBoundaryFixing("diffeomorphism bumps must stay inside the domain")

    def jet(self, x, order=0):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        b = kernels.bump_jet(x, self.centers, self.widths, order)
        V = self.vectors
        out = [x + b[0] @ V]
        for k in range(1, order + 1):
            # sum_k V[k, i] * b[B, k, j, ...] -> [B, i, j, ...]
            out.append(np.moveaxis(np.tensordot(b[k], V, axes=([1], [0])), -1, 1))
        if order >= 1:
            out[1] += np.eye(self.n)[None]
        return out


def random_bump_diffeo(domain: SpatialDomain, amplitude: float, n_bumps: int = 3,
                       seed: int = 0) -> BumpDiffeo:
    """Seeded boundary-fixing diffeomorphism with displacement ``~amplitude``.

    A wide central bump makes every chord of the domain see a displacement
    of the order of ``amplitude`` near its midpoint.
    """
    rng = np.random.default_rng(seed)
    n = domain.n
    widths = np.concatenate([[0.9 * domain.r_omega], rng.uniform(0.4, 0.6, size=n_bumps - 1)])
    centers = _random_centers(rng, domain, widths[1:])
    centers = np.vstack([np.zeros((1, n)), centers])
    dirs = rng.normal(size=(n_bumps, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return BumpDiffeo(domain, centers, widths, amplitude * dirs)


class ComposedDiffeo(Diffeomorphism):
    """``outer o inner`` with the chain rule carried to third order."""

    def __init__(self, outer: Diffeomorphism, inner: Diffeomorphism):
        self.outer, self.inner = outer, inner
        self.n = inner.n
        self.max_order = min(outer.max_order, inner.max_order)

    def jet(self, x, order=0):
        p = self.inner.jet(x, order)
        f = self.outer.jet(p[0], order)
        out = [f[0]]
        if order >= 1:
            out.append(f[1] @ p[1])
        if order >= 2:
            out.append(np.einsum("ziab,zaj,zbk->zijk", f[2], p[1], p[1])
                       + np.einsum("zia,zajk->zijk", f[1], p[2]))
        if order >= 3:
            t = np.einsum("ziabc,zaj,zbk,zcl->zijkl", f[3], p[1], p[1], p[1])
            t += np.einsum("ziab,zajl,zbk->zijkl", f[2], p[2], p[1])
            t += np.einsum("ziab,zaj,zbkl->zijkl", f[2], p[1], p[2])
            t += np.einsum("ziab,zajk,zbl->zijkl", f[2], p[2], p[1])
            t += np.einsum("zia,zajkl->zijkl", f[1], p[3])
            out.append(t)
        return out


def pullback_jet(Gy, psi, order):
    """Jet of ``L^T G(psi(x)) L`` with ``L = diag(1, D psi)``.

    ``Gy`` is the jet of the spacetime (or purely spatial) matrix evaluated at
    ``psi(x)`` with derivatives in the target coordinates, ``psi`` the jet of
    the map to order ``order + 1``.
    """
    return kernels.pullback_jet(Gy[0], Gy[1] if order >= 1 else None,
                                Gy[2] if order >= 2 else None,
                                psi[1], psi[2] if order >= 1 else None,
                                psi[3] if order >= 2 else None, order)


def _check_boundary_fixing(domain, psi, tol=1e-12, count=512):
    xb = domain.boundary_points(count)
    moved = float(np.max(np.abs(psi.jet(xb, 0)[0] - xb)))
    if moved > tol:
        raise NotBoundaryFixing(f"map moves the boundary by {moved:.2e}")


class PullbackMetric(StationaryMetric):
    """``(Id x psi)^* g``: ``lam o psi``, ``Dpsi^T omega o psi``, ``Dpsi^T (h o psi) Dpsi``."""

    def __init__(self, base: StationaryMetric, psi: Diffeomorphism, check_boundary: bool = True):
        super().__init__(base.domain)
        if check_boundary:
            _check_boundary_fixing(base.domain, psi)
        self.base, self.psi = base, psi
        self.max_order = min(base.max_order, psi.max_order - 1, 2)
        self.min_width = base.min_width

    def jet(self, x, order=0):
        if order > self.max_order:
            raise ValueError(f"pullback metric provides derivatives up to order {self.max_order}")
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p = self.psi.jet(x, order + 1)
        Gy = self.base.jet(p[0], order)
        return pullback_jet(Gy, p, order)


def pullback_metric(g: StationaryMetric, psi: Diffeomorphism) -> PullbackMetric:
    return PullbackMetric(g, psi)
