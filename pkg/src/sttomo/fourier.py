"""Fourier-side analysis of the weighted ray transform.

Conventions: the forward transform is ``f^(theta) = (2 pi)^(-n/2) int
e^{-i theta.x} f(x) dx``, approximated on a periodic lattice so that the
discrete Parseval identity holds with constant one.  Every quadrature is a
plain trapezoid sum on a uniform grid.

The pieces here are

* the direction field ``xi(eta, p)`` and the homogeneous cutoffs;
* the straight-ray transform ``A m`` and its parity/``varrho`` splitting;
* an independent oracle through the n-dimensional DFT;
* the phase change of variables along curved rays;
* the oscillatory-integral norm experiment and the cone estimate;
* the final contraction diagnostic.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.hermite_e import hermeval
from scipy.interpolate import RegularGridInterpolator

from .errors import FoldDetected, IllConditioned, KViolated, SingularDirection
from .flow import propagate

DENOM_TOL = 1e-14
RHO1_DEFAULT = -1.05
RHO2_DEFAULT = -1.10
PHASE_STEP = 5e-3


# --------------------------------------------------------------------------
# directions and cutoffs


def _split(eta):
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    return eta, eta[:, 0], eta[:, 1:]


def _p_array(p, n):
    p = np.atleast_1d(np.asarray(p, dtype=float))
    if p.shape != (n - 1,):
        raise ValueError(f"p must have {n - 1} components")
    return p


def _denominator(eta, p):
    eta, e1, ep = _split(eta)
    ep_p = ep @ _p_array(p, eta.shape[1])
    return np.sqrt(ep_p**2 + e1**2), e1, ep_p


def xi_from_eta_p(eta, p) -> np.ndarray:
    """Unit vector orthogonal to ``eta`` built from the transverse direction ``p``."""
    single = np.ndim(eta) == 1
    den, e1, ep_p = _denominator(eta, p)
    if np.any(den < DENOM_TOL):
        raise SingularDirection("eta_1 and eta'.p vanish together")
    p = np.asarray(p, dtype=float).reshape(-1)
    xi = np.concatenate([(-ep_p / den)[:, None], (e1 / den)[:, None] * p[None, :]], axis=1)
    return xi[0] if single else xi


def psi_p(eta, p):
    """``eta_1 / sqrt(|eta'.p|^2 + eta_1^2)``, homogeneous of degree zero."""
    single = np.ndim(eta) == 1
    den, e1, _ = _denominator(eta, p)
    if np.any(den < DENOM_TOL):
        raise SingularDirection("eta_1 and eta'.p vanish together")
    out = e1 / den
    return float(out[0]) if single else out


@dataclass(frozen=True)
class DirectionParams:
    varrho: float
    eta: tuple
    p: tuple

    @property
    def xi(self) -> np.ndarray:
        return xi_from_eta_p(np.array(self.eta), np.array(self.p))

    @property
    def zeta0(self) -> np.ndarray:
        return np.concatenate([[self.varrho], self.xi])


def smoothstep(t):
    """Quintic ramp: 0 for t <= 0, 1 for t >= 1, two continuous derivatives."""
    t = np.clip(t, 0.0, 1.0)
    return t * t * t * (10.0 + t * (-15.0 + 6.0 * t))


@dataclass(frozen=True)
class CutoffSpec:
    """``kind`` is ``"lorentzian"`` (ratio ``|eta_1|/|eta|``) or ``"riemannian"``
    (ratio ``(|eta'.p| + |eta_1|)/|eta|``, which needs ``p``)."""

    mu: float
    kind: str = "lorentzian"
    p: tuple | None = None


def cutoff_ratio(eta, spec: CutoffSpec):
    eta, e1, ep = _split(eta)
    norm = np.linalg.norm(eta, axis=1)
    num = np.abs(e1)
    if spec.kind == "riemannian":
        num = num + np.abs(ep @ _p_array(spec.p, eta.shape[1]))
    elif spec.kind != "lorentzian":
        raise ValueError(f"unknown cutoff kind {spec.kind!r}")
    with np.errstate(invalid="ignore", divide="ignore"):
        r = np.where(norm > 0, num / np.where(norm > 0, norm, 1.0), 0.0)
    return r


def cutoff(eta, spec: CutoffSpec):
    """Smooth order-zero cutoff: 0 below ratio ``mu/2``, 1 above ``mu``; 0 at the origin."""
    single = np.ndim(eta) == 1
    r = cutoff_ratio(eta, spec)
    out = smoothstep((r - 0.5 * spec.mu) / (0.5 * spec.mu))
    return float(out[0]) if single else out


# --------------------------------------------------------------------------
# lattices and transforms


@dataclass(frozen=True)
class TransformGrid:
    """Periodic cell ``[-half_width, half_width)^n`` with ``N`` nodes per axis.

    ``r_inner`` and ``r_outer`` define the smooth window ``a``: one on the
    ball of radius ``r_inner`` and zero outside radius ``r_outer``.
    """

    n: int
    N: int
    half_width: float = 1.25
    r_inner: float = 1.0
    r_outer: float = 1.25

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / self.N

    @property
    def axis(self) -> np.ndarray:
        return -self.half_width + self.dx * np.arange(self.N)

    @property
    def dtheta(self) -> float:
        return 2.0 * np.pi / (self.N * self.dx)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*([self.axis] * self.n), indexing="ij")
        return np.stack(mesh, axis=-1)

    def theta(self) -> np.ndarray:
        """Frequency lattice in FFT order, shape ``(N,)*n + (n,)``."""
        f = 2.0 * np.pi * np.fft.fftfreq(self.N, d=self.dx)
        return np.stack(np.meshgrid(*([f] * self.n), indexing="ij"), axis=-1)

    def window(self, x=None):
        x = self.points() if x is None else np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        return smooth_window(r, self.r_inner, self.r_outer)

    def dft(self, f):
        """Unitary transform of lattice samples over the first ``n`` axes."""
        return lattice_dft(f, [self.axis] * self.n)[0]


def smooth_window(r, r_in, r_out):
    """C-infinity radial cutoff: 1 for ``r <= r_in``, 0 for ``r >= r_out``."""
    t = np.clip((np.asarray(r, dtype=float) - r_in) / (r_out - r_in), 0.0, 1.0)
    out = np.zeros_like(t)
    inner = t <= 0
    outer = t >= 1
    mid = ~(inner | outer)
    a = np.exp(-1.0 / t[mid])
    b = np.exp(-1.0 / (1.0 - t[mid]))
    out[mid] = b / (a + b)
    out[inner] = 1.0
    return out


def lattice_dft(f, axes):
    """Unitary DFT over ``len(axes)`` leading axes of uniformly sampled ``f``.

    Returns values on the frequency lattice in FFT order together with the
    frequency axes.  The phase of the first node is applied so the result
    approximates the continuous transform.
    """
    n = len(axes)
    spacing = [a[1] - a[0] for a in axes]
    F = np.fft.fftn(f, axes=tuple(range(n)))
    freqs = [2.0 * np.pi * np.fft.fftfreq(len(a), d=h) for a, h in zip(axes, spacing)]
    for k, (fr, a) in enumerate(zip(freqs, axes)):
        shape = [1] * F.ndim
        shape[k] = len(fr)
        F = F * np.exp(-1j * fr * a[0]).reshape(shape)
    return F * (np.prod(spacing) / (2.0 * np.pi) ** (n / 2.0)), freqs


def projection_slice_oracle(field_values, grid: TransformGrid, eta=None):
    """Unitary DFT of a lattice field, on the frequency lattice or at given ``eta``."""
    if eta is None:
        return grid.dft(field_values)
    eta = np.atleast_2d(np.asarray(eta, dtype=float))
    x = grid.points().reshape(-1, grid.n)
    f = np.asarray(field_values).reshape(len(x), -1)
    ph = np.exp(-1j * eta @ x.T)
    return (ph @ f).reshape((len(eta),) + np.shape(field_values)[grid.n:]) * (
        grid.dx**grid.n / (2.0 * np.pi) ** (grid.n / 2.0))


# --------------------------------------------------------------------------
# test fields for m


@dataclass
class WavePacket:
    """``Re sum_k a_k exp(i q_k.x) * exp(-|x - c|^2 / (2 sigma^2))`` with its gradient."""

    q: np.ndarray
    a: np.ndarray
    center: np.ndarray
    sigma: float

    def value_grad(self, x):
        x = np.asarray(x, dtype=float)
        d = x - self.center
        w = np.exp(-np.sum(d * d, axis=-1) / (2.0 * self.sigma**2))
        e = np.exp(1j * (x @ self.q.T)) * self.a          # (..., K)
        s = e.sum(axis=-1)
        val = np.real(s) * w
        ds = np.real(1j * e @ self.q)                      # (..., n)
        grad = (ds - np.real(s)[..., None] * d / self.sigma**2) * w[..., None]
        return val, grad


@dataclass
class SyntheticM:
    """Symmetric ``(1+n) x (1+n)`` field assembled from wave packets.

    ``entries`` maps ``(i, j)`` with ``i <= j`` to a packet; missing
    entries are zero.
    """

    n: int
    entries: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.n + 1

    def matrix_grad(self, x):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        D = self.dim
        M = np.zeros(lead + (D, D))
        G = np.zeros(lead + (D, D, self.n))
        for (i, j), pk in self.entries.items():
            v, g = pk.value_grad(x)
            M[..., i, j] = M[..., j, i] = v
            G[..., i, j, :] = G[..., j, i, :] = g
        return M, G

    def contracted_grad(self, x, zeta):
        """``grad_x (m zeta . zeta)`` with ``zeta`` broadcast against ``x``."""
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape)
        for (i, j), pk in self.entries.items():
            _, g = pk.value_grad(x)
            w = zeta[..., i] * zeta[..., j] * (1.0 if i == j else 2.0)
            out += w[..., None] * g
        return out

    def component_lattice(self, grid: TransformGrid):
        """``(m, grad m)`` sampled on the grid."""
        return self.matrix_grad(grid.points())


def random_synthetic_m(n: int, seed: int, max_wavenumber: float, sigma: float = 0.2,
                       n_modes: int = 4, components: str = "all", special: bool = True,
                       amplitude: float = 1.0) -> SyntheticM:
    """Random wave-packet field with wavenumbers up to ``max_wavenumber``.

    ``components`` selects ``"lambda"``, ``"omega"``, ``"h"`` or ``"all"``.
    With ``special`` the first spatial row and column are left empty, which
    is the block pattern of straightened metrics.
    """
    rng = np.random.default_rng(seed)
    D = n + 1
    keys = []
    if components in ("lambda", "all"):
        keys.append((0, 0))
    first = 2 if special else 1
    if components in ("omega", "all"):
        keys += [(0, j) for j in range(first, D)]
    if components in ("h", "all"):
        keys += [(i, j) for i in range(first, D) for j in range(i, D)]
    m = SyntheticM(n)
    for key in keys:
        radius = max_wavenumber * np.sqrt(rng.uniform(0.0, 1.0, n_modes))
        direc = rng.normal(size=(n_modes, n))
        direc /= np.linalg.norm(direc, axis=1, keepdims=True)
        q = radius[:, None] * direc
        a = amplitude * (rng.normal(size=n_modes) + 1j * rng.normal(size=n_modes)) / np.sqrt(n_modes)
        c = rng.uniform(-0.15, 0.15, n)
        m.entries[key] = WavePacket(q, a, c, sigma)
    return m


class LatticeM:
    """Interpolated ``m`` and ``grad m`` from lattice samples (cubic splines)."""

    def __init__(self, axes, M, G):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.n = len(axes)
        self.dim = self.n + 1
        D, n = self.dim, self.n
        flat = np.concatenate([M.reshape(M.shape[:n] + (D * D,)), G.reshape(G.shape[:n] + (D * D * n,))],
                              axis=-1)
        self._interp = RegularGridInterpolator(self.axes, flat, method="cubic", bounds_error=False,
                                               fill_value=0.0)

    @classmethod
    def from_difference(cls, td):
        return cls(td.axes, td.m, _assemble_grad(td))

    def matrix_grad(self, x):
        x = np.asarray(x, dtype=float)
        lead = x.shape[:-1]
        D, n = self.dim, self.n
        v = self._interp(x.reshape(-1, n))
        M = v[:, : D * D].reshape(lead + (D, D))
        G = v[:, D * D:].reshape(lead + (D, D, n))
        return M, G

    def contracted_grad(self, x, zeta):
        _, G = self.matrix_grad(x)
        return np.einsum("...ijk,...i,...j->...k", G, zeta, zeta)


def _assemble_grad(td):
    shape = td.m.shape[:-2]
    D = td.m.shape[-1]
    n = D - 1
    G = np.zeros(shape + (D, D, n))
    G[..., 0, 0, :] = td.grad_lambda
    G[..., 0, 1:, :] = td.grad_omega
    G[..., 1:, 0, :] = td.grad_omega
    G[..., 1:, 1:, :] = td.grad_h
    return G


# --------------------------------------------------------------------------
# straight-ray transform


def _perp_basis(eta, xi):
    """Orthonormal basis of ``xi^perp`` whose first vector is ``eta/|eta|``."""
    e0 = eta / np.linalg.norm(eta, axis=1, keepdims=True)
    if eta.shape[1] == 2:
        return e0[:, None, :]
    e1 = np.cross(xi, e0)
    return np.stack([e0, e1], axis=1)


@dataclass(frozen=True)
class RayQuadrature:
    """Trapezoid nodes over the ball of radius ``radius`` in ray coordinates."""

    radius: float = 1.25
    du: float = 0.03
    ds: float = 0.04

    def nodes(self, n):
        ku = int(np.floor(self.radius / self.du))
        ks = int(np.floor(self.radius / self.ds))
        u = self.du * np.arange(-ku, ku + 1)
        s = self.ds * np.arange(-ks, ks + 1)
        mesh = np.meshgrid(*([u] * (n - 1) + [s]), indexing="ij")
        pts = np.stack([c.ravel() for c in mesh], axis=1)
        keep = np.sum(pts**2, axis=1) <= self.radius**2
        return pts[keep], self.du ** (n - 1) * self.ds


def transform_A(m, varrho: float, etas, p, spec: CutoffSpec | None = None,
                quad: RayQuadrature = RayQuadrature(), chunk: int = 16):
    """Straight-ray transform ``A m(varrho, eta, p)`` for each ``eta``.

    For each frequency the rays start with covector ``(varrho, xi(eta, p))``
    from the foot points ``y`` in ``xi^perp``; the integrand ``grad_x (m
    zeta.zeta)`` is summed along each ray and then Fourier transformed in
    ``y``.  Returns an array ``(len(etas), n)`` of complex values,
    multiplied by the cutoff when ``spec`` is given.  Frequencies outside
    the cutoff support are returned as exact zeros.
    """
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    n = etas.shape[1]
    out = np.zeros((len(etas), n), dtype=complex)
    chi = np.ones(len(etas)) if spec is None else cutoff(etas, spec)
    live = np.nonzero(chi > 0)[0]
    nodes, w = quad.nodes(n)
    norm = w / (2.0 * np.pi) ** (n / 2.0)
    for start in range(0, len(live), chunk):
        idx = live[start:start + chunk]
        eta = etas[idx]
        xi = xi_from_eta_p(eta, p)
        E = _perp_basis(eta, xi)                                   # (c, n-1, n)
        x = np.einsum("pa,can->cpn", nodes[:, :-1], E) + nodes[None, :, -1:] * xi[:, None, :]
        zeta = np.concatenate([np.full((len(idx), 1), varrho), xi], axis=1)
        f = m.contracted_grad(x, np.broadcast_to(zeta[:, None, :], x.shape[:-1] + (n + 1,)))
        phase = np.exp(-1j * np.linalg.norm(eta, axis=1)[:, None] * nodes[None, :, 0])
        out[idx] = np.einsum("cp,cpn->cn", phase, f) * norm
    return out * chi[:, None]


def transform_A_oracle(m: SyntheticM | LatticeM, grid: TransformGrid, varrho: float, p,
                       spec: CutoffSpec | None = None):
    """DFT route: ``chi(eta) i eta (m^ zeta.zeta)(eta)`` on the frequency lattice.

    Returns ``(theta, values)`` with ``theta`` of shape ``(N^n, n)``.
    """
    M, _ = m.matrix_grad(grid.points())
    Mhat = grid.dft(M)
    theta = grid.theta().reshape(-1, grid.n)
    D = grid.n + 1
    Mhat = Mhat.reshape(-1, D, D)
    out = np.zeros((len(theta), grid.n), dtype=complex)
    chi = np.ones(len(theta)) if spec is None else cutoff(theta, spec)
    live = chi > 0
    xi = xi_from_eta_p(theta[live], p)
    zeta = np.concatenate([np.full((len(xi), 1), varrho), xi], axis=1)
    mzz = np.einsum("bij,bi,bj->b", Mhat[live], zeta, zeta)
    out[live] = 1j * theta[live] * mzz[:, None] * chi[live, None]
    return theta, out


def lattice_eta(grid: TransformGrid, spec: CutoffSpec | None = None):
    """Frequency lattice points (FFT order) inside the cutoff support."""
    theta = grid.theta().reshape(-1, grid.n)
    if spec is None:
        return theta[np.linalg.norm(theta, axis=1) > 0]
    return theta[cutoff(theta, spec) > 0]


def relative_l2(a, b) -> float:
    den = np.sqrt(np.sum(np.abs(b) ** 2))
    return float(np.sqrt(np.sum(np.abs(a - b) ** 2)) / den) if den > 0 else float(np.sqrt(np.sum(np.abs(a) ** 2)))


def extract_components(A_r1_p, A_r1_m, A_r2_p, A_r2_m, rho1: float = RHO1_DEFAULT,
                       rho2: float = RHO2_DEFAULT):
    """Split ``A m`` values at ``(rho_i, +-p)`` into ``(A1, A2, A3)``.

    ``A2`` and ``A3`` refer to ``rho1``.
    """
    if abs(rho2**2 - rho1**2) < 1e-4:
        raise IllConditioned("rho1 and rho2 are too close to separate the quadratic term")
    A1 = (A_r2_p + A_r2_m - A_r1_p - A_r1_m) / (2.0 * (rho2**2 - rho1**2))
    A2 = (A_r1_p - A_r1_m) / (4.0 * rho1)
    A3 = 0.5 * (A_r1_p + A_r1_m) - rho1**2 * A1
    return A1, A2, A3


def direct_components(m: SyntheticM, etas, p, spec: CutoffSpec | None, h: float = 0.02,
                      radius: float = 1.25):
    """``A1``, ``A2``, ``A3`` from their defining integrals on a Cartesian grid.

    This route never forms rays: it integrates ``e^{-i eta.x}`` against the
    gradients of ``m_lambda``, ``m_omega . xi`` and ``m_h xi . xi``.
    """
    etas = np.atleast_2d(np.asarray(etas, dtype=float))
    n = etas.shape[1]
    k = int(np.floor(radius / h))
    ax = h * np.arange(-k, k + 1)
    x = np.stack(np.meshgrid(*([ax] * n), indexing="ij"), axis=-1).reshape(-1, n)
    x = x[np.sum(x * x, axis=1) <= radius**2]
    _, G = m.matrix_grad(x)
    xi = xi_from_eta_p(etas, p)
    chi = np.ones(len(etas)) if spec is None else cutoff(etas, spec)
    ph = np.exp(-1j * etas @ x.T) * (h**n / (2.0 * np.pi) ** (n / 2.0))    # (E, P)
    A1 = ph @ G[:, 0, 0, :]
    gw = np.einsum("pjk,ej->epk", G[:, 0, 1:, :], xi)
    A2 = np.einsum("ep,epk->ek", ph, gw)
    gh = np.einsum("pijk,ei,ej->epk", G[:, 1:, 1:, :], xi, xi)
    A3 = np.einsum("ep,epk->ek", ph, gh)
    return A1 * chi[:, None], A2 * chi[:, None], A3 * chi[:, None]


# --------------------------------------------------------------------------
# curved rays: phase change of variables


def _ray_map(g1, varrho, xi, rho, xd, step):
    """Image ``x`` of straight-ray points ``x_delta`` under the ``g1`` ray family, with ``D``.

    ``D = d x / d x_delta``.
    """
    B, n = xd.shape
    D = n + 1
    s = rho + xd @ xi
    y = xd - (xd @ xi)[:, None] * xi[None]
    z0 = np.concatenate([np.full((B, 1), rho * varrho), y - rho * xi[None]], axis=1)
    p0 = np.broadcast_to(np.concatenate([[varrho], xi]), (B, D)).copy()
    res = propagate(g1, z0, p0, until="param", s_end=s, step=step, variational=True)
    x = res.q[:, 1:]
    vel = np.linalg.solve(g1.jet(x, 0)[0], res.p[..., None])[..., 0][:, 1:]
    Jxx = res.J[:, 1:D, 1:D]
    P = np.eye(n) - np.outer(xi, xi)
    Dm = vel[:, :, None] * xi[None, None, :] + Jxx @ P
    return x, Dm


def phase_gradient(g1, x, eta, p, varrho: float = RHO1_DEFAULT, tol: float = 1e-12, maxiter: int = 20,
                   step: float = PHASE_STEP):
    """``grad_x phi(x, eta)`` with ``phi = eta . x_delta(x)``; ``x`` is a batch of points."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    eta = np.asarray(eta, dtype=float)
    xi = xi_from_eta_p(eta, p)
    rho = g1.domain.rho
    xd = x.copy()
    for _ in range(maxiter):
        xm, Dm = _ray_map(g1, varrho, xi, rho, xd, step)
        r = xm - x
        if np.max(np.abs(r)) <= tol:
            break
        xd = xd - np.linalg.solve(Dm, r[..., None])[..., 0]
    xm, Dm = _ray_map(g1, varrho, xi, rho, xd, step)
    if np.any(np.linalg.det(Dm) <= 0):
        raise FoldDetected("the straight-to-curved ray map folds on the sampled segment")
    return np.linalg.solve(np.swapaxes(Dm, 1, 2), np.broadcast_to(eta, x.shape)[..., None])[..., 0]


def phase_change_of_variables(g1, x, y, eta, p, varrho: float = RHO1_DEFAULT, n_nodes: int = 6,
                              fd_rel: float = 1e-5, step: float = PHASE_STEP):
    """``theta(x, y, eta) = int_0^1 grad phi(y + t(x - y), eta) dt`` and ``J2 = det(d theta/d eta)``.

    With this sign ``phi(y) - phi(x) = (y - x).theta``.  The Jacobian is a
    central difference in ``eta`` with relative step ``fd_rel``.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    eta = np.asarray(eta, dtype=float)
    t, w = np.polynomial.legendre.leggauss(n_nodes)
    t, w = 0.5 * (t + 1.0), 0.5 * w
    pts = y[None] + t[:, None] * (x - y)[None]

    def theta_of(e):
        return w @ phase_gradient(g1, pts, e, p, varrho, step=step)

    th = theta_of(eta)
    n = len(eta)
    h = fd_rel * np.linalg.norm(eta)
    jac = np.empty((n, n))
    for k in range(n):
        de = np.zeros(n)
        de[k] = h
        jac[:, k] = (theta_of(eta + de) - theta_of(eta - de)) / (2 * h)
    return th, float(np.linalg.det(jac))


# --------------------------------------------------------------------------
# oscillatory-integral norm experiment


@dataclass(frozen=True)
class Gaussian:
    """Separable Gaussian ``c * prod_i exp(-(x_i - m_i)^2 / (2 s^2))``."""

    center: tuple
    sigma: float
    scale: float = 1.0

    def __call__(self, x):
        d = np.asarray(x, dtype=float) - np.asarray(self.center)
        return self.scale * np.exp(-np.sum(d * d, axis=-1) / (2.0 * self.sigma**2))

    def abs_derivative_integral(self, alpha) -> float:
        """``int |d^alpha f| dx`` from 1D Hermite factors on a fine grid."""
        total = abs(self.scale)
        u = np.linspace(-12.0, 12.0, 24001)
        du = u[1] - u[0]
        base = np.exp(-0.5 * u * u)
        for k in alpha:
            c = np.zeros(k + 1)
            c[k] = 1.0
            total *= np.sum(np.abs(hermeval(u, c)) * base) * du / self.sigma ** (k - 1)
        return float(total)


@dataclass(frozen=True)
class AmplitudeTerm:
    """Separable amplitude ``alpha(x) beta(y) gamma(xi)``."""

    alpha: Gaussian
    beta: Gaussian
    gamma: object   # callable on (..., n) frequency arrays


def _multi_indices(n, total):
    if n == 0:
        yield ()
        return
    for k in range(total + 1):
        for rest in _multi_indices(n - 1, total - k):
            yield (k,) + rest


def amplitude_bound(terms, n: int, sup_gamma) -> float:
    """``M = sup_xi sum_{|a|+|b| <= 2n+1} int int |d^a_x d^b_y a|``, bounded termwise."""
    order = 2 * n + 1
    total = 0.0
    for term, sg in zip(terms, sup_gamma):
        acc = 0.0
        for a in _multi_indices(n, order):
            ia = term.alpha.abs_derivative_integral(a)
            for b in _multi_indices(n, order - sum(a)):
                acc += ia * term.beta.abs_derivative_integral(b)
        total += sg * acc
    return total


def operator_matrix(terms, grid: TransformGrid) -> np.ndarray:
    """Dense discretisation of ``P f(x) = int int e^{i(y-x).xi} a(x,y,xi) f(y) dy dxi``."""
    n, N = grid.n, grid.N
    x = grid.points().reshape(-1, n)
    theta = grid.theta()
    idx = np.stack(np.meshgrid(*([np.arange(N)] * n), indexing="ij"), axis=-1).reshape(-1, n)
    diff = (idx[None, :, :] - idx[:, None, :]) % N                  # y - x on the torus
    flat = np.ravel_multi_index(tuple(diff[..., k] for k in range(n)), (N,) * n)
    K = np.zeros((len(x), len(x)), dtype=complex)
    for term in terms:
        gam = term.gamma(theta)
        Gam = np.fft.ifftn(gam) * (N * grid.dtheta) ** n          # sum_xi e^{i d.xi} gamma dxi^n
        K += term.alpha(x)[:, None] * term.beta(x)[None, :] * Gam.reshape(-1)[flat]
    return K * grid.dx**n


def power_norm(P, tol: float = 1e-13, maxiter: int = 2000) -> float:
    """Largest singular value by power iteration from a fixed start vector."""
    v = np.ones(P.shape[1], dtype=complex) / np.sqrt(P.shape[1])
    sigma = 0.0
    for _ in range(maxiter):
        w = P.conj().T @ (P @ v)
        nw = np.linalg.norm(w)
        if nw == 0:
            return 0.0
        v = w / nw
        new = np.sqrt(nw)
        if abs(new - sigma) <= tol * new:
            return float(new)
        sigma = new
    return float(sigma)


def fio_norm_experiment(terms, grid: TransformGrid):
    """``(||P||, M)`` for a list of separable amplitude terms on ``grid``."""
    theta = grid.theta()
    sup_gamma = [float(np.max(np.abs(t.gamma(theta)))) for t in terms]
    P = operator_matrix(terms, grid)
    return power_norm(P), amplitude_bound(terms, grid.n, sup_gamma)


def cutoff_symbol(spec: CutoffSpec, p=None, power: int = 0):
    """``chi(xi) psi_p(xi)^power`` as a callable on frequency arrays (0 at the origin)."""
    def gamma(theta):
        th = np.asarray(theta, dtype=float)
        flat = th.reshape(-1, th.shape[-1])
        val = cutoff(flat, spec)
        if power:
            den, e1, _ = _denominator(flat, p)
            ok = den > DENOM_TOL
            ps = np.zeros(len(flat))
            ps[ok] = e1[ok] / den[ok]
            val = val * ps**power
        return val.reshape(th.shape[:-1])
    return gamma


# --------------------------------------------------------------------------
# cone estimate and contraction


def sobolev_norms(fhat, theta, dtheta_vol):
    w = np.sum(theta**2, axis=-1)
    a2 = np.abs(fhat) ** 2
    if a2.ndim > w.ndim:
        a2 = a2.reshape(w.shape + (-1,)).sum(axis=-1)
    h1 = np.sqrt(np.sum((1 + w) * a2) * dtheta_vol)
    h2 = np.sqrt(np.sum((1 + w) ** 2 * a2) * dtheta_vol)
    grad = np.sqrt(np.sum(w * a2) * dtheta_vol)
    return h1, h2, grad


def cone_norm(fhat, theta, dtheta_vol, mu: float, inside: bool = True) -> float:
    """``|| theta f^ ||`` over ``{|theta_1|/|theta| <= mu}`` (or its complement)."""
    w = np.sum(theta**2, axis=-1)
    r = np.zeros_like(w)
    nz = w > 0
    r[nz] = np.abs(theta[..., 0][nz]) / np.sqrt(w[nz])
    mask = (r <= mu) if inside else (r > mu)
    a2 = np.abs(fhat) ** 2
    if a2.ndim > w.ndim:
        a2 = a2.reshape(w.shape + (-1,)).sum(axis=-1)
    return float(np.sqrt(np.sum((w * a2)[mask]) * dtheta_vol))


@dataclass
class ConeReport:
    mus: list
    ratios: list
    h1: float
    h2: float
    K: float
    monotone: bool
    mu_largest: float | None
    mu_smallest: float | None


def cone_estimate_experiment(values, grid: TransformGrid, mus, K: float = 5.0) -> ConeReport:
    """Cone ratios ``||theta m^||_{cone(mu)} / ||grad m||`` for a lattice field.

    ``values`` may carry trailing component axes.  Raises
    :class:`KViolated` when the discrete ``H^2 <= K H^1`` precondition fails.
    """
    fhat = grid.dft(values)
    theta = grid.theta()
    vol = grid.dtheta**grid.n
    h1, h2, grad = sobolev_norms(fhat, theta, vol)
    if h2 > K * h1:
        raise KViolated(f"||m||_H2 = {h2:.4g} exceeds {K} ||m||_H1 = {K * h1:.4g}")
    mus = sorted(float(m) for m in mus)
    ratios = [cone_norm(fhat, theta, vol, mu) / grad for mu in mus]
    monotone = all(ratios[i] <= ratios[i + 1] + 1e-15 for i in range(len(ratios) - 1))
    good = [mu for mu, r in zip(mus, ratios) if r <= 1.0 / 3.0]
    return ConeReport(mus, ratios, float(h1), float(h2), K, monotone,
                      max(good) if good else None, min(good) if good else None)


@dataclass
class ContractionReport:
    eps: float
    mu: float
    grad_norm: float
    far: dict
    bounds: dict
    ratios: dict
    near_ratio: float
    slack: float
    grad_tol: float
    passed: bool
    reasons: list

    def as_dict(self):
        return {"eps": self.eps, "mu": self.mu, "grad_norm": self.grad_norm, "far": self.far,
                "bounds": self.bounds, "ratios": self.ratios, "near_ratio": self.near_ratio,
                "slack": self.slack, "grad_tol": self.grad_tol, "passed": self.passed,
                "reasons": list(self.reasons)}


def _padded_dft(f, axes, pad: int):
    n = len(axes)
    h = [a[1] - a[0] for a in axes]
    shape = tuple(pad * len(a) for a in axes) + f.shape[n:]
    big = np.zeros(shape, dtype=f.dtype)
    big[tuple(slice(0, len(a)) for a in axes)] = f
    new_axes = [a[0] + hh * np.arange(pad * len(a)) for a, hh in zip(axes, h)]
    F, freqs = lattice_dft(big, new_axes)
    theta = np.stack(np.meshgrid(*freqs, indexing="ij"), axis=-1)
    vol = float(np.prod([fr[1] - fr[0] for fr in freqs]))
    return F, theta, vol


def contraction_diagnostic(td, eps: float, mu: float | None = None, slack: float = 1.0,
                           grad_tol: float = 1e-4, floor: float = 1e-6, pad: int = 2) -> ContractionReport:
    """Compare far-cone norms of ``theta m^`` with the bounds implied by the identity.

    ``td`` is a :class:`~sttomo.straighten.TensorDifference`.  The bounds
    are ``sqrt(eps) ||grad m||``, ``sqrt(eps)/mu ||grad m||`` and
    ``sqrt(eps)/mu^2 ||grad m||`` plus an absolute ``floor`` that keeps the
    ratios finite when ``m`` is pure round-off.  The pair passes when every
    ratio is at most ``slack`` and ``||grad m||`` is below ``grad_tol``:
    the two cone estimates together leave ``||grad m|| <= (1/3 + 1/3)
    ||grad m||``, which is only consistent with ``grad m = 0``.
    """
    mu = eps ** 0.125 if mu is None else mu
    axes = td.axes
    parts = {"lambda": td.m_lambda, "omega": td.m_omega, "h": td.m_h}
    hats = {}
    theta = vol = None
    for k, v in parts.items():
        hats[k], theta, vol = _padded_dft(v, axes, pad)
    full = np.concatenate([hats["lambda"][..., None], 2 ** 0.5 * hats["omega"],
                           hats["h"].reshape(hats["h"].shape[:len(axes)] + (-1,))], axis=-1)
    _, _, grad = sobolev_norms(full, theta, vol)
    far = {k: cone_norm(v, theta, vol, mu, inside=False) for k, v in hats.items()}
    rate = {"lambda": 1.0, "omega": 1.0 / mu, "h": 1.0 / mu**2}
    bounds = {k: np.sqrt(eps) * rate[k] * grad + floor for k in parts}
    ratios = {k: far[k] / bounds[k] for k in parts}
    near = cone_norm(full, theta, vol, mu, inside=True) / grad if grad > 0 else 0.0
    reasons = [f"{k} far-cone ratio {ratios[k]:.3g} > {slack}" for k in parts if ratios[k] > slack]
    if grad > grad_tol:
        reasons.append(f"||grad m|| = {grad:.3e} > {grad_tol}")
    return ContractionReport(float(eps), float(mu), float(grad), {k: float(v) for k, v in far.items()},
                             {k: float(v) for k, v in bounds.items()},
                             {k: float(v) for k, v in ratios.items()}, float(near), slack, grad_tol,
                             not reasons, reasons)
