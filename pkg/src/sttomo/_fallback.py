"""Pure numpy implementations of the hot kernels.

These mirror the signatures of the compiled ``_kernels`` module exactly and
are used whenever the extension is unavailable (or ``STTOMO_PURE_PYTHON=1``).
"""
import numpy as np


def bump_jet(x, centers, widths, order):
    """Values and derivatives of the unit-peak compact bumps.

    Each bump is ``exp(1 - 1/(1 - |u|^2))`` with ``u = (x - c)/w``, extended
    by zero outside the unit ball.

    Parameters
    ----------
    x : (B, n) array
    centers : (K, n) array
    widths : (K,) array
    order : int in 0..3

    Returns
    -------
    list of arrays ``[b, db, d2b, d3b][:order + 1]`` with shapes
    (B, K), (B, K, n), (B, K, n, n), (B, K, n, n, n).
    """
    x = np.asarray(x, dtype=float)
    centers = np.asarray(centers, dtype=float)
    widths = np.asarray(widths, dtype=float)
    u = (x[:, None, :] - centers[None, :, :]) / widths[None, :, None]
    q = np.einsum("bki,bki->bk", u, u)
    inside = q < 1.0
    a = np.zeros_like(q)
    a[inside] = 1.0 / (1.0 - q[inside])
    F = np.zeros_like(q)
    F[inside] = np.exp(1.0 - a[inside])
    out = [F]
    if order < 1:
        return out
    # q_i = 2 u_i / w, q_ij = 2 delta_ij / w^2
    qi = 2.0 * u / widths[None, :, None]
    F1 = -a * a * F
    out.append(F1[..., None] * qi)
    if order < 2:
        return out
    n = x.shape[1]
    eye = np.eye(n)
    qij = 2.0 * eye[None, None] / (widths ** 2)[None, :, None, None]
    a3 = a ** 3
    F2 = (a3 * a - 2.0 * a3) * F
    d2 = F2[..., None, None] * qi[..., :, None] * qi[..., None, :] + F1[..., None, None] * qij
    out.append(d2)
    if order < 3:
        return out
    a4 = a3 * a
    F3 = (-a4 * a * a + 6.0 * a4 * a - 6.0 * a4) * F
    t1 = qi[..., :, None, None] * qi[..., None, :, None] * qi[..., None, None, :]
    t2 = (
        qij[..., :, :, None] * qi[..., None, None, :]
        + qij[..., :, None, :] * qi[..., None, :, None]
        + qij[..., None, :, :] * qi[..., :, None, None]
    )
    out.append(F3[..., None, None, None] * t1 + F2[..., None, None, None] * t2)
    return out


def inverse_jet(G, dG, d2G=None):
    """Inverse of a batch of symmetric matrices with its spatial derivatives.

    ``dG[b, i, j, k]`` is the derivative of ``G[b, i, j]`` along spatial
    coordinate ``k``; ``d2G`` carries two trailing derivative indices.
    """
    Ginv = np.linalg.inv(G)
    dGinv = -np.einsum("bij,bjlk,blm->bimk", Ginv, dG, Ginv)
    if d2G is None:
        return Ginv, dGinv, None
    t1 = -np.einsum("bij,bjmkl,bmr->birkl", Ginv, d2G, Ginv)
    # G^-1 dG_k G^-1 dG_l G^-1 = -dGinv_k dG_l G^-1
    t2 = -np.einsum("bijk,bjml,bmr->birkl", dGinv, dG, Ginv)
    d2Ginv = t1 + t2 + np.swapaxes(t2, -1, -2)
    return Ginv, dGinv, d2Ginv


def hamilton_rhs(Ginv, dGinv, d2Ginv, p, J, off):
    """Hamiltonian vector field for ``H = 1/2 <K(q) p, p>`` and its linearization.

    ``K = Ginv`` depends only on the coordinates ``q[off:]``.  Returns
    ``(dq, dp, dJ)``; ``dJ`` is ``None`` when ``J`` is ``None``.
    """
    dq = np.einsum("bij,bj->bi", Ginv, p)
    Kp = np.einsum("bijk,bj->bik", dGinv, p)  # (B, D, n): (dK_k p)_i
    dp = np.zeros_like(p)
    dp[:, off:] = -0.5 * np.einsum("bik,bi->bk", Kp, p)
    if J is None:
        return dq, dp, None
    B, D = p.shape
    DV = np.zeros((B, 2 * D, 2 * D))
    DV[:, :D, off:D] = Kp
    DV[:, :D, D:] = Ginv
    DV[:, D + off:, off:D] = -0.5 * np.einsum("bijkl,bi,bj->bkl", d2Ginv, p, p)
    DV[:, D + off:, D:] = -np.swapaxes(Kp, 1, 2)
    dJ = DV @ J
    return dq, dp, dJ


def pullback_jet(M, dM, d2M, P1, P2, P3, order):
    """Jet of ``L^T M(psi(x)) L`` with ``L = diag(I_off, P1)``.

    ``M, dM, d2M`` are the matrix and its derivatives at ``psi(x)`` in the
    target coordinates; ``P1, P2, P3`` the first three derivatives of psi.
    Returns ``[G, dG, d2G][:order + 1]``.
    """
    B, D, _ = M.shape
    n = P1.shape[1]
    off = D - n
    L = np.zeros((B, D, D))
    L[:, :off, :off] = np.eye(off)
    L[:, off:, off:] = P1
    ML = M @ L
    out = [np.swapaxes(L, 1, 2) @ ML]
    if order < 1:
        return out
    Lk = np.zeros((B, D, D, n))
    Lk[:, off:, off:, :] = P2
    Mk = np.einsum("zijc,zck->zijk", dM, P1)
    X = np.einsum("zamk,zan->zmnk", Lk, ML)
    LtMkL = np.einsum("zam,zabk,zbn->zmnk", L, Mk, L, optimize=True)
    out.append(X + np.swapaxes(X, 1, 2) + LtMkL)
    if order < 2:
        return out
    Lkl = np.zeros((B, D, D, n, n))
    Lkl[:, off:, off:, :, :] = P3
    Mkl = (np.einsum("zijcd,zck,zdl->zijkl", d2M, P1, P1, optimize=True)
           + np.einsum("zijc,zckl->zijkl", dM, P2))
    T = np.einsum("zamkl,zan->zmnkl", Lkl, ML)
    MkL = np.einsum("zabk,zbn->zank", Mk, L)
    U = np.einsum("zamk,zanl->zmnkl", Lk, MkL)   # L_k^T M_l L
    U = U + np.swapaxes(U, 3, 4)
    MLl = np.einsum("zab,zbnl->zanl", M, Lk)
    W = np.einsum("zamk,zanl->zmnkl", Lk, MLl)   # L_k^T M L_l
    core = np.einsum("zam,zabkl,zbn->zmnkl", L, Mkl, L, optimize=True)
    d2 = T + U + W
    out.append(d2 + np.swapaxes(d2, 1, 2) + core)
    return out
