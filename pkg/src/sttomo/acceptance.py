"""Exit criteria as plain functions.

Each ``criterion_XX`` runs one check at the sizes given by its keyword
arguments (the defaults are the full sizes) and returns a
:class:`CriterionResult`.  Wall-clock time is kept out of the
deterministic fields so reports can be compared byte for byte; a time
budget, when a criterion has one, is judged separately by the caller.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .boundary_data import (eikonal_defects, local_tau_tables, minkowski_tau, pair_grid,
                            recover_scattering_from_tau, scattering_batch, tau_table)
from .flow import PhaseState, hamiltonian_batch, propagate, raise_for_status
from .fourier import (AmplitudeTerm, CutoffSpec, Gaussian, LatticeM, TransformGrid, cone_estimate_experiment,
                      contraction_diagnostic, cutoff, cutoff_symbol, fio_norm_experiment, random_synthetic_m,
                      relative_l2, transform_A, transform_A_oracle)
from .identity import identity_records, identity_rays
from .metric import (Minkowski, ProductMetric, SpatialDomain, pullback_metric, random_bump_diffeo,
                     random_bump_metric)
from .riemannian import product_projection_gap, product_transform_gap, riemannian_pipeline
from .straighten import build_straightening, pullback_full, special_form_residual, tensor_difference

TIME_BUDGETS = {1: 10.0, 2: 30.0, 3: 120.0, 9: 300.0}


@dataclass
class CriterionResult:
    id: int
    name: str
    passed: bool
    measured: dict
    threshold: dict
    detail: str = ""
    elapsed: float = field(default=0.0, compare=False)

    @property
    def budget(self) -> float | None:
        return TIME_BUDGETS.get(self.id)

    @property
    def within_budget(self) -> bool:
        return self.budget is None or self.elapsed <= self.budget

    def as_dict(self) -> dict:
        """Deterministic part only (no timing)."""
        return {"id": self.id, "name": self.name, "passed": bool(self.passed),
                "measured": _clean(self.measured), "threshold": _clean(self.threshold),
                "detail": self.detail}

    def line(self) -> str:
        verdict = "PASS" if self.passed and self.within_budget else "FAIL"
        t = f"{self.elapsed:.1f}s" + (f" (budget {self.budget:.0f}s)" if self.budget else "")
        return f"[{verdict}] criterion {self.id:2d} {self.name}: {self.detail} [{t}]"


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.elapsed = time.perf_counter() - t0
        return res
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    wrapper.__wrapped__ = fn
    return wrapper


# --------------------------------------------------------------------------
# shared constructions


def constructed_pair(domain: SpatialDomain, eps: float = 1e-2, seed: int = 0, special_form: bool = True,
                     psi_scale: float = 0.5):
    """``(g1, g2 = Psi^* g1, Psi)`` with a boundary-fixing bump diffeomorphism."""
    g1 = random_bump_metric(domain, eps, seed=seed + 1, special_form=special_form)
    psi = random_bump_diffeo(domain, psi_scale * eps, seed=seed + 2)
    return g1, pullback_metric(g1, psi), psi


def control_metric(domain: SpatialDomain, eps: float = 1e-2, seed: int = 0, special_form: bool = True):
    """An unrelated metric of the same size, for negative controls."""
    return random_bump_metric(domain, eps, seed=seed + 5, special_form=special_form)


def mixed_kappa(n_src: int, n_dst: int):
    """Time-offset factors between 0.5 and 2 that never hit the light cone exactly."""
    k = 0.5 + 1.5 * (np.add.outer(np.arange(n_src), np.arange(n_dst)) % 7) / 6.0
    return np.where(np.isclose(k, 1.0), 1.1, k)


def boundary_rays(domain: SpatialDomain, count: int, seed: int, varrho: float = -1.05, spread: float = 0.5):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.0, 2.0 * np.pi, count)
    x = domain.r_omega * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    ang = phi + np.pi + rng.uniform(-spread, spread, count)
    xi = np.stack([np.cos(ang), np.sin(ang)], axis=1)
    q0 = np.concatenate([np.zeros((count, 1)), x], axis=1)
    p0 = np.concatenate([np.full((count, 1), varrho), xi], axis=1)
    return q0, p0


# --------------------------------------------------------------------------
# criteria


@_timed
def criterion_01(n_src: int = 32, n_dst: int = 32, tol: float = 1e-10) -> CriterionResult:
    dom = SpatialDomain(2)
    grid = pair_grid(dom, n_src, n_dst, kappa=mixed_kappa(n_src, n_dst))
    tab = tau_table(Minkowski(dom), grid)
    err = float(np.max(np.abs(tab.tau - minkowski_tau(grid.z, grid.y))))
    ok = bool(np.all(tab.status != "no_convergence"))
    return CriterionResult(1, "Minkowski closed form", ok and err <= tol,
                           {"max_abs_error": err, "pairs": len(grid.z)}, {"max_abs_error": tol},
                           f"max |tau - closed form| = {err:.2e} over {len(grid.z)} pairs")


@_timed
def criterion_02(n_rays: int = 100, seeds=(1, 2, 3), eps: float = 1e-2, tol: float = 1e-9) -> CriterionResult:
    dom = SpatialDomain(2)
    drifts = []
    for k, seed in enumerate(seeds):
        g = random_bump_metric(dom, eps, seed=seed)
        q0, p0 = boundary_rays(dom, n_rays, seed=100 + k)
        res = propagate(g, q0, p0, until="exit", record=True)
        raise_for_status(res)
        rec = res.record
        H0 = hamiltonian_batch(g, q0, p0)
        worst = 0.0
        for j in range(rec["q"].shape[0]):
            H = hamiltonian_batch(g, rec["q"][j], rec["p"][j])
            worst = max(worst, float(np.max(np.abs(H - H0) / res.s)))
        drifts.append(worst)
    m = max(drifts)
    return CriterionResult(2, "Hamiltonian conservation", m <= tol,
                           {"drift_per_unit_parameter": drifts}, {"drift_per_unit_parameter": tol},
                           f"max |H(s) - H(0)| / l = {m:.2e} over {n_rays} rays x {len(seeds)} metrics")


@_timed
def criterion_03(n_src: int = 16, n_dst: int = 16, kappa: float = 1.05, seed: int = 0,
                 tol: float = 1e-6) -> CriterionResult:
    dom = SpatialDomain(2)
    g1, g2, _ = constructed_pair(dom, seed=seed, special_form=False)
    grid = pair_grid(dom, n_src, n_dst, kappa=kappa)
    a = tau_table(g1, grid)
    b = tau_table(g2, grid)
    ok = bool(np.all(a.status == "ok") and np.all(b.status == "ok"))
    err = float(np.max(np.abs(a.tau - b.tau))) if ok else float("inf")
    return CriterionResult(3, "diffeomorphism invariance of tau", ok and err <= tol,
                           {"max_abs_difference": err, "pairs": len(grid.z)}, {"max_abs_difference": tol},
                           f"max |tau_g - tau_pullback| = {err:.2e} over {len(grid.z)} near-light pairs")


@_timed
def criterion_04(n_rays: int = 50, n_recover: int = 5, seed: int = 0, exit_tol: float = 1e-6,
                 mid_min: float = 1e-3, recover_tol: float = 1e-4) -> CriterionResult:
    dom = SpatialDomain(2)
    g1, g2, _ = constructed_pair(dom, seed=seed, special_form=False)
    rays = identity_rays(dom, n_rays)
    z0 = np.array([X.z for X in rays])
    p0 = np.array([X.zeta for X in rays])
    e1 = scattering_batch(g1, z0, p0)
    e2 = scattering_batch(g2, z0, p0)
    exit_gap = float(max(np.max(np.abs(e1.q - e2.q)), np.max(np.abs(e1.p - e2.p))))
    half = 0.5 * e1.s
    m1 = propagate(g1, z0, p0, until="param", s_end=half)
    m2 = propagate(g2, z0, p0, until="param", s_end=half)
    mid_gap = float(np.max(np.abs(m1.q[:, 1:] - m2.q[:, 1:])))
    pick = np.linspace(0, n_rays - 1, n_recover).astype(int)
    tables = local_tau_tables(g2, z0[pick], e1.q[pick])
    H = hamiltonian_batch(g1, z0[pick], p0[pick])
    rec = np.array([recover_scattering_from_tau(t, H_entry=float(h)) for t, h in zip(tables, H)])
    rec_gap = float(np.max(np.abs(rec - e1.p[pick])))
    ok = exit_gap <= exit_tol and mid_gap > mid_min and rec_gap <= recover_tol
    return CriterionResult(4, "equal scattering data for pullback pairs", ok,
                           {"exit_gap": exit_gap, "midpoint_gap": mid_gap, "recovery_gap": rec_gap},
                           {"exit_gap": exit_tol, "midpoint_gap_min": mid_min, "recovery_gap": recover_tol},
                           f"exit {exit_gap:.2e}, midpoint {mid_gap:.2e}, recovered covector {rec_gap:.2e}")


def eikonal_configurations(domain: SpatialDomain, count: int, seed: int):
    rng = np.random.default_rng(seed)
    phi = rng.uniform(0.0, 2.0 * np.pi, count)
    xs = domain.r_omega * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    r = 0.7 * np.sqrt(rng.uniform(0.0, 1.0, count))
    ang = rng.uniform(0.0, 2.0 * np.pi, count)
    ys = np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    t = rng.uniform(1.2, 1.6, count) * np.linalg.norm(ys - xs, axis=1) + 0.1
    z = np.concatenate([np.zeros((count, 1)), xs], axis=1)
    y = np.concatenate([t[:, None], ys], axis=1)
    return z, y


@_timed
def criterion_05(count: int = 20, seed: int = 0, tol: float = 5e-3) -> CriterionResult:
    dom = SpatialDomain(2)
    g = random_bump_metric(dom, 1e-2, seed=seed + 1)
    z, y = eikonal_configurations(dom, count, seed + 7)
    m = float(np.max(eikonal_defects(g, z, y)))
    return CriterionResult(5, "eikonal property", m <= tol, {"max_defect": m, "configurations": count},
                           {"max_defect": tol}, f"max |g(grad tau, grad tau) + 1| = {m:.2e} on {count} configurations")


def straightened_pair(g1, g2, lattice_n: int = 33):
    s1 = build_straightening(g1, lattice_n=lattice_n)
    s2 = build_straightening(g2, lattice_n=lattice_n)
    axes = s1.default_axes()
    return s1, s2, pullback_full(g1, s1), pullback_full(g2, s2), axes


@_timed
def criterion_06(lattice_n: int = 33, stride: int = 7, seed: int = 0, res_tol: float = 1e-6,
                 rt_tol: float = 1e-9) -> CriterionResult:
    dom = SpatialDomain(2)
    g1, g2, _ = constructed_pair(dom, seed=seed)
    s2 = build_straightening(g2, lattice_n=lattice_n)
    axes = s2.default_axes()
    gt2 = pullback_full(g2, s2)
    res = special_form_residual(gt2, axes)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dom.n)[::stride]
    img = s2.jet(pts, 0)[0]
    rt = float(np.max(np.abs(s2.inverse(img) - pts)))
    ok = res <= res_tol and rt <= rt_tol
    return CriterionResult(6, "straightening", ok, {"special_form_residual": res, "round_trip": rt},
                           {"special_form_residual": res_tol, "round_trip": rt_tol},
                           f"special-form residual {res:.2e}, round trip {rt:.2e} on {len(pts)} points")


@_timed
def criterion_07(n_rays: int = 10, n_samples: int = 512, coarse=(128, 256), n_order_rays: int = 3,
                 seed: int = 0, tol: float = 1e-6, min_order: float = 3.5, neg_min: float = 1e-3) -> CriterionResult:
    dom = SpatialDomain(2)
    g1, g2, _ = constructed_pair(dom, seed=seed, special_form=False)
    rays = identity_rays(dom, n_rays)
    recs = identity_records(g1, g2, rays, n_samples, fd_delta=None)
    resid = max(r.residual for r in recs)
    ladder = [np.array([r.residual for r in identity_records(g1, g2, rays[:n_order_rays], N,
                                                             check_scattering=False, fd_delta=None)])
              for N in coarse]
    orders = np.log2(ladder[0] / ladder[1])
    g3 = control_metric(dom, seed=seed, special_form=False)
    neg = [r.residual for r in identity_records(g1, g3, rays[:n_order_rays], coarse[0],
                                                check_scattering=False, fd_delta=None)]
    ok = resid <= tol and float(orders.min()) >= min_order and min(neg) >= neg_min
    return CriterionResult(7, "integral identity", ok,
                           {"residual": resid, "observed_orders": orders.tolist(),
                            "negative_control": neg},
                           {"residual": tol, "min_order": min_order, "negative_control_min": neg_min},
                           f"residual {resid:.2e}, min observed order {orders.min():.2f}, "
                           f"negative control >= {min(neg):.2e}")


@_timed
def criterion_08(epsilons=(1e-2, 5e-3, 2.5e-3), n_rays: int = 6, n_samples: int = 128, seed: int = 0,
                 band=(1.8, 2.2)) -> CriterionResult:
    dom = SpatialDomain(2)
    base = random_bump_metric(dom, 1.0, seed=seed + 1)
    rays = identity_rays(dom, n_rays)
    out, resid = [], []
    for e in epsilons:
        g1 = base.scaled(e)
        g2 = pullback_metric(g1, random_bump_diffeo(dom, 0.5 * e, seed=seed + 2))
        recs = identity_records(g1, g2, rays, n_samples, check_scattering=False, fd_delta=None)
        out.append(max(r.max_B() for r in recs))
        resid.append(max(r.residual for r in recs))
    ratios = [out[i] / out[i + 1] for i in range(len(out) - 1)]
    ok = all(band[0] <= r <= band[1] for r in ratios)
    return CriterionResult(8, "B-block scaling", ok, {"eps": list(epsilons), "max_B": out, "residual": resid, "ratios": ratios},
                           {"ratio_band": list(band)},
                           "ratios " + ", ".join(f"{r:.3f}" for r in ratios))


@_timed
def criterion_09(N: int = 64, field_seed: int = 3, mu: float = 0.1, varrho: float = -1.05,
                 tol: float = 0.01) -> CriterionResult:
    grid = TransformGrid(2, N)
    m = random_synthetic_m(2, seed=field_seed, max_wavenumber=(N // 4) * grid.dtheta, sigma=0.2)
    spec = CutoffSpec(mu)
    theta, oracle = transform_A_oracle(m, grid, varrho, [1.0], spec)
    live = cutoff(theta, spec) > 0
    A = transform_A(m, varrho, theta[live], [1.0], spec)
    err = relative_l2(A, oracle[live])
    return CriterionResult(9, "projection-slice oracle", err <= tol,
                           {"relative_l2": err, "frequencies": int(live.sum())}, {"relative_l2": tol},
                           f"relative L2 {err:.2e} on {int(live.sum())} lattice frequencies")


def fio_test_set(mu: float = 0.1):
    spec = CutoffSpec(mu)
    return [
        [AmplitudeTerm(Gaussian((0.0, 0.0), 0.35), Gaussian((0.1, 0.0), 0.35), cutoff_symbol(spec))],
        [AmplitudeTerm(Gaussian((0.2, 0.0), 0.3), Gaussian((0.0, -0.1), 0.4), cutoff_symbol(spec, [1.0], 2))],
        [AmplitudeTerm(Gaussian((0.0, 0.0), 0.4, 0.01), Gaussian((0.0, 0.0), 0.4), cutoff_symbol(spec))],
    ]


@_timed
def criterion_10(sizes=(16, 24, 32), spread: float = 0.2) -> CriterionResult:
    Cs = []
    for N in sizes:
        grid = TransformGrid(2, N)
        ratios = []
        for terms in fio_test_set():
            P, M = fio_norm_experiment(terms, grid)
            ratios.append(P / M)
        Cs.append(max(ratios))
    var = max(Cs) / min(Cs) - 1.0
    return CriterionResult(10, "operator norm constant", var <= spread,
                           {"grid_sizes": list(sizes), "C": Cs, "relative_spread": var},
                           {"relative_spread": spread},
                           "C = " + ", ".join(f"{c:.4g}" for c in Cs) + f" (spread {var:.1%})")


CONE_MUS = (0.01, 0.02, 0.05, 0.1, 0.2, 0.3, 0.5)


@_timed
def criterion_11(seeds=(0, 1, 2), N: int = 128, K: float = 5.0, target: float = 1.0 / 3.0,
                 mus=CONE_MUS) -> CriterionResult:
    grid = TransformGrid(2, N, half_width=4 * np.pi)
    pts = grid.points()
    reps = []
    for seed in seeds:
        m = random_synthetic_m(2, seed=seed, max_wavenumber=2.0, sigma=0.35, components="lambda")
        vals = m.matrix_grad(pts)[0][..., 0, 0]
        reps.append(cone_estimate_experiment(vals, grid, list(mus), K))
    ok = all(r.monotone and min(r.ratios) <= target for r in reps)
    return CriterionResult(11, "cone estimate", ok,
                           {"mus": list(mus), "ratios": [list(r.ratios) for r in reps],
                            "mu_largest": [r.mu_largest for r in reps],
                            "monotone": [r.monotone for r in reps],
                            "h2_over_h1": [r.h2 / r.h1 for r in reps]},
                           {"ratio": target, "K": K},
                           f"{sum(r.monotone for r in reps)}/{len(reps)} monotone, "
                           f"largest mu reaching 1/3: {[r.mu_largest for r in reps]}")


@_timed
def criterion_12(eps: float = 1e-2, lattice_n: int = 33, seed: int = 0, m_tol: float = 1e-4,
                 product_tol: float = 1e-6) -> CriterionResult:
    dom = SpatialDomain(2)
    g1, g2, _ = constructed_pair(dom, eps, seed=seed)
    _, _, gt1, gt2, axes = straightened_pair(g1, g2, lattice_n)
    td = tensor_difference(gt1, gt2, axes)
    sup = td.sup_norm()
    main = contraction_diagnostic(td, eps)
    g3 = control_metric(dom, eps, seed=seed)
    s3 = build_straightening(g3, lattice_n=lattice_n)
    neg = contraction_diagnostic(tensor_difference(gt1, pullback_full(g3, s3), axes), eps)
    riem = riemannian_pipeline(g1, g2, eps, lattice_n=lattice_n)

    # product metrics: flows and transforms of -dt^2 + h against those of h
    p1 = ProductMetric(random_bump_metric(dom, eps, seed=seed + 1))
    p3 = ProductMetric(control_metric(dom, eps, seed=seed, special_form=False))
    rays = identity_rays(dom, 8)
    flow_gap = product_projection_gap(p1, rays, 1.0)
    _, _, pt1, pt3, paxes = straightened_pair(p1, p3, lattice_n)
    mprod = LatticeM.from_difference(tensor_difference(pt1, pt3, paxes))
    etas = np.array([[2.0, 1.0], [3.0, -2.0], [1.0, 5.0], [-4.0, 1.5]])
    tr_gap = product_transform_gap(mprod, etas, [1.0])
    prod = max(flow_gap, tr_gap)
    ok = sup <= m_tol and main.passed and not neg.passed and riem.passed and prod <= product_tol
    return CriterionResult(12, "end-to-end contraction", ok,
                           {"sup_m": sup, "contraction": main.as_dict(), "negative_control": neg.as_dict(),
                            "riemannian": riem.as_dict(), "product_flow_gap": flow_gap,
                            "product_transform_gap": tr_gap},
                           {"sup_m": m_tol, "product_gap": product_tol},
                           f"||m|| = {sup:.2e}, contraction {'PASS' if main.passed else 'FAIL'}, "
                           f"control {'PASS' if neg.passed else 'FAIL'}, "
                           f"riemannian {'PASS' if riem.passed else 'FAIL'}, product gap {prod:.2e}")


@_timed
def criterion_13(run, config) -> CriterionResult:
    """``run(config) -> bytes`` is executed twice and the outputs compared."""
    a = run(config)
    b = run(config)
    same = a == b
    return CriterionResult(13, "determinism", same, {"identical": same, "bytes": len(a)}, {"identical": True},
                           f"two runs {'identical' if same else 'differ'} ({len(a)} bytes)")


CRITERIA = {
    1: criterion_01, 2: criterion_02, 3: criterion_03, 4: criterion_04, 5: criterion_05,
    6: criterion_06, 7: criterion_07, 8: criterion_08, 9: criterion_09, 10: criterion_10,
    11: criterion_11, 12: criterion_12,
}
