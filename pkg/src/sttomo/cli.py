"""Command-line entry point: ``sttomo <command> --config FILE --out DIR``.

Every command writes ``report.json``, the plot CSV files and a
``MANIFEST`` to the output directory.  ``full`` evaluates the exit
criteria; the others run one stage of the pipeline on the configured
metric family.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import acceptance
from .boundary_data import minkowski_tau, pair_grid, scattering_batch, tau_table
from .config import EXPERIMENTS, config_hash, default_config, load_config
from .errors import ConfigError, SttomoError
from .flow import PhaseState, integrate_bicharacteristic
from .identity import identity_records, identity_rays
from .metric import (Minkowski, SpatialDomain, eval_metric, lattice, pullback_metric, random_bump_diffeo,
                     random_bump_metric)
from .report import build_report, to_json_bytes, write_outputs

COMMANDS = {
    ("metric", "dump"): "metric",
    ("flow", "trace"): "flow",
    ("tau", "table"): "tau",
    ("scatter",): "scatter",
    ("straighten",): "straighten",
    ("identity", "run"): "identity",
    ("fourier", "run"): "fourier",
    ("riemannian", "run"): "riemannian",
    ("full",): "full",
}
SEEDED_CRITERIA = {3, 4, 5, 6, 7, 8, 12}


# --------------------------------------------------------------------------
# construction from the configuration


def make_domain(cfg) -> SpatialDomain:
    d = cfg["domain"]
    return SpatialDomain(d["n"], d["r_omega"], d["rho"])


def make_metric(cfg, domain=None, offset: int = 1):
    dom = domain or make_domain(cfg)
    m = cfg["metric"]
    if m["family"] == "minkowski":
        return Minkowski(dom)
    return random_bump_metric(dom, m["eps"], n_bumps=m["n_bumps"], seed=cfg["seed"] + offset,
                              special_form=m["special_form"])


def make_pair(cfg, special_form=None):
    """``(g1, Psi^* g1)`` from the configured family."""
    dom = make_domain(cfg)
    m = cfg["metric"]
    if special_form is not None and m["family"] == "bump":
        g1 = random_bump_metric(dom, m["eps"], n_bumps=m["n_bumps"], seed=cfg["seed"] + 1,
                                special_form=special_form)
    else:
        g1 = make_metric(cfg, dom)
    psi = random_bump_diffeo(dom, m["psi_scale"] * max(m["eps"], 1e-3), seed=cfg["seed"] + 2)
    return g1, pullback_metric(g1, psi)


def _chunks(n, k):
    bounds = np.linspace(0, n, k + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _pool_map(fn, items, workers):
    """Ordered map; a pool only when it can help."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# --------------------------------------------------------------------------
# stages; each returns (result sections, artifact file names)


def stage_metric(cfg, out, workers):
    dom = make_domain(cfg)
    g = make_metric(cfg, dom)
    N = cfg["dump"]["N"]
    x = lattice(dom, N)
    x = x[dom.inside(x)]
    G = eval_metric(g, x)
    n = dom.n
    iu = np.triu_indices(n)
    cols = ([f"x{i + 1}" for i in range(n)] + ["lambda"] + [f"omega{j + 1}" for j in range(n)]
            + [f"h{i + 1}{j + 1}" for i, j in zip(*iu)])
    data = np.concatenate([x, -G[:, :1, 0], G[:, 0, 1:], G[:, 1:, 1:][:, iu[0], iu[1]]], axis=1)
    path = os.path.join(out, "metric.csv")
    np.savetxt(path, data, delimiter=",", header=",".join(cols), comments="", fmt="%.17g")
    eta = np.diag(np.r_[-1.0, np.ones(n)])
    return {"metric": {"samples": len(x), "sup_deviation": float(np.max(np.abs(G - eta)))}}, ["metric.csv"]


def stage_flow(cfg, out, workers):
    g = make_metric(cfg)
    f = cfg["flow"]
    X0 = PhaseState(np.array(f["z0"]), np.array(f["zeta0"]))
    mode = "until_exit" if f["mode"] == "exit" else "param"
    tr = integrate_bicharacteristic(g, X0, mode=mode, s=f["s_end"], step=f["step"])
    rows = np.concatenate([tr.s[:, None], tr.z, tr.zeta, tr.H[:, None]], axis=1)
    D = tr.z.shape[1]
    cols = ["s"] + [f"z{i}" for i in range(D)] + [f"zeta{i}" for i in range(D)] + ["H"]
    np.savetxt(os.path.join(out, "trajectory.csv"), rows, delimiter=",", header=",".join(cols),
               comments="", fmt="%.17g")
    res = {"ell": tr.ell, "drift": tr.drift, "steps": len(tr.s) - 1}
    if tr.exit_state is not None:
        res["exit"] = {"z": tr.exit_state.z, "zeta": tr.exit_state.zeta}
    return {"flow": res}, ["trajectory.csv"]


def _tau_chunk(args):
    cfg, sl = args
    g = make_metric(cfg)
    t = cfg["tau"]
    grid = pair_grid(g.domain, t["n_src"], t["n_dst"], kappa=t["kappa"], cone=t["cone"])
    z, y = grid.z[sl], grid.y[sl]
    from .boundary_data import time_separation_batch
    return time_separation_batch(g, z, y)


def stage_tau(cfg, out, workers):
    dom = make_domain(cfg)
    t = cfg["tau"]
    grid = pair_grid(dom, t["n_src"], t["n_dst"], kappa=t["kappa"], cone=t["cone"])
    parts = _pool_map(_tau_chunk, [(cfg, sl) for sl in _chunks(len(grid.z), max(workers, 1))], workers)
    tau = np.concatenate([p[0] for p in parts]) if parts else np.zeros(0)
    status = np.concatenate([p[1] for p in parts]) if parts else np.zeros(0, dtype=object)
    with open(os.path.join(out, "tau.jsonl"), "w", encoding="utf-8") as fh:
        for a, b, v, s in zip(grid.z, grid.y, tau, status):
            rec = {"z": a.tolist(), "y": b.tolist(), "tau": None if not np.isfinite(v) else float(v),
                   "status": str(s)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    res = {"pairs": len(tau), "status_counts": {s: int(np.sum(status == s)) for s in sorted(set(status))},
           "tau_max": float(np.nanmax(tau)) if len(tau) else None}
    if cfg["metric"]["family"] == "minkowski":
        err = float(np.max(np.abs(tau - minkowski_tau(grid.z, grid.y)))) if len(tau) else 0.0
        res["closed_form_error"] = err
        res["closed_form_check"] = "PASS" if err <= 1e-10 else "FAIL"
    return {"tau": res}, ["tau.jsonl"]


def stage_scatter(cfg, out, workers):
    g1, g2 = make_pair(cfg)
    s = cfg["scatter"]
    rays = identity_rays(g1.domain, s["n_rays"], s["varrho"], s["max_tilt"])
    z0 = np.array([X.z for X in rays])
    p0 = np.array([X.zeta for X in rays])
    e1 = scattering_batch(g1, z0, p0)
    e2 = scattering_batch(g2, z0, p0)
    with open(os.path.join(out, "scatter.jsonl"), "w", encoding="utf-8") as fh:
        for i in range(len(rays)):
            rec = {"entry": {"z": z0[i].tolist(), "zeta": p0[i].tolist()},
                   "exit": {"z": e1.q[i].tolist(), "zeta": e1.p[i].tolist()}, "ell": float(e1.s[i])}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    gap = float(max(np.max(np.abs(e1.q - e2.q)), np.max(np.abs(e1.p - e2.p))))
    return {"scatter": {"rays": len(rays), "pullback_exit_gap": gap, "ell": e1.s}}, ["scatter.jsonl"]


def stage_straighten(cfg, out, workers):
    from .straighten import build_straightening, pullback_full, special_form_residual, tensor_difference

    st = cfg["straighten"]
    g1, g2 = make_pair(cfg, special_form=True)
    s1 = build_straightening(g1, lattice_n=st["lattice_n"])
    s2 = build_straightening(g2, lattice_n=st["lattice_n"])
    axes = s2.default_axes()
    gt1, gt2 = pullback_full(g1, s1), pullback_full(g2, s2)
    res = special_form_residual(gt2, axes)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, g1.n)[::st["round_trip_stride"]]
    rt = float(np.max(np.abs(s2.inverse(s2.jet(pts, 0)[0]) - pts)))
    td = tensor_difference(gt1, gt2, axes)
    ok = res <= st["residual_tol"] and rt <= st["round_trip_tol"]
    return {"straighten": {"special_form_residual": res, "round_trip": rt, "sup_m": td.sup_norm(),
                           "check": "PASS" if ok else "FAIL"}}, []


def stage_identity(cfg, out, workers):
    it = cfg["identity"]
    g1, g2 = make_pair(cfg)
    dom = g1.domain
    rays = identity_rays(dom, it["n_rays"], it["varrho"])
    recs = identity_records(g1, g2, rays, it["n_samples"], check_scattering=False)
    per_ray = [{"residual": r.residual, "max_B": r.max_B(), "scatter_gap": r.scatter_gap,
                "consistency_closed": r.consistency_closed, "consistency_fd": r.consistency_fd} for r in recs]
    resid = max(r.residual for r in recs)
    lad = {"eps": [], "max_B": [], "residual": []}
    if cfg["metric"]["family"] == "bump":
        base = random_bump_metric(dom, 1.0, n_bumps=cfg["metric"]["n_bumps"], seed=cfg["seed"] + 1)
        for e in it["eps_ladder"]:
            a = base.scaled(e)
            b = pullback_metric(a, random_bump_diffeo(dom, cfg["metric"]["psi_scale"] * e, seed=cfg["seed"] + 2))
            rr = identity_records(a, b, rays, it["ladder_samples"], check_scattering=False, fd_delta=None)
            lad["eps"].append(e)
            lad["max_B"].append(max(r.max_B() for r in rr))
            lad["residual"].append(max(r.residual for r in rr))
    return {"identity": {"rays": per_ray, "max_residual": resid,
                         "check": "PASS" if resid <= it["residual_tol"] else "FAIL"},
            "ladder": lad}, []


def stage_fourier(cfg, out, workers):
    from .fourier import contraction_diagnostic
    from .straighten import tensor_difference

    fo = cfg["fourier"]
    res, extra = {}, {}
    if "slice" in fo["parts"]:
        r = acceptance.criterion_09(N=fo["N"], mu=fo["mu"], varrho=fo["varrho"], tol=fo["slice_tol"])
        res["slice"] = dict(r.measured, check="PASS" if r.passed else "FAIL")
    if "fio" in fo["parts"]:
        r = acceptance.criterion_10(sizes=tuple(fo["fio_sizes"]))
        res["fio"] = dict(r.measured, check="PASS" if r.passed else "FAIL")
    if "cone" in fo["parts"]:
        r = acceptance.criterion_11(N=fo["cone_N"], K=fo["K"], mus=tuple(fo["cone_mus"]))
        res["cone"] = dict(r.measured, check="PASS" if r.passed else "FAIL")
        extra["cone"] = {"mus": r.measured["mus"], "ratios": r.measured["ratios"]}
    if "contraction" in fo["parts"]:
        g1, g2 = make_pair(cfg, special_form=True)
        _, _, gt1, gt2, axes = acceptance.straightened_pair(g1, g2, fo["lattice_n"])
        eps = max(cfg["metric"]["eps"], 1e-12)
        rep = contraction_diagnostic(tensor_difference(gt1, gt2, axes), eps, slack=fo["slack"], floor=fo["floor"])
        res["contraction"] = rep.as_dict()
    return dict({"fourier": res}, **extra), []


def stage_riemannian(cfg, out, workers):
    from .riemannian import b21_factorization_check, boundary_distance_table, direction_set, riemannian_pipeline

    rc = cfg["riemannian"]
    g1, g2 = make_pair(cfg)
    dom = g1.domain
    t1 = boundary_distance_table(g1, rc["boundary_points"], rc["cone"])
    t2 = boundary_distance_table(g2, rc["boundary_points"], rc["cone"])
    table_gap = float(np.max(np.abs(t1.d - t2.d))) if len(t1.d) else 0.0
    out_rows = np.concatenate([t1.x, t1.y, t1.d[:, None]], axis=1)
    cols = [f"x{i + 1}" for i in range(dom.n)] + [f"y{i + 1}" for i in range(dom.n)] + ["d"]
    np.savetxt(os.path.join(out, "distance.csv"), out_rows, delimiter=",", header=",".join(cols),
               comments="", fmt="%.17g")
    eps = cfg["metric"]["eps"]
    h1 = random_bump_metric(dom, eps, seed=cfg["seed"] + 1, special_form=True)
    h2 = random_bump_metric(dom, eps, seed=cfg["seed"] + 5, special_form=True)
    b21 = b21_factorization_check(h1, h2, count=rc["b21_rays"], tilts=tuple(rc["tilts"]),
                                  n_samples=rc["b21_samples"])
    ds = direction_set(dom.n)
    pipe = riemannian_pipeline(g1, g2, max(eps, 1e-12), lattice_n=rc["lattice_n"], mu=rc["mu"])
    return {"riemannian": {"distance_pairs": len(t1.d), "distance_table_gap": table_gap,
                           "b21": b21.as_dict(), "direction_set_cond": ds.cond,
                           "pipeline": pipe.as_dict()}}, ["distance.csv"]


def _criterion_task(args):
    cid, kwargs = args
    return acceptance.CRITERIA[cid](**kwargs)


def _criterion_kwargs(cfg, cid):
    kw = dict(cfg["acceptance"]["overrides"].get(str(cid), {}))
    if cid in SEEDED_CRITERIA:
        kw.setdefault("seed", cfg["seed"])
    return kw


def determinism_probe(cfg) -> bytes:
    """Canonical bytes of a cheap stage, used to check run-to-run identity."""
    probe = json.loads(json.dumps(cfg))
    probe["tau"].update(n_src=4, n_dst=4)
    with tempfile.TemporaryDirectory() as tmp:
        sections, _ = stage_tau(probe, tmp, 1)
    return to_json_bytes(sections)


def stage_full(cfg, out, workers, timings=None):
    ids = [c for c in cfg["acceptance"]["criteria"] if c != 13]
    tasks = [(cid, _criterion_kwargs(cfg, cid)) for cid in ids]
    results = _pool_map(_criterion_task, tasks, workers)
    if 13 in cfg["acceptance"]["criteria"]:
        results.append(acceptance.criterion_13(determinism_probe, cfg))
    results.sort(key=lambda r: r.id)
    if timings is not None:
        for r in results:
            timings[f"criterion_{r.id:02d}"] = r.elapsed
            timings[f"criterion_{r.id:02d}_within_budget"] = r.within_budget
    sections = {"summary": {"passed": sum(r.passed for r in results), "total": len(results)}}
    by_id = {r.id: r for r in results}
    if 11 in by_id:
        sections["cone"] = {"mus": by_id[11].measured["mus"], "ratios": by_id[11].measured["ratios"]}
    if 8 in by_id:
        m = by_id[8].measured
        sections["ladder"] = {"eps": m["eps"], "max_B": m["max_B"], "residual": m.get("residual", [])}
    return sections, [], results


STAGES = {
    "metric": stage_metric, "flow": stage_flow, "tau": stage_tau, "scatter": stage_scatter,
    "straighten": stage_straighten, "identity": stage_identity, "fourier": stage_fourier,
    "riemannian": stage_riemannian,
}


def run_experiment(cfg: dict, out: str, workers: int = 1, experiment: str | None = None):
    """Run one experiment and write its outputs; returns ``(report, manifest)``."""
    experiment = experiment or cfg["experiment"]
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {experiment!r}")
    cfg = json.loads(json.dumps(cfg))
    cfg["experiment"] = experiment
    os.makedirs(out, exist_ok=True)
    h = config_hash(cfg)
    timings = {}
    t0 = time.perf_counter()
    criteria = None
    if experiment == "full":
        sections, files, criteria = stage_full(cfg, out, workers, timings)
    else:
        try:
            sections, files = STAGES[experiment](cfg, out, workers)
        except SttomoError as exc:
            raise type(exc)(f"stage {experiment!r}: {exc}") from exc
    timings["total"] = time.perf_counter() - t0
    report = build_report(experiment, cfg, h, sections, criteria)
    report["artifacts"] = sorted(files)
    manifest = write_outputs(out, report, timings, workers)
    return report, manifest, criteria


# --------------------------------------------------------------------------
# argument parsing


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def _common(p):
    p.add_argument("--config", metavar="PATH", help="YAML experiment configuration")
    p.add_argument("--out", metavar="DIR", default="out", help="output directory (default: out)")
    p.add_argument("--workers", metavar="N", type=int, default=1, help="worker processes (default: 1)")
    p.add_argument("--seed", metavar="U64", type=_u64, default=None, help="override the configured seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sttomo", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    groups = {}
    for words in COMMANDS:
        if len(words) == 1:
            _common(sub.add_parser(words[0], help=f"run the {COMMANDS[words]} stage"))
        else:
            if words[0] not in groups:
                g = sub.add_parser(words[0], help=f"{words[0]} commands")
                groups[words[0]] = g.add_subparsers(dest="action", required=True)
            _common(groups[words[0]].add_parser(words[1]))
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    words = (args.command,) + ((args.action,) if getattr(args, "action", None) else ())
    experiment = COMMANDS[words]
    try:
        cfg = load_config(args.config) if args.config else default_config()
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        report, manifest, criteria = run_experiment(cfg, args.out, args.workers, experiment)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SttomoError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if criteria is not None:
        for r in criteria:
            print(r.line())
        return 0 if all(r.passed for r in criteria) else 1
    print(f"wrote {os.path.join(args.out, 'report.json')} (config {manifest['config_hash'][:12]})")
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
