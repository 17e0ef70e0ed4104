"""Compare the compiled kernels with the numpy fallback.

Run with ``python3 benchmarks/bench_kernels.py [--batch 256] [--repeat 50]``.
Prints per-point timings for each kernel, the speed-up, and the largest
disagreement between the two backends.  Ends with one end-to-end ray
integration per backend.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from sttomo import _fallback
from sttomo.metric import SpatialDomain, random_bump_diffeo, random_bump_metric

try:
    from sttomo import _kernels
except ImportError:  # pragma: no cover - depends on the build
    _kernels = None


def _inputs(batch, seed=0):
    dom = SpatialDomain(2)
    g = random_bump_metric(dom, 1e-2, seed=1)
    psi = random_bump_diffeo(dom, 5e-3, seed=2)
    rng = np.random.default_rng(seed)
    x = rng.uniform(-0.6, 0.6, (batch, 2))
    y = psi.jet(x, 3)
    Gy = g.jet(y[0], 2)
    inv = _fallback.inverse_jet(*g.jet(x, 2))
    p = rng.normal(size=(batch, 3))
    J = np.tile(np.eye(6), (batch, 1, 1))
    return {
        "bump_jet": ((x, g.centers, g.widths, 2), {}),
        "inverse_jet": (tuple(g.jet(x, 2)), {}),
        "hamilton_rhs": ((*inv, p, J, 1), {}),
        "pullback_jet": ((Gy[0], Gy[1], Gy[2], y[1], y[2], y[3], 2), {}),
    }


def _maxdiff(a, b):
    if isinstance(a, (list, tuple)):
        return max(_maxdiff(u, v) for u, v in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _ray_timing(pure: bool) -> float:
    code = ("import time, numpy as np\n"
            "from sttomo.acceptance import boundary_rays\n"
            "from sttomo.flow import propagate\n"
            "from sttomo.metric import SpatialDomain, random_bump_metric\n"
            "d = SpatialDomain(2); g = random_bump_metric(d, 1e-2, seed=1)\n"
            "q, p = boundary_rays(d, 100, seed=0)\n"
            "t = time.perf_counter(); propagate(g, q, p, until='exit', variational=True)\n"
            "print(time.perf_counter() - t)\n")
    env = dict(os.environ, STTOMO_PURE_PYTHON="1" if pure else "0")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    return float(out.stdout.strip())


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=256)
    ap.add_argument("--repeat", type=int, default=50)
    ap.add_argument("--no-rays", action="store_true", help="skip the end-to-end ray timing")
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available")
        return 1
    cases = _inputs(args.batch)
    print(f"{'kernel':<14}{'numpy us/pt':>14}{'cython us/pt':>14}{'speed-up':>10}{'max diff':>12}")
    for name, (a, kw) in cases.items():
        f_np, f_cy = getattr(_fallback, name), getattr(_kernels, name)
        t_np = timeit.timeit(lambda: f_np(*a, **kw), number=args.repeat) / args.repeat
        t_cy = timeit.timeit(lambda: f_cy(*a, **kw), number=args.repeat) / args.repeat
        diff = _maxdiff(f_np(*a, **kw), f_cy(*a, **kw))
        scale = 1e6 / args.batch
        print(f"{name:<14}{t_np * scale:>14.3f}{t_cy * scale:>14.3f}{t_np / t_cy:>10.2f}{diff:>12.2e}")
    if not args.no_rays:
        t_np, t_cy = _ray_timing(True), _ray_timing(False)
        print(f"\n100 variational rays to exit: numpy {t_np:.2f} s, cython {t_cy:.2f} s "
              f"(speed-up {t_np / t_cy:.2f})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
