import os
import subprocess
import sys

import numpy as np
import pytest

from oracles import bump_derivatives
from sttomo import _fallback, kernels
from sttomo.metric import random_bump_diffeo

try:
    from sttomo import _kernels
except ImportError:  # extension not built
    _kernels = None

needs_ext = pytest.mark.skipif(_kernels is None, reason="compiled extension not built")


def _maxdiff(a, b):
    if a is None or b is None:
        assert a is None and b is None
        return 0.0
    if isinstance(a, (list, tuple)):
        return max(_maxdiff(u, v) for u, v in zip(a, b))
    return float(np.max(np.abs(np.asarray(a) - np.asarray(b))))


def _inputs(domain, bump, rng, batch=40):
    x = rng.uniform(-0.7, 0.7, (batch, 2))
    psi = random_bump_diffeo(domain, 5e-3, seed=2)
    y = psi.jet(x, 3)
    Gy = bump.jet(y[0], 2)
    G = bump.jet(x, 2)
    inv = _fallback.inverse_jet(*G)
    p = rng.normal(size=(batch, 3))
    J = rng.normal(size=(batch, 6, 6))
    return x, G, inv, p, J, Gy, y


def test_bump_jet_matches_hand_derivatives(bump, rng):
    x = rng.uniform(-1.0, 1.0, (200, 2))
    b = kernels.bump_jet(x, bump.centers, bump.widths, 2)
    for k in range(len(bump.widths)):
        ref = bump_derivatives(x, bump.centers[k], bump.widths[k])
        for order in range(3):
            np.testing.assert_allclose(b[order][:, k], ref[order], atol=1e-12)


def test_bump_peak_is_one(bump):
    b = kernels.bump_jet(bump.centers, bump.centers, bump.widths, 1)
    np.testing.assert_allclose(np.diag(b[0]), 1.0, rtol=0, atol=1e-15)
    np.testing.assert_allclose(b[1][np.arange(3), np.arange(3)], 0.0, atol=1e-15)


def test_inverse_jet_against_finite_differences(bump, rng):
    x = rng.uniform(-0.6, 0.6, (10, 2))
    Ginv, dGinv, d2Ginv = kernels.inverse_jet(*bump.jet(x, 2))
    h = 1e-5
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        plus, minus = np.linalg.inv(bump.jet(x + e, 0)[0]), np.linalg.inv(bump.jet(x - e, 0)[0])
        np.testing.assert_allclose(dGinv[..., k], (plus - minus) / (2 * h), atol=1e-9)
        dplus = kernels.inverse_jet(*bump.jet(x + e, 1))[1]
        dminus = kernels.inverse_jet(*bump.jet(x - e, 1))[1]
        # third derivatives of the bumps reach O(1e3 eps), so the h^2 error is ~1e-8
        np.testing.assert_allclose(d2Ginv[..., k], (dplus - dminus) / (2 * h), atol=5e-8)


def test_hamilton_rhs_is_the_hamilton_system(bump, rng):
    x = rng.uniform(-0.6, 0.6, (8, 2))
    p = rng.normal(size=(8, 3))
    Ginv, dGinv, _ = kernels.inverse_jet(*bump.jet(x, 1))
    dq, dp, _ = kernels.hamilton_rhs(Ginv, dGinv, None, p, None, 1)
    np.testing.assert_allclose(dq, np.einsum("bij,bj->bi", Ginv, p), atol=1e-15)
    assert np.all(dp[:, 0] == 0.0)
    h = 1e-6
    for k in range(2):
        e = np.zeros(2)
        e[k] = h
        Hp = 0.5 * np.einsum("bi,bij,bj->b", p, np.linalg.inv(bump.jet(x + e, 0)[0]), p)
        Hm = 0.5 * np.einsum("bi,bij,bj->b", p, np.linalg.inv(bump.jet(x - e, 0)[0]), p)
        np.testing.assert_allclose(dp[:, 1 + k], -(Hp - Hm) / (2 * h), atol=1e-8)


@needs_ext
def test_backends_agree(domain, bump, rng):
    x, G, inv, p, J, Gy, y = _inputs(domain, bump, rng)
    cases = {
        "bump_jet": (x, bump.centers, bump.widths, 2),
        "inverse_jet": tuple(G),
        "hamilton_rhs": (*inv, p, J, 1),
        "pullback_jet": (Gy[0], Gy[1], Gy[2], y[1], y[2], y[3], 2),
    }
    for name, args in cases.items():
        a = getattr(_fallback, name)(*args)
        b = getattr(_kernels, name)(*args)
        assert _maxdiff(a, b) < 1e-12, name


@needs_ext
def test_backends_agree_without_optional_inputs(bump, rng):
    x = rng.uniform(-0.5, 0.5, (5, 2))
    G, dG = bump.jet(x, 1)
    assert _maxdiff(_fallback.inverse_jet(G, dG, None), _kernels.inverse_jet(G, dG, None)) < 1e-13
    Ginv, dGinv, _ = _fallback.inverse_jet(G, dG, None)
    p = rng.normal(size=(5, 3))
    a = _fallback.hamilton_rhs(Ginv, dGinv, None, p, None, 1)
    b = _kernels.hamilton_rhs(Ginv, dGinv, None, p, None, 1)
    assert _maxdiff(a, b) < 1e-14


def test_backend_selection_by_environment():
    code = "from sttomo import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, STTOMO_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "numpy"
    assert kernels.BACKEND in ("numpy", "cython")
