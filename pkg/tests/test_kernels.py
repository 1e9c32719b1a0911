"""Compiled and pure-Python kernels must agree."""
import importlib
import subprocess
import sys

import numpy as np
import pytest

import vtlkws
from vtlkws.warp import WarpConfig, build_warped_filterbank, default_grid


def _stack(alphas):
    banks = [build_warped_filterbank(a, WarpConfig(), 40, 512, 16000) for a in alphas]
    w = np.ascontiguousarray(np.stack([b.weights for b in banks]))
    s = np.ascontiguousarray(np.stack([b.support()[0] for b in banks]))
    e = np.ascontiguousarray(np.stack([b.support()[1] for b in banks]))
    return w, s, e


def test_frame_signal(kernels):
    x = np.random.default_rng(0).normal(size=16000)
    win = np.hamming(480)
    frames = kernels.frame_signal(x, 480, 160, 0.97, win)
    assert frames.shape == (98, 480)
    emph = np.append(x[0], x[1:] - 0.97 * x[:-1])
    np.testing.assert_allclose(frames[3], emph[480:960] * win, atol=1e-14)
    np.testing.assert_allclose(frames[0], emph[:480] * win, atol=1e-14)


def test_frame_signal_too_short(kernels):
    with pytest.raises(ValueError):
        kernels.frame_signal(np.zeros(100), 480, 160, 0.97, np.hamming(480))


def test_filterbank_log(kernels):
    power = np.random.default_rng(1).random((98, 257)) ** 4
    power[5] = 0.0
    w, s, e = _stack(default_grid())
    out = kernels.apply_filterbanks_log(power, w, s, e, 1e-10)
    ref = np.log(np.maximum(np.einsum("tk,amk->atm", power, w), 1e-10))
    assert out.shape == (21, 98, 40)
    np.testing.assert_allclose(out, ref, rtol=1e-12, atol=1e-12)
    assert np.all(out[:, 5] == np.log(1e-10))


def test_backends_agree():
    try:
        compiled = importlib.import_module("vtlkws._kernels")
    except ImportError:
        pytest.skip("compiled kernels not built")
    py = importlib.import_module("vtlkws._kernels_py")
    x = np.random.default_rng(2).normal(0, 0.2, 16000)
    win = np.hamming(480)
    fa = compiled.frame_signal(x, 480, 160, 0.97, win)
    fb = py.frame_signal(x, 480, 160, 0.97, win)
    np.testing.assert_allclose(fa, fb, rtol=0, atol=1e-15)
    power = np.abs(np.fft.rfft(fa, 512)) ** 2
    w, s, e = _stack(default_grid())
    np.testing.assert_allclose(compiled.apply_filterbanks_log(power, w, s, e, 1e-10),
                               py.apply_filterbanks_log(power, w, s, e, 1e-10), rtol=1e-12, atol=1e-12)


def test_backend_selection_env():
    code = "import vtlkws; print(vtlkws.BACKEND)"
    out = subprocess.run([sys.executable, "-c", code], capture_output=True, text=True,
                         env={"VTLKWS_PURE_PYTHON": "1", "PATH": ""}, check=True)
    assert out.stdout.strip() == "python"
    assert vtlkws.BACKEND in ("python", "cython")
