"""Compiled and pure-numpy kernels must agree."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilotwaves import _kernels_py as py
from pilotwaves import kernels

compiled = pytest.importorskip("pilotwaves._kernels")


def _coeffs(seed, rows, n):
    rng = np.random.default_rng(seed)
    return (rng.normal(size=(rows, n)) + 1j * rng.normal(size=(rows, n))) / n


def test_backend_reported():
    assert kernels.BACKEND in ("cython", "python")


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 16), n=st.sampled_from([8, 16, 64, 256]),
       npts=st.integers(1, 40))
def test_shared_and_paired_agree(seed, n, npts):
    rng = np.random.default_rng(seed)
    dk = 2 * np.pi / 10.0
    theta = rng.uniform(0, 10, npts)
    c = _coeffs(seed, 3, n)
    assert np.abs(compiled.trig_eval_shared(c, theta, dk) - py.trig_eval_shared(c, theta, dk)).max() < 1e-10
    cp = _coeffs(seed + 1, npts, n)
    assert np.abs(compiled.trig_eval_paired(cp, theta, dk) - py.trig_eval_paired(cp, theta, dk)).max() < 1e-10
    mult = 1j * np.fft.fftfreq(n, 1 / n)
    a = compiled.trig_eval_paired2(cp, theta, mult, dk)
    b = py.trig_eval_paired2(cp, theta, mult, dk)
    assert np.abs(a[0] - b[0]).max() < 1e-10 and np.abs(a[1] - b[1]).max() < 1e-10


def test_phasors_and_expi_agree():
    theta = np.linspace(0, 31.9, 77)
    assert np.abs(compiled.phasor_matrix(theta, 64, 0.2) - py.phasor_matrix(theta, 64, 0.2)).max() < 1e-11
    a = np.random.default_rng(2).normal(size=(4, 5, 6)) * 30
    assert np.array_equal(py.expi(a).shape, a.shape)
    assert np.abs(compiled.expi(a) - np.exp(1j * a)).max() < 1e-14
    assert np.abs(py.expi(a) - np.exp(1j * a)).max() < 1e-14


def test_pure_python_fallback_selectable(monkeypatch):
    import importlib

    monkeypatch.setenv("PILOTWAVES_PURE_PYTHON", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.trig_eval_shared is py.trig_eval_shared
    finally:
        monkeypatch.delenv("PILOTWAVES_PURE_PYTHON")
        importlib.reload(kernels)
