import os
import subprocess
import sys

import numpy as np
import pytest

from pnnkit import _fallback, kernels


def backend_in_subprocess(**env):
    proc = subprocess.run([sys.executable, "-c", "from pnnkit import kernels; print(kernels.BACKEND)"],
                          capture_output=True, text=True, env={**os.environ, **env}, check=True)
    return proc.stdout.strip()


def test_pure_python_switch():
    assert backend_in_subprocess(PNNKIT_PURE_PYTHON="1") == "python"


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


@pytest.mark.skipif(kernels.BACKEND != "compiled", reason="compiled extension not built")
class TestCompiledParity:
    def test_fft(self):
        rng = np.random.default_rng(0)
        for n in (1, 2, 8, 512, 8192):
            x = rng.normal(size=n) + 1j * rng.normal(size=n)
            np.testing.assert_allclose(kernels.fft_radix2(x), _fallback.fft_radix2(x), atol=1e-10 * n)
            np.testing.assert_allclose(kernels.fft_radix2(x, inverse=True),
                                       _fallback.fft_radix2(x, inverse=True), atol=1e-10 * n)

    def test_fft_rejects_non_power_of_two(self):
        with pytest.raises(ValueError):
            kernels.fft_radix2(np.ones(6, dtype=complex))
        with pytest.raises(ValueError):
            _fallback.fft_radix2(np.ones(6, dtype=complex))

    def test_max_of_bin(self):
        v = np.random.default_rng(1).random(3001)
        for k in (1, 2, 1000, 3001, 5000):
            np.testing.assert_array_equal(kernels.max_of_bin(v, k), _fallback.max_of_bin(v, k))
