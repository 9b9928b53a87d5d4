# cython: language_level=3
"""Compiled kernels: radix-2 FFT, max-of-bin pooling and a fused Adam update."""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, M_PI

cnp.import_array()


def fft_radix2(x, bint inverse=False):
    """Unnormalized DFT of a power-of-two length complex vector."""
    cdef cnp.ndarray[cnp.complex128_t, ndim=1] out = np.array(x, dtype=np.complex128, copy=True)
    cdef Py_ssize_t n = out.shape[0]
    if n < 1 or (n & (n - 1)) != 0:
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    cdef double complex[::1] a = out
    cdef double[::1] wr = np.empty(n // 2 + 1)
    cdef double[::1] wi = np.empty(n // 2 + 1)
    cdef double sign = 1.0 if inverse else -1.0
    cdef Py_ssize_t i, j, bit, m, half, start, k, stride
    cdef double complex t, u, w

    for k in range(n // 2):
        wr[k] = cos(2.0 * M_PI * k / n)
        wi[k] = sign * sin(2.0 * M_PI * k / n)

    j = 0
    for i in range(1, n):
        bit = n >> 1
        while j & bit:
            j ^= bit
            bit >>= 1
        j |= bit
        if i < j:
            t = a[i]
            a[i] = a[j]
            a[j] = t

    m = 2
    while m <= n:
        half = m >> 1
        stride = n // m
        for start in range(0, n, m):
            for k in range(half):
                w = wr[k * stride] + 1j * wi[k * stride]
                u = a[start + k]
                t = w * a[start + k + half]
                a[start + k] = u + t
                a[start + k + half] = u - t
        m <<= 1
    return out


def max_of_bin(x, Py_ssize_t k):
    """Pool ``x`` into ``k`` bins: window max when len(x) >= k, else nearest-neighbour."""
    cdef cnp.ndarray[cnp.float64_t, ndim=1] src = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t m = src.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(k, dtype=np.float64)
    cdef double[::1] s = src
    cdef double[::1] o = out
    cdef Py_ssize_t i, j, lo, hi
    cdef double best
    if m >= k:
        for i in range(k):
            lo = (i * m) // k
            hi = ((i + 1) * m) // k
            best = s[lo]
            for j in range(lo + 1, hi):
                if s[j] > best:
                    best = s[j]
            o[i] = best
    else:
        for i in range(k):
            o[i] = s[(i * m) // k]
    return out


def adam_update(double[::1] p, double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double c1, double c2,
                double eps, double decay, bint decoupled):
    """Fused in-place Adam step over flat float64 buffers."""
    cdef Py_ssize_t i, n = p.shape[0]
    cdef double gi, denom
    cdef double step = lr / c1
    cdef double shrink = 1.0 - lr * decay
    for i in range(n):
        gi = g[i]
        if decay != 0.0 and not decoupled:
            gi = gi + decay * p[i]
        m[i] = beta1 * m[i] + (1.0 - beta1) * gi
        v[i] = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
        if decay != 0.0 and decoupled:
            p[i] = p[i] * shrink
        denom = sqrt(v[i] / c2) + eps
        p[i] = p[i] - step * (m[i] / denom)
