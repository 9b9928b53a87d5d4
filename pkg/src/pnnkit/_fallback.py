"""Pure numpy versions of the compiled kernels in ``_kernels.pyx``."""
import numpy as np


def _bit_reverse(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def fft_radix2(x, inverse=False):
    """Unnormalized DFT of a power-of-two length complex vector."""
    a = np.array(x, dtype=np.complex128, copy=True)
    n = a.shape[0]
    if n < 1 or n & (n - 1):
        raise ValueError(f"radix-2 FFT needs a power-of-two length, got {n}")
    sign = 1.0 if inverse else -1.0
    k = np.arange(n // 2)
    table = np.cos(2.0 * np.pi * k / n) + 1j * sign * np.sin(2.0 * np.pi * k / n)
    a = a[_bit_reverse(n)]
    m = 2
    while m <= n:
        half = m // 2
        w = table[:: n // m][:half]
        blocks = a.reshape(-1, m)
        u = blocks[:, :half].copy()
        t = w * blocks[:, half:]
        blocks[:, :half] = u + t
        blocks[:, half:] = u - t
        m *= 2
    return a


def max_of_bin(x, k):
    """Pool ``x`` into ``k`` bins: window max when len(x) >= k, else nearest-neighbour."""
    src = np.ascontiguousarray(x, dtype=np.float64)
    m = src.shape[0]
    i = np.arange(k)
    if m >= k:
        return np.maximum.reduceat(src, (i * m) // k)
    return src[(i * m) // k].copy()


def adam_update(p, g, m, v, lr, beta1, beta2, c1, c2, eps, decay, decoupled):
    """In-place Adam step over flat buffers (numpy twin of the compiled kernel)."""
    if decay and not decoupled:
        g = g + decay * p
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    if decay and decoupled:
        p *= 1.0 - lr * decay
    denom = np.sqrt(v / c2)
    denom += eps
    p -= (lr / c1) * (m / denom)
