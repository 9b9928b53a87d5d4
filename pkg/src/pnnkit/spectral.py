"""Spectral preprocessing: one-sided FFT magnitude followed by max-of-bin pooling.

Signals of any length and sample rate are mapped onto a fixed number of
bins ``K`` so that spectral peaks keep their relative position and height.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from pnnkit import kernels
from pnnkit.errors import FormatError, InvalidInputError

DEFAULT_BINS = 16384

SIGNAL_MAGIC = b"PNNSIG1\x00"
SPECTRUM_MAGIC = b"PNNSPC1\x00"


@dataclass(frozen=True)
class RawSignal:
    """A time-domain recording."""

    samples: np.ndarray
    sample_rate_hz: float = 1.0

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.shape[0] < 2:
            raise InvalidInputError(f"signal needs at least 2 samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise InvalidInputError("signal contains non-finite samples")
        if not (self.sample_rate_hz > 0 and np.isfinite(self.sample_rate_hz)):
            raise InvalidInputError(f"sample rate must be positive, got {self.sample_rate_hz}")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def length(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True)
class Spectrum:
    """A fixed-length non-negative magnitude spectrum."""

    bins: np.ndarray = field(repr=False)

    def __post_init__(self):
        bins = np.asarray(self.bins, dtype=np.float64)
        if bins.ndim != 1 or bins.shape[0] < 1:
            raise InvalidInputError(f"spectrum must be a non-empty vector, got shape {bins.shape}")
        if not np.all(np.isfinite(bins)) or np.any(bins < 0):
            raise InvalidInputError("spectrum bins must be finite and non-negative")
        bins.setflags(write=False)
        object.__setattr__(self, "bins", bins)

    @property
    def k(self) -> int:
        return int(self.bins.shape[0])


def _is_pow2(n: int) -> bool:
    return n > 0 and n & (n - 1) == 0


def _next_pow2(n: int) -> int:
    return 1 << (n - 1).bit_length()


def _bluestein(x: np.ndarray) -> np.ndarray:
    # Arbitrary-length DFT as a chirp convolution carried out with radix-2 transforms.
    n = x.shape[0]
    idx = np.arange(n, dtype=np.int64)
    # n^2 mod 2n keeps the chirp phase argument small and exact.
    chirp = np.exp(-1j * np.pi * ((idx * idx) % (2 * n)) / n)
    size = _next_pow2(2 * n - 1)
    a = np.zeros(size, dtype=np.complex128)
    a[:n] = x * chirp
    b = np.zeros(size, dtype=np.complex128)
    b[:n] = np.conj(chirp)
    b[size - n + 1:] = np.conj(chirp[1:])[::-1]
    fa = kernels.fft_radix2(a)
    fb = kernels.fft_radix2(b)
    conv = kernels.fft_radix2(fa * fb, inverse=True) / size
    return chirp * conv[:n]


def dft(x) -> np.ndarray:
    """Full complex DFT of ``x``; radix-2 for power-of-two lengths, Bluestein otherwise."""
    x = np.asarray(x, dtype=np.complex128)
    if x.ndim != 1 or x.shape[0] == 0:
        raise InvalidInputError("dft expects a non-empty 1-D array")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("dft input contains non-finite values")
    if _is_pow2(x.shape[0]):
        return kernels.fft_radix2(x)
    return _bluestein(x)


def dft_magnitude(signal: RawSignal) -> np.ndarray:
    """One-sided magnitude spectrum ``|X[0..L//2]|`` of a real signal."""
    if not isinstance(signal, RawSignal):
        signal = RawSignal(signal)
    spectrum = dft(signal.samples)
    return np.abs(spectrum[: signal.length // 2 + 1])


def max_of_bin(magnitudes, k: int) -> Spectrum:
    """Standardize a magnitude vector to ``k`` bins.

    When the input is at least ``k`` long, output bin ``i`` is the maximum of
    input indices ``[floor(i*M/k), floor((i+1)*M/k))``. Shorter inputs are
    upsampled by nearest neighbour so peak heights survive unchanged.
    """
    mags = np.asarray(magnitudes, dtype=np.float64)
    if mags.ndim != 1 or mags.shape[0] < 1:
        raise InvalidInputError("magnitudes must be a non-empty vector")
    if k < 1:
        raise InvalidInputError(f"bin count must be positive, got {k}")
    if not np.all(np.isfinite(mags)):
        raise InvalidInputError("magnitudes must be finite")
    return Spectrum(kernels.max_of_bin(mags, int(k)))


def preprocess(signal: RawSignal, k: int = DEFAULT_BINS, unit_max: bool = False) -> Spectrum:
    """FFT magnitude of ``signal`` pooled to ``k`` bins.

    ``unit_max`` rescales the result so its largest bin is 1 (all-zero
    spectra are left alone).
    """
    spec = max_of_bin(dft_magnitude(signal), k)
    if unit_max:
        peak = spec.bins.max()
        if peak > 0:
            return Spectrum(spec.bins / peak)
    return spec


def direct_spectrum(signal: RawSignal, k: int = DEFAULT_BINS) -> Spectrum:
    """Unstandardized alternative: ``k``-point DFT of the signal truncated or zero-padded to ``k``.

    All ``k`` magnitude bins are returned, mirroring a plain N-point FFT.
    """
    if not isinstance(signal, RawSignal):
        signal = RawSignal(signal)
    x = np.zeros(k)
    n = min(k, signal.length)
    x[:n] = signal.samples[:n]
    return Spectrum(np.abs(dft(x)))


# -- containers -------------------------------------------------------------

_HEADER = struct.Struct("<8sQ")
_RATE = struct.Struct("<Q")


def write_signal(path, signal: RawSignal) -> None:
    rate_mhz = int(round(signal.sample_rate_hz * 1000.0))
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SIGNAL_MAGIC, signal.length))
        fh.write(_RATE.pack(rate_mhz))
        fh.write(signal.samples.astype("<f4").tobytes())


def write_spectrum(path, spectrum: Spectrum) -> None:
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(SPECTRUM_MAGIC, spectrum.k))
        fh.write(spectrum.bins.astype("<f4").tobytes())


def _read_payload(raw: bytes, offset: int, count: int, path) -> np.ndarray:
    need = offset + 4 * count
    if len(raw) != need:
        raise FormatError(f"{path}: expected {need} bytes for {count} values, found {len(raw)}", len(raw))
    return np.frombuffer(raw, dtype="<f4", count=count, offset=offset).astype(np.float64)


def read_container(path) -> RawSignal | Spectrum:
    """Read either a signal or a spectrum file, dispatching on its magic."""
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header", len(raw))
    magic, count = _HEADER.unpack_from(raw, 0)
    if magic == SIGNAL_MAGIC:
        if len(raw) < _HEADER.size + _RATE.size:
            raise FormatError(f"{path}: truncated header", len(raw))
        (rate_mhz,) = _RATE.unpack_from(raw, _HEADER.size)
        samples = _read_payload(raw, _HEADER.size + _RATE.size, count, path)
        return RawSignal(samples, rate_mhz / 1000.0)
    if magic == SPECTRUM_MAGIC:
        return Spectrum(_read_payload(raw, _HEADER.size, count, path))
    raise FormatError(f"{path}: bad magic {magic!r}, expected {SIGNAL_MAGIC!r} or {SPECTRUM_MAGIC!r}", 0)


def read_signal(path) -> RawSignal:
    obj = read_container(path)
    if not isinstance(obj, RawSignal):
        raise FormatError(f"{path}: expected magic {SIGNAL_MAGIC!r}", 0)
    return obj


def read_spectrum(path) -> Spectrum:
    obj = read_container(path)
    if not isinstance(obj, Spectrum):
        raise FormatError(f"{path}: expected magic {SPECTRUM_MAGIC!r}", 0)
    return obj
