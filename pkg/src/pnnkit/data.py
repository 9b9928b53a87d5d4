"""Datasets: manifests, stratified division-ratio splits, and a synthetic fault generator."""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from pnnkit.errors import ConfigError, FormatError, InvalidInputError
from pnnkit.spectral import (
    DEFAULT_BINS,
    RawSignal,
    Spectrum,
    direct_spectrum,
    preprocess,
    read_container,
    write_signal,
)

MANIFEST_MAGIC = "PNNMAN1"


@dataclass
class Sample:
    id: str
    label: int
    path: str | None = None
    signal: RawSignal | None = None
    spectrum: Spectrum | None = None

    def load(self, base_dir=None) -> RawSignal | Spectrum:
        if self.signal is not None:
            return self.signal
        if self.spectrum is not None:
            return self.spectrum
        if self.path is None:
            raise InvalidInputError(f"sample {self.id!r} has no data")
        return read_container(_resolve(self.path, base_dir))


def _resolve(path, base_dir):
    p = Path(path)
    if not p.is_absolute() and base_dir is not None:
        p = Path(base_dir) / p
    return p


@dataclass
class Manifest:
    class_names: list[str]
    samples: list[Sample]
    k: int = DEFAULT_BINS
    provenance: str = ""
    base_dir: str | None = None

    def __post_init__(self):
        if len(self.class_names) < 2:
            raise InvalidInputError("a manifest needs at least 2 classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise InvalidInputError("class names must be unique")
        seen = set()
        for s in self.samples:
            if s.id in seen:
                raise InvalidInputError(f"duplicate sample id {s.id!r}")
            seen.add(s.id)
            if not 0 <= s.label < len(self.class_names):
                raise InvalidInputError(f"sample {s.id!r} has unknown class index {s.label}")

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)

    def require_all_classes(self):
        empty = [self.class_names[i] for i, n in enumerate(self.class_counts()) if n == 0]
        if empty:
            raise InvalidInputError(f"classes without samples: {empty}")

    def subset(self, indices) -> "Manifest":
        return replace(self, samples=[self.samples[i] for i in indices])


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    lines = [f"{MANIFEST_MAGIC} {manifest.num_classes} {manifest.k}"]
    if manifest.provenance:
        for note in manifest.provenance.splitlines():
            lines.append(f"# {note}")
    lines.extend(manifest.class_names)
    for s in manifest.samples:
        if s.path is None:
            raise InvalidInputError(f"sample {s.id!r} has no file path; write its data first")
        p = _resolve(s.path, manifest.base_dir)
        try:
            rel = os.path.relpath(p, path.parent)
        except ValueError:
            rel = str(p)
        lines.append(f"{s.id}\t{manifest.class_names[s.label]}\t{rel}")
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path, check_files: bool = True) -> Manifest:
    path = Path(path)
    text = path.read_text().splitlines()
    body = [(i + 1, line) for i, line in enumerate(text) if line.strip() and not line.startswith("#")]
    notes = [line[1:].strip() for line in text if line.startswith("#")]
    if not body:
        raise FormatError(f"{path}: empty manifest")
    header = body[0][1].split()
    if len(header) != 3 or header[0] != MANIFEST_MAGIC:
        raise FormatError(f"{path}: header must be '{MANIFEST_MAGIC} <C> <K>', got {body[0][1]!r}")
    try:
        c, k = int(header[1]), int(header[2])
    except ValueError as exc:
        raise FormatError(f"{path}: non-integer class or bin count in header") from exc
    if len(body) < 1 + c:
        raise FormatError(f"{path}: expected {c} class names")
    names = [line.strip() for _, line in body[1:1 + c]]
    index = {n: i for i, n in enumerate(names)}
    samples = []
    seen = set()
    for lineno, line in body[1 + c:]:
        parts = line.split("\t")
        if len(parts) != 3:
            raise FormatError(f"{path}:{lineno}: expected 'id<TAB>class<TAB>path'")
        sid, cls, rel = parts
        if sid in seen:
            raise InvalidInputError(f"{path}:{lineno}: duplicate sample id {sid!r}")
        seen.add(sid)
        if cls not in index:
            raise InvalidInputError(f"{path}:{lineno}: sample {sid!r} has unknown class {cls!r}")
        if check_files and not _resolve(rel, path.parent).is_file():
            raise InvalidInputError(f"{path}:{lineno}: signal file for sample {sid!r} not found: {rel}")
        samples.append(Sample(sid, index[cls], rel))
    return Manifest(names, samples, k, "\n".join(notes), str(path.parent))


# -- splitting ----------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")


def train_count(fraction: float, n: int) -> int:
    """Round half up, never below one."""
    return max(1, math.floor(fraction * n + 0.5))


def split_indices(labels, num_classes: int, spec: SplitSpec):
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(spec.seed)
    train, test = [], []
    if spec.stratified:
        for c in range(num_classes):
            idx = np.flatnonzero(labels == c)
            if idx.size == 0:
                raise InvalidInputError(f"class {c} has no samples")
            idx = idx[rng.permutation(idx.size)]
            n = train_count(spec.train_fraction, idx.size)
            train.extend(idx[:n].tolist())
            test.extend(idx[n:].tolist())
    else:
        idx = rng.permutation(labels.size)
        n = train_count(spec.train_fraction, labels.size)
        train, test = idx[:n].tolist(), idx[n:].tolist()
        missing = set(range(num_classes)) - set(labels[train].tolist())
        if missing:
            raise InvalidInputError(f"unstratified split left classes {sorted(missing)} without training samples")
    return np.array(sorted(train), dtype=np.int64), np.array(sorted(test), dtype=np.int64)


def split(manifest: Manifest, spec: SplitSpec):
    """Per-class seeded split: ``max(1, round(fraction * n_c))`` samples of class ``c`` go to train."""
    train, test = split_indices(manifest.labels, manifest.num_classes, spec)
    return manifest.subset(train), manifest.subset(test)


# -- features -----------------------------------------------------------------

def features(manifest: Manifest, k: int | None = None, standardize: bool = True,
             unit_max: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Stack every sample's K-bin spectrum into ``(X [M x K], y [M])``."""
    k = k or manifest.k
    rows = []
    for s in manifest.samples:
        obj = s.load(manifest.base_dir)
        if isinstance(obj, Spectrum):
            if obj.k != k:
                raise InvalidInputError(f"sample {s.id!r} is a {obj.k}-bin spectrum, expected {k}")
            if not standardize:
                raise InvalidInputError(f"sample {s.id!r} is already a spectrum; the unstandardized path needs raw signals")
            rows.append(obj.bins)
        elif standardize:
            rows.append(preprocess(obj, k, unit_max=unit_max).bins)
        else:
            rows.append(direct_spectrum(obj, k).bins)
    x = np.vstack(rows) if rows else np.zeros((0, k))
    return x, manifest.labels


# -- synthetic generator --------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Synthetic rotating-machine recordings.

    Every class shares the shaft harmonics ``h*base_freq`` with a
    class-specific amplitude pattern and adds a class-specific resonance
    band. ``signal_length`` may be a tuple to produce mixed-length data.
    """

    classes: int = 7
    samples_per_class: int = 75
    signal_length: int | tuple[int, ...] = 4096
    sample_rate: float = 12000.0
    base_freq: float = 29.5
    noise_snr_db: float = 15.0
    seed: int = 0
    harmonics: int = 8
    resonance_tones: int = 6
    resonance_amplitude: float = 1.0
    band_range: tuple[float, float] = (0.08, 0.45)  # fraction of the sample rate
    bandwidth_range: tuple[float, float] = (0.008, 0.02)  # fraction of the sample rate
    resonance_centers_hz: tuple[float, ...] | None = None
    resonance_bandwidths_hz: tuple[float, ...] | None = None
    jitter: float = 0.10
    bins: int = DEFAULT_BINS

    def lengths(self) -> tuple[int, ...]:
        if isinstance(self.signal_length, int):
            return (self.signal_length,)
        return tuple(int(n) for n in self.signal_length)


@dataclass
class ClassSignature:
    harmonic_amplitudes: np.ndarray
    band_center_hz: float
    band_width_hz: float
    tone_freqs_hz: np.ndarray

    @property
    def band(self) -> tuple[float, float]:
        return (self.band_center_hz - self.band_width_hz / 2, self.band_center_hz + self.band_width_hz / 2)


@dataclass
class SynthDataset:
    manifest: Manifest
    spec: SynthSpec
    signatures: list[ClassSignature] = field(default_factory=list)

    def band_bins(self, c: int, k: int) -> tuple[int, int]:
        """Standardized-bin interval ``[lo, hi]`` covered by class ``c``'s resonance band."""
        nyquist = self.spec.sample_rate / 2
        lo, hi = self.signatures[c].band
        return int(math.floor(lo / nyquist * k)), int(math.floor(hi / nyquist * k))


def _signatures(spec: SynthSpec, rng: np.random.Generator) -> list[ClassSignature]:
    nyquist = spec.sample_rate / 2
    c = spec.classes
    if spec.resonance_centers_hz is not None:
        centers = np.asarray(spec.resonance_centers_hz, dtype=np.float64)
        if centers.shape != (c,):
            raise ConfigError(f"need {c} resonance centers, got {centers.size}")
    else:
        # one slot per class across the band range keeps the bands apart
        lo, hi = spec.band_range
        edges = np.linspace(lo, hi, c + 1) * spec.sample_rate
        slot = rng.permutation(c)
        centers = np.array([rng.uniform(edges[s] + 0.25 * (edges[s + 1] - edges[s]),
                                        edges[s + 1] - 0.25 * (edges[s + 1] - edges[s])) for s in slot])
    if spec.resonance_bandwidths_hz is not None:
        widths = np.asarray(spec.resonance_bandwidths_hz, dtype=np.float64)
    else:
        widths = rng.uniform(*spec.bandwidth_range, size=c) * spec.sample_rate
    sigs = []
    for i in range(c):
        if centers[i] + widths[i] / 2 >= nyquist or centers[i] - widths[i] / 2 <= 0:
            raise ConfigError(f"class {i} resonance band {centers[i]:.1f}±{widths[i] / 2:.1f} Hz "
                              f"falls outside (0, Nyquist={nyquist:.1f} Hz)")
        amps = rng.uniform(0.3, 1.0, size=spec.harmonics)
        tones = np.sort(rng.uniform(centers[i] - widths[i] / 2, centers[i] + widths[i] / 2,
                                    size=spec.resonance_tones))
        sigs.append(ClassSignature(amps, float(centers[i]), float(widths[i]), tones))
    return sigs


def synth_signal(sig: ClassSignature, spec: SynthSpec, length: int, rng: np.random.Generator) -> np.ndarray:
    """One recording; component frequencies are snapped to the length's DFT grid."""
    fs = spec.sample_rate
    n = np.arange(length)
    freqs = np.concatenate([spec.base_freq * np.arange(1, spec.harmonics + 1), sig.tone_freqs_hz])
    amps = np.concatenate([sig.harmonic_amplitudes,
                           np.full(sig.tone_freqs_hz.size, spec.resonance_amplitude)])
    keep = freqs < fs / 2
    freqs, amps = freqs[keep], amps[keep]
    bins = np.clip(np.round(freqs / fs * length), 1, length // 2 - 1).astype(np.int64)
    jitter = rng.uniform(1 - spec.jitter, 1 + spec.jitter, size=bins.size)
    phase = rng.uniform(0, 2 * np.pi, size=bins.size)
    x = np.zeros(length)
    for b, a, ph in zip(bins, amps * jitter, phase):
        x += a * np.cos(2 * np.pi * b * n / length + ph)
    if np.isfinite(spec.noise_snr_db):
        power = np.mean(x * x)
        x = x + rng.normal(0.0, math.sqrt(power / 10 ** (spec.noise_snr_db / 10)), size=length)
    return x


def synth_generate(spec: SynthSpec, out_dir=None) -> SynthDataset:
    """Deterministic labelled recordings; written as signal files plus a manifest when ``out_dir`` is given."""
    if spec.classes < 2 or spec.samples_per_class < 1:
        raise ConfigError("need at least 2 classes and 1 sample per class")
    if spec.sample_rate <= 0:
        raise ConfigError("sample_rate must be positive")
    rng = np.random.default_rng(spec.seed)
    sigs = _signatures(spec, rng)
    lengths = spec.lengths()
    names = [f"class{c}" for c in range(spec.classes)]
    samples = []
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        (out / "signals").mkdir(parents=True, exist_ok=True)
    for c in range(spec.classes):
        for j in range(spec.samples_per_class):
            length = lengths[(c * spec.samples_per_class + j) % len(lengths)]
            signal = RawSignal(synth_signal(sigs[c], spec, length, rng), spec.sample_rate)
            sid = f"{names[c]}_{j:04d}"
            if out is not None:
                rel = f"signals/{sid}.sig"
                write_signal(out / rel, signal)
                samples.append(Sample(sid, c, rel))
            else:
                samples.append(Sample(sid, c, signal=signal))
    note = (f"synthetic: classes={spec.classes} per_class={spec.samples_per_class} "
            f"lengths={lengths} fs={spec.sample_rate} f0={spec.base_freq} snr_db={spec.noise_snr_db} seed={spec.seed}")
    manifest = Manifest(names, samples, spec.bins, note, str(out) if out is not None else None)
    if out is not None:
        save_manifest(manifest, out / "manifest.txt")
    return SynthDataset(manifest, spec, sigs)


def nearest_centroid_accuracy(x_train, y_train, x_test, y_test) -> float:
    """Self-test of dataset separability with a nearest-centroid rule on normalized spectra."""
    def unit(a):
        n = np.linalg.norm(a, axis=1, keepdims=True)
        return a / np.where(n > 0, n, 1)

    xt, xs = unit(np.asarray(x_train)), unit(np.asarray(x_test))
    classes = np.unique(y_train)
    centroids = np.vstack([xt[y_train == c].mean(axis=0) for c in classes])
    d = ((xs[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    return float(np.mean(classes[d.argmin(axis=1)] == y_test))
