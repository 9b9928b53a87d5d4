"""Desk-scale experiment harness: division-ratio sweeps, ablations and masking attribution.

Run ``r`` of any cell splits with seed ``base_seed + r`` and initialises
(and shuffles) with seed ``base_seed + 1_000_000 + r``, so split noise and
initialisation noise are independent and every table replays exactly.
"""
from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from pnnkit import pnn, vdnn
from pnnkit.data import Manifest, SplitSpec, features, split_indices
from pnnkit.errors import ConfigError, InvalidInputError
from pnnkit.metrics import EvalReport, RunStats, evaluate, pooled_sd, run_stats
from pnnkit.network import DenseNet
from pnnkit.training import TrainConfig, TrainHistory, train

INIT_SEED_OFFSET = 1_000_000


def split_seed(base_seed: int, run: int) -> int:
    return base_seed + run


def init_seed(base_seed: int, run: int) -> int:
    return base_seed + INIT_SEED_OFFSET + run


@dataclass(frozen=True)
class ArchSpec:
    family: str = "pnn"  # pnn | vdnn
    hidden: int = 32
    depth: int = 6
    wiring: str = "full"
    shrink: float = 0.5
    min_width: int = 1

    def __post_init__(self):
        if self.family not in ("pnn", "vdnn"):
            raise ConfigError(f"unknown model family {self.family!r}")

    def label(self) -> str:
        if self.family == "vdnn":
            return f"VDNN{self.depth}"
        suffix = "" if self.wiring == "full" else f"[{self.wiring}]"
        return f"PNN{self.depth}(H_d={self.hidden}){suffix}"

    def build(self, k: int, classes: int, seed: int) -> DenseNet:
        if self.family == "pnn":
            return pnn.init(pnn.PNNConfig(k, self.hidden, self.depth, classes, wiring=self.wiring), seed)
        return vdnn.vdnn_init(vdnn.VDNNConfig(k, self.depth, classes, self.shrink, self.min_width), seed)


def serialized_size(model: DenseNet) -> int:
    if isinstance(model, pnn.PNNModel):
        return len(pnn.to_bytes(model))
    return len(vdnn.to_bytes(model))


def hidden_weight_count(model: DenseNet) -> int:
    return sum(lin.weights.size for lin, _ in model.hidden)


@dataclass
class LabeledSpectra:
    x: np.ndarray
    y: np.ndarray
    class_names: list[str]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def k(self) -> int:
        return self.x.shape[1]

    @classmethod
    def from_manifest(cls, manifest: Manifest, k=None, standardize=True, unit_max=False):
        x, y = features(manifest, k, standardize, unit_max)
        return cls(x, y, list(manifest.class_names))


@dataclass
class RunResult:
    run: int
    split_seed: int
    init_seed: int
    report: EvalReport
    history: TrainHistory
    train_seconds: float
    model_bytes: int
    hidden_weights: int
    model: DenseNet | None = field(default=None, repr=False)
    test_index: np.ndarray | None = field(default=None, repr=False)


@dataclass
class CellResult:
    label: str
    ratio: float
    runs: list[RunResult]

    @property
    def stats(self) -> RunStats:
        return run_stats([r.report for r in self.runs])

    def accuracies(self) -> list[float]:
        return [r.report.accuracy for r in self.runs]

    def dump(self) -> str:
        """Machine-readable key-value lines, one block per run."""
        lines = []
        for r in self.runs:
            prefix = f"{self.label}|ratio={self.ratio}|run={r.run}"
            lines.append(f"{prefix}|split_seed = {r.split_seed}")
            lines.append(f"{prefix}|init_seed = {r.init_seed}")
            for key, value in r.report.metrics().items():
                lines.append(f"{prefix}|{key} = {value!r}")
            lines.append(f"{prefix}|model_bytes = {r.model_bytes}")
        return "\n".join(lines) + "\n"


def run_once(data: LabeledSpectra, ratio: float, arch: ArchSpec, train_config: TrainConfig,
             base_seed: int, run: int, keep_model: bool = False) -> RunResult:
    s_seed, i_seed = split_seed(base_seed, run), init_seed(base_seed, run)
    tr, te = split_indices(data.y, data.num_classes, SplitSpec(ratio, s_seed))
    if te.size == 0:
        raise InvalidInputError(f"ratio {ratio} leaves an empty test set")
    model = arch.build(data.k, data.num_classes, i_seed)
    cfg = replace(train_config, seed=i_seed, batch_size=min(train_config.batch_size, tr.size))
    start = time.perf_counter()
    model, history = train(model, data.x[tr], data.y[tr], cfg)
    elapsed = time.perf_counter() - start
    report = evaluate(model.predict_proba(data.x[te]), data.y[te], data.num_classes)
    return RunResult(run, s_seed, i_seed, report, history, elapsed, serialized_size(model),
                     hidden_weight_count(model), model if keep_model else None, te)


def run_cell(data: LabeledSpectra, ratio: float, arch: ArchSpec, train_config: TrainConfig,
             runs: int, base_seed: int, workers: int = 1, keep_models: bool = False,
             label: str | None = None) -> CellResult:
    if runs < 1:
        raise ConfigError("runs must be >= 1")

    def job(r):
        return run_once(data, ratio, arch, train_config, base_seed, r, keep_models)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = dict(zip(range(runs), pool.map(job, range(runs))))
    else:
        results = {r: job(r) for r in range(runs)}
    return CellResult(label or arch.label(), ratio, [results[r] for r in range(runs)])


@dataclass
class ExperimentPlan:
    data: LabeledSpectra
    arch: ArchSpec = field(default_factory=ArchSpec)
    ratios: tuple[float, ...] = (0.75,)
    runs: int = 5
    base_seed: int = 0
    train: TrainConfig = field(default_factory=TrainConfig)
    workers: int = 1

    def __post_init__(self):
        if not self.ratios:
            raise ConfigError("empty ratio grid")
        if any(not 0 < r < 1 for r in self.ratios):
            raise ConfigError(f"ratios must lie in (0, 1), got {self.ratios}")
        if self.runs < 1:
            raise ConfigError("runs must be >= 1")


def ratio_sweep(plan: ExperimentPlan) -> list[CellResult]:
    return [run_cell(plan.data, r, plan.arch, plan.train, plan.runs, plan.base_seed, plan.workers)
            for r in plan.ratios]


FEEDFORWARD_VARIANTS = pnn.WIRINGS


def ablation_feedforward(variant: str, plan: ExperimentPlan) -> CellResult:
    """Train the wiring ``variant`` at the plan's first ratio.

    full: X ++ every earlier output; no_zh: X ++ previous output; no_x: every
    earlier output without X (layer 1 still reads X); neither: plain chain.
    """
    if variant not in FEEDFORWARD_VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {FEEDFORWARD_VARIANTS}")
    arch = replace(plan.arch, family="pnn", wiring=variant)
    return run_cell(plan.data, plan.ratios[0], arch, plan.train, plan.runs, plan.base_seed,
                    plan.workers, label=variant)


def ablation_standardization(mode: str, manifest: Manifest, plan: ExperimentPlan, k: int | None = None,
                             unit_max: bool = False) -> CellResult:
    """Train with max-of-bin standardization (``on``) or a plain K-point DFT (``off``)."""
    if mode not in ("on", "off"):
        raise ConfigError(f"standardization mode must be 'on' or 'off', got {mode!r}")
    k = k or plan.data.k
    data = LabeledSpectra.from_manifest(manifest, k, standardize=(mode == "on"), unit_max=unit_max)
    return run_cell(data, plan.ratios[0], plan.arch, plan.train, plan.runs, plan.base_seed,
                    plan.workers, label=f"standardize={mode}")


@dataclass
class SweepRow:
    depth: int
    hidden: int
    cell: CellResult

    @property
    def mean_seconds(self) -> float:
        return float(np.mean([r.train_seconds for r in self.cell.runs]))

    @property
    def model_bytes(self) -> int:
        return self.cell.runs[0].model_bytes

    @property
    def hidden_weights(self) -> int:
        return self.cell.runs[0].hidden_weights


def depth_hidden_sweep(plan: ExperimentPlan, depths=(3, 4, 5, 6), hiddens=(10, 50, 100)) -> list[SweepRow]:
    if not depths or not hiddens:
        raise ConfigError("empty depth or hidden-size grid")
    rows = []
    for d in depths:
        for h in hiddens:
            arch = replace(plan.arch, family="pnn", depth=d, hidden=h)
            cell = run_cell(plan.data, plan.ratios[0], arch, plan.train, plan.runs, plan.base_seed, plan.workers)
            rows.append(SweepRow(d, h, cell))
    return rows


# -- masking attribution --------------------------------------------------------

@dataclass
class MaskReport:
    mask_size: int
    windows: list[tuple[int, int]]
    true_class: int
    base_scores: np.ndarray  # [C]
    deltas: np.ndarray  # [n_windows x C], unmasked score minus masked score

    @property
    def class_deltas(self) -> np.ndarray:
        return self.deltas[:, self.true_class]

    @property
    def deficit_window(self) -> int:
        """Index of the window whose removal lowers the true-class score the most."""
        return int(np.argmax(self.class_deltas))

    def to_text(self) -> str:
        lines = [f"mask_size = {self.mask_size}", f"true_class = {self.true_class}",
                 f"deficit_window = {self.deficit_window}",
                 f"deficit_bins = {self.windows[self.deficit_window][0]}:{self.windows[self.deficit_window][1]}",
                 "", "window\tlo\thi\t" + "\t".join(f"delta_c{c}" for c in range(self.deltas.shape[1]))]
        for w, (lo, hi) in enumerate(self.windows):
            lines.append(f"{w}\t{lo}\t{hi}\t" + "\t".join(repr(float(v)) for v in self.deltas[w]))
        return "\n".join(lines) + "\n"


def mask_windows(k: int, mask_size: int) -> list[tuple[int, int]]:
    return [(lo, min(lo + mask_size, k)) for lo in range(0, k, mask_size)]


def mask_sweep(model: DenseNet, spectrum, true_class: int, mask_size: int) -> MaskReport:
    """Zero each ``mask_size`` window of the input in turn and record the softmax-score drop."""
    x = np.asarray(getattr(spectrum, "bins", spectrum), dtype=model.dtype).reshape(-1)
    k = x.shape[0]
    if not 1 <= mask_size <= k:
        raise ConfigError(f"mask_size must lie in [1, {k}], got {mask_size}")
    if not 0 <= true_class < model.num_classes:
        raise InvalidInputError(f"true_class must lie in [0, {model.num_classes})")
    windows = mask_windows(k, mask_size)
    batch = np.repeat(x[None, :], len(windows) + 1, axis=0)
    for i, (lo, hi) in enumerate(windows, start=1):
        batch[i, lo:hi] = 0.0
    probs = model.predict_proba(batch)
    return MaskReport(mask_size, windows, true_class, probs[0], probs[0][None, :] - probs[1:])


# -- text tables ----------------------------------------------------------------

def format_ratio_table(cells: list[CellResult]) -> str:
    header = "ratio\tlabel\truns\taccuracy\tmacro_f1\tmicro_f1\tauroc_ovr_macro"
    lines = [header]
    for cell in cells:
        st = cell.stats
        ratio = f"{round(cell.ratio * 100)}-{round((1 - cell.ratio) * 100)}%"
        lines.append("\t".join([ratio, cell.label, str(st.runs)] +
                               [st.row(k) for k in ("accuracy", "macro_f1", "micro_f1", "auroc_ovr_macro")]))
    return "\n".join(lines) + "\n"


def format_sweep_table(rows: list[SweepRow]) -> str:
    lines = ["depth\thidden\taccuracy\ttrain_seconds\tmodel_bytes\thidden_weights"]
    for row in rows:
        lines.append(f"{row.depth}\t{row.hidden}\t{row.cell.stats.row('accuracy')}\t"
                     f"{row.mean_seconds:.3f}\t{row.model_bytes}\t{row.hidden_weights}")
    return "\n".join(lines) + "\n"


def margin_in_sd(a: CellResult, b: CellResult) -> tuple[float, float]:
    """Mean-accuracy margin of ``a`` over ``b`` and the pooled SD of the two cells."""
    sa, sb = a.stats, b.stats
    return sa.mean["accuracy"] - sb.mean["accuracy"], pooled_sd(sa, sb)
