"""Command-line entry point.

Values resolve as defaults < ``--config`` file (``key = value`` lines) <
flags. Each invocation writes ``stamp.txt`` into the output directory; it is
itself a valid config file, so ``pnnkit <cmd> --config stamp.txt ...``
replays the run.
"""
from __future__ import annotations

import argparse
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from pnnkit import __version__, data, experiments, kernels, pnn, spectral, vdnn
from pnnkit.errors import NumericError, PNNError
from pnnkit.metrics import evaluate
from pnnkit.training import TrainConfig, train

SUBCOMMANDS = ("preprocess", "synth", "split", "train", "eval", "sweep", "ablate", "mask", "paramcount")

DEFAULTS = {
    "seed": 0,
    "k": spectral.DEFAULT_BINS,
    "hd": 100,
    "depth": 6,
    "classes": 7,
    "ratio": "0.75",
    "runs": 5,
    "epochs": 30,
    "batch": 8,
    "lr": 1e-4,
    "wd": 1e-4,
    "mask_size": 500,
    "arch": "pnn",
    "variant": "full",
    "standardize": "on",
    "unit_max": False,
    "samples_per_class": 75,
    "signal_length": "4096",
    "sample_rate": 12000.0,
    "base_freq": 29.5,
    "snr_db": 15.0,
}

_CHOICES = {
    "arch": ("pnn", "vdnn"),
    "variant": pnn.WIRINGS,
    "standardize": ("on", "off"),
}


# depth and hd accept comma lists for the depth/width sweep; other commands use the first entry
_LISTABLE = ("depth", "hd")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _coerce(key, value):
    default = DEFAULTS[key]
    text = str(value).strip()
    if key in _LISTABLE and "," in text:
        try:
            [int(t) for t in text.split(",")]
        except ValueError as exc:
            raise UsageError(f"invalid value for {key}: {text!r}") from exc
        return text
    try:
        if isinstance(default, bool):
            if text.lower() in ("1", "true", "yes", "on"):
                return True
            if text.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
    except ValueError as exc:
        raise UsageError(f"invalid value for {key}: {text!r}") from exc
    if key in _CHOICES and text not in _CHOICES[key]:
        raise UsageError(f"invalid value for {key}: {text!r} (choose from {', '.join(_CHOICES[key])})")
    return text


def read_config(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"config file not found: {p}")
    values = {}
    for lineno, line in enumerate(p.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{p}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise UsageError(f"{p}:{lineno}: unknown config key {key!r}")
        values[key] = _coerce(key, value)
    return values


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config")
    common.add_argument("--out")
    for flag in ("seed", "k", "hd", "depth", "classes", "ratio", "runs", "epochs",
                 "batch", "lr", "wd", "mask-size", "arch", "variant", "standardize"):
        kwargs = {"choices": _CHOICES[flag]} if flag in _CHOICES else {}
        common.add_argument(f"--{flag}", dest=flag.replace("-", "_"), default=None, **kwargs)

    parser = _Parser(prog="pnnkit", description="Progressive neural network fault classification toolkit.")
    parser.add_argument("--version", action="version", version=f"pnnkit {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("preprocess", parents=[common], help="signal files -> K-bin spectrum files")
    p.add_argument("inputs", nargs="+")
    sub.add_parser("synth", parents=[common], help="generate a synthetic fault dataset")
    p = sub.add_parser("split", parents=[common], help="stratified train/test split of a manifest")
    p.add_argument("manifest")
    p = sub.add_parser("train", parents=[common], help="train a model on a manifest")
    p.add_argument("manifest")
    p = sub.add_parser("eval", parents=[common], help="evaluate a saved model on a manifest")
    p.add_argument("model")
    p.add_argument("manifest")
    p = sub.add_parser("sweep", parents=[common], help="division-ratio sweep with R runs per ratio")
    p.add_argument("manifest")
    p = sub.add_parser("ablate", parents=[common], help="feedforward, standardization or depth ablation")
    p.add_argument("study", choices=("feedforward", "standardization", "depth"))
    p.add_argument("manifest")
    p = sub.add_parser("mask", parents=[common], help="spectral masking attribution, one report per class")
    p.add_argument("model")
    p.add_argument("manifest")
    sub.add_parser("paramcount", parents=[common], help="exact parameter counts for an architecture")
    return parser


def resolve(args) -> dict:
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(read_config(args.config))
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = _coerce(key, value)
    return cfg


def _floats(text) -> list[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _first(cfg, key) -> int:
    return _ints(cfg[key])[0]


def write_stamp(out: Path, command: str, positionals: list[str], cfg: dict) -> None:
    lines = [
        f"# pnnkit {__version__} ({kernels.BACKEND} kernels)",
        f"# command = {command}",
        f"# arguments = {' '.join(positionals)}",
        f"# split_seed = {experiments.split_seed(cfg['seed'], 0)}",
        f"# init_seed = {experiments.init_seed(cfg['seed'], 0)}",
    ]
    lines += [f"{k} = {str(v).lower() if isinstance(v, bool) else v}" for k, v in cfg.items()]
    (out / "stamp.txt").write_text("\n".join(lines) + "\n")


def _train_config(cfg) -> TrainConfig:
    return TrainConfig(learning_rate=cfg["lr"], weight_decay=cfg["wd"], batch_size=cfg["batch"],
                       epochs=cfg["epochs"], seed=experiments.init_seed(cfg["seed"], 0))


def _arch(cfg) -> experiments.ArchSpec:
    return experiments.ArchSpec(cfg["arch"], _first(cfg, "hd"), _first(cfg, "depth"), cfg["variant"])


def _load_any_model(path):
    head = Path(path).read_bytes()[:8]
    if head == vdnn.MODEL_MAGIC:
        return vdnn.load_model(path)
    return pnn.load_model(path)


def _spectra(manifest_path, cfg, standardize=None):
    manifest = data.load_manifest(manifest_path)
    mode = standardize or cfg["standardize"]
    return manifest, experiments.LabeledSpectra.from_manifest(
        manifest, cfg["k"], standardize=(mode == "on"), unit_max=cfg["unit_max"])


def _plan(cfg, spectra):
    return experiments.ExperimentPlan(spectra, _arch(cfg), tuple(_floats(cfg["ratio"])), cfg["runs"],
                                      cfg["seed"], _train_config(cfg))


def cmd_preprocess(args, cfg, out):
    (out / "spectra").mkdir(parents=True, exist_ok=True)
    for path in args.inputs:
        signal = spectral.read_signal(path)
        spec = spectral.preprocess(signal, cfg["k"], unit_max=cfg["unit_max"])
        target = out / "spectra" / (Path(path).stem + ".spc")
        spectral.write_spectrum(target, spec)
        print(target)


def cmd_synth(args, cfg, out):
    lengths = tuple(_ints(cfg["signal_length"]))
    spec = data.SynthSpec(classes=cfg["classes"], samples_per_class=cfg["samples_per_class"],
                          signal_length=lengths if len(lengths) > 1 else lengths[0],
                          sample_rate=cfg["sample_rate"], base_freq=cfg["base_freq"],
                          noise_snr_db=cfg["snr_db"], seed=cfg["seed"], bins=cfg["k"])
    ds = data.synth_generate(spec, out)
    with open(out / "bands.txt", "w") as fh:
        fh.write("class\tcenter_hz\twidth_hz\tlo_bin\thi_bin\n")
        for c, sig in enumerate(ds.signatures):
            lo, hi = ds.band_bins(c, cfg["k"])
            fh.write(f"{c}\t{sig.band_center_hz!r}\t{sig.band_width_hz!r}\t{lo}\t{hi}\n")
    print(out / "manifest.txt")


def cmd_split(args, cfg, out):
    manifest = data.load_manifest(args.manifest)
    ratio = _floats(cfg["ratio"])[0]
    train_m, test_m = data.split(manifest, data.SplitSpec(ratio, experiments.split_seed(cfg["seed"], 0)))
    data.save_manifest(train_m, out / "train.txt")
    data.save_manifest(test_m, out / "test.txt")
    print(f"train={len(train_m.samples)} test={len(test_m.samples)}")


def cmd_train(args, cfg, out):
    manifest, spectra = _spectra(args.manifest, cfg)
    manifest.require_all_classes()
    model = _arch(cfg).build(spectra.k, spectra.num_classes, experiments.init_seed(cfg["seed"], 0))
    tcfg = _train_config(cfg)
    tcfg = replace(tcfg, batch_size=min(tcfg.batch_size, len(spectra.y)))
    model, history = train(model, spectra.x, spectra.y, tcfg)
    (pnn if cfg["arch"] == "pnn" else vdnn).save_model(model, out / "model.bin")
    (out / "history.txt").write_text(history.to_text())
    print(out / "model.bin")


def cmd_eval(args, cfg, out):
    model = _load_any_model(args.model)
    manifest, spectra = _spectra(args.manifest, {**cfg, "k": model.input_width})
    report = evaluate(model.predict_proba(spectra.x), spectra.y, model.num_classes)
    text = report.to_text(manifest.class_names)
    (out / "report.txt").write_text(text)
    print(text, end="")


def cmd_sweep(args, cfg, out):
    _, spectra = _spectra(args.manifest, cfg)
    cells = experiments.ratio_sweep(_plan(cfg, spectra))
    table = experiments.format_ratio_table(cells)
    (out / "sweep.txt").write_text(table)
    (out / "sweep_runs.txt").write_text("".join(c.dump() for c in cells))
    print(table, end="")


def cmd_ablate(args, cfg, out):
    if args.study == "standardization":
        manifest = data.load_manifest(args.manifest)
        spectra = experiments.LabeledSpectra.from_manifest(manifest, cfg["k"], unit_max=cfg["unit_max"])
        plan = _plan(cfg, spectra)
        cells = [experiments.ablation_standardization(m, manifest, plan, cfg["k"], cfg["unit_max"])
                 for m in ("on", "off")]
        table = experiments.format_ratio_table(cells)
    elif args.study == "feedforward":
        _, spectra = _spectra(args.manifest, cfg)
        plan = _plan(cfg, spectra)
        cells = [experiments.ablation_feedforward(v, plan) for v in experiments.FEEDFORWARD_VARIANTS]
        table = experiments.format_ratio_table(cells)
    else:
        _, spectra = _spectra(args.manifest, cfg)
        rows = experiments.depth_hidden_sweep(_plan(cfg, spectra), _ints(cfg["depth"]), _ints(cfg["hd"]))
        cells = [r.cell for r in rows]
        table = experiments.format_sweep_table(rows)
    (out / f"ablate_{args.study}.txt").write_text(table)
    (out / f"ablate_{args.study}_runs.txt").write_text("".join(c.dump() for c in cells))
    print(table, end="")


def cmd_mask(args, cfg, out):
    model = _load_any_model(args.model)
    manifest, spectra = _spectra(args.manifest, {**cfg, "k": model.input_width})
    for c, name in enumerate(manifest.class_names):
        idx = np.flatnonzero(spectra.y == c)
        if idx.size == 0:
            continue
        report = experiments.mask_sweep(model, spectra.x[idx[0]], c, cfg["mask_size"])
        (out / f"mask_{name}.txt").write_text(report.to_text())
        lo, hi = report.windows[report.deficit_window]
        print(f"{name}\tdeficit_window={report.deficit_window}\tbins={lo}:{hi}")


def cmd_paramcount(args, cfg, out):
    if cfg["arch"] == "pnn":
        counts = pnn.param_count(pnn.PNNConfig(cfg["k"], _first(cfg, "hd"), _first(cfg, "depth"), cfg["classes"],
                                               wiring=cfg["variant"]))
    else:
        counts = vdnn.vdnn_param_count(vdnn.VDNNConfig(cfg["k"], _first(cfg, "depth"), cfg["classes"]))
    text = "".join(f"{k}={v}\n" for k, v in counts.items())
    (out / "paramcount.txt").write_text(text)
    print(text, end="")


COMMANDS = {name: globals()[f"cmd_{name}"] for name in SUBCOMMANDS}


def run(argv=None) -> int:
    """Execute one subcommand; returns 0 on success, 1 on validation errors, 2 on runtime failures."""
    try:
        args = build_parser().parse_args(argv)
        cfg = resolve(args)
        out = Path(args.out or os.environ.get("PNNKIT_OUT") or "pnnkit_out")
        out.mkdir(parents=True, exist_ok=True)
        positionals = [str(getattr(args, n)) for n in ("study", "model", "manifest") if hasattr(args, n)]
        positionals += list(getattr(args, "inputs", []))
        write_stamp(out, args.command, positionals, cfg)
        COMMANDS[args.command](args, cfg, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 2
    except (PNNError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
