import numpy as np
import pytest

from pnnkit import data, experiments, pnn, spectral
from pnnkit.errors import ConfigError
from pnnkit.experiments import ArchSpec, ExperimentPlan, LabeledSpectra
from pnnkit.training import TrainConfig

K = 128


@pytest.fixture(scope="module")
def synth():
    spec = data.SynthSpec(classes=3, samples_per_class=12, signal_length=(512, 700), seed=2, bins=K)
    return data.synth_generate(spec)


@pytest.fixture(scope="module")
def spectra(synth):
    return LabeledSpectra.from_manifest(synth.manifest, K, unit_max=True)


def plan(spectra, **kw):
    base = dict(arch=ArchSpec(hidden=6, depth=3), ratios=(0.5,), runs=2, base_seed=4,
                train=TrainConfig(epochs=3, learning_rate=1e-3))
    base.update(kw)
    return ExperimentPlan(spectra, **base)


def test_seed_derivation():
    assert experiments.split_seed(10, 3) == 13
    assert experiments.init_seed(10, 3) == 1_000_013


class TestSweeps:
    def test_table_replays_exactly(self, spectra):
        a = experiments.format_ratio_table(experiments.ratio_sweep(plan(spectra, ratios=(0.25, 0.75))))
        b = experiments.format_ratio_table(experiments.ratio_sweep(plan(spectra, ratios=(0.25, 0.75))))
        assert a == b
        assert a.splitlines()[1].startswith("25-75%\tPNN3(H_d=6)\t2\t")

    def test_run_seeds_recorded(self, spectra):
        cell = experiments.ratio_sweep(plan(spectra))[0]
        assert [(r.split_seed, r.init_seed) for r in cell.runs] == [(4, 1_000_004), (5, 1_000_005)]
        assert "|split_seed = 4" in cell.dump()

    def test_single_run_omits_sd(self, spectra):
        cell = experiments.ratio_sweep(plan(spectra, runs=1))[0]
        assert cell.stats.sd is None
        assert "±" not in experiments.format_ratio_table([cell])

    def test_workers_do_not_change_results(self, spectra):
        serial = experiments.ratio_sweep(plan(spectra))[0]
        threaded = experiments.ratio_sweep(plan(spectra, workers=2))[0]
        assert serial.dump() == threaded.dump()

    def test_plan_validation(self, spectra):
        with pytest.raises(ConfigError):
            plan(spectra, ratios=())
        with pytest.raises(ConfigError):
            plan(spectra, ratios=(1.2,))
        with pytest.raises(ConfigError):
            plan(spectra, runs=0)

    def test_vdnn_family(self, spectra):
        cell = experiments.ratio_sweep(plan(spectra, arch=ArchSpec(family="vdnn", depth=3), runs=1))[0]
        assert cell.label == "VDNN3"


class TestFeedforward:
    def test_neither_widths(self):
        cfg = pnn.PNNConfig(k=20, hidden=5, depth=4, classes=3, wiring="neither")
        assert pnn.layer_widths(cfg) == [20, 5, 5, 5, 5]

    def test_other_widths(self):
        assert pnn.layer_widths(pnn.PNNConfig(k=20, hidden=5, depth=3, wiring="no_zh")) == [20, 25, 25, 25]
        assert pnn.layer_widths(pnn.PNNConfig(k=20, hidden=5, depth=3, wiring="no_x")) == [20, 5, 10, 15]
        assert pnn.layer_widths(pnn.PNNConfig(k=20, hidden=5, depth=3, wiring="full")) == [20, 25, 30, 35]

    def test_full_variant_is_pnn(self, spectra):
        p = plan(spectra, runs=1)
        cell = experiments.ablation_feedforward("full", p)
        direct = experiments.run_cell(spectra, 0.5, ArchSpec(hidden=6, depth=3), p.train, 1, 4, label="full")
        assert cell.dump() == direct.dump()
        a = ArchSpec(hidden=6, depth=3, wiring="full").build(K, 3, 7)
        b = pnn.init(pnn.PNNConfig(K, 6, 3, 3), 7)
        x = spectra.x[:5]
        np.testing.assert_array_equal(a.forward(x, "train")[0], b.forward(x, "train")[0])

    def test_all_variants_run(self, spectra):
        for v in experiments.FEEDFORWARD_VARIANTS:
            cell = experiments.ablation_feedforward(v, plan(spectra, runs=1))
            assert cell.label == v
        with pytest.raises(ConfigError):
            experiments.ablation_feedforward("skip", plan(spectra))


class TestStandardization:
    def test_on_mode_equals_preprocess(self, synth):
        x, _ = data.features(synth.manifest, K)
        for row, s in zip(x, synth.manifest.samples):
            np.testing.assert_array_equal(row, spectral.preprocess(s.signal, K).bins)

    def test_both_modes_run(self, synth, spectra):
        p = plan(spectra, runs=1)
        for mode in ("on", "off"):
            cell = experiments.ablation_standardization(mode, synth.manifest, p, K)
            assert cell.label == f"standardize={mode}"
            assert 0 <= cell.stats.mean["accuracy"] <= 1

    def test_equal_length_dataset(self):
        ds = data.synth_generate(data.SynthSpec(classes=2, samples_per_class=6, signal_length=400, bins=64))
        spec64 = LabeledSpectra.from_manifest(ds.manifest, 64)
        p = plan(spec64, runs=1)
        on = experiments.ablation_standardization("on", ds.manifest, p, 64)
        off = experiments.ablation_standardization("off", ds.manifest, p, 64)
        assert on.runs[0].report.confusion.sum() == off.runs[0].report.confusion.sum()

    def test_bad_mode(self, synth, spectra):
        with pytest.raises(ConfigError):
            experiments.ablation_standardization("maybe", synth.manifest, plan(spectra))


class TestDepthHiddenSweep:
    def test_cells(self, spectra):
        rows = experiments.depth_hidden_sweep(plan(spectra, runs=1), depths=(2, 3), hiddens=(2, 5, 9))
        assert [(r.depth, r.hidden) for r in rows] == [(d, h) for d in (2, 3) for h in (2, 5, 9)]
        for d in (2, 3):
            sizes = [r.model_bytes for r in rows if r.depth == d]
            assert sizes == sorted(sizes) and len(set(sizes)) == 3
        for r in rows:
            expected = pnn.param_count(pnn.PNNConfig(K, r.hidden, r.depth, 3))["hidden_weights"]
            assert r.hidden_weights == expected
        table = experiments.format_sweep_table(rows)
        assert table.splitlines()[0] == "depth\thidden\taccuracy\ttrain_seconds\tmodel_bytes\thidden_weights"


class TestMask:
    def model(self):
        return pnn.init(pnn.PNNConfig(k=64, hidden=4, depth=2, classes=3), 1)

    @pytest.mark.parametrize("size,count", [(1, 64), (7, 10), (16, 4), (64, 1), (50, 2)])
    def test_window_count_and_tiling(self, size, count):
        windows = experiments.mask_windows(64, size)
        assert len(windows) == count == -(-64 // size)
        covered = [i for lo, hi in windows for i in range(lo, hi)]
        assert covered == list(range(64))

    def test_zero_window_is_noop(self):
        x = np.random.default_rng(0).random(64)
        x[:16] = 0
        report = experiments.mask_sweep(self.model(), x, 1, 16)
        np.testing.assert_array_equal(report.deltas[0], 0.0)
        assert np.any(report.deltas[1:] != 0)

    def test_full_mask_is_zero_input(self):
        model = self.model()
        x = np.random.default_rng(1).random(64)
        report = experiments.mask_sweep(model, x, 0, 64)
        masked = report.base_scores - report.deltas[0]
        np.testing.assert_allclose(masked, model.predict_proba(np.zeros((1, 64)))[0], atol=1e-15)

    def test_deltas_match_individual_forwards(self):
        model = self.model()
        x = np.random.default_rng(2).random(64)
        report = experiments.mask_sweep(model, x, 2, 20)
        for w, (lo, hi) in enumerate(report.windows):
            y = x.copy()
            y[lo:hi] = 0
            expected = model.predict_proba(x[None])[0] - model.predict_proba(y[None])[0]
            np.testing.assert_allclose(report.deltas[w], expected, atol=1e-14)
        assert report.deficit_window == int(np.argmax(report.deltas[:, 2]))
        assert "deficit_window = " in report.to_text()

    def test_validation(self):
        with pytest.raises(ConfigError):
            experiments.mask_sweep(self.model(), np.ones(64), 0, 0)
        with pytest.raises(ConfigError):
            experiments.mask_sweep(self.model(), np.ones(64), 0, 65)


def test_margin_in_sd(spectra):
    cells = experiments.ratio_sweep(plan(spectra, ratios=(0.25, 0.75)))
    margin, pooled = experiments.margin_in_sd(cells[1], cells[0])
    s1, s0 = cells[1].stats, cells[0].stats
    assert margin == pytest.approx(s1.mean["accuracy"] - s0.mean["accuracy"])
    assert pooled >= 0
