import numpy as np
import pytest

from reprime.datasets import SyntheticSpec, generate_synthetic
from reprime.model import ModelSpec, build_model
from reprime.probe import (
    AccuracyReport,
    ProbeConfig,
    compare_runs,
    comparison_to_csv,
    evaluate,
    load_report,
)


@pytest.fixture(scope="module")
def dataset():
    return generate_synthetic(
        SyntheticSpec(n_classes=2, n_images=60, image_size=16, seed=4)
    )


@pytest.fixture(scope="module")
def model():
    return build_model(ModelSpec(blocks=(4, 8)), 0)


class TestEvaluate:
    def test_untrained_probe_is_chance(self, dataset, model):
        cfg = ProbeConfig(mode="linear", epochs=0, seed=0)
        report = evaluate(model, dataset, cfg)
        assert abs(report.mean - 0.5) <= 0.25  # 2 balanced classes, random head

    def test_full_fraction_single_run(self, dataset, model):
        cfg = ProbeConfig(mode="linear", epochs=1, fraction=1.0, n_runs=3, seed=0)
        report = evaluate(model, dataset, cfg)
        assert len(report.runs) == 1

    def test_low_fraction_three_runs(self, dataset, model):
        cfg = ProbeConfig(mode="linear", epochs=1, fraction=0.5, seed=0)
        report = evaluate(model, dataset, cfg)
        assert len(report.runs) == 3
        assert report.mean == pytest.approx(float(np.mean(report.runs)))

    def test_accuracy_in_unit_interval(self, dataset, model):
        cfg = ProbeConfig(mode="linear", epochs=2, seed=0)
        report = evaluate(model, dataset, cfg)
        assert all(0.0 <= a <= 1.0 for a in report.runs)

    def test_deterministic(self, dataset, model):
        cfg = ProbeConfig(mode="finetune", epochs=1, fraction=0.5, seed=7)
        a = evaluate(model, dataset, cfg)
        b = evaluate(model, dataset, cfg)
        assert a.runs == b.runs

    def test_linear_probe_learns_easy_classes(self, dataset, model):
        cfg = ProbeConfig(mode="linear", epochs=40, seed=0)
        report = evaluate(model, dataset, cfg)
        assert report.mean > 0.6  # random features + color classes

    def test_finetune_learns(self, dataset, model):
        cfg = ProbeConfig(mode="finetune", epochs=10, seed=0)
        report = evaluate(model, dataset, cfg)
        assert report.mean > 0.6

    def test_rejects_bad_config(self):
        with pytest.raises(ValueError):
            ProbeConfig(mode="knn")
        with pytest.raises(ValueError):
            ProbeConfig(fraction=0.0)
        with pytest.raises(ValueError):
            ProbeConfig(n_runs=0)


class TestCompare:
    @staticmethod
    def report(mean, label, dataset="d1"):
        return AccuracyReport(
            dataset=dataset, mode="finetune", fraction=1.0,
            runs=[mean], mean=mean, label=label,
        )

    def test_self_comparison_zero_delta(self):
        r = self.report(0.8, "base")
        rows = compare_runs([r, r])
        assert rows[0]["delta"] == 0.0
        assert rows[1]["delta"] == 0.0

    def test_improvement_positive(self):
        rows = compare_runs([self.report(0.643, "baseline"), self.report(0.676, "copy")])
        assert rows[1]["delta"] == pytest.approx(0.033, abs=1e-9)

    def test_regression_negative(self):
        rows = compare_runs([self.report(0.9, "a"), self.report(0.85, "b")])
        assert rows[1]["delta"] == pytest.approx(-0.05)

    def test_mismatched_datasets_rejected(self):
        with pytest.raises(ValueError):
            compare_runs([self.report(0.8, "a", "d1"), self.report(0.7, "b", "d2")])

    def test_needs_two_reports(self):
        with pytest.raises(ValueError):
            compare_runs([self.report(0.8, "a")])

    def test_csv_layout(self):
        rows = compare_runs([self.report(0.5, "a"), self.report(0.75, "b")])
        text = comparison_to_csv(rows)
        lines = text.splitlines()
        assert lines[0] == "label,mode,fraction,accuracy,delta"
        assert lines[2].endswith("+0.2500")

    def test_report_roundtrip(self, tmp_path):
        r = self.report(0.8, "base")
        path = tmp_path / "r.json"
        r.write(path)
        back = load_report(path)
        assert back.mean == r.mean and back.label == r.label

    def test_report_csv_schema(self, tmp_path):
        r = AccuracyReport(
            dataset="d1", mode="finetune", fraction=0.1,
            runs=[0.5, 0.75, 0.625], mean=0.625, label="p2x",
            method="simclr", init="ckpt.rpa", surgery="paper",
        )
        path = tmp_path / "r.json"
        r.write(path)
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "method,init,surgery,fraction,run,accuracy"
        assert lines[1] == "simclr,ckpt.rpa,paper,0.1,0,0.500000"
        assert len(lines) == 4

    def test_provenance_labels_carried(self, dataset, model):
        cfg = ProbeConfig(mode="linear", epochs=0, seed=0)
        report = evaluate(model, dataset, cfg, method="byol", init="random",
                          surgery="off")
        assert (report.method, report.init, report.surgery) == ("byol", "random", "off")

    def test_negative_labels_rejected(self, model):
        from reprime.datasets import Dataset

        images = np.zeros((8, 3, 16, 16), np.float32)
        labels = np.array([0, 1, 0, 1, 0, 1, 0, -1])
        ds = Dataset(images, labels)
        with pytest.raises(ValueError):
            evaluate(model, ds, ProbeConfig(mode="linear", epochs=0))

    def test_gapped_labels_rejected(self, model):
        from reprime.datasets import Dataset

        images = np.zeros((8, 3, 16, 16), np.float32)
        labels = np.array([0, 3, 0, 3, 0, 3, 0, 3])  # classes 1-2 missing
        ds = Dataset(images, labels)
        with pytest.raises(ValueError):
            evaluate(model, ds, ProbeConfig(mode="linear", epochs=0))
