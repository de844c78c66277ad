from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from app.core import interface
from app.core.errors import ReproductionFailure, UnknownKindError
from app.core.interface import SUMMARY_COLUMNS, PathologyLab


@pytest.fixture
def lab(small_experiment):
    return PathologyLab(small_experiment, workers=1)


class TestGrid:
    @pytest.mark.parametrize("method, semi_supervised, count", [
        ("vae", False, 1), ("iwae", False, 3), ("lin", False, 4), ("vae", True, 12), ("iwae", True, 36),
    ])
    def test_cell_counts(self, method, semi_supervised, count):
        assert len(PathologyLab().grid_cells(method, semi_supervised)) == count

    def test_lin_cells_cover_both_grids(self):
        cells = PathologyLab().grid_cells("lin")
        assert {(c["lin_threshold"], c["lin_window"]) for c in cells} == {(0.05, 5), (0.05, 10), (0.1, 5), (0.1, 10)}


class TestSplits:
    def test_cached_per_version(self, lab):
        assert lab.splits("figure8", 0) is lab.splits("figure8", 0)
        assert not (lab.splits("figure8", 0)[1]["train"].x == lab.splits("figure8", 1)[1]["train"].x).all()

    def test_sizes_follow_the_config(self, lab):
        _, parts = lab.splits("figure8", 0)
        assert [len(parts[name]) for name in ("train", "validation", "test")] == [100, 40, 40]

    def test_embedded(self, lab):
        gt, parts = lab.splits("clusters", 0, embed=True)
        assert gt.data_dim == 5
        assert parts["train"].x.shape == (100, 5)

    def test_write_splits(self, lab, tmp_path):
        _, parts, paths = lab.write_splits("circle", 90, 0, str(tmp_path))
        assert [p.rsplit("/", 1)[-1] for p in paths] == ["circle_train.csv", "circle_validation.csv", "circle_test.csv"]


class TestReproduce:
    def test_unknown_table(self, lab):
        with pytest.raises(UnknownKindError):
            lab.reproduce("table9")

    def test_closed_form_table(self, lab, tmp_path):
        summary = lab.reproduce("aabi1")
        assert list(summary.columns) == SUMMARY_COLUMNS
        runs = pd.read_csv(tmp_path / "aabi1_runs.csv")
        gap = runs[(runs.method == "gt") & (runs.metric == "neg_elbo_gap")]["value"].item()
        assert gap == pytest.approx(0.532, abs=0.005)

    @pytest.fixture
    def stubbed_table1(self, lab, monkeypatch):
        def fake_sweep(kind, method, version=0, **kwargs):
            model = SimpleNamespace(method=method, latent_dim=1)
            test = SimpleNamespace(x=np.zeros((4, 2)))
            return SimpleNamespace(model=model, splits={"test": test}, config=SimpleNamespace(seed=version)), None

        knn = {"vae": (0.3, 0.5), "iwae": (0.1, 0.5), "lin": (0.2, 0.5)}
        monkeypatch.setattr(lab, "sweep", fake_sweep)
        monkeypatch.setattr(lab, "sample_statistic", lambda model, reference, seed: knn[model.method])
        return lab

    def test_table1_reports_prior_mismatch(self, stubbed_table1, monkeypatch, tmp_path):
        tv = {"vae": 0.4, "iwae": 0.1, "lin": 0.2}
        monkeypatch.setattr(interface, "prior_mismatch", lambda model, x: tv[model.method])
        stubbed_table1.reproduce("table1")
        runs = pd.read_csv(tmp_path / "table1_runs.csv")
        rows = runs[(runs.dataset == "clusters") & (runs.metric == "prior_tv")]
        assert dict(zip(rows.method, rows.value)) == tv

    def test_table1_fails_when_vae_matches_the_prior_better(self, stubbed_table1, monkeypatch):
        tv = {"vae": 0.1, "iwae": 0.4, "lin": 0.2}
        monkeypatch.setattr(interface, "prior_mismatch", lambda model, x: tv[model.method])
        with pytest.raises(ReproductionFailure, match="aggregated posterior"):
            stubbed_table1.reproduce("table1")


def test_evaluate_with_quadrature(lab, small_model):
    gt, parts = lab.splits("figure8", 0)
    report = lab.evaluate(small_model, gt, parts["test"], eta=0.05)
    for name in ("elbo", "iwae20", "knn_stat", "knn_p", "avg_mi", "collapse_kl", "mleo", "pmo", "pr_hi", "d_hi",
                 "prior_tv", "post_modes", "resid_norm_p", "gt_post_modes"):
        assert name in report.metrics
    assert 0.0 <= report["prior_tv"] <= 1.0
    assert 0.0 <= report["resid_norm_p"] <= 1.0
    assert report["gt_post_modes"] >= 1.0


def test_evaluate_labeled_model(lab, discrete_model):
    _, parts = lab.splits("ss_discrete", 0)
    report = lab.evaluate(discrete_model, None, parts["test"])
    assert 0.0 <= report["label_acc"] <= 1.0
    assert 0.0 <= report["label_entropy"] <= np.log(2) + 1e-12
    assert "prior_tv" not in report.metrics and "mleo" not in report.metrics


@pytest.mark.slow
def test_train_and_save(lab, tmp_path):
    result, report = lab.train_and_save(0)
    out = tmp_path / "figure8_vae_v0"
    assert (out / "model.pt").exists() and (out / "diagnostics.csv").exists()
    assert len(list(out.glob("history_r*.csv"))) == len(result.histories) == 2
    assert "elbo" in report.metrics
