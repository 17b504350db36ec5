import numpy as np
import pytest

from affectsteer import dataio, evalreport
from affectsteer.nn import DenseLayer, Mlp
from affectsteer.predictor import AffectModel


def identity_scaler(dim):
    return dataio.Scaler(np.zeros(dim), np.ones(dim))


def passthrough_model():
    """Model whose prediction is exactly its 3-dim input."""
    return AffectModel(
        Mlp([DenseLayer(np.eye(3, dtype=np.float32), np.zeros(3))]),
        identity_scaler(3),
        identity_scaler(3),
    )


def constant_model(value):
    return AffectModel(
        Mlp([DenseLayer(np.zeros((3, 3), dtype=np.float32), np.full(3, value))]),
        identity_scaler(3),
        identity_scaler(3),
    )


def dataset_from(targets, sds=None, kinds=None):
    targets = np.asarray(targets, dtype=np.float32)
    n = len(targets)
    sds = np.asarray(sds, dtype=np.float32) if sds is not None else np.full((n, 3), 0.1, np.float32)
    return dataio.Dataset(targets.copy(), targets, sds, kinds or ["word"] * n)


class TestMeanError:
    def test_perfect_predictor(self, rng):
        ds = dataset_from(rng.uniform(0, 1, size=(20, 3)))
        out = evalreport.mean_error(passthrough_model(), ds)
        assert out["mae"] == pytest.approx(0.0, abs=1e-7)
        assert out["mae_word"] == pytest.approx(0.0, abs=1e-7)

    def test_constant_half_on_binary_targets(self):
        targets = np.array([[0, 0, 0], [1, 1, 1]] * 5, dtype=np.float32)
        ds = dataset_from(targets)
        out = evalreport.mean_error(constant_model(0.5), ds)
        assert out["mae"] == pytest.approx(0.5)

    def test_matches_brute_force_enumeration(self, rng):
        # oracle: plain python loop over items and dimensions
        targets = rng.uniform(0, 1, size=(50, 3)).astype(np.float32)
        kinds = ["word" if i % 2 else "image" for i in range(50)]
        ds = dataset_from(targets, kinds=kinds)
        model = constant_model(0.4)
        out = evalreport.mean_error(model, ds)
        total, word_sum, word_n, img_sum, img_n = 0.0, 0.0, 0, 0.0, 0
        for i in range(50):
            for j in range(3):
                err = abs(0.4 - float(targets[i, j]))
                total += err
                if kinds[i] == "word":
                    word_sum, word_n = word_sum + err, word_n + 1
                else:
                    img_sum, img_n = img_sum + err, img_n + 1
        assert out["mae"] == pytest.approx(total / 150, rel=1e-6)
        assert out["mae_word"] == pytest.approx(word_sum / word_n, rel=1e-6)
        assert out["mae_image"] == pytest.approx(img_sum / img_n, rel=1e-6)
        assert out["counts"] == {"word": 25, "image": 25}

    def test_zero_iff_exact(self, rng):
        ds = dataset_from(rng.uniform(0.1, 0.9, size=(10, 3)))
        assert evalreport.mean_error(passthrough_model(), ds)["mae"] == pytest.approx(0, abs=1e-7)
        assert evalreport.mean_error(constant_model(0.5), ds)["mae"] > 0

    def test_empty_set(self):
        ds = dataio.Dataset(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), [])
        with pytest.raises(ValueError):
            evalreport.mean_error(passthrough_model(), ds)


class TestWithinSd:
    def test_exact_predictions_give_one(self, rng):
        ds = dataset_from(rng.uniform(0, 1, size=(20, 3)))
        pair, items = evalreport.within_sd_fraction(passthrough_model(), ds)
        assert pair == 1.0 and items == 1.0

    def test_two_sd_offset_gives_zero(self, rng):
        targets = rng.uniform(0.4, 0.6, size=(20, 3)).astype(np.float32)
        sds = np.full((20, 3), 0.05, dtype=np.float32)
        # predict targets + 2*sd by shifting the bias
        model = AffectModel(
            Mlp([DenseLayer(np.eye(3, dtype=np.float32), np.full(3, 0.1))]),
            identity_scaler(3),
            identity_scaler(3),
        )
        ds = dataset_from(targets, sds=sds)
        pair, items = evalreport.within_sd_fraction(model, ds)
        assert pair == 0.0 and items == 0.0

    def test_matches_brute_force_enumeration(self, rng):
        targets = rng.uniform(0, 1, size=(50, 3)).astype(np.float32)
        sds = rng.uniform(0.01, 0.3, size=(50, 3)).astype(np.float32)
        ds = dataset_from(targets, sds=sds)
        model = constant_model(0.5)
        pair, items = evalreport.within_sd_fraction(model, ds)
        hits, item_hits = 0, 0
        for i in range(50):
            all_in = True
            for j in range(3):
                if abs(0.5 - float(targets[i, j])) <= float(sds[i, j]):
                    hits += 1
                else:
                    all_in = False
            item_hits += all_in
        assert pair == pytest.approx(hits / 150)
        assert items == pytest.approx(item_hits / 50)

    def test_invariant_under_item_reordering(self, rng):
        targets = rng.uniform(0, 1, size=(30, 3)).astype(np.float32)
        sds = rng.uniform(0.01, 0.3, size=(30, 3)).astype(np.float32)
        ds = dataset_from(targets, sds=sds)
        perm = rng.permutation(30)
        shuffled = dataio.Dataset(ds.inputs[perm], ds.targets[perm], ds.sds[perm], ["word"] * 30)
        model = constant_model(0.5)
        assert evalreport.within_sd_fraction(model, ds) == evalreport.within_sd_fraction(model, shuffled)

    def test_missing_sds(self, rng):
        targets = rng.uniform(0, 1, size=(5, 3)).astype(np.float32)
        ds = dataio.Dataset(targets, targets, np.full((5, 3), np.nan, np.float32), ["word"] * 5)
        with pytest.raises(ValueError):
            evalreport.within_sd_fraction(passthrough_model(), ds)


class TestPromptTable:
    def test_rows_in_input_order_with_three_decimals(self):
        model = passthrough_model()
        prompts = [
            ("A forest in summer", [0.802, 0.408, 0.647]),
            ("A forest", [0.746, 0.407, 0.646]),
            ("A forest in winter", [0.695, 0.411, 0.572]),
        ]
        rows = evalreport.prompt_score_table(model, prompts)
        assert [r[0] for r in rows] == [p[0] for p in prompts]
        # valence ordering preserved through the scoring path
        assert rows[0][1] > rows[1][1] > rows[2][1]
        text = evalreport.format_prompt_table(rows)
        assert "0.802" in text and "A forest in winter" in text

    def test_empty_prompt_list(self):
        assert evalreport.prompt_score_table(passthrough_model(), []) == []
        assert evalreport.format_prompt_table([]) == ""


class TestReportRendering:
    def test_writes_tables_and_figures(self, tmp_path, rng):
        ds = dataset_from(rng.uniform(0, 1, size=(30, 3)))
        model = constant_model(0.5)
        report = evalreport.evaluate(model, ds)
        out = tmp_path / "report"
        evalreport.write_report(report, out, model=model, test=ds)
        for name in ("report.json", "report.txt", "report.csv", "per_dimension_mae.png", "pred_vs_target.png"):
            assert (out / name).exists(), name
        import json

        loaded = json.loads((out / "report.json").read_text())
        assert loaded["within_sd_fraction"] == pytest.approx(report.within_sd_fraction)
