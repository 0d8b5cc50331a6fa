import csv

import numpy as np
import pytest

from embedood.metrics import (
    DEFAULT_EPS_GRID,
    DEFAULT_T_GRID,
    ScoreSet,
    evaluate_detection,
    max_softmax_score,
    odin_grid_search,
    odin_score,
    read_scoreset,
    write_report,
    write_scoreset,
)
from embedood.model import ModelConfig, MultiHeadModel


def mann_whitney_auroc(ins, outs):
    """Rank-statistic AUROC: pairwise wins plus half-credit for ties."""
    total = 0.0
    for a in ins:
        for b in outs:
            total += 1.0 if a > b else (0.5 if a == b else 0.0)
    return total / (len(ins) * len(outs))


def constant_logit_model(logit0=2.0, n_classes=2):
    model = MultiHeadModel(
        ModelConfig(input_dim=2, trunk=(), variant="softmax", n_classes=n_classes,
                    head_hidden=1),
        seed=0,
    )
    for p in model.parameters():
        p.values[...] = 0.0
    model.head_params[0][2][1].values[0] = logit0  # final bias only
    return model


class TestScoreSet:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            ScoreSet([], [1.0])

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            ScoreSet([np.nan], [1.0])


class TestEvaluateDetection:
    def test_perfect_separation(self):
        rep = evaluate_detection(ScoreSet([2.0, 3.0, 4.0], [0.0, 1.0]))
        assert rep.fpr_at_95_tpr == 0.0
        assert rep.detection_error == pytest.approx(0.025)
        assert rep.auroc == pytest.approx(1.0)
        assert rep.aupr_in == pytest.approx(1.0)
        assert rep.aupr_out == pytest.approx(1.0)

    def test_interleaved_example(self):
        ins = np.arange(1.0, 21.0)
        outs = np.array([0.5, 1.5, 2.5, 3.5])
        rep = evaluate_detection(ScoreSet(ins, outs))
        assert rep.fpr_at_95_tpr == pytest.approx(0.5)
        assert rep.detection_error == pytest.approx(0.275)

    def test_identical_distributions(self):
        s = np.arange(10.0)
        rep = evaluate_detection(ScoreSet(s, s))
        assert rep.auroc == pytest.approx(0.5)

    def test_hand_computed_four_points(self):
        rep = evaluate_detection(ScoreSet([2.0, 4.0], [1.0, 3.0]))
        assert rep.auroc == pytest.approx(0.75)
        assert rep.fpr_at_95_tpr == pytest.approx(0.5)
        assert rep.detection_error == pytest.approx(0.275)
        assert rep.aupr_in == pytest.approx(0.5 + 0.25 * (0.5 + 2.0 / 3.0))

    def test_auroc_matches_rank_statistic(self):
        rng = np.random.default_rng(0)
        for trial in range(20):
            ins = rng.normal(loc=0.5, size=rng.integers(3, 30))
            outs = rng.normal(size=rng.integers(3, 30))
            if trial % 2:  # force ties across and within the sets
                ins = np.round(ins)
                outs = np.round(outs)
            rep = evaluate_detection(ScoreSet(ins, outs))
            assert rep.auroc == pytest.approx(mann_whitney_auroc(ins, outs), abs=1e-10)

    def test_monotone_transform_invariance(self):
        rng = np.random.default_rng(1)
        ins = rng.normal(loc=1.0, size=40)
        outs = rng.normal(size=25)
        a = evaluate_detection(ScoreSet(ins, outs))
        b = evaluate_detection(ScoreSet(np.exp(ins), np.exp(outs)))
        for key, val in a.as_dict().items():
            assert b.as_dict()[key] == pytest.approx(val, abs=1e-10), key

    def test_swap_symmetry(self):
        rng = np.random.default_rng(2)
        ins = rng.normal(loc=1.0, size=30)
        outs = rng.normal(size=30)
        rep = evaluate_detection(ScoreSet(ins, outs))
        swapped = evaluate_detection(ScoreSet(-outs, -ins))
        assert swapped.aupr_in == pytest.approx(rep.aupr_out, abs=1e-12)
        assert swapped.aupr_out == pytest.approx(rep.aupr_in, abs=1e-12)
        assert swapped.auroc == pytest.approx(rep.auroc, abs=1e-10)

    def test_better_separation_larger_auroc(self):
        rng = np.random.default_rng(3)
        outs = rng.normal(size=50)
        near = evaluate_detection(ScoreSet(rng.normal(loc=0.5, size=50), outs)).auroc
        far = evaluate_detection(ScoreSet(rng.normal(loc=3.0, size=50), outs)).auroc
        assert far > near


class TestSoftmaxScore:
    def test_uniform_logits(self):
        assert max_softmax_score([0.0, 0.0, 0.0, 0.0]) == pytest.approx(0.25)

    def test_hand_value(self):
        assert max_softmax_score([1.0, 0.0]) == pytest.approx(
            np.e / (np.e + 1.0), abs=1e-12
        )

    def test_shift_invariance_and_overflow(self):
        assert max_softmax_score([1000.0, 999.0]) == pytest.approx(
            max_softmax_score([1.0, 0.0]), abs=1e-12
        )

    def test_range(self):
        rng = np.random.default_rng(4)
        for _ in range(50):
            n = int(rng.integers(2, 8))
            s = max_softmax_score(rng.normal(size=n) * 10)
            assert 1.0 / n - 1e-12 <= s <= 1.0

    def test_nonfinite_rejected(self):
        with pytest.raises(ValueError):
            max_softmax_score([np.inf, 0.0])


class TestOdin:
    def test_temperature_two_on_constant_logits(self):
        model = constant_logit_model(logit0=2.0)
        x = np.zeros(2)
        assert odin_score(model, x, temperature=2.0, eps=0.0) == pytest.approx(
            np.e / (np.e + 1.0), abs=1e-10
        )
        assert odin_score(model, x, temperature=1.0, eps=0.0) == pytest.approx(
            np.exp(2.0) / (np.exp(2.0) + 1.0), abs=1e-10
        )

    def test_high_temperature_flattens(self):
        model = MultiHeadModel(
            ModelConfig(input_dim=3, trunk=(4,), variant="softmax", n_classes=4,
                        head_hidden=4),
            seed=5,
        )
        x = np.array([0.3, -0.2, 0.9])
        assert odin_score(model, x, temperature=1e9, eps=0.0) == pytest.approx(0.25, abs=1e-6)

    def test_perturbation_changes_score(self):
        model = MultiHeadModel(
            ModelConfig(input_dim=3, trunk=(6,), variant="softmax", n_classes=3,
                        head_hidden=5),
            seed=3,
        )
        x = np.array([0.4, 0.1, -0.7])
        base = odin_score(model, x, temperature=1.0, eps=0.0)
        nudged = odin_score(model, x, temperature=1.0, eps=0.05)
        assert nudged != base
        assert nudged > base  # the nudge moves along the confidence gradient

    def test_invalid_arguments(self):
        model = constant_logit_model()
        with pytest.raises(ValueError):
            odin_score(model, np.zeros(2), temperature=0.0)
        with pytest.raises(ValueError):
            odin_score(model, np.zeros(2), eps=-0.1)

    def test_default_grids(self):
        assert DEFAULT_T_GRID == (1.0, 10.0, 100.0, 1000.0)
        assert DEFAULT_EPS_GRID == (0.0, 0.0005, 0.001, 0.002, 0.004)

    def test_grid_search_tie_prefers_smallest(self):
        # constant logits make every grid point identical; the tie must
        # resolve to the smallest eps, then the smallest temperature
        model = constant_logit_model()
        rng = np.random.default_rng(7)
        val_in = rng.normal(size=(6, 2))
        val_out = rng.normal(size=(6, 2))
        t, eps = odin_grid_search(model, val_in, val_out,
                                  t_grid=(100.0, 1.0, 10.0), eps_grid=(0.002, 0.0))
        assert (t, eps) == (1.0, 0.0)

    def test_grid_search_empty_grid(self):
        with pytest.raises(ValueError):
            odin_grid_search(constant_logit_model(), np.zeros((2, 2)),
                             np.zeros((2, 2)), t_grid=())


class TestScoreFiles:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(8)
        scores = ScoreSet(rng.normal(size=10), rng.normal(size=7))
        path = str(tmp_path / "scores.csv")
        write_scoreset(path, scores)
        again = read_scoreset(path)
        np.testing.assert_array_equal(again.in_scores, scores.in_scores)
        np.testing.assert_array_equal(again.out_scores, scores.out_scores)

    def test_report_written_as_percentages(self, tmp_path):
        rep = evaluate_detection(ScoreSet([2.0, 3.0, 4.0], [0.0, 1.0]))
        path = str(tmp_path / "report.csv")
        write_report(path, {"toy": rep})
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["model"] == "toy"
        assert rows[0]["auroc"] == "100.00"
        assert rows[0]["detection_error"] == "2.50"
