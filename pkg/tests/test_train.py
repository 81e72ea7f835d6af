import csv

import numpy as np
import pytest

from spectra.errors import DataError, LabelError
from spectra.model import SpectraConfig, build_model, forward
from spectra.tensor import Rng
from spectra.train import (Adam, Metrics, TrainConfig, cross_entropy,
                           cross_entropy_grad_logits, evaluate,
                           metrics_from_predictions, predict, train_epochs,
                           write_history_csv)

SMALL = dict(T=32, C=2, K=3, n_fft=8, hop=4, k=3, D=3, H=4, dropout_p=0.0)


def small_problem(n=12, seed=0):
    cfg = SpectraConfig(**SMALL, seed=seed)
    rng = Rng(seed + 1000)
    windows = rng.normal((n, cfg.T, cfg.C))
    labels = np.arange(n) % cfg.K
    return cfg, windows, labels


class TestCrossEntropy:
    def test_uniform_prediction_closed_form(self):
        probs = np.full((5, 4), 0.25)
        assert cross_entropy(probs, np.zeros(5, dtype=int)) == pytest.approx(
            np.log(4.0))

    def test_perfect_prediction_is_zero(self):
        probs = np.eye(3)
        assert cross_entropy(probs, np.array([0, 1, 2])) == pytest.approx(0.0)

    def test_hand_computed_example(self):
        probs = np.array([[0.7, 0.2, 0.1], [0.1, 0.8, 0.1]])
        expected = -(np.log(0.7) + np.log(0.8)) / 2
        assert cross_entropy(probs, np.array([0, 1])) == pytest.approx(expected)

    def test_clamp_prevents_inf(self):
        probs = np.array([[1.0, 0.0]])
        loss = cross_entropy(probs, np.array([1]))
        assert np.isfinite(loss)
        assert loss == pytest.approx(-np.log(1e-12))

    def test_out_of_range_label_raises(self):
        with pytest.raises(LabelError):
            cross_entropy(np.full((1, 3), 1 / 3), np.array([3]))
        with pytest.raises(LabelError):
            cross_entropy(np.full((1, 3), 1 / 3), np.array([-1]))

    def test_grad_logits_formula(self):
        probs = np.array([[0.5, 0.3, 0.2], [0.1, 0.6, 0.3]])
        g = cross_entropy_grad_logits(probs, np.array([0, 2]))
        np.testing.assert_allclose(
            g, [[-0.25, 0.15, 0.1], [0.05, 0.3, -0.35]], atol=1e-12)

    def test_grad_rows_sum_to_zero(self):
        probs = np.random.default_rng(0).dirichlet(np.ones(4), size=6)
        g = cross_entropy_grad_logits(probs, np.zeros(6, dtype=int))
        np.testing.assert_allclose(g.sum(axis=1), 0.0, atol=1e-12)


class TestAdam:
    def test_first_step_is_signed_lr(self):
        # after bias correction the first update is lr * g / (|g| + eps)
        tc = TrainConfig(learning_rate=0.1)
        opt = Adam(tc)
        params = {"w": np.array([1.0, 1.0])}
        opt.step(params, {"w": np.array([3.0, -0.2])})
        np.testing.assert_allclose(params["w"], [0.9, 1.1], atol=1e-6)

    def test_zero_lr_is_bit_exact_noop(self):
        tc = TrainConfig(learning_rate=0.0)
        opt = Adam(tc)
        w = np.array([1.0, -2.0, 3.0])
        params = {"w": w.copy()}
        for _ in range(5):
            opt.step(params, {"w": np.array([0.1, -0.2, 0.3])})
        np.testing.assert_array_equal(params["w"], w)

    def test_descends_a_quadratic(self):
        tc = TrainConfig(learning_rate=0.05)
        opt = Adam(tc)
        params = {"w": np.array([4.0])}
        for _ in range(300):
            opt.step(params, {"w": 2.0 * params["w"]})
        assert abs(params["w"][0]) < 0.1

    def test_negative_lr_rejected(self):
        with pytest.raises(DataError):
            TrainConfig(learning_rate=-1e-3)

    def test_bad_batch_size_rejected(self):
        with pytest.raises(DataError):
            TrainConfig(batch_size=0)


class TestTrainEpochs:
    def test_deterministic_for_seed(self):
        cfg, windows, labels = small_problem()
        tc = TrainConfig(epochs=2, batch_size=4, seed=3)
        m1, h1 = train_epochs(build_model(cfg), windows, labels, tc)
        m2, h2 = train_epochs(build_model(cfg), windows, labels, tc)
        assert h1 == h2
        for name in m1.tensors:
            np.testing.assert_array_equal(m1.tensors[name], m2.tensors[name])

    def test_zero_lr_preserves_learnables(self):
        cfg, windows, labels = small_problem()
        model = build_model(cfg)
        before = {n: model.tensors[n].copy() for n in model.learnable_names()}
        train_epochs(model, windows, labels,
                     TrainConfig(epochs=1, learning_rate=0.0))
        for name, t in before.items():
            np.testing.assert_array_equal(model.tensors[name], t)

    def test_single_sample_overfits(self):
        cfg, windows, labels = small_problem(n=1)
        model = build_model(cfg)
        _, history = train_epochs(model, windows, labels,
                                  TrainConfig(epochs=60, batch_size=1,
                                              learning_rate=1e-2))
        assert history[-1]["train_loss"] < 0.05
        assert forward(model, windows)[0].argmax() == labels[0]

    def test_loss_decreases_on_average(self):
        cfg, windows, labels = small_problem(n=24)
        _, history = train_epochs(build_model(cfg), windows, labels,
                                  TrainConfig(epochs=15, batch_size=8,
                                              learning_rate=5e-3))
        assert history[-1]["train_loss"] < history[0]["train_loss"]

    def test_history_rows_with_eval_split(self):
        cfg, windows, labels = small_problem()
        _, history = train_epochs(build_model(cfg), windows, labels,
                                  TrainConfig(epochs=2),
                                  eval_windows=windows, eval_labels=labels)
        assert [row["epoch"] for row in history] == [0, 1]
        for row in history:
            assert {"train_loss", "eval_acc", "eval_macro_f1"} <= set(row)

    def test_empty_data_raises(self):
        cfg, _, _ = small_problem()
        with pytest.raises(DataError):
            train_epochs(build_model(cfg), np.zeros((0, 32, 2)), np.zeros(0),
                         TrainConfig(epochs=1))

    def test_label_length_mismatch_raises(self):
        cfg, windows, labels = small_problem()
        with pytest.raises(DataError):
            train_epochs(build_model(cfg), windows, labels[:-1],
                         TrainConfig(epochs=1))


class TestMetrics:
    def test_balanced_symmetric_confusion(self):
        # confusion [[1,1],[1,1]]: accuracy 0.5, per-class F1 0.5
        probs = np.array([[0.9, 0.1], [0.1, 0.9], [0.9, 0.1], [0.1, 0.9]])
        labels = np.array([0, 0, 1, 1])
        m = metrics_from_predictions(probs, labels)
        assert m.accuracy == pytest.approx(0.5)
        assert m.macro_f1 == pytest.approx(0.5)

    def test_constant_predictor_macro_f1_third(self):
        # always class 0 on a balanced binary set:
        # class 0 F1 = 2/3, class 1 F1 = 0 -> macro 1/3
        probs = np.tile([0.9, 0.1], (4, 1))
        labels = np.array([0, 0, 1, 1])
        m = metrics_from_predictions(probs, labels)
        assert m.accuracy == pytest.approx(0.5)
        assert m.per_class_f1[0] == pytest.approx(2 / 3)
        assert m.per_class_f1[1] == 0.0
        assert m.macro_f1 == pytest.approx(1 / 3)

    def test_perfect_predictions(self):
        probs = np.eye(3)
        m = metrics_from_predictions(probs, np.array([0, 1, 2]))
        assert m.accuracy == 1.0
        assert m.macro_f1 == 1.0
        assert m.per_class_precision == [1.0, 1.0, 1.0]

    def test_absent_class_contributes_zero_f1(self):
        probs = np.array([[0.9, 0.05, 0.05], [0.05, 0.9, 0.05]])
        m = metrics_from_predictions(probs, np.array([0, 1]))
        assert m.per_class_f1[2] == 0.0
        assert m.macro_f1 == pytest.approx(2 / 3)

    def test_tie_breaks_to_lowest_index(self):
        probs = np.array([[0.5, 0.5]])
        m = metrics_from_predictions(probs, np.array([0]))
        assert m.accuracy == 1.0

    def test_label_permutation_invariance_of_macro_f1(self):
        rng = np.random.default_rng(0)
        probs = rng.dirichlet(np.ones(3), size=30)
        labels = rng.integers(0, 3, 30)
        base = metrics_from_predictions(probs, labels)
        perm = np.array([2, 0, 1])
        m2 = metrics_from_predictions(probs[:, perm],
                                      np.argsort(perm)[labels])
        assert m2.macro_f1 == pytest.approx(base.macro_f1)
        assert m2.accuracy == pytest.approx(base.accuracy)

    def test_evaluate_matches_predict_plus_metrics(self):
        cfg, windows, labels = small_problem()
        model = build_model(cfg)
        m = evaluate(model, windows, labels)
        m2 = metrics_from_predictions(predict(model, windows), labels)
        assert m.as_dict() == m2.as_dict()

    def test_evaluate_empty_raises(self):
        cfg, _, _ = small_problem()
        with pytest.raises(DataError):
            evaluate(build_model(cfg), np.zeros((0, 32, 2)), np.zeros(0))

    def test_predict_batching_consistent(self):
        cfg, windows, _ = small_problem(n=10)
        model = build_model(cfg)
        np.testing.assert_allclose(predict(model, windows, batch_size=3),
                                   predict(model, windows, batch_size=256),
                                   atol=1e-12)


def test_write_history_csv(tmp_path):
    history = [{"epoch": 0, "train_loss": 1.5, "eval_acc": 0.5,
                "eval_macro_f1": 0.4},
               {"epoch": 1, "train_loss": 1.1}]
    path = str(tmp_path / "history.csv")
    write_history_csv(history, path)
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert rows[0]["train_loss"] == "1.5"
    assert rows[0]["eval_macro_f1"] == "0.4"
    assert rows[1]["eval_acc"] == ""
