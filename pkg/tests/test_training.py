import math

import numpy as np
import pandas as pd
import pytest

from app import compute as C
from app.compute import Tensor, grad_check
from app.config import TrainConfig
from app.data import read_teacher_captions
from app.errors import ContractViolation, PreconditionError, TrainingError
from app.evaluation import HISTORY_COLUMNS
from app.model import ModelParams, load_checkpoint
from app.training import (
    AdamState,
    caption_ce_loss,
    clip_by_global_norm,
    combined_loss,
    detection_label,
    detection_loss,
    distill_kl_loss,
    learning_rate,
    optimizer_step,
    sample_emission_time,
    train_student,
    train_teacher,
)


class TestCaptionLoss:
    def test_label_smoothed_hand_case(self):
        probs = np.array([[0.1, 0.7, 0.1, 0.1]])
        loss = caption_ce_loss(np.log(probs), [1], epsilon=0.1)
        expected = -(0.9 * math.log(0.7) + 0.1 * math.log(0.1))
        assert loss.item() == pytest.approx(expected, abs=1e-12)

    def test_no_smoothing_is_plain_nll(self):
        probs = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])
        loss = caption_ce_loss(np.log(probs), [1, 2], epsilon=0.0)
        assert loss.item() == pytest.approx(-(math.log(0.5) + math.log(0.3)) / 2, abs=1e-12)

    def test_padding_positions_are_ignored(self):
        probs = np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]])
        loss = caption_ce_loss(np.log(probs), [1, 0], epsilon=0.0)
        assert loss.item() == pytest.approx(-math.log(0.5), abs=1e-12)

    def test_all_padding(self):
        with pytest.raises(ContractViolation):
            caption_ce_loss(np.log(np.full((2, 3), 1 / 3)), [0, 0], epsilon=0.1)

    def test_target_count_must_match(self):
        with pytest.raises(ContractViolation):
            caption_ce_loss(np.log(np.full((2, 3), 1 / 3)), [1], epsilon=0.1)

    def test_gradient(self, rng):
        f = lambda x: caption_ce_loss(C.log_softmax(x), [1, 2, 0, 3], epsilon=0.1)
        assert grad_check(f, rng.normal(size=(4, 5))) < 1e-4


class TestDistillation:
    def test_one_hot_teacher_equals_nll(self):
        student = np.log(np.array([[0.2, 0.5, 0.3], [0.6, 0.1, 0.3]]))
        teacher = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
        expected = -(math.log(0.5) + math.log(0.3)) / 2
        assert distill_kl_loss(teacher, student).item() == pytest.approx(expected, abs=1e-12)

    def test_cross_entropy_bounds_teacher_entropy(self, rng):
        teacher = rng.dirichlet(np.ones(6), size=4)
        entropy = -np.sum(teacher * np.log(teacher)) / 4
        for _ in range(20):
            student = np.log(rng.dirichlet(np.ones(6), size=4))
            assert distill_kl_loss(teacher, student).item() >= entropy - 1e-12
        assert distill_kl_loss(teacher, np.log(teacher)).item() == pytest.approx(entropy, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ContractViolation):
            distill_kl_loss(np.ones((2, 3)) / 3, np.zeros((3, 3)))

    def test_gradient(self, rng):
        teacher = rng.dirichlet(np.ones(5), size=3)
        assert grad_check(lambda x: distill_kl_loss(teacher, C.log_softmax(x)), rng.normal(size=(3, 5))) < 1e-4


class TestDetection:
    def test_half_probability(self):
        assert detection_loss(0.5, 1).item() == pytest.approx(math.log(2), abs=1e-12)
        assert detection_loss(0.5, 0).item() == pytest.approx(math.log(2), abs=1e-12)

    def test_probability_is_clamped(self):
        assert detection_loss(1.0, 0).item() == pytest.approx(-math.log(1e-7), rel=1e-9)
        assert detection_loss(0.0, 1).item() == pytest.approx(-math.log(1e-7), rel=1e-9)
        assert detection_loss(1.0, 1).item() < 1e-6

    def test_label_must_be_binary(self):
        with pytest.raises(ContractViolation):
            detection_loss(0.5, 2)

    @pytest.mark.parametrize("sim_gt, sim_teacher, expected", [
        (0.5, 0.7, 1),
        (0.7, 0.5, 1),
        (0.5, 0.5, 0),
        (0.6, 0.0, 1),
        (0.0, 0.0, 0),
    ])
    def test_label_rule(self, sim_gt, sim_teacher, expected):
        assert detection_label(sim_gt, sim_teacher, 0.6) == expected

    def test_label_is_monotone_in_both_similarities(self):
        grid = np.linspace(0.0, 1.0, 11)
        for threshold in (0.3, 0.6, 0.9):
            labels = np.array([[detection_label(g, t, threshold) for t in grid] for g in grid])
            assert (np.diff(labels, axis=0) >= 0).all()
            assert (np.diff(labels, axis=1) >= 0).all()

    def test_threshold_one_needs_an_exact_match(self):
        assert detection_label(1.0, 0.0, 1.0) == 1
        assert detection_label(0.0, 1.0, 1.0) == 1
        assert detection_label(0.999, 0.999, 1.0) == 0

    def test_combined_weights(self):
        total = combined_loss(Tensor(1.0), Tensor(2.0), Tensor(3.0), 0.5, 0.25, 1.0)
        assert total.item() == pytest.approx(0.5 + 0.5 + 3.0)


class TestEmissionSampling:
    def test_window_shorter_than_a_visual_frame(self, rng):
        assert sample_emission_time(10.0, 12.0, rng, 2.56) is None

    def test_window_of_exactly_one_frame(self, rng):
        assert sample_emission_time(0.0, 2.56, rng, 2.56) == 2.56

    def test_draws_are_uniform_over_the_window(self, rng):
        draws = np.array([sample_emission_time(1.0, 21.0, rng, 2.56) for _ in range(100_000)])
        assert draws.min() >= 3.56
        assert draws.max() <= 21.0
        assert draws.mean() == pytest.approx((3.56 + 21.0) / 2, rel=0.01)
        for quantile in (0.25, 0.5, 0.75):
            cut = 3.56 + quantile * (21.0 - 3.56)
            assert np.mean(draws <= cut) == pytest.approx(quantile, abs=0.01)

    def test_seeded(self):
        first = sample_emission_time(0.0, 30.0, np.random.default_rng(4))
        second = sample_emission_time(0.0, 30.0, np.random.default_rng(4))
        assert first == second


class TestOptimizer:
    def test_warmup_then_inverse_square_root(self):
        assert learning_rate(1, 1e-3, 100) == pytest.approx(1e-5)
        assert learning_rate(100, 1e-3, 100) == pytest.approx(1e-3)
        assert learning_rate(400, 1e-3, 100) == pytest.approx(5e-4)

    def test_clip_by_global_norm(self):
        clipped, norm = clip_by_global_norm({"a": np.array([3.0, 4.0])}, 1.0)
        assert norm == pytest.approx(5.0)
        np.testing.assert_allclose(clipped["a"], [0.6, 0.8])

    def test_small_gradients_are_not_clipped(self):
        grads = {"a": np.array([0.3, 0.4])}
        clipped, _ = clip_by_global_norm(grads, 1.0)
        assert clipped is grads

    def test_first_adam_step(self, tiny_params):
        config = TrainConfig(learning_rate=1e-2, warmup_steps=4)
        before = {name: t.data.copy() for name, t in tiny_params.items()}
        tiny_params["out.b"].grad[3] = 0.5
        lr = optimizer_step(tiny_params, AdamState(), config)
        assert lr == pytest.approx(2.5e-3)
        assert tiny_params["out.b"].data[3] == pytest.approx(before["out.b"][3] - 2.5e-3, abs=1e-6)
        np.testing.assert_array_equal(tiny_params["dec.embed"].data, before["dec.embed"])

    def test_restricted_names(self, tiny_params):
        before = tiny_params["det.ffn.b2"].data.copy()
        tiny_params["det.ffn.b2"].grad[:] = 1.0
        optimizer_step(tiny_params, AdamState(), TrainConfig(), names=tiny_params.names(detector=False))
        np.testing.assert_array_equal(tiny_params["det.ffn.b2"].data, before)

    def test_non_finite_gradient(self, tiny_params):
        tiny_params["out.w"].grad[0, 0] = np.nan
        with pytest.raises(TrainingError):
            optimizer_step(tiny_params, AdamState(), TrainConfig())


@pytest.fixture
def teacher_run(tmp_path, dataset, run_config):
    out = tmp_path / "teacher"
    return out, train_teacher(dataset, run_config, out)


class TestTeacherTraining:
    def test_artifacts(self, teacher_run, dataset):
        out, result = teacher_run
        for name in ("teacher_best.avck", "teacher_last.avck", "teacher_epoch001.avck", "teacher_epoch002.avck",
                     "vocab.txt", "teacher_captions.tsv", "teacher_history.csv"):
            assert (out / name).is_file(), name
        assert (out / "MANIFEST").read_text(encoding="utf-8") == "best teacher_best.avck\nlast teacher_last.avck\n"
        assert set(read_teacher_captions(out / "teacher_captions.tsv")) == {
            r.event_id for r in (*dataset.train, *dataset.val)
        }

    def test_history(self, teacher_run):
        out, result = teacher_run
        history = pd.read_csv(out / "teacher_history.csv")
        assert list(history.columns) == HISTORY_COLUMNS
        assert history["epoch"].tolist() == [1, 2]
        assert (history["latency_ratio"] == 1.0).all()
        assert len(result.history) == 2

    def test_best_checkpoint_is_returned(self, teacher_run):
        out, result = teacher_run
        loaded = load_checkpoint(out / "teacher_best.avck")
        for name in loaded:
            np.testing.assert_array_equal(loaded[name].data, result.params[name].data)

    def test_detector_is_untouched(self, teacher_run, run_config, dataset):
        out, _ = teacher_run
        last = load_checkpoint(out / "teacher_last.avck")
        initial = ModelParams.initialize(last.config, seed=run_config.train.seed)
        for name in last.names(detector=True):
            np.testing.assert_array_equal(last[name].data, initial[name].data)

    def test_same_seed_same_bytes(self, tmp_path, teacher_run, dataset, run_config):
        out, _ = teacher_run
        train_teacher(dataset, run_config, tmp_path / "again")
        assert (out / "teacher_last.avck").read_bytes() == (tmp_path / "again" / "teacher_last.avck").read_bytes()


class TestStudentTraining:
    @pytest.fixture
    def distilled(self, teacher_run, dataset):
        out, _ = teacher_run
        return dataset.with_teacher_captions(read_teacher_captions(out / "teacher_captions.tsv"))

    def test_artifacts_and_history(self, tmp_path, teacher_run, distilled, run_config):
        _, teacher = teacher_run
        out = tmp_path / "student"
        result = train_student(distilled, teacher.params, run_config, out)
        for name in ("student_best.avck", "student_last.avck", "student_history.csv", "MANIFEST", "vocab.txt"):
            assert (out / name).is_file(), name
        history = pd.read_csv(out / "student_history.csv")
        assert list(history.columns) == HISTORY_COLUMNS
        assert len(history) == 2
        assert ((history["latency_ratio"] > 0) & (history["latency_ratio"] <= 1)).all()
        assert 1 <= result.best_epoch <= 2

    def test_teacher_is_not_modified(self, tmp_path, teacher_run, distilled, run_config):
        _, teacher = teacher_run
        snapshot = {name: t.data.copy() for name, t in teacher.params.items()}
        train_student(distilled, teacher.params, run_config, tmp_path / "student")
        for name, value in snapshot.items():
            np.testing.assert_array_equal(teacher.params[name].data, value)

    def test_without_distillation(self, tmp_path, teacher_run, distilled, run_config):
        _, teacher = teacher_run
        config = run_config.model_copy(update={"train": run_config.train.model_copy(update={"distill": False})})
        result = train_student(distilled, teacher.params, config, tmp_path / "student")
        assert all(record.loss_kl == 0.0 for record in result.history)

    def test_requires_teacher_captions(self, tmp_path, teacher_run, dataset, run_config):
        _, teacher = teacher_run
        with pytest.raises(PreconditionError):
            train_student(dataset, teacher.params, run_config, tmp_path / "student")
