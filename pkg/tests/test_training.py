import logging

import numpy as np
import pytest

from refine3d.autodiff.tensor import Tensor
from refine3d.errors import EmptySetError, FormatError, GraphError, NumericError, PhaseOrderError
from refine3d.model.config import DESK
from refine3d.model.network import Refine3DNet
from refine3d.model.registry import Partition
from refine3d.settings import RunConfig
from refine3d.synthdata.dataset_service import Sample, load_dataset
from refine3d.training.adam import AdamState, adam_step, lr_at
from refine3d.training.jtso_service import ATTENTION, ENCODER_DECODER, JTSOTrainer, training_iou
from refine3d.training.metrics_log import METRIC_COLUMNS, MetricsLog, MetricsRow
from refine3d.training.sampling import Batch, BatchSampler
from refine3d.training.state import ConvergenceMonitor, TrainState

TINY_RUN = dict(
    batch_size=2,
    phase1_steps=3,
    phase2_steps=2,
    phase3_steps=2,
    joint_steps=2,
    views_max=3,
    eval_every=2,
    patience=5,
    lr=0.001,
)


def make_trainer(cfg, dataset, seed=0, **overrides):
    run = RunConfig(**{**TINY_RUN, "seed": seed, **overrides})
    return JTSOTrainer(Refine3DNet(cfg, seed=seed), dataset, run)


def digests(net):
    return {p: net.params.digest(p) for p in Partition}


# =============================================================================
# Adam
# =============================================================================

class TestAdam:
    def test_first_step_moves_by_lr_times_sign(self, rng):
        p0 = rng.standard_normal(5)
        g = rng.standard_normal(5)
        param = Tensor(p0.copy(), requires_grad=True)
        param.grad = g.copy()
        adam_step({"w": param}, AdamState(), lr=0.01)
        np.testing.assert_allclose(param.data, p0 - 0.01 * g / (np.abs(g) + 1e-8), rtol=1e-12)

    def test_two_steps_match_hand_unrolled_updates(self, rng):
        p = rng.standard_normal(4)
        g1, g2 = rng.standard_normal(4), rng.standard_normal(4)
        param = Tensor(p.copy(), requires_grad=True)
        state = AdamState()
        for g in (g1, g2):
            param.grad = g.copy()
            adam_step({"w": param}, state, lr=0.001)

        m = v = np.zeros(4)
        expected = p.copy()
        for tau, g in enumerate((g1, g2), start=1):
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            expected -= 0.001 * (m / (1 - 0.9 ** tau)) / (np.sqrt(v / (1 - 0.999 ** tau)) + 1e-8)
        np.testing.assert_allclose(param.data, expected, rtol=1e-12)
        assert state.tau == 2

    def test_zero_lr_changes_no_parameter_byte(self, rng):
        param = Tensor(rng.standard_normal((3, 3)).astype(np.float32), requires_grad=True)
        before = param.data.tobytes()
        param.grad = rng.standard_normal((3, 3)).astype(np.float32)
        state = AdamState()
        adam_step({"w": param}, state, lr=0.0)
        assert param.data.tobytes() == before
        assert state.tau == 1 and np.any(state.m["w"] != 0)

    def test_grad_scale_enters_the_moments(self, rng):
        g = rng.standard_normal(3)
        plain, scaled = AdamState(), AdamState()
        adam_step({"w": Tensor(np.zeros(3), requires_grad=True)}, plain, 0.0, grads={"w": g})
        adam_step({"w": Tensor(np.zeros(3), requires_grad=True)}, scaled, 0.0, grads={"w": g}, grad_scale=2.0)
        np.testing.assert_allclose(scaled.m["w"], 2.0 * plain.m["w"])
        np.testing.assert_allclose(scaled.v["w"], 4.0 * plain.v["w"])

    def test_missing_gradient(self):
        with pytest.raises(GraphError):
            adam_step({"w": Tensor(np.zeros(2))}, AdamState(), 0.001)

    @pytest.mark.parametrize(
        "epoch,mode,expected",
        [(0, "once", 1e-3), (149, "once", 1e-3), (150, "once", 5e-4), (400, "once", 5e-4), (300, "every", 2.5e-4)],
    )
    def test_learning_rate_schedule(self, epoch, mode, expected):
        assert lr_at(epoch, mode=mode) == pytest.approx(expected)

    def test_bad_schedule_arguments(self):
        with pytest.raises(ValueError):
            lr_at(-1)
        with pytest.raises(ValueError):
            lr_at(3, mode="cosine")


# =============================================================================
# Phase state
# =============================================================================

class TestTrainState:
    def test_phases_must_run_in_order(self):
        state = TrainState()
        with pytest.raises(PhaseOrderError):
            state.begin_phase("2")
        state.begin_phase("1")
        state.finish_phase()
        state.begin_phase("2")
        state.finish_phase()
        state.begin_phase("3")
        assert state.completed_phases == ["1", "2"]

    def test_override(self):
        state = TrainState()
        state.begin_phase("3", allow_out_of_order=True)
        assert state.phase == "3"

    def test_monitor_counts_evaluations_without_real_improvement(self):
        state = TrainState()
        monitor = ConvergenceMonitor(state, patience=3, min_delta=1e-4)
        assert not monitor.update(1.0)
        assert not monitor.update(0.99995)
        assert state.bad_evals == 1
        assert not monitor.update(0.5)
        assert state.bad_evals == 0 and state.best_val_lm == 0.5
        results = [monitor.update(0.5) for _ in range(3)]
        assert results == [False, False, True]

    def test_new_phase_resets_the_monitor(self):
        state = TrainState(best_val_lm=0.1, bad_evals=4)
        state.begin_phase("1")
        assert state.best_val_lm is None and state.bad_evals == 0


# =============================================================================
# Sampling
# =============================================================================

def single_view_sample(sample_id, category="box"):
    return Sample(category, sample_id, "train", np.zeros((1, 3, 8, 8), np.float32), np.zeros((8, 8, 8), np.uint8))


class TestSampling:
    def test_batches_are_reproducible(self, tiny_dataset):
        samples = tiny_dataset.split("train")
        a = BatchSampler(samples, np.random.default_rng(4)).multi_view(3, 3)
        b = BatchSampler(samples, np.random.default_rng(4)).multi_view(3, 3)
        assert np.array_equal(a.images, b.images) and a.categories == b.categories
        assert 2 <= a.views <= 3 and a.images.shape[0] == 3

    def test_category_pair_shares_a_category(self, tiny_dataset):
        sampler = BatchSampler(tiny_dataset.split("train"), np.random.default_rng(0))
        for _ in range(5):
            category, batch_a, batch_b = sampler.category_pair(2, 3)
            assert batch_a.views == 1
            assert set(batch_a.categories) == {category} == set(batch_b.categories)

    def test_single_view_samples_are_skipped_once_with_a_warning(self, caplog):
        sampler = BatchSampler([single_view_sample("a"), single_view_sample("b")], np.random.default_rng(0))
        with caplog.at_level(logging.WARNING):
            assert sampler.multi_view(2, 4) is None
            assert sampler.multi_view(2, 4) is None
        assert len([r for r in caplog.records if "only 1 view" in r.getMessage()]) == 2

    def test_no_samples(self):
        with pytest.raises(EmptySetError):
            BatchSampler([], np.random.default_rng(0))


# =============================================================================
# Trainer
# =============================================================================

class TestTrainer:
    def test_phase1_freezes_attention(self, tiny_cfg, tiny_dataset):
        trainer = make_trainer(tiny_cfg, tiny_dataset)
        before = digests(trainer.net)
        trainer.train_phase1()
        after = digests(trainer.net)
        assert after[Partition.PHI_ATT] == before[Partition.PHI_ATT]
        assert after[Partition.THETA_BASE] != before[Partition.THETA_BASE]
        assert after[Partition.PHI_REF] != before[Partition.PHI_REF]

    def test_phase2_freezes_the_encoder_decoder(self, tiny_cfg, tiny_dataset):
        trainer = make_trainer(tiny_cfg, tiny_dataset)
        trainer.train_phase1()
        before = digests(trainer.net)
        trainer.train_phase2()
        after = digests(trainer.net)
        assert after[Partition.THETA_BASE] == before[Partition.THETA_BASE]
        assert after[Partition.PHI_ATT] != before[Partition.PHI_ATT]

    def test_phase3_sub_steps_alternate_partitions(self, tiny_cfg, tiny_dataset):
        trainer = make_trainer(tiny_cfg, tiny_dataset)
        trainer.state.begin_phase("3", allow_out_of_order=True)
        _, batch_a, batch_b = trainer.sampler.category_pair(2, 3)

        before = digests(trainer.net)
        trainer.step(batch_a, ENCODER_DECODER)
        after_a = digests(trainer.net)
        assert after_a[Partition.PHI_ATT] == before[Partition.PHI_ATT]
        assert after_a[Partition.THETA_BASE] != before[Partition.THETA_BASE]

        trainer.step(batch_b, ATTENTION)
        after_b = digests(trainer.net)
        assert after_b[Partition.THETA_BASE] == after_a[Partition.THETA_BASE]
        assert after_b[Partition.PHI_ATT] != after_a[Partition.PHI_ATT]

    def test_phase_order_is_enforced(self, tiny_cfg, tiny_dataset):
        trainer = make_trainer(tiny_cfg, tiny_dataset)
        with pytest.raises(PhaseOrderError):
            trainer.train_phase2()

    def test_all_phases(self, tiny_cfg, tiny_dataset):
        trainer = make_trainer(tiny_cfg, tiny_dataset)
        seen = []
        state = trainer.run_phases(["1", "2", "3"], on_phase_end=lambda phase, t: seen.append(phase))
        assert seen == ["1", "2", "3"]
        assert state.completed_phases == ["1", "2", "3"]
        assert state.global_step == len(trainer.metrics.rows) == 3 + 2 + 4
        assert [row.phase for row in trainer.metrics.rows] == ["1"] * 3 + ["2"] * 2 + ["3"] * 4
        assert state.rng_state is not None

    def test_joint_baseline_updates_everything(self, tiny_cfg, tiny_dataset):
        trainer = make_trainer(tiny_cfg, tiny_dataset)
        before = digests(trainer.net)
        trainer.train_joint()
        after = digests(trainer.net)
        assert all(after[p] != before[p] for p in Partition)

    def test_same_seed_same_metrics(self, tiny_cfg, tiny_dataset):
        first = make_trainer(tiny_cfg, tiny_dataset, seed=3)
        second = make_trainer(tiny_cfg, tiny_dataset, seed=3)
        first.train_phase1()
        second.train_phase1()
        assert first.metrics.to_csv() == second.metrics.to_csv()

    def test_validation_iou_lands_in_the_metrics(self, tiny_cfg, tiny_dataset):
        trainer = make_trainer(tiny_cfg, tiny_dataset)
        trainer.train_phase1()
        rows = trainer.metrics.rows
        assert rows[1].val_iou is not None and 0.0 <= rows[1].val_iou <= 1.0
        assert rows[0].val_iou is None and rows[2].val_iou is None

    def test_non_finite_loss(self, tiny_cfg, tiny_dataset):
        trainer = make_trainer(tiny_cfg, tiny_dataset)
        name = trainer.net.params.names(Partition.THETA_BASE)[0]
        trainer.net.params[name].data[...] = np.nan
        with pytest.raises(NumericError):
            trainer.step(trainer.sampler.single_view(2), ENCODER_DECODER)

    def test_training_iou_is_a_fraction(self, tiny_cfg, tiny_dataset):
        score = training_iou(Refine3DNet(tiny_cfg, seed=0), tiny_dataset.samples)
        assert 0.0 <= score <= 1.0


def fixed_batch(samples, views):
    return Batch(
        np.stack([s.images[:views] for s in samples]),
        np.stack([s.gt for s in samples]).astype(np.float32),
        [s.category for s in samples],
    )


class TestFixedBatchLearning:
    @pytest.fixture(scope="class")
    def desk_train(self, desk_dataset_root):
        return load_dataset(desk_dataset_root, threads=1)

    def run_steps(self, trainer, batch, update, steps=50):
        return [trainer.step(batch, update) for _ in range(steps)]

    def test_phase1_loss_decreases(self, desk_train):
        trainer = JTSOTrainer(Refine3DNet(DESK, seed=0), desk_train, RunConfig(batch_size=2, seed=0))
        batch = fixed_batch(desk_train.split("train")[:2], views=1)
        losses = self.run_steps(trainer, batch, ENCODER_DECODER)
        assert losses[-1].l_m < losses[0].l_m
        assert losses[-1].l_p < losses[0].l_p

    def test_phase2_multi_view_loss_decreases(self, desk_train):
        trainer = JTSOTrainer(Refine3DNet(DESK, seed=0), desk_train, RunConfig(batch_size=2, seed=0))
        batch = fixed_batch(desk_train.split("train")[:2], views=3)
        losses = self.run_steps(trainer, batch, ATTENTION)
        assert losses[-1].l_m < losses[0].l_m
        assert losses[-1].l_p < losses[0].l_p


# =============================================================================
# Metrics log
# =============================================================================

class TestMetricsLog:
    def test_round_trip(self, tmp_path):
        log = MetricsLog()
        log.append(MetricsRow(step=1, phase="1", l_p=0.7, l_r=0.69, l_m=0.695, lr=0.001))
        log.append(MetricsRow(step=2, phase="1", l_p=0.6, l_r=0.65, l_m=0.625, lr=0.001))
        log.set_last_val_iou(0.125)
        log.write(tmp_path / "metrics.csv")
        lines = (tmp_path / "metrics.csv").read_text(encoding="utf-8").splitlines()
        assert lines[0] == ",".join(METRIC_COLUMNS)
        assert lines[1] == "1,1,0.7,0.69,0.695,,0.001"
        assert MetricsLog.read(tmp_path / "metrics.csv").rows == log.rows

    def test_malformed_row(self, tmp_path):
        path = tmp_path / "metrics.csv"
        path.write_text(",".join(METRIC_COLUMNS) + "\n1,1,0.7,0.69,x,,0.001\n", encoding="utf-8")
        with pytest.raises(FormatError) as info:
            MetricsLog.read(path)
        assert info.value.row == 2
