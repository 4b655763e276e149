"""
Three-phase trainer.

Phase 1 trains the encoder-decoder on single views, phase 2 trains the attention
fuser on multi-view batches, and phase 3 alternates the two on single-view (A) and
multi-view (B) batches of one category. The refiner follows its own loss in every
phase. Freezing happens at the update: a frozen partition may receive gradients but
its optimizer never runs.
"""
import logging
import math
from typing import Callable, Dict, FrozenSet, Iterable, List, Optional

import numpy as np

from refine3d.autodiff import ops
from refine3d.autodiff.tensor import Tensor, backward, no_grad, reset_graph
from refine3d.errors import EmptySetError, NumericError
from refine3d.model.network import Refine3DNet
from refine3d.model.registry import Partition
from refine3d.objectives.metrics_service import LossTriple, iou, voxel_cross_entropy
from refine3d.settings import RunConfig
from refine3d.synthdata.dataset_service import Dataset, Sample
from refine3d.training.adam import AdamState, adam_step, lr_at
from refine3d.training.metrics_log import MetricsLog, MetricsRow
from refine3d.training.sampling import Batch, BatchSampler
from refine3d.training.state import ConvergenceMonitor, PhaseName, TrainState

logger = logging.getLogger(__name__)

ENCODER_DECODER: FrozenSet[Partition] = frozenset({Partition.THETA_BASE, Partition.PHI_REF})
ATTENTION: FrozenSet[Partition] = frozenset({Partition.PHI_ATT, Partition.PHI_REF})
EVERYTHING: FrozenSet[Partition] = frozenset(Partition)

PhaseCallback = Callable[[PhaseName, "JTSOTrainer"], None]


class JTSOTrainer:
    """
    Owns the network, one Adam state per partition, the TrainState and the batch RNG.

    Every update is driven by l_m = (l_p + l_r) / 2. Because l_p does not depend on the
    refiner, the refiner's share of that gradient is exactly half of dl_r; it is scaled
    by 2 before the refiner's Adam step.
    """

    def __init__(
        self,
        net: Refine3DNet,
        dataset: Dataset,
        run: RunConfig,
        state: Optional[TrainState] = None,
        optimizers: Optional[Dict[Partition, AdamState]] = None,
        metrics: Optional[MetricsLog] = None,
    ):
        self.net = net
        self.run = run
        self.state = state or TrainState(seed=run.seed, lr=run.lr)
        self.optimizers = {p: AdamState() for p in Partition}
        self.optimizers.update(optimizers or {})
        self.metrics = metrics or MetricsLog()
        self.last_val_iou: Optional[float] = None

        self.rng = np.random.default_rng(run.seed)
        if self.state.rng_state is not None:
            self.rng.bit_generator.state = self.state.rng_state

        self.train_samples = dataset.split("train")
        if not self.train_samples:
            raise EmptySetError("the dataset has no training samples")
        self.val_samples = dataset.split("val") or self.train_samples
        self.sampler = BatchSampler(self.train_samples, self.rng)
        self.steps_per_epoch = run.steps_per_epoch or max(1, math.ceil(len(self.train_samples) / run.batch_size))

    # ---------------- single update ----------------
    def current_lr(self) -> float:
        self.state.epoch = self.state.global_step // self.steps_per_epoch
        return lr_at(
            self.state.epoch, self.run.lr, self.run.lr_decay_epochs, self.run.lr_decay_factor, self.run.lr_decay_mode
        )

    def compute_losses(self, batch: Batch, training: bool = True):
        """(l_p, l_r, l_m, refined volume) for one batch"""
        v_decoder, v_refined = self.net.forward(batch.images, training=training)
        l_p = voxel_cross_entropy(v_decoder, batch.gt)
        l_r = voxel_cross_entropy(v_refined, batch.gt)
        return l_p, l_r, ops.scalar_mul(ops.add(l_p, l_r), 0.5), v_refined

    def step(self, batch: Batch, update: Iterable[Partition]) -> LossTriple:
        """One forward/backward pass on `batch` and an Adam step for the partitions in `update`"""
        reset_graph()
        self.net.params.zero_grad()
        l_p, l_r, l_m, _ = self.compute_losses(batch)
        losses = LossTriple(l_p=float(l_p.item()), l_r=float(l_r.item()))
        if not all(math.isfinite(v) for v in (losses.l_p, losses.l_r)):
            raise NumericError(
                f"non-finite loss at step {self.state.global_step} (phase {self.state.phase}): "
                f"l_p={losses.l_p} l_r={losses.l_r}"
            )
        backward(l_m)

        lr = self.current_lr()
        for partition in sorted(update, key=lambda p: p.value):
            scale = 2.0 if partition == Partition.PHI_REF else 1.0
            adam_step(self.net.params.parameters(partition), self.optimizers[partition], lr, grad_scale=scale)
        self.state.lr = lr
        self.state.global_step += 1
        self.metrics.append(
            MetricsRow(
                step=self.state.global_step,
                phase=self.state.phase or "",
                l_p=losses.l_p,
                l_r=losses.l_r,
                l_m=losses.l_m,
                lr=lr,
            )
        )
        logger.debug(
            "step %d phase %s views %d: l_p=%.5f l_r=%.5f l_m=%.5f",
            self.state.global_step, self.state.phase, batch.views, losses.l_p, losses.l_r, losses.l_m,
        )
        return losses

    # ---------------- validation ----------------
    def _validation_views(self, sample: Sample) -> int:
        if self.state.phase == "1":
            return 1
        return min(sample.view_count, self.run.views_max)

    def validate(self) -> LossTriple:
        """Eval-mode l_p / l_r over the validation samples and their mean IoU on the refined output"""
        l_ps, l_rs, ious = [], [], []
        with no_grad():
            for sample in self.val_samples:
                n = self._validation_views(sample)
                if n < 1:
                    continue
                batch = Batch(sample.images[None, :n], sample.gt[None].astype(np.float32), [sample.category])
                l_p, l_r, _, v_refined = self.compute_losses(batch, training=False)
                l_ps.append(l_p.item())
                l_rs.append(l_r.item())
                ious.append(iou(v_refined.data[0], sample.gt, self.run.threshold))
        if not l_ps:
            raise EmptySetError("no validation sample has a usable view")
        self.last_val_iou = math.fsum(ious) / len(ious)
        return LossTriple(l_p=math.fsum(l_ps) / len(l_ps), l_r=math.fsum(l_rs) / len(l_rs))

    def _maybe_evaluate(self, monitor: ConvergenceMonitor) -> bool:
        """Evaluate every `eval_every` steps; True once the phase has converged"""
        if self.state.global_step % self.run.eval_every != 0:
            return False
        val = self.validate()
        self.metrics.set_last_val_iou(self.last_val_iou)
        converged = monitor.update(val.l_m)
        logger.info(
            "Phase %s step %d: val l_m=%.5f val IoU=%.4f lr=%g (patience %d/%d)",
            self.state.phase, self.state.global_step, val.l_m, self.last_val_iou, self.state.lr,
            self.state.bad_evals, self.run.patience,
        )
        return converged

    # ---------------- phases ----------------
    def _begin(self, phase: PhaseName, allow_out_of_order: bool) -> ConvergenceMonitor:
        self.state.begin_phase(phase, allow_out_of_order)
        logger.info("Starting phase %s at step %d", phase, self.state.global_step)
        return ConvergenceMonitor(self.state, self.run.patience, self.run.min_delta)

    def _finish(self, phase: PhaseName, steps: int, converged: bool) -> TrainState:
        self.state.finish_phase()
        self.state.rng_state = self.rng.bit_generator.state
        logger.info(
            "Finished phase %s after %d update(s)%s", phase, steps, " (converged)" if converged else " (step budget)"
        )
        return self.state

    def train_phase1(self, allow_out_of_order: bool = False) -> TrainState:
        monitor = self._begin("1", allow_out_of_order)
        converged, steps = False, 0
        while steps < self.run.phase1_steps and not converged:
            self.step(self.sampler.single_view(self.run.batch_size), ENCODER_DECODER)
            steps += 1
            converged = self._maybe_evaluate(monitor)
        return self._finish("1", steps, converged)

    def train_phase2(self, allow_out_of_order: bool = False) -> TrainState:
        monitor = self._begin("2", allow_out_of_order)
        converged, steps = False, 0
        while steps < self.run.phase2_steps and not converged:
            batch = self.sampler.multi_view(self.run.batch_size, self.run.views_max)
            if batch is None:
                raise EmptySetError("phase 2 needs training samples with at least two views")
            self.step(batch, ATTENTION)
            steps += 1
            converged = self._maybe_evaluate(monitor)
        return self._finish("2", steps, converged)

    def train_phase3(self, allow_out_of_order: bool = False) -> TrainState:
        """Alternating A (single view, encoder-decoder) and B (same category, multi-view, attention) sub-steps"""
        monitor = self._begin("3", allow_out_of_order)
        converged, steps = False, 0
        for _ in range(self.run.phase3_steps):
            if converged:
                break
            _, batch_a, batch_b = self.sampler.category_pair(self.run.batch_size, self.run.views_max)
            self.step(batch_a, ENCODER_DECODER)
            steps += 1
            converged = self._maybe_evaluate(monitor)
            if batch_b is not None:
                self.step(batch_b, ATTENTION)
                steps += 1
                converged = self._maybe_evaluate(monitor) or converged
        return self._finish("3", steps, converged)

    def train_joint(self) -> TrainState:
        """Baseline: every partition updated together on batches with 1..views_max views"""
        monitor = self._begin("joint", True)
        converged, steps = False, 0
        while steps < self.run.joint_steps and not converged:
            self.step(self.sampler.any_view(self.run.batch_size, self.run.views_max), EVERYTHING)
            steps += 1
            converged = self._maybe_evaluate(monitor)
        return self._finish("joint", steps, converged)

    def run_phases(
        self,
        phases: List[PhaseName],
        allow_out_of_order: bool = False,
        on_phase_end: Optional[PhaseCallback] = None,
    ) -> TrainState:
        runners = {
            "1": self.train_phase1,
            "2": self.train_phase2,
            "3": self.train_phase3,
        }
        for phase in phases:
            if phase == "joint":
                self.train_joint()
            else:
                runners[phase](allow_out_of_order)
            if on_phase_end is not None:
                on_phase_end(phase, self)
        return self.state


def training_iou(net: Refine3DNet, samples: List[Sample], threshold: float = 0.25, views: int = 1) -> float:
    """Mean refined-output IoU over `samples` using their first `views` views (eval mode)"""
    scores = []
    with no_grad():
        for sample in samples:
            n = min(views, sample.view_count)
            _, v_refined = net.forward(Tensor(sample.images[:n]), training=False)
            scores.append(iou(v_refined.data, sample.gt, threshold))
    return math.fsum(scores) / len(scores)
