"""
Trainer state, phase ordering and the convergence monitor
"""
import logging
from typing import Any, Dict, List, Literal, Optional

from pydantic import BaseModel, Field

from refine3d.errors import PhaseOrderError

logger = logging.getLogger(__name__)

PhaseName = Literal["1", "2", "3", "joint"]
PHASE_PREREQUISITE = {"2": "1", "3": "2"}


class TrainState(BaseModel):
    phase: Optional[PhaseName] = None
    completed_phases: List[PhaseName] = Field(default_factory=list)
    epoch: int = 0
    global_step: int = 0
    lr: float = 0.001
    best_val_lm: Optional[float] = None
    bad_evals: int = 0
    seed: int = 0
    rng_state: Optional[Dict[str, Any]] = None

    def begin_phase(self, phase: PhaseName, allow_out_of_order: bool = False) -> None:
        """Enforce 1 -> 2 -> 3 and reset the convergence monitor for the new phase"""
        needed = PHASE_PREREQUISITE.get(phase)
        if needed and needed not in self.completed_phases:
            if not allow_out_of_order:
                raise PhaseOrderError(f"phase {phase} needs phase {needed} to be completed first")
            logger.warning("Starting phase %s without phase %s (out-of-order override)", phase, needed)
        self.phase = phase
        self.best_val_lm = None
        self.bad_evals = 0

    def finish_phase(self) -> None:
        if self.phase is not None and self.phase not in self.completed_phases:
            self.completed_phases.append(self.phase)


class ConvergenceMonitor:
    """
    Stops a phase after `patience` evaluations without an improvement of more than
    `min_delta` in validation l_m. Its counters live on the TrainState.
    """

    def __init__(self, state: TrainState, patience: int = 10, min_delta: float = 1e-4):
        self.state = state
        self.patience = patience
        self.min_delta = min_delta

    def update(self, val_lm: float) -> bool:
        best = self.state.best_val_lm
        if best is None or val_lm < best - self.min_delta:
            self.state.best_val_lm = val_lm
            self.state.bad_evals = 0
        else:
            self.state.bad_evals += 1
        return self.converged

    @property
    def converged(self) -> bool:
        return self.state.bad_evals >= self.patience
