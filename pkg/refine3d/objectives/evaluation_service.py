"""
IoU evaluation of a trained network over a dataset split, per view count
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from refine3d.autodiff.tensor import Tensor, no_grad
from refine3d.errors import ConfigError, EmptySetError
from refine3d.model.network import Refine3DNet
from refine3d.objectives.metrics_service import DEFAULT_THRESHOLD, IouReport, aggregate, iou
from refine3d.settings import worker_count
from refine3d.synthdata.dataset_service import Sample

logger = logging.getLogger(__name__)


@dataclass
class EvaluationResult:
    refined: List[IouReport]
    decoder: List[IouReport]


def view_subset(seed: int, sample_index: int, view_count: int, n: int) -> np.ndarray:
    """The same n views of a sample for a given seed, whatever the thread layout"""
    rng = np.random.default_rng([seed, sample_index, n])
    return np.sort(rng.choice(view_count, size=n, replace=False))


def _score(net: Refine3DNet, sample: Sample, index: int, n: int, seed: int, threshold: float) -> Tuple[float, float]:
    chosen = view_subset(seed, index, sample.view_count, n)
    with no_grad():
        v_decoder, v_refined = net.forward(Tensor(sample.images[chosen]), training=False)
    return iou(v_refined.data, sample.gt, threshold), iou(v_decoder.data, sample.gt, threshold)


def evaluate(
    net: Refine3DNet,
    samples: Sequence[Sample],
    view_counts: Sequence[int],
    threshold: float = DEFAULT_THRESHOLD,
    seed: int = 0,
    threads: Optional[int] = None,
) -> EvaluationResult:
    """
    Refined and decoder-output IoU tables, one IouReport per requested view count.

    Samples are scored in parallel; results are collected in sample order, so the
    tables do not depend on the number of threads.
    """
    if not samples:
        raise EmptySetError("no samples to evaluate")
    if not view_counts:
        raise ConfigError("no view counts requested")
    for n in view_counts:
        if n < 1:
            raise ConfigError(f"view counts must be positive, got {n}")
        short = [s for s in samples if s.view_count < n]
        if short:
            raise ConfigError(
                f"{len(short)} sample(s) have fewer than {n} views (e.g. {short[0].category}/{short[0].id} "
                f"has {short[0].view_count})"
            )

    refined, decoder = [], []
    with ThreadPoolExecutor(max_workers=threads or worker_count()) as pool:
        for n in view_counts:
            scores = list(
                pool.map(lambda job: _score(net, job[1], job[0], n, seed, threshold), enumerate(samples))
            )
            refined.append(aggregate([(s.category, r) for s, (r, _) in zip(samples, scores)], n, threshold))
            decoder.append(aggregate([(s.category, d) for s, (_, d) in zip(samples, scores)], n, threshold))
            logger.info(
                "%d view(s): refined IoU %.4f, decoder IoU %.4f over %d samples",
                n, refined[-1].overall, decoder[-1].overall, len(samples),
            )
    return EvaluationResult(refined=refined, decoder=decoder)
