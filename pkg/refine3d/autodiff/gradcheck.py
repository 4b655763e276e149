"""
Finite-difference gradient oracle.

Relative error per coordinate is |a - n| / max(1e-8, |a| + |n|), with `a` the analytic
gradient from backward() and `n` the central difference.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, Optional, Tuple

import numpy as np

from refine3d.autodiff.tensor import Tensor, backward, no_grad, precision, record_branches
from refine3d.errors import GraphError

logger = logging.getLogger(__name__)


def relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(1e-8, abs(analytic) + abs(numeric))


def _scalar(value: Tensor) -> float:
    if value.data.size != 1:
        raise GraphError(f"gradient check needs a scalar function, got shape {value.shape}")
    return float(value.data.reshape(-1)[0])


def _central_difference(
    f: Callable[[], Tensor], array: np.ndarray, index: Tuple[int, ...], eps: float
) -> Tuple[float, bool]:
    """(central difference, whether both probes took the same branches through every kink)"""
    original = array[index]
    with no_grad():
        array[index] = original + eps
        with record_branches() as plus:
            f_plus = _scalar(f())
        array[index] = original - eps
        with record_branches() as minus:
            f_minus = _scalar(f())
    array[index] = original
    return (f_plus - f_minus) / (2.0 * eps), plus == minus


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-4) -> float:
    """
    Max relative error between backward() and central differences of scalar f at x.

    Runs in 64-bit; `x` is copied so the caller's data is never perturbed.
    """
    with precision(np.float64):
        source = x.data if isinstance(x, Tensor) else np.asarray(x)
        x64 = Tensor(np.array(source, dtype=np.float64), requires_grad=True)
        backward(f(x64))
        analytic = x64.grad.copy()
        worst = 0.0
        for index in np.ndindex(*x64.shape):
            numeric, _ = _central_difference(lambda: f(x64), x64.data, index, eps)
            worst = max(worst, relative_error(float(analytic[index]), numeric))
    return worst


@dataclass
class ParameterCheck:
    worst: float
    worst_name: Optional[str]
    checked: int
    # coordinates whose +eps / -eps probes straddle a relu, clip or maxpool switch
    straddled: int


def grad_check_parameters(
    loss_fn: Callable[[], Tensor],
    parameters: Dict[str, Tensor],
    coordinates: int = 200,
    eps: float = 1e-5,
    seed: int = 0,
) -> ParameterCheck:
    """
    Gradient check over a random subsample of coordinates drawn from float64 `parameters`.

    The loss is only piecewise smooth; a coordinate whose two probes land on different
    sides of a kink has no meaningful central difference and is counted in `straddled`.
    """
    names = list(parameters)
    for name in names:
        if parameters[name].dtype != np.float64:
            raise GraphError(f"parameter {name} must be float64 for a gradient check")
        parameters[name].zero_grad()
    with precision(np.float64):
        backward(loss_fn())
    rng = np.random.default_rng(seed)
    sizes = np.array([parameters[n].size for n in names], dtype=np.float64)
    picks: Iterable[int] = rng.choice(len(names), size=coordinates, p=sizes / sizes.sum())

    result = ParameterCheck(0.0, None, 0, 0)
    with precision(np.float64):
        for pick in picks:
            tensor = parameters[names[pick]]
            index = np.unravel_index(int(rng.integers(tensor.size)), tensor.shape)
            numeric, same_branches = _central_difference(loss_fn, tensor.data, index, eps)
            if not same_branches:
                result.straddled += 1
                continue
            result.checked += 1
            err = relative_error(float(tensor.grad[index]), numeric)
            if err > result.worst:
                result.worst, result.worst_name = err, names[pick]
    logger.debug(
        "Parameter gradient check: worst %.3e in %s (%d checked, %d straddled a kink)",
        result.worst, result.worst_name, result.checked, result.straddled,
    )
    return result
