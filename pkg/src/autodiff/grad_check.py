"""Central finite-difference oracle for the analytic gradients."""

from dataclasses import dataclass
from typing import Callable, Iterable, List, Tuple

import numpy as np

from src.autodiff.param_store import ParamStore
from src.autodiff.tensor_ops import ComputeGraph, backward
from src.utils.errors import NumericalError

LossFn = Callable[[ParamStore], Tuple[ComputeGraph, int]]


@dataclass
class GradCheckReport:
    worst: float
    checked: int
    skipped: int


def _evaluate(loss_fn: LossFn, store: ParamStore) -> Tuple[float, List[np.ndarray]]:
    graph, node = loss_fn(store)
    value = float(graph.value(node))
    if not np.isfinite(value):
        raise NumericalError("non-finite loss during finite differences")
    return value, graph.branches()


def _same_branches(a: List[np.ndarray], b: List[np.ndarray]) -> bool:
    return len(a) == len(b) and all(np.array_equal(x, y) for x, y in zip(a, b))


def finite_diff_report(loss_fn: LossFn, store: ParamStore, epsilon: float = 1e-5,
                       ids: Iterable[int] | None = None, max_coords: int | None = None,
                       seed: int = 0, skip_kinks: bool = False) -> GradCheckReport:
    """Compare analytic and central-difference gradients coordinate by coordinate.

    loss_fn rebuilds the graph from the store and returns (graph, scalar node).
    max_coords checks that many coordinates per tensor, drawn at random.
    With skip_kinks, a coordinate whose +-epsilon stencil flips a ReLU mask or
    a max-pool selection is not differentiable across the stencil; it is
    skipped and the next random coordinate is drawn instead.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    graph, node = loss_fn(store)
    if not np.isfinite(graph.value(node)).all():
        raise NumericalError("non-finite loss")
    analytic = backward(graph, node, store)
    center = graph.branches()

    rng = np.random.default_rng(seed)
    worst, checked, skipped = 0.0, 0, 0
    for pid in (store.ids() if ids is None else ids):
        tensor = store[pid]
        order = np.arange(tensor.size)
        budget = tensor.size
        if max_coords is not None and tensor.size > max_coords:
            order = rng.permutation(tensor.size)
            budget = max_coords
        done = 0
        for c in order:
            if done == budget:
                break
            # index through the tensor itself so non-contiguous slots are perturbed in place
            at = np.unravel_index(int(c), tensor.shape)
            original = tensor[at]
            tensor[at] = original + epsilon
            f_plus, b_plus = _evaluate(loss_fn, store)
            tensor[at] = original - epsilon
            f_minus, b_minus = _evaluate(loss_fn, store)
            tensor[at] = original
            if skip_kinks and not (_same_branches(center, b_plus) and _same_branches(center, b_minus)):
                skipped += 1
                continue
            numeric = (f_plus - f_minus) / (2 * epsilon)
            grad = analytic[pid][at]
            worst = max(worst, abs(grad - numeric) / max(1e-8, abs(grad) + abs(numeric)))
            checked += 1
            done += 1
    return GradCheckReport(float(worst), checked, skipped)


def finite_diff_check(loss_fn: LossFn, store: ParamStore, epsilon: float = 1e-5,
                      ids: Iterable[int] | None = None, max_coords: int | None = None,
                      seed: int = 0, skip_kinks: bool = False) -> float:
    """Max over coordinates of |analytic - numeric| / max(1e-8, |analytic| + |numeric|)."""
    return finite_diff_report(loss_fn, store, epsilon, ids, max_coords, seed, skip_kinks).worst
