import logging
from typing import Dict, Iterable, List

import numpy as np

from src.utils.errors import ShapeError

logger = logging.getLogger(__name__)

WEIGHT = "weight"
ARCH = "arch"


class ParamStore:
    """Ordered id -> tensor map with a weight section (w) and an arch section (alpha).

    Ids are dense integers handed out in insertion order, so two stores built
    from the same network spec enumerate their parameters identically.
    """

    def __init__(self):
        self._tensors: Dict[int, np.ndarray] = {}
        self._sections: Dict[int, str] = {}
        self._names: Dict[int, str] = {}

    def add(self, name: str, tensor: np.ndarray, section: str = WEIGHT) -> int:
        if section not in (WEIGHT, ARCH):
            raise ValueError(f"unknown section {section!r}")
        pid = len(self._tensors)
        self._tensors[pid] = np.asarray(tensor, dtype=np.float64)
        self._sections[pid] = section
        self._names[pid] = name
        return pid

    def __getitem__(self, pid: int) -> np.ndarray:
        return self._tensors[pid]

    def __len__(self) -> int:
        return len(self._tensors)

    def __contains__(self, pid: int) -> bool:
        return pid in self._tensors

    def bind(self, pid: int, tensor: np.ndarray) -> None:
        """Point a slot at an existing array (shared, not copied)."""
        if tensor.shape != self._tensors[pid].shape:
            raise ShapeError("bind", (self._names[pid], self._tensors[pid].shape, tensor.shape))
        self._tensors[pid] = tensor

    def ids(self, section: str | None = None) -> List[int]:
        return [pid for pid in self._tensors if section is None or self._sections[pid] == section]

    def section(self, pid: int) -> str:
        return self._sections[pid]

    def name(self, pid: int) -> str:
        return self._names[pid]

    def get_weights(self) -> List[np.ndarray]:
        return [self._tensors[pid].copy() for pid in self.ids(WEIGHT)]

    def load_weights(self, weights: Iterable[np.ndarray]) -> None:
        """Copy values into the weight section in id order (arrays keep their identity)."""
        weights = list(weights)
        ids = self.ids(WEIGHT)
        if len(weights) != len(ids):
            raise ShapeError("load_weights", (len(ids), len(weights)), "tensor count differs")
        for pid, value in zip(ids, weights):
            if value.shape != self._tensors[pid].shape:
                raise ShapeError("load_weights", (self._names[pid], self._tensors[pid].shape, value.shape))
            self._tensors[pid][...] = value

    def copy(self) -> "ParamStore":
        clone = ParamStore()
        for pid in self._tensors:
            clone.add(self._names[pid], self._tensors[pid].copy(), self._sections[pid])
        return clone


def parameter_count(store: ParamStore) -> int:
    """Element count of the weight section."""
    return int(sum(store[pid].size for pid in store.ids(WEIGHT)))


def clip_grad_norm(grads: Dict[int, np.ndarray], ids: Iterable[int], max_norm: float) -> float:
    """Scale the listed gradients in place so their global L2 norm is at most max_norm."""
    ids = list(ids)
    total = float(np.sqrt(sum(float(np.sum(grads[pid] * grads[pid])) for pid in ids)))
    if total > max_norm:
        coef = max_norm / (total + 1e-6)
        for pid in ids:
            grads[pid] *= coef
        if total > 10 * max_norm:
            logger.warning(f"gradient norm {total:.3g} clipped to {max_norm}")
    return total


def sgd_step(store: ParamStore, grads: Dict[int, np.ndarray], section: str, lr: float,
             momentum: float = 0.0, weight_decay: float = 0.0,
             buffers: Dict[int, np.ndarray] | None = None) -> None:
    """In-place p <- p - lr * g over one section; the other section is untouched."""
    if lr < 0:
        raise ValueError(f"learning rate must be non-negative, got {lr}")
    ids = store.ids(section)
    missing = [pid for pid in ids if pid not in grads]
    if missing:
        raise KeyError(f"missing gradients for {section} parameters {missing}")
    if lr == 0:
        return
    for pid in ids:
        g = grads[pid]
        if weight_decay:
            g = g + weight_decay * store[pid]
        if momentum:
            if buffers is None:
                raise ValueError("momentum needs a buffer dict")
            buf = buffers.get(pid)
            buf = g.copy() if buf is None else momentum * buf + g
            buffers[pid] = buf
            g = buf
        store[pid][...] -= lr * g
