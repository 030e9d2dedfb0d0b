"""
Client-side optimization.

Search stage (mixed-level): per training minibatch, one SGD step on the
weights with alpha frozen, then one step on alpha along
grad_alpha L_train + lambda * grad_alpha L_val with the weights frozen.
Evaluation stage: plain SGD on the weights of the discretized network.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, Iterator, List, Sequence, Tuple

import numpy as np

from src.autodiff.param_store import ARCH, WEIGHT, ParamStore, clip_grad_norm, sgd_step
from src.autodiff.tensor_ops import backward
from src.data_ops.data_loader import Dataset
from src.data_ops.data_processor import ClientShard, augment_batch
from src.search_space.genotypes import ArchParams
from src.search_space.model_search import CellNetwork
from src.utils.errors import ConfigError, DatasetError, NumericalError
from src.utils.utils import spawn_rngs

logger = logging.getLogger(__name__)

Batch = Tuple[np.ndarray, np.ndarray]


@dataclass(frozen=True)
class SearchHyper:
    eta_w: float = 0.05
    eta_alpha: float = 0.03
    lam: float = 1.0
    local_epochs: int = 5
    batch_size: int = 64
    grad_clip: float | None = None
    momentum: float = 0.0
    weight_decay: float = 0.0
    augment: bool = False

    def validate(self) -> None:
        if self.eta_w < 0 or self.eta_alpha < 0:
            raise ConfigError("learning rates must be non-negative")
        if self.lam < 0:
            raise ConfigError(f"lambda must be >= 0, got {self.lam}")
        if self.local_epochs < 0 or self.batch_size < 1:
            raise ConfigError("local_epochs must be >= 0 and batch_size >= 1")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ConfigError(f"grad_clip must be positive or None, got {self.grad_clip}")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigError("momentum must be in [0, 1) and weight_decay >= 0")


@dataclass
class ClientState:
    """Everything one client owns. The generators persist across rounds."""

    client_id: int
    shard: ClientShard
    dataset: Dataset
    rng_seed: int
    net: CellNetwork
    store: ParamStore
    arch: ArchParams | None = None
    momentum_buffers: Dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        self.train_rng, self.val_rng, self.aug_rng = spawn_rngs(self.rng_seed, 3)
        self._val_order = np.empty(0, dtype=np.int64)
        self._val_pos = 0

    def train_batches(self, indices: np.ndarray, hyper: SearchHyper) -> Iterator[Batch]:
        """One epoch over `indices` in a fresh shuffled order."""
        order = self.train_rng.permutation(indices)
        for start in range(0, len(order), hyper.batch_size):
            x, y = self.dataset.batch(order[start:start + hyper.batch_size])
            if hyper.augment:
                x = augment_batch(x, self.aug_rng)
            yield x, y

    def next_val_batch(self, hyper: SearchHyper) -> Batch:
        # Cycles the validation part independently of the training epochs
        if self._val_pos >= len(self._val_order):
            self._val_order = self.val_rng.permutation(self.shard.val_indices)
            self._val_pos = 0
        chunk = self._val_order[self._val_pos:self._val_pos + hyper.batch_size]
        self._val_pos += hyper.batch_size
        return self.dataset.batch(chunk)


def _check_finite(state: ClientState, loss: float, stage: str) -> None:
    if not np.isfinite(loss):
        raise NumericalError(f"non-finite {stage} loss", {"client": state.client_id, "loss": loss})


def weight_gradient(state: ClientState, batch: Batch) -> Tuple[Dict[int, np.ndarray], float]:
    graph, loss_node, _ = state.net.loss(state.store, state.arch, *batch)
    loss = float(graph.value(loss_node))
    _check_finite(state, loss, "train")
    return backward(graph, loss_node, state.store), loss


def arch_gradient(state: ClientState, batch: Batch) -> Tuple[Dict[int, np.ndarray], float]:
    """grad_alpha of the batch loss, restricted to the arch section."""
    grads, loss = weight_gradient(state, batch)
    return {pid: grads[pid] for pid in state.store.ids(ARCH)}, loss


def step_w(state: ClientState, train_batch: Batch, hyper: SearchHyper) -> float:
    grads, loss = weight_gradient(state, train_batch)
    if hyper.grad_clip is not None:
        clip_grad_norm(grads, state.store.ids(WEIGHT), hyper.grad_clip)
    sgd_step(state.store, grads, WEIGHT, hyper.eta_w, hyper.momentum, hyper.weight_decay,
             state.momentum_buffers)
    return loss


def step_alpha(state: ClientState, train_batch: Batch, val_batch: Batch,
               hyper: SearchHyper) -> Tuple[float, float]:
    g_train, train_loss = arch_gradient(state, train_batch)
    g_val, val_loss = arch_gradient(state, val_batch)
    _check_finite(state, val_loss, "validation")
    combined = {pid: g_train[pid] + hyper.lam * g_val[pid] for pid in g_train}
    sgd_step(state.store, combined, ARCH, hyper.eta_alpha)
    return train_loss, val_loss


def _require_data(state: ClientState, need_val: bool) -> None:
    if len(state.shard.train_indices) == 0 or (need_val and len(state.shard.val_indices) == 0):
        raise DatasetError(f"client {state.client_id} has an empty shard")


def client_local_search(state: ClientState, w_in: Sequence[np.ndarray], alpha_in: ArchParams,
                        hyper: SearchHyper) -> Tuple[List[np.ndarray], ArchParams, int]:
    """E epochs of (w-step, alpha-step) per minibatch; returns copies and N_k."""
    _require_data(state, need_val=True)
    if state.arch is None:
        raise ConfigError("local search needs architecture parameters")
    state.store.load_weights(w_in)
    state.arch.load(alpha_in)

    for epoch in range(hyper.local_epochs):
        losses = []
        for train_batch in state.train_batches(state.shard.train_indices, hyper):
            step_w(state, train_batch, hyper)
            losses.append(step_alpha(state, train_batch, state.next_val_batch(hyper), hyper))
        train_loss, val_loss = np.mean(losses, axis=0)
        logger.debug(f"client {state.client_id} epoch {epoch}: train {train_loss:.4f} val {val_loss:.4f}")

    return state.store.get_weights(), state.arch.copy(), state.shard.num_samples


def client_local_train(state: ClientState, w_in: Sequence[np.ndarray],
                       hyper: SearchHyper) -> Tuple[List[np.ndarray], int]:
    """Weight-only local update over the whole shard (train and validation parts)."""
    _require_data(state, need_val=False)
    state.store.load_weights(w_in)
    indices = np.concatenate([state.shard.train_indices, state.shard.val_indices])

    for epoch in range(hyper.local_epochs):
        losses = [step_w(state, batch, hyper) for batch in state.train_batches(indices, hyper)]
        logger.debug(f"client {state.client_id} epoch {epoch}: train {np.mean(losses):.4f}")

    return state.store.get_weights(), state.shard.num_samples


def evaluate(net: CellNetwork, store: ParamStore, arch: ArchParams | None, dataset: Dataset,
             batch_size: int = 256) -> Tuple[float, float]:
    """Mean loss and accuracy over the whole dataset, in index order.

    Batch norm uses the statistics of each evaluation batch.
    """
    if dataset is None or len(dataset) == 0:
        raise DatasetError("cannot evaluate on an empty dataset")
    total_loss, correct = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        x, y = dataset.batch(np.arange(start, min(start + batch_size, len(dataset))))
        graph, loss_node, logits = net.loss(store, arch, x, y)
        total_loss += float(graph.value(loss_node)) * len(y)
        correct += int(np.sum(np.argmax(graph.value(logits), axis=1) == y))
    return total_loss / len(dataset), correct / len(dataset)


def dump_logits(net: CellNetwork, store: ParamStore, arch: ArchParams | None, dataset: Dataset,
                batch_size: int = 256) -> np.ndarray:
    """Logits of every sample, batched exactly like evaluate."""
    out = []
    for start in range(0, len(dataset), batch_size):
        x, y = dataset.batch(np.arange(start, min(start + batch_size, len(dataset))))
        graph, _, logits = net.loss(store, arch, x, y)
        out.append(graph.value(logits).copy())
    return np.concatenate(out)
