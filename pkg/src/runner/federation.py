"""
Round-synchronous federation: weighted aggregation, the server-side
coordinator and the client-side worker. Transports only move their inputs
and outputs around.
"""

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from src.autodiff.param_store import ParamStore, parameter_count
from src.comm.messages import LocalResult
from src.comm.wire import tensor_block_size
from src.data_ops.data_loader import Dataset
from src.data_ops.data_processor import ClientShard
from src.opt_model.local_search import ClientState, SearchHyper, client_local_search, client_local_train, evaluate
from src.search_space.genotype_export import from_json, to_json
from src.search_space.genotypes import ArchParams, Genotype, NetworkSpec, discretize
from src.search_space.model_fixed import FixedNetwork, build_fixed_network
from src.search_space.model_search import CellNetwork, SuperNetwork, build_super_network
from src.utils.errors import AggregationError, ConfigError, RoundFailure, ShapeError
from src.utils.utils import canonical_json, sha256_hex

logger = logging.getLogger(__name__)

MODES = ("search", "eval")
TRANSPORTS = ("sequential", "inprocess", "tcp")


@dataclass(frozen=True)
class FedConfig:
    num_clients: int
    rounds: int
    hyper: SearchHyper = field(default_factory=SearchHyper)
    spec: NetworkSpec = field(default_factory=NetworkSpec)
    seed: int = 0
    mode: str = "search"
    transport: str = "sequential"
    eval_batch_size: int = 256
    round_timeout: float | None = None
    broadcast_eval: bool = False
    record_client_payloads: bool = False
    host: str = "127.0.0.1"
    port: int = 0
    data_tag: str = ""

    def validate(self) -> None:
        if self.num_clients < 1:
            raise ConfigError(f"num_clients must be >= 1, got {self.num_clients}")
        if self.rounds < 1:
            raise ConfigError(f"rounds must be >= 1, got {self.rounds}")
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.transport not in TRANSPORTS:
            raise ConfigError(f"transport must be one of {TRANSPORTS}, got {self.transport!r}")
        if self.round_timeout is not None and self.round_timeout <= 0:
            raise ConfigError("round_timeout must be positive")
        self.hyper.validate()
        self.spec.validate()


def fed_config_hash(config: FedConfig) -> str:
    """Hash of everything that changes the numbers a run produces."""
    return sha256_hex(canonical_json({
        "num_clients": config.num_clients,
        "rounds": config.rounds,
        "hyper": asdict(config.hyper),
        "spec": config.spec.to_dict(),
        "seed": config.seed,
        "mode": config.mode,
        "eval_batch_size": config.eval_batch_size,
        "data": config.data_tag,
    }))


@dataclass(eq=False)
class ClientUpdate:
    client_id: int
    weights: List[np.ndarray] | None
    alpha: ArchParams | None
    num_samples: int


@dataclass(eq=False)
class RoundResult:
    round: int  # 1-based: the state after this many rounds
    phase: str
    clients: List[ClientUpdate]
    global_test_loss: float
    global_test_acc: float
    duration_ms: float
    global_alpha: ArchParams | None = None
    global_weights: List[np.ndarray] | None = None
    genotype: Genotype | None = None

    @property
    def client_count(self) -> int:
        return len(self.clients)

    def row(self) -> Dict[str, Any]:
        return {
            "round": self.round,
            "phase": self.phase,
            "client_count": self.client_count,
            "global_test_loss": self.global_test_loss,
            "global_test_acc": self.global_test_acc,
            "duration_ms": self.duration_ms,
        }


def _weighted_sum(coefs: Sequence[float], tensor_lists: Sequence[Sequence[np.ndarray]]) -> List[np.ndarray]:
    # Fresh float64 arrays, 0-d included; accumulation order is the list order
    out = [np.array(coefs[0] * np.asarray(t, dtype=np.float64), dtype=np.float64) for t in tensor_lists[0]]
    for c, tensors in zip(coefs[1:], tensor_lists[1:]):
        for acc, t in zip(out, tensors):
            np.add(acc, c * np.asarray(t, dtype=np.float64), out=acc)
    return out


def aggregate(updates: Sequence[ClientUpdate]) -> Tuple[List[np.ndarray], ArchParams | None]:
    """sum_k (N_k / N) * x_k for every weight tensor and both alpha matrices.

    Accumulates in ascending client id whatever order the updates arrive in.
    """
    if not updates:
        raise AggregationError("nothing to aggregate")
    ordered = sorted(updates, key=lambda u: u.client_id)
    total = sum(u.num_samples for u in ordered)
    if total <= 0:
        raise AggregationError(f"total sample count must be positive, got {total}")
    if any(u.num_samples < 0 for u in ordered):
        raise AggregationError("negative sample count")

    shapes = [w.shape for w in ordered[0].weights]
    has_alpha = ordered[0].alpha is not None
    for u in ordered[1:]:
        if [w.shape for w in u.weights] != shapes:
            raise ShapeError("aggregate", (ordered[0].client_id, u.client_id), "weight shapes differ")
        if (u.alpha is not None) != has_alpha:
            raise AggregationError("some clients sent alpha and some did not")

    coefs = [u.num_samples / total for u in ordered]
    weights = _weighted_sum(coefs, [u.weights for u in ordered])

    if not has_alpha:
        return weights, None
    alpha = _weighted_sum(coefs, [u.alpha.tensors() for u in ordered])
    return weights, ArchParams(*alpha)


def global_test(net: CellNetwork, store: ParamStore, arch: ArchParams | None, test_set: Dataset,
                batch_size: int = 256) -> Tuple[float, float]:
    """Server-side test on the held-out set; never sees client shards."""
    return evaluate(net, store, arch, test_set, batch_size)


# ===== init spec carried by the Init message =====

def init_spec_text(config: FedConfig, genotype: Genotype | None) -> str:
    return canonical_json({
        "mode": config.mode,
        "rounds": config.rounds,
        "network": config.spec.to_dict(),
        "genotype": json.loads(to_json(genotype)) if genotype is not None else None,
    })


def parse_init_spec(text: str) -> Tuple[str, NetworkSpec, Genotype | None]:
    payload = json.loads(text)
    genotype = from_json(json.dumps(payload["genotype"])) if payload["genotype"] is not None else None
    return payload["mode"], NetworkSpec.from_dict(payload["network"]), genotype


class FederatedServer:
    """Holds (w_t, alpha_t) and the global test set; one instance per run."""

    def __init__(self, config: FedConfig, test_set: Dataset, genotype: Genotype | None = None):
        config.validate()
        self.config = config
        self.num_clients = config.num_clients
        self.rounds = config.rounds
        self.test_set = test_set
        self.genotype = genotype
        if config.mode == "search":
            self.net, self.store, self.arch = build_super_network(config.spec, config.seed)
        else:
            if genotype is None:
                raise ConfigError("evaluation mode needs a genotype")
            self.net, self.store = build_fixed_network(genotype, config.spec, config.seed)
            self.arch = None
        self.history: List[RoundResult] = []
        self.trace: List[Tuple[int, str, str]] = []  # filled by networked transports
        self._started = 0.0
        logger.info(f"{config.mode} server: {self.num_clients} clients, {self.rounds} rounds, "
                    f"{parameter_count(self.store) / 1e6:.4f}M weights")
        shapes = [w.shape for w in self.store.get_weights()]
        if self.arch is not None:
            shapes += [a.shape for a in self.arch.tensors()]
        logger.debug(f"per-client payload each way: {tensor_block_size(shapes)} tensor bytes")

    def init_spec(self) -> str:
        return init_spec_text(self.config, self.genotype)

    def start_round(self, t: int) -> None:
        if t != len(self.history):
            raise RoundFailure(t, f"expected round {len(self.history)}")
        self._started = time.perf_counter()

    def broadcast(self) -> Tuple[List[np.ndarray], List[np.ndarray] | None]:
        alpha = None if self.arch is None else [a.copy() for a in self.arch.tensors()]
        return self.store.get_weights(), alpha

    def complete_round(self, t: int, results: Sequence[LocalResult | ClientUpdate]) -> RoundResult:
        updates = [_as_update(r) for r in results]
        ids = sorted(u.client_id for u in updates)
        if ids != list(range(self.num_clients)):
            raise RoundFailure(t, f"expected one result per client 0..{self.num_clients - 1}, got {ids}")

        weights, alpha = aggregate(updates)
        self.store.load_weights(weights)
        if self.arch is not None:
            if alpha is None:
                raise AggregationError("search round without alpha")
            self.arch.load(alpha)
        loss, acc = global_test(self.net, self.store, self.arch, self.test_set, self.config.eval_batch_size)
        duration_ms = (time.perf_counter() - self._started) * 1000.0

        genotype = discretize(self.arch) if self.arch is not None else self.genotype
        keep = self.config.record_client_payloads
        clients = [u if keep else ClientUpdate(u.client_id, None, None, u.num_samples) for u in updates]
        result = RoundResult(
            round=t + 1,
            phase=self.config.mode,
            clients=clients,
            global_test_loss=loss,
            global_test_acc=acc,
            duration_ms=duration_ms,
            global_alpha=self.arch.copy() if self.arch is not None else None,
            global_weights=self.store.get_weights() if keep else None,
            genotype=genotype,
        )
        self.history.append(result)
        logger.info(f"round {t + 1}/{self.rounds}: test loss {loss:.4f} acc {acc:.4f} ({duration_ms:.0f} ms)")
        if self.arch is not None:
            logger.info(f"round {t + 1} genotype: {genotype}")
        return result

    def summary(self) -> Dict[str, Any]:
        res: Dict[str, Any] = {
            "rounds": len(self.history),
            "client_count": self.num_clients,
            "total_seconds": sum(r.duration_ms for r in self.history) / 1000.0,
        }
        if self.history:
            best = max(self.history, key=lambda r: r.global_test_acc)
            res.update(final_test_loss=self.history[-1].global_test_loss,
                       final_test_acc=self.history[-1].global_test_acc,
                       best_test_acc=best.global_test_acc, best_round=best.round)
        key = "super_network_params" if self.config.mode == "search" else "fixed_network_params"
        res[key] = parameter_count(self.store)
        if self.arch is not None:
            genotype = discretize(self.arch)
            res["genotype"] = str(genotype)
            res["fixed_network_params"] = parameter_count(build_fixed_network(genotype, self.config.spec, 0)[1])
        elif self.genotype is not None:
            res["genotype"] = str(self.genotype)
        return res


def _as_update(r: LocalResult | ClientUpdate) -> ClientUpdate:
    if isinstance(r, ClientUpdate):
        return r
    alpha = ArchParams(*r.alpha) if r.alpha is not None else None
    return ClientUpdate(r.client_id, r.weights, alpha, r.num_samples)


class LocalWorker:
    """One client's trainer; keeps its ClientState (and generators) across rounds."""

    def __init__(self, client_id: int, shard: ClientShard, dataset: Dataset, hyper: SearchHyper,
                 mode: str, spec: NetworkSpec, rng_seed: int, genotype: Genotype | None = None):
        if shard.client_id != client_id:
            raise ConfigError(f"shard of client {shard.client_id} handed to client {client_id}")
        self.mode = mode
        self.hyper = hyper
        if mode == "search":
            net = SuperNetwork(spec)
            store, arch = net.init_params(rng_seed)
        else:
            if genotype is None:
                raise ConfigError("evaluation mode needs a genotype")
            net = FixedNetwork(genotype, spec)
            store, arch = net.init_params(rng_seed), None
        # Initial values are overwritten by every GlobalUpdate
        self.state = ClientState(client_id, shard, dataset, rng_seed, net, store, arch)

    @classmethod
    def from_init(cls, spec_text: str, client_id: int, shard: ClientShard, dataset: Dataset,
                  hyper: SearchHyper, rng_seed: int) -> "LocalWorker":
        mode, spec, genotype = parse_init_spec(spec_text)
        return cls(client_id, shard, dataset, hyper, mode, spec, rng_seed, genotype)

    def run_round(self, t: int, weights: List[np.ndarray],
                  alpha: List[np.ndarray] | None) -> Tuple[List[np.ndarray], List[np.ndarray] | None, int]:
        if self.mode == "search":
            if alpha is None:
                raise RoundFailure(t, "search round without alpha", self.state.client_id)
            w, a, n = client_local_search(self.state, weights, ArchParams(*alpha), self.hyper)
            return w, a.tensors(), n
        w, n = client_local_train(self.state, weights, self.hyper)
        return w, None, n
