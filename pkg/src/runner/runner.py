import logging
import threading
from typing import Any, Callable, Dict, List, Sequence, Tuple

from tqdm import tqdm

from src.autodiff.param_store import ParamStore
from src.comm.client import client_loop
from src.comm.server import ServerOutcome, server_loop
from src.comm.transport import TcpListener, channel_pair, connect_tcp
from src.data_ops.data_loader import Dataset
from src.data_ops.data_processor import ClientShard
from src.runner.federation import ClientUpdate, FedConfig, FederatedServer, LocalWorker, RoundResult, fed_config_hash
from src.search_space.genotypes import ArchParams, Genotype, discretize
from src.utils.errors import ConfigError, PartitionError, ProtocolError, RoundFailure
from src.utils.utils import client_seed

logger = logging.getLogger(__name__)

OnRound = Callable[[RoundResult], None] | None


# ===== transports =====
def _run_sequential(server: FederatedServer, config: FedConfig, shards: Sequence[ClientShard],
                    train_set: Dataset, on_round: OnRound) -> None:
    """All clients in this process, one after another; no messages."""
    workers = [LocalWorker(k, shards[k], train_set, config.hyper, config.mode, config.spec,
                           client_seed(config.seed, k), server.genotype)
               for k in range(config.num_clients)]
    for t in tqdm(range(config.rounds), desc=f"{config.mode} rounds", disable=None):
        server.start_round(t)
        weights, alpha = server.broadcast()
        results = []
        for k, worker in enumerate(workers):
            try:
                results.append(worker.run_round(t, weights, alpha))
            except RoundFailure:
                raise
            except Exception as exc:
                raise RoundFailure(t, str(exc), k) from exc
        updates = [ClientUpdate(k, w, ArchParams(*a) if a is not None else None, n)
                   for k, (w, a, n) in enumerate(results)]
        result = server.complete_round(t, updates)
        if on_round is not None:
            on_round(result)


def _client_thread(errors: Dict[int, BaseException], client_id: int, target: Callable[[], Any]) -> threading.Thread:
    def body():
        try:
            target()
        except BaseException as exc:
            errors[client_id] = exc
            logger.error(f"client {client_id} failed: {exc}")

    thread = threading.Thread(target=body, name=f"client-{client_id}", daemon=True)
    thread.start()
    return thread


def _run_networked(server: FederatedServer, config: FedConfig, shards: Sequence[ClientShard],
                   train_set: Dataset, on_round: OnRound) -> ServerOutcome:
    """Server loop here, one client loop per thread, over channels or loopback TCP."""
    config_hash = fed_config_hash(config)

    def make_worker_for(k: int):
        return lambda spec_text: LocalWorker.from_init(spec_text, k, shards[k], train_set, config.hyper,
                                                      client_seed(config.seed, k))

    errors: Dict[int, BaseException] = {}
    threads: List[threading.Thread] = []
    listener = None
    if config.transport == "inprocess":
        pairs = [channel_pair(f"client{k}") for k in range(config.num_clients)]
        server_ends = iter([s for s, _ in pairs])

        def accept():
            try:
                return next(server_ends)
            except StopIteration:
                raise ProtocolError("fewer clients registered than configured") from None

        for k, (_, client_end) in enumerate(pairs):
            threads.append(_client_thread(errors, k, lambda k=k, c=client_end:
                                          client_loop(c, k, config_hash, make_worker_for(k))))
    else:
        listener = TcpListener(config.host, config.port)
        host, port = listener.address

        def accept():
            return listener.accept(timeout=config.round_timeout)

        for k in range(config.num_clients):
            threads.append(_client_thread(errors, k, lambda k=k:
                                          client_loop(connect_tcp(host, port), k, config_hash, make_worker_for(k))))

    try:
        outcome = server_loop(accept, server, config_hash, config.round_timeout, config.broadcast_eval, on_round)
    except RoundFailure as exc:
        for thread in threads:
            thread.join()
        cause = errors.get(exc.client_id) if exc.client_id is not None else None
        if cause is not None:
            raise RoundFailure(exc.round_index, str(cause), exc.client_id) from cause
        raise
    finally:
        if listener is not None:
            listener.close()
    for thread in threads:
        thread.join()
    if errors:
        k, exc = sorted(errors.items())[0]
        raise RoundFailure(config.rounds, f"client failed after the last round: {exc}", k) from exc
    return outcome


def run_rounds(config: FedConfig, shards: Sequence[ClientShard], train_set: Dataset, test_set: Dataset,
               genotype: Genotype | None = None, on_round: OnRound = None) -> FederatedServer:
    """Initialize (w_0, alpha_0) on the server and run T synchronous rounds over config.transport."""
    config.validate()
    if len(shards) != config.num_clients:
        raise PartitionError(f"{len(shards)} shards for {config.num_clients} clients")
    server = FederatedServer(config, test_set, genotype)
    if config.transport == "sequential":
        _run_sequential(server, config, shards, train_set, on_round)
    else:
        server.trace = _run_networked(server, config, shards, train_set, on_round).trace
    return server


# ===== search =====
def run_fednas(config: FedConfig, shards: Sequence[ClientShard], train_set: Dataset, test_set: Dataset,
               on_round: OnRound = None) -> Tuple[Genotype, List[RoundResult]]:
    if config.mode != "search":
        raise ConfigError("run_fednas needs a search-mode config")
    server = run_rounds(config, shards, train_set, test_set, on_round=on_round)
    return discretize(server.arch), server.history


# ===== evaluation =====
def run_fedavg_eval(config: FedConfig, genotype: Genotype, shards: Sequence[ClientShard], train_set: Dataset,
                    test_set: Dataset, on_round: OnRound = None) -> Tuple[ParamStore, List[RoundResult]]:
    if config.mode != "eval":
        raise ConfigError("run_fedavg_eval needs an eval-mode config")
    server = run_rounds(config, shards, train_set, test_set, genotype, on_round)
    return server.store, server.history
