"""
Server side of the round protocol.

One handler thread per client connection feeds an ordered inbox; the main
thread is the only one that touches the coordinator, and it aggregates only
once all K LocalResults of a round are in.
"""

import logging
import queue
import threading
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Protocol, Sequence, Tuple

from tqdm import tqdm

from src.comm.messages import GlobalModelEval, GlobalUpdate, Init, LocalResult, Register, Shutdown, kind_name
from src.comm.transport import Connection, ConnectionClosed
from src.utils.errors import ProtocolError, RoundFailure

logger = logging.getLogger(__name__)

TraceEvent = Tuple[int, str, str]  # (client id, "sent" | "received", message kind)


class RoundCoordinator(Protocol):
    num_clients: int
    rounds: int

    def init_spec(self) -> str: ...

    def start_round(self, t: int) -> None: ...

    def broadcast(self) -> Tuple[List[Any], List[Any] | None]: ...

    def complete_round(self, t: int, results: Sequence[LocalResult]) -> Any: ...


@dataclass
class ServerOutcome:
    history: List[Any] = field(default_factory=list)
    trace: List[TraceEvent] = field(default_factory=list)


def _pump(client_id: int, conn: Connection, inbox: queue.Queue) -> None:
    while True:
        try:
            msg = conn.recv()
        except ConnectionClosed:
            inbox.put((client_id, None))
            return
        except ProtocolError as exc:
            inbox.put((client_id, exc))
            return
        inbox.put((client_id, msg))


def _register(accept: Callable[[], Connection], num_clients: int, config_hash: str,
              timeout: float | None) -> Dict[int, Connection]:
    conns: Dict[int, Connection] = {}
    while len(conns) < num_clients:
        conn = accept()
        msg = conn.recv(timeout=timeout)
        reason = None
        if not isinstance(msg, Register):
            reason = f"expected Register, got {kind_name(msg)}"
        elif msg.config_hash != config_hash:
            reason = "config hash mismatch"
        elif not 0 <= msg.client_id < num_clients:
            reason = f"client id {msg.client_id} out of range [0, {num_clients})"
        elif msg.client_id in conns:
            reason = f"duplicate client id {msg.client_id}"
        if reason:
            logger.warning(f"rejected {conn.name}: {reason}")
            conn.send(Shutdown(f"rejected: {reason}"))
            conn.close()
            continue
        conns[msg.client_id] = conn
        logger.info(f"client {msg.client_id} registered ({len(conns)}/{num_clients})")
    return dict(sorted(conns.items()))


def _collect(inbox: queue.Queue, t: int, num_clients: int, timeout: float | None,
             trace: List[TraceEvent]) -> List[LocalResult]:
    results: Dict[int, LocalResult] = {}
    while len(results) < num_clients:
        try:
            client_id, item = inbox.get(timeout=timeout)
        except queue.Empty:
            missing = sorted(set(range(num_clients)) - set(results))
            raise RoundFailure(t, f"timed out after {timeout}s waiting for clients {missing}") from None
        if item is None:
            raise RoundFailure(t, "connection closed before LocalResult", client_id)
        if isinstance(item, Exception):
            raise RoundFailure(t, f"bad frame: {item}", client_id) from item
        trace.append((client_id, "received", kind_name(item)))
        if not isinstance(item, LocalResult):
            raise RoundFailure(t, f"expected LocalResult, got {kind_name(item)}", client_id)
        if item.round != t or item.client_id != client_id:
            raise RoundFailure(t, f"LocalResult for round {item.round} from id {item.client_id}", client_id)
        if client_id in results:
            raise RoundFailure(t, "duplicate LocalResult", client_id)
        results[client_id] = item
    return [results[k] for k in sorted(results)]


def server_loop(accept: Callable[[], Connection], coordinator: RoundCoordinator, config_hash: str,
                round_timeout: float | None = None, broadcast_eval: bool = False,
                on_round: Callable[[Any], None] | None = None) -> ServerOutcome:
    """Register K clients, send Init, run T synchronous rounds, send Shutdown."""
    outcome = ServerOutcome()
    trace = outcome.trace
    conns = _register(accept, coordinator.num_clients, config_hash, round_timeout)
    for client_id in conns:
        trace.append((client_id, "received", "Register"))

    inbox: queue.Queue = queue.Queue()
    for client_id, conn in conns.items():
        threading.Thread(target=_pump, args=(client_id, conn, inbox), daemon=True,
                         name=f"server-recv-{client_id}").start()

    def send_all(make_msg: Callable[[], Any]) -> None:
        for client_id, conn in conns.items():
            msg = make_msg()
            conn.send(msg)
            trace.append((client_id, "sent", kind_name(msg)))

    try:
        spec = coordinator.init_spec()
        send_all(lambda: Init(config_hash, spec))
        for t in tqdm(range(coordinator.rounds), desc="rounds", disable=None):
            coordinator.start_round(t)
            weights, alpha = coordinator.broadcast()
            send_all(lambda: GlobalUpdate(t, weights, alpha))
            results = _collect(inbox, t, coordinator.num_clients, round_timeout, trace)
            result = coordinator.complete_round(t, results)
            outcome.history.append(result)
            if broadcast_eval:
                send_all(lambda: GlobalModelEval(t, result.global_test_loss, result.global_test_acc))
            if on_round is not None:
                on_round(result)
        send_all(lambda: Shutdown("done"))
    except Exception as exc:
        for conn in conns.values():
            try:
                conn.send(Shutdown(f"aborted: {exc}"))
            except ProtocolError:
                pass
        raise
    finally:
        for conn in conns.values():
            conn.close()
    return outcome
