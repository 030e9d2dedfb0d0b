import logging
from dataclasses import dataclass
from typing import Any, Callable, List, Protocol, Tuple

from src.comm.messages import GlobalModelEval, GlobalUpdate, Init, LocalResult, Register, Shutdown, kind_name
from src.comm.transport import Connection
from src.utils.errors import ProtocolError

logger = logging.getLogger(__name__)


class RoundWorker(Protocol):
    def run_round(self, t: int, weights: List[Any], alpha: List[Any] | None) -> Tuple[List[Any], List[Any] | None, int]:
        ...


@dataclass
class ClientOutcome:
    rounds: int
    reason: str


def client_loop(conn: Connection, client_id: int, config_hash: str,
                make_worker: Callable[[str], RoundWorker], timeout: float | None = None) -> ClientOutcome:
    """Register, wait for Init, answer every GlobalUpdate with a LocalResult until Shutdown.

    make_worker receives the Init spec text and returns the local trainer.
    """
    try:
        conn.send(Register(client_id, config_hash))
        msg = conn.recv(timeout)
        if isinstance(msg, Shutdown):
            raise ProtocolError(f"client {client_id}: server refused registration ({msg.reason})")
        if not isinstance(msg, Init):
            raise ProtocolError(f"client {client_id}: expected Init, got {kind_name(msg)}")
        if msg.config_hash != config_hash:
            raise ProtocolError(f"client {client_id}: Init carries config hash {msg.config_hash[:12]}")
        worker = make_worker(msg.spec)

        rounds, last_round = 0, -1
        while True:
            msg = conn.recv(timeout)
            if isinstance(msg, GlobalUpdate):
                if msg.round <= last_round:
                    raise ProtocolError(f"client {client_id}: round {msg.round} after round {last_round}")
                weights, alpha, num_samples = worker.run_round(msg.round, msg.weights, msg.alpha)
                conn.send(LocalResult(msg.round, client_id, num_samples, weights, alpha))
                last_round = msg.round
                rounds += 1
            elif isinstance(msg, GlobalModelEval):
                if msg.round != last_round:
                    raise ProtocolError(f"client {client_id}: evaluation for round {msg.round} during {last_round}")
                logger.info(f"client {client_id}: global model after round {msg.round}: "
                            f"loss {msg.loss:.4f} acc {msg.acc:.4f}")
            elif isinstance(msg, Shutdown):
                logger.info(f"client {client_id}: shutdown after {rounds} rounds ({msg.reason})")
                return ClientOutcome(rounds, msg.reason)
            else:
                raise ProtocolError(f"client {client_id}: unexpected {kind_name(msg)}")
    finally:
        conn.close()
