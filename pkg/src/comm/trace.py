"""Conformance check over the server-side message trace of a run."""

import re
from typing import Dict, List, Sequence

from src.comm.server import TraceEvent
from src.utils.errors import ProtocolError


def connection_projection(trace: Sequence[TraceEvent], client_id: int) -> List[str]:
    return [kind for cid, _, kind in trace if cid == client_id]


def check_trace(trace: Sequence[TraceEvent], num_clients: int, rounds: int,
                broadcast_eval: bool = False) -> None:
    """Each connection reads Register Init (GlobalUpdate LocalResult)^T Shutdown, and no
    GlobalUpdate of round t+1 goes out before all K LocalResults of round t arrived."""
    step = r" GlobalUpdate LocalResult" + (r" GlobalModelEval" if broadcast_eval else "")
    pattern = re.compile(rf"Register Init(?:{step}){{{rounds}}} Shutdown")
    for client_id in range(num_clients):
        kinds = " ".join(connection_projection(trace, client_id))
        if not pattern.fullmatch(kinds):
            raise ProtocolError(f"client {client_id}: trace '{kinds}' does not conform")

    updates: Dict[int, int] = {k: 0 for k in range(num_clients)}
    results: Dict[int, int] = {k: 0 for k in range(num_clients)}
    for client_id, _, kind in trace:
        if kind == "GlobalUpdate":
            done = updates[client_id]
            if any(results[k] < done for k in results):
                raise ProtocolError(f"GlobalUpdate {done} sent to client {client_id} before the barrier")
            updates[client_id] += 1
        elif kind == "LocalResult":
            results[client_id] += 1
