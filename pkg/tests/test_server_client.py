import threading
from dataclasses import dataclass

import numpy as np
import pytest

from src.comm.client import client_loop
from src.comm.messages import GlobalUpdate, Init, LocalResult, Register
from src.comm.server import server_loop
from src.comm.trace import check_trace, connection_projection
from src.comm.transport import channel_pair
from src.utils.errors import ProtocolError, RoundFailure

HASH = "f" * 64


@dataclass
class Result:
    round: int
    global_test_loss: float
    global_test_acc: float


class SummingCoordinator:
    """Global weights become the sum of the client weights each round."""

    def __init__(self, num_clients, rounds):
        self.num_clients = num_clients
        self.rounds = rounds
        self.weights = [np.zeros(3)]
        self.seen = []

    def init_spec(self):
        return '{"mode":"test"}'

    def start_round(self, t):
        self.seen.append(("start", t))

    def broadcast(self):
        return [w.copy() for w in self.weights], None

    def complete_round(self, t, results):
        assert [r.client_id for r in results] == list(range(self.num_clients))
        self.weights = [sum(r.weights[0] for r in results)]
        return Result(t + 1, float(t), 0.5)


class AddIdWorker:
    def __init__(self, client_id):
        self.client_id = client_id

    def run_round(self, t, weights, alpha):
        return [weights[0] + self.client_id + 1], None, 10 * (self.client_id + 1)


def _start_clients(num_clients, hashes=None):
    server_ends, threads, outcomes, errors = [], [], {}, {}
    for k in range(num_clients):
        server_end, client_end = channel_pair(f"c{k}")
        server_ends.append(server_end)
        config_hash = hashes[k] if hashes else HASH
        client_id = k if hashes is None else 0

        def body(conn=client_end, cid=client_id, h=config_hash, slot=k):
            try:
                outcomes[slot] = client_loop(conn, cid, h, lambda spec: AddIdWorker(slot), timeout=5.0)
            except BaseException as exc:
                errors[slot] = exc

        threads.append(threading.Thread(target=body, daemon=True))
    for thread in threads:
        thread.start()
    return iter(server_ends), threads, outcomes, errors


def test_rounds_run_in_lockstep():
    coordinator = SummingCoordinator(3, 4)
    accept, threads, outcomes, errors = _start_clients(3)
    evals = []
    outcome = server_loop(lambda: next(accept), coordinator, HASH, round_timeout=5.0,
                          broadcast_eval=True, on_round=evals.append)
    for thread in threads:
        thread.join(timeout=5.0)
    assert not errors
    assert [o.rounds for o in outcomes.values()] == [4, 4, 4]
    assert all(o.reason == "done" for o in outcomes.values())
    # w_{t+1} = 3 w_t + 6
    w = 0.0
    for _ in range(4):
        w = 3 * w + 6
    np.testing.assert_array_equal(coordinator.weights[0], np.full(3, w))
    assert [r.round for r in outcome.history] == [1, 2, 3, 4] == [r.round for r in evals]
    assert coordinator.seen == [("start", t) for t in range(4)]
    check_trace(outcome.trace, 3, 4, broadcast_eval=True)
    assert connection_projection(outcome.trace, 1)[:3] == ["Register", "Init", "GlobalUpdate"]


def test_check_trace_rejects_bad_traces():
    good = [(0, "received", "Register"), (0, "sent", "Init"), (0, "sent", "GlobalUpdate"),
            (0, "received", "LocalResult"), (0, "sent", "Shutdown")]
    check_trace(good, 1, 1)
    with pytest.raises(ProtocolError):
        check_trace(good, 1, 2)
    with pytest.raises(ProtocolError):
        check_trace(good[:2] + good[3:], 1, 1)
    two = [(k, "received", "Register") for k in (0, 1)] + [(k, "sent", "Init") for k in (0, 1)]
    early = two + [(0, "sent", "GlobalUpdate"), (0, "received", "LocalResult"),
                   (0, "sent", "GlobalUpdate"),  # round 1 before client 1 answered round 0
                   (1, "sent", "GlobalUpdate"), (1, "received", "LocalResult"),
                   (0, "received", "LocalResult"), (1, "sent", "GlobalUpdate"),
                   (1, "received", "LocalResult")] + [(k, "sent", "Shutdown") for k in (0, 1)]
    with pytest.raises(ProtocolError):
        check_trace(early, 2, 2)


def test_wrong_hash_is_rejected_and_replaced():
    coordinator = SummingCoordinator(1, 1)
    accept, threads, outcomes, errors = _start_clients(2, hashes=["0" * 64, HASH])
    outcome = server_loop(lambda: next(accept), coordinator, HASH, round_timeout=5.0)
    for thread in threads:
        thread.join(timeout=5.0)
    assert isinstance(errors[0], ProtocolError) and "refused" in str(errors[0])
    assert outcomes[1].rounds == 1
    check_trace(outcome.trace, 1, 1)


def test_duplicate_and_out_of_range_ids_are_rejected():
    coordinator = SummingCoordinator(2, 1)
    ids = (5, 0, 0, 1)
    conns = []
    for cid in ids:
        server_end, client_end = channel_pair()
        client_end.send(Register(cid, HASH))
        conns.append((server_end, client_end))
    accept = iter([s for s, _ in conns])

    def answer(client, cid):
        assert isinstance(client.recv(timeout=5.0), Init)
        update = client.recv(timeout=5.0)
        client.send(LocalResult(update.round, cid, 4, update.weights))
        client.recv(timeout=5.0)

    threads = [threading.Thread(target=answer, args=(conns[i][1], ids[i]), daemon=True) for i in (1, 3)]
    for thread in threads:
        thread.start()
    outcome = server_loop(lambda: next(accept), coordinator, HASH, round_timeout=5.0)
    for thread in threads:
        thread.join(timeout=5.0)
    check_trace(outcome.trace, 2, 1)
    assert "out of range" in conns[0][1].recv(timeout=1.0).reason
    assert "duplicate" in conns[2][1].recv(timeout=1.0).reason


def test_missing_result_times_out():
    coordinator = SummingCoordinator(1, 2)
    server_end, client_end = channel_pair()
    client_end.send(Register(0, HASH))
    with pytest.raises(RoundFailure) as info:
        server_loop(lambda: server_end, coordinator, HASH, round_timeout=0.1)
    assert info.value.round_index == 0
    # the client hears about the abort
    kinds = []
    while True:
        msg = client_end.recv(timeout=1.0)
        kinds.append(type(msg).__name__)
        if kinds[-1] == "Shutdown":
            assert msg.reason.startswith("aborted")
            break
    assert kinds == ["Init", "GlobalUpdate", "Shutdown"]


def test_wrong_round_is_a_failure():
    coordinator = SummingCoordinator(1, 1)
    server_end, client_end = channel_pair()
    client_end.send(Register(0, HASH))

    def reply():
        client_end.recv(timeout=5.0)
        update = client_end.recv(timeout=5.0)
        client_end.send(LocalResult(update.round + 1, 0, 1, update.weights))

    thread = threading.Thread(target=reply, daemon=True)
    thread.start()
    with pytest.raises(RoundFailure):
        server_loop(lambda: server_end, coordinator, HASH, round_timeout=5.0)
    thread.join(timeout=5.0)


def test_client_rejects_replayed_round():
    server_end, client_end = channel_pair()
    server_end.send(Init(HASH, "{}"))
    server_end.send(GlobalUpdate(0, [np.zeros(3)]))
    server_end.send(GlobalUpdate(0, [np.zeros(3)]))
    with pytest.raises(ProtocolError):
        client_loop(client_end, 0, HASH, lambda spec: AddIdWorker(0), timeout=1.0)


def test_client_rejects_foreign_init():
    server_end, client_end = channel_pair()
    server_end.send(Init("0" * 64, "{}"))
    with pytest.raises(ProtocolError):
        client_loop(client_end, 0, HASH, lambda spec: AddIdWorker(0), timeout=1.0)
