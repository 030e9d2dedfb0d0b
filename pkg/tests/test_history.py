import numpy as np
import pandas as pd
import pytest

from src.runner.federation import ClientUpdate, RoundResult
from src.runner.history import (
    HISTORY_COLUMNS,
    HistoryWriter,
    comparable,
    history_frame,
    load_checkpoint,
    read_history,
    save_checkpoint,
)
from src.search_space.genotypes import NetworkSpec
from src.search_space.model_fixed import build_fixed_network
from src.search_space.model_search import build_super_network
from src.utils.errors import ArtifactError, CheckpointError


def _result(t, loss=1.0 / 3.0, acc=0.25, phase="search"):
    clients = [ClientUpdate(k, None, None, 10) for k in range(2)]
    return RoundResult(t, phase, clients, loss, acc, duration_ms=12.5 * t)


def test_writer_appends_rows(tmp_path):
    path = tmp_path / "out" / "history.csv"
    writer = HistoryWriter(path)
    assert path.read_text().strip() == ",".join(HISTORY_COLUMNS)
    writer.append(_result(1))
    writer.append(_result(2, loss=np.nextafter(2.0, 3.0), acc=0.5))
    df = read_history(path)
    assert list(df["round"]) == [1, 2]
    assert list(df["client_count"]) == [2, 2]
    # bit-exact through the text file
    assert df["global_test_loss"].tolist() == [1.0 / 3.0, np.nextafter(2.0, 3.0)]


def test_written_history_matches_frame(tmp_path):
    history = [_result(t) for t in (1, 2, 3)]
    path = tmp_path / "h.csv"
    writer = HistoryWriter(path)
    for result in history:
        writer.append(result)
    pd.testing.assert_frame_equal(comparable(read_history(path)), comparable(history_frame(history)))
    assert "duration_ms" not in comparable(history_frame(history)).columns


def test_empty_history_is_valid(tmp_path):
    HistoryWriter(tmp_path / "h.csv")
    assert len(read_history(tmp_path / "h.csv")) == 0


@pytest.mark.parametrize("rows", [
    "round,phase,client_count,global_test_loss,global_test_acc\n1,search,2,0.5,0.5\n",
    "round,phase,client_count,global_test_loss,global_test_acc,duration_ms\n2,search,2,0.5,0.5,1\n",
    "round,phase,client_count,global_test_loss,global_test_acc,duration_ms\n1,train,2,0.5,0.5,1\n",
    "round,phase,client_count,global_test_loss,global_test_acc,duration_ms\n1,search,0,0.5,0.5,1\n",
    "round,phase,client_count,global_test_loss,global_test_acc,duration_ms\n1,search,2,inf,0.5,1\n",
    "round,phase,client_count,global_test_loss,global_test_acc,duration_ms\n1,search,2,0.5,1.5,1\n",
    "round,phase,client_count,global_test_loss,global_test_acc,duration_ms\n"
    "1,search,2,0.5,0.5,1\n2,eval,2,0.5,0.5,1\n",
])
def test_history_schema_is_enforced(tmp_path, rows):
    path = tmp_path / "h.csv"
    path.write_text(rows)
    with pytest.raises(ArtifactError):
        read_history(path)


def test_missing_history_file(tmp_path):
    with pytest.raises(ArtifactError):
        read_history(tmp_path / "nope.csv")


def test_search_checkpoint_round_trip(tmp_path, tiny_spec):
    _, store, arch = build_super_network(tiny_spec, seed=0)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, store, arch, tiny_spec)
    checkpoint = load_checkpoint(path, tiny_spec)
    assert len(checkpoint.weights) == len(store.get_weights())
    for a, b in zip(checkpoint.weights, store.get_weights()):
        np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(checkpoint.alpha.alpha_reduce, arch.alpha_reduce)


def test_eval_checkpoint_has_no_alpha(tmp_path, tiny_spec, sample_genotype):
    _, store = build_fixed_network(sample_genotype, tiny_spec, seed=0)
    save_checkpoint(tmp_path / "ck.bin", store, None, tiny_spec)
    checkpoint = load_checkpoint(tmp_path / "ck.bin", tiny_spec)
    assert checkpoint.alpha is None
    store.load_weights(checkpoint.weights)


def test_checkpoint_errors(tmp_path, tiny_spec):
    _, store, arch = build_super_network(tiny_spec, seed=0)
    path = tmp_path / "ck.bin"
    save_checkpoint(path, store, arch, tiny_spec)
    raw = bytearray(path.read_bytes())

    with pytest.raises(CheckpointError):
        load_checkpoint(path, NetworkSpec(num_cells=3, init_channels=4, num_classes=3, input_shape=(3, 8, 8)))

    flipped = bytearray(raw)
    flipped[len(raw) // 2] ^= 0x10
    (tmp_path / "flip.bin").write_bytes(bytes(flipped))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "flip.bin", tiny_spec)

    (tmp_path / "short.bin").write_bytes(bytes(raw[:20]))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "short.bin", tiny_spec)

    (tmp_path / "magic.bin").write_bytes(b"XXXX" + bytes(raw[4:]))
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "magic.bin", tiny_spec)

    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.bin", tiny_spec)
