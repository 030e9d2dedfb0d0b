"""
Run artifacts: the per-round history CSV and binary model checkpoints.

Checkpoint layout (little-endian): magic b"FNCK", version u16, flags u8
(bit 0: alpha present), SHA-256 of the network spec (32 raw bytes), weight
tensor block, optional alpha tensor block, CRC32 of everything before it.
Tensor blocks use the wire codec's encoding.
"""

import logging
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd

from src.autodiff.param_store import ParamStore
from src.comm.wire import PayloadReader, encode_tensors
from src.runner.federation import RoundResult
from src.search_space.genotypes import ArchParams, NetworkSpec, spec_hash
from src.utils.errors import ArtifactError, CheckpointError

logger = logging.getLogger(__name__)

HISTORY_COLUMNS = ["round", "phase", "client_count", "global_test_loss", "global_test_acc", "duration_ms"]
# Nondeterministic; excluded when histories of two runs are compared
TIMING_COLUMNS = ["duration_ms"]

CHECKPOINT_MAGIC = b"FNCK"
CHECKPOINT_VERSION = 1
CHECKPOINT_HEADER = struct.Struct("<4sHB32s")


# ===== history CSV =====

def history_frame(history: Sequence[RoundResult]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in history], columns=HISTORY_COLUMNS)


class HistoryWriter:
    """Appends one CSV row per completed round; the header is written on open."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        pd.DataFrame(columns=HISTORY_COLUMNS).to_csv(self.path, index=False)

    def append(self, result: RoundResult) -> None:
        # %.17g keeps every double bit-exact through the text round trip
        history_frame([result]).to_csv(self.path, mode="a", header=False, index=False, float_format="%.17g")


def read_history(path: str | Path) -> pd.DataFrame:
    """Load a history CSV and enforce its schema."""
    try:
        df = pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError) as exc:
        raise ArtifactError(f"cannot read history {path}: {exc}") from exc
    if list(df.columns) != HISTORY_COLUMNS:
        raise ArtifactError(f"{path}: columns {list(df.columns)}, expected {HISTORY_COLUMNS}")
    if len(df) == 0:
        return df
    if not pd.api.types.is_integer_dtype(df["round"]) or not pd.api.types.is_integer_dtype(df["client_count"]):
        raise ArtifactError(f"{path}: round and client_count must be integers")
    if list(df["round"]) != list(range(1, len(df) + 1)):
        raise ArtifactError(f"{path}: rounds must run 1..{len(df)}")
    if not df["phase"].isin(["search", "eval"]).all() or df["phase"].nunique() != 1:
        raise ArtifactError(f"{path}: phase must be a single value of search|eval")
    if (df["client_count"] < 1).any():
        raise ArtifactError(f"{path}: client_count must be >= 1")
    if not np.isfinite(df["global_test_loss"]).all():
        raise ArtifactError(f"{path}: non-finite test loss")
    if not df["global_test_acc"].between(0.0, 1.0).all():
        raise ArtifactError(f"{path}: accuracy outside [0, 1]")
    return df


def comparable(df: pd.DataFrame) -> pd.DataFrame:
    return df.drop(columns=TIMING_COLUMNS)


# ===== checkpoints =====

@dataclass(eq=False)
class Checkpoint:
    weights: List[np.ndarray]
    alpha: ArchParams | None


def save_checkpoint(path: str | Path, store: ParamStore, arch: ArchParams | None, spec: NetworkSpec) -> None:
    body = CHECKPOINT_HEADER.pack(CHECKPOINT_MAGIC, CHECKPOINT_VERSION, int(arch is not None),
                                  bytes.fromhex(spec_hash(spec)))
    body += encode_tensors(store.get_weights())
    if arch is not None:
        body += encode_tensors(arch.tensors())
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(body + struct.pack("<I", zlib.crc32(body)))
    logger.info(f"wrote checkpoint {path} ({len(body) + 4} bytes)")


def load_checkpoint(path: str | Path, spec: NetworkSpec) -> Checkpoint:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if len(raw) < CHECKPOINT_HEADER.size + 4:
        raise CheckpointError(f"{path}: truncated checkpoint")
    body, (crc,) = raw[:-4], struct.unpack("<I", raw[-4:])
    magic, version, flags, digest = CHECKPOINT_HEADER.unpack(body[:CHECKPOINT_HEADER.size])
    if magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint (magic {magic!r})")
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    if digest.hex() != spec_hash(spec):
        raise CheckpointError(f"{path}: saved for a different network spec")

    reader = PayloadReader(body[CHECKPOINT_HEADER.size:])
    weights = reader.tensors()
    alpha = ArchParams(*reader.tensors()) if flags & 1 else None
    reader.done()
    return Checkpoint(weights, alpha)
