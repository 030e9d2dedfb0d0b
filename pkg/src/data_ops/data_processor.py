"""
Client data: Dirichlet non-IID partitioning, per-client train/validation
splits, augmentation, and the partition file that pins an experiment's data.
"""

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from src.utils.errors import DatasetError, PartitionError

logger = logging.getLogger(__name__)

PARTITION_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class PartitionSpec:
    num_clients: int
    concentration: float = 0.5
    seed: int = 0

    def validate(self) -> None:
        if self.num_clients < 1:
            raise PartitionError(f"num_clients must be >= 1, got {self.num_clients}")
        if not self.concentration > 0:
            raise PartitionError(f"concentration must be > 0, got {self.concentration}")


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    train_indices: np.ndarray
    val_indices: np.ndarray

    def __post_init__(self):
        if np.intersect1d(self.train_indices, self.val_indices).size:
            raise PartitionError(f"client {self.client_id}: train and validation overlap")

    @property
    def num_samples(self) -> int:
        return len(self.train_indices) + len(self.val_indices)


def _largest_remainder(proportions: np.ndarray, total: int) -> np.ndarray:
    """Integer counts summing exactly to total; leftovers go to the largest fractional parts."""
    raw = proportions * total
    counts = np.floor(raw).astype(np.int64)
    # never negative when the proportions overshoot one
    leftover = max(0, total - int(counts.sum()))
    # stable sort: equal remainders -> lower client index first
    order = np.argsort(-(raw - counts), kind="stable")
    counts[order[:leftover]] += 1
    return counts


def dirichlet_partition(labels: np.ndarray, spec: PartitionSpec,
                        num_classes: int | None = None) -> List[np.ndarray]:
    """Per class c: p_c ~ Dir_K(concentration), shuffle the class, split by rounded p_c.

    Returns K sorted index arrays. Clients may miss whole classes; a client
    with no samples at all is an error.
    """
    spec.validate()
    labels = np.asarray(labels)
    classes = range(num_classes) if num_classes is not None else np.unique(labels)
    rng = np.random.default_rng(spec.seed)
    alpha = np.full(spec.num_clients, float(spec.concentration))

    buckets: List[List[np.ndarray]] = [[] for _ in range(spec.num_clients)]
    for c in classes:
        idx = np.flatnonzero(labels == c)
        p = rng.dirichlet(alpha)
        idx = rng.permutation(idx)
        counts = _largest_remainder(p, len(idx))
        for k, part in enumerate(np.split(idx, np.cumsum(counts)[:-1])):
            buckets[k].append(part)

    shards = [np.sort(np.concatenate(b)) if b else np.empty(0, dtype=np.int64) for b in buckets]
    empty = [k for k, s in enumerate(shards) if len(s) == 0]
    if empty:
        raise PartitionError(f"clients {empty} received no samples; change the seed or concentration")
    logger.info(f"partitioned {len(labels)} samples over {spec.num_clients} clients "
                f"(Dir {spec.concentration}, sizes {min(map(len, shards))}..{max(map(len, shards))})")
    return shards


def check_partition(partition: Sequence[np.ndarray], num_samples: int) -> None:
    """Every index in [0, num_samples) appears in exactly one shard."""
    flat = np.concatenate([np.asarray(p, dtype=np.int64) for p in partition])
    if flat.size and (flat.min() < 0 or flat.max() >= num_samples):
        raise PartitionError(f"indices out of range [0, {num_samples})")
    counts = np.bincount(flat, minlength=num_samples)
    duplicated = np.flatnonzero(counts > 1)
    missing = np.flatnonzero(counts == 0)
    if duplicated.size or missing.size:
        raise PartitionError(f"{duplicated.size} indices duplicated, {missing.size} missing "
                             f"(first: {duplicated[:5].tolist()} / {missing[:5].tolist()})")


def train_val_split(indices: Sequence[int], fraction: float = 0.5,
                    seed: int | Sequence[int] = 0) -> Tuple[np.ndarray, np.ndarray]:
    """Seeded shuffle, first `fraction` of it trains; both parts sorted and non-empty."""
    indices = np.asarray(indices, dtype=np.int64)
    if not 0 < fraction < 1:
        raise PartitionError(f"fraction must be in (0, 1), got {fraction}")
    if len(indices) < 2:
        raise PartitionError(f"cannot split a shard of {len(indices)} samples")
    perm = np.random.default_rng(seed).permutation(indices)
    n_train = min(max(int(round(fraction * len(indices))), 1), len(indices) - 1)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def make_shards(partition: Sequence[np.ndarray], fraction: float, seed: int) -> List[ClientShard]:
    shards = []
    for k, indices in enumerate(partition):
        train, val = train_val_split(indices, fraction, seed=(seed, k))
        shards.append(ClientShard(k, train, val))
    return shards


# ===== augmentation =====

def random_crop(image: np.ndarray, dy: int, dx: int, pad: int = 4) -> np.ndarray:
    """Zero-pad by `pad` and cut the original extent at offset (dy, dx) of the padded image."""
    _, h, w = image.shape
    padded = np.pad(image, ((0, 0), (pad, pad), (pad, pad)))
    return padded[:, dy:dy + h, dx:dx + w]


def horizontal_flip(image: np.ndarray) -> np.ndarray:
    return image[:, :, ::-1]


def augment(image: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    dy, dx = rng.integers(0, 2 * pad + 1, size=2)
    out = random_crop(image, int(dy), int(dx), pad)
    if rng.random() < 0.5:
        out = horizontal_flip(out)
    return np.ascontiguousarray(out)


def augment_batch(batch: np.ndarray, rng: np.random.Generator, pad: int = 4) -> np.ndarray:
    return np.stack([augment(img, rng, pad) for img in batch])


# ===== partition file =====

def save_partition(path: str | Path, partition: Sequence[np.ndarray], spec: PartitionSpec,
                   val_fraction: float | None = None) -> None:
    payload: Dict[str, Any] = {
        "schema_version": PARTITION_SCHEMA_VERSION,
        "num_clients": spec.num_clients,
        "concentration": spec.concentration,
        "seed": spec.seed,
        "val_fraction": val_fraction,
        "clients": [np.asarray(p).tolist() for p in partition],
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    logger.info(f"wrote partition file {path}")


def load_partition(path: str | Path) -> Tuple[PartitionSpec, List[np.ndarray]]:
    try:
        with open(path, "r") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise PartitionError(f"cannot read partition file {path}: {exc}") from exc
    if payload.get("schema_version") != PARTITION_SCHEMA_VERSION:
        raise PartitionError(f"{path}: unsupported partition schema {payload.get('schema_version')!r}")
    spec = PartitionSpec(int(payload["num_clients"]), float(payload["concentration"]), int(payload["seed"]))
    clients = [np.asarray(c, dtype=np.int64) for c in payload["clients"]]
    if len(clients) != spec.num_clients:
        raise PartitionError(f"{path}: {len(clients)} client lists for num_clients={spec.num_clients}")
    return spec, clients


def write_dataset_manifest(path: str | Path, name: str, train: Any, test: Any,
                           source: Dict[str, Any]) -> Dict[str, Any]:
    manifest = {
        "name": name,
        "source": source,
        "train": {"samples": len(train), "shape": list(train.input_shape), "sha256": train.checksum()},
        "test": {"samples": len(test), "shape": list(test.input_shape), "sha256": test.checksum()},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(manifest, f, sort_keys=True, indent=2)
        f.write("\n")
    return manifest


def verify_dataset_manifest(path: str | Path, train: Any, test: Any) -> None:
    try:
        with open(path, "r") as f:
            manifest = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"cannot read dataset manifest {path}: {exc}") from exc
    for split, ds in (("train", train), ("test", test)):
        if manifest.get(split, {}).get("sha256") != ds.checksum():
            raise DatasetError(f"{split} split does not match manifest {path}")
