"""
Search-space vocabulary: candidate ops, cell topology, network spec,
architecture parameters and the discrete genotype.
"""

from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from src.utils.errors import ConfigError, GenotypeError
from src.utils.utils import canonical_json, sha256_hex


class OpKind(str, Enum):
    SEP_CONV_3X3 = "sep_conv_3x3"
    SEP_CONV_5X5 = "sep_conv_5x5"
    DIL_CONV_3X3 = "dil_conv_3x3"
    DIL_CONV_5X5 = "dil_conv_5x5"
    MAX_POOL_3X3 = "max_pool_3x3"
    AVG_POOL_3X3 = "avg_pool_3x3"
    IDENTITY = "identity"
    ZERO = "zero"

    @property
    def ordinal(self) -> int:
        return PRIMITIVES.index(self)


# Ordinal order is the tie-break order of discretize
PRIMITIVES: Tuple[OpKind, ...] = tuple(OpKind)
NUM_OPS = len(PRIMITIVES)


CELL_INPUTS = 2
CELL_NODES = 4


class CellTopology:
    """2 input nodes, 4 intermediate nodes, output = concat of the intermediates."""

    NUM_INPUTS = CELL_INPUTS
    NUM_NODES = CELL_NODES

    # (predecessor, intermediate node), node-major, predecessor ascending
    EDGES: Tuple[Tuple[int, int], ...] = tuple(
        (i, j) for j in range(CELL_NODES) for i in range(CELL_INPUTS + j)
    )
    NUM_EDGES = len(EDGES)

    @classmethod
    def edge_index(cls, pred: int, node: int) -> int:
        return cls.EDGES.index((pred, node))

    @classmethod
    def incoming(cls, node: int) -> List[int]:
        return [e for e, (_, j) in enumerate(cls.EDGES) if j == node]


@dataclass(frozen=True)
class NetworkSpec:
    num_cells: int = 8
    init_channels: int = 16
    num_classes: int = 10
    input_shape: Tuple[int, int, int] = (3, 32, 32)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))

    @property
    def reduction_positions(self) -> Tuple[int, int]:
        return self.num_cells // 3, 2 * self.num_cells // 3

    def validate(self) -> None:
        if self.num_cells < 2:
            raise ConfigError(f"num_cells must be >= 2, got {self.num_cells}")
        if self.init_channels < 1 or self.num_classes < 2:
            raise ConfigError("init_channels must be >= 1 and num_classes >= 2")
        if len(self.input_shape) != 3 or min(self.input_shape) < 1:
            raise ConfigError(f"input_shape must be (C, H, W), got {self.input_shape}")
        _, h, w = self.input_shape
        if h % 4 or w % 4:
            raise ConfigError(f"spatial extent must survive two reductions, got {h}x{w}")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "NetworkSpec":
        return cls(int(d["num_cells"]), int(d["init_channels"]), int(d["num_classes"]),
                   tuple(d["input_shape"]))


def spec_hash(spec: NetworkSpec) -> str:
    return sha256_hex(canonical_json(spec.to_dict()))


@dataclass
class ArchParams:
    alpha_normal: np.ndarray
    alpha_reduce: np.ndarray

    def __post_init__(self):
        shape = (CellTopology.NUM_EDGES, NUM_OPS)
        if self.alpha_normal.shape != shape or self.alpha_reduce.shape != shape:
            raise GenotypeError(f"alpha must be {shape}, got {self.alpha_normal.shape} / {self.alpha_reduce.shape}")

    @classmethod
    def initialize(cls, rng: np.random.Generator, std: float = 1e-3) -> "ArchParams":
        shape = (CellTopology.NUM_EDGES, NUM_OPS)
        return cls(rng.normal(0.0, std, size=shape), rng.normal(0.0, std, size=shape))

    @classmethod
    def zeros(cls) -> "ArchParams":
        shape = (CellTopology.NUM_EDGES, NUM_OPS)
        return cls(np.zeros(shape), np.zeros(shape))

    def tensors(self) -> List[np.ndarray]:
        return [self.alpha_normal, self.alpha_reduce]

    def copy(self) -> "ArchParams":
        return ArchParams(self.alpha_normal.copy(), self.alpha_reduce.copy())

    def load(self, other: "ArchParams") -> None:
        # In place, so arrays bound into a ParamStore stay bound
        self.alpha_normal[...] = other.alpha_normal
        self.alpha_reduce[...] = other.alpha_reduce

    def is_finite(self) -> bool:
        return bool(np.isfinite(self.alpha_normal).all() and np.isfinite(self.alpha_reduce).all())


CellGene = Tuple[Tuple[Tuple[int, OpKind], ...], ...]


@dataclass(frozen=True)
class Genotype:
    normal: CellGene
    reduce: CellGene

    def __post_init__(self):
        for name in ("normal", "reduce"):
            cell = tuple(tuple((int(p), OpKind(op)) for p, op in node) for node in getattr(self, name))
            object.__setattr__(self, name, cell)
        validate_genotype(self)

    def cells(self) -> Dict[str, CellGene]:
        return {"normal": self.normal, "reduce": self.reduce}

    def __str__(self) -> str:
        def fmt(cell):
            return "; ".join(
                f"n{j}<-" + ",".join(f"{op.value}({p})" for p, op in node) for j, node in enumerate(cell)
            )
        return f"normal[{fmt(self.normal)}] reduce[{fmt(self.reduce)}]"


def validate_genotype(genotype: Genotype) -> None:
    for name, cell in genotype.cells().items():
        if len(cell) != CellTopology.NUM_NODES:
            raise GenotypeError(f"{name}: expected {CellTopology.NUM_NODES} nodes, got {len(cell)}")
        for j, node in enumerate(cell):
            if len(node) != 2:
                raise GenotypeError(f"{name} node {j}: expected 2 inputs, got {len(node)}")
            preds = [p for p, _ in node]
            if len(set(preds)) != 2:
                raise GenotypeError(f"{name} node {j}: predecessors must be distinct, got {preds}")
            if any(p < 0 or p >= CellTopology.NUM_INPUTS + j for p in preds):
                raise GenotypeError(f"{name} node {j}: predecessor out of range {preds}")
            if any(op == OpKind.ZERO for _, op in node):
                raise GenotypeError(f"{name} node {j}: zero op in genotype")


def _softmax(row: np.ndarray) -> np.ndarray:
    e = np.exp(row - row.max())
    return e / e.sum()


def _discretize_cell(alpha: np.ndarray) -> CellGene:
    zero = OpKind.ZERO.ordinal
    cell = []
    for j in range(CellTopology.NUM_NODES):
        candidates = []
        for e in CellTopology.incoming(j):
            pred = CellTopology.EDGES[e][0]
            p = _softmax(alpha[e])
            best = max((k for k in range(NUM_OPS) if k != zero), key=lambda k: (p[k], -k))
            candidates.append((p[best], pred, best))
        # Highest weight first; ties -> lower predecessor, then lower op ordinal
        candidates.sort(key=lambda c: (-c[0], c[1], c[2]))
        chosen = sorted(candidates[:2], key=lambda c: c[1])
        cell.append(tuple((pred, PRIMITIVES[k]) for _, pred, k in chosen))
    return tuple(cell)


def discretize(arch: ArchParams) -> Genotype:
    if not arch.is_finite():
        raise GenotypeError("cannot discretize non-finite architecture parameters")
    return Genotype(_discretize_cell(arch.alpha_normal), _discretize_cell(arch.alpha_reduce))


def genotype_from_pairs(normal: Sequence[Sequence[Tuple[int, str]]],
                        reduce: Sequence[Sequence[Tuple[int, str]]]) -> Genotype:
    return Genotype(tuple(tuple((int(p), OpKind(op)) for p, op in node) for node in normal),
                    tuple(tuple((int(p), OpKind(op)) for p, op in node) for node in reduce))
