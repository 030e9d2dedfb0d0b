"""
Candidate operations: parameter layout per op kind and the mixed operation.

Conv-style ops follow the usual cell-search conventions: separable convs are
relu -> depthwise kxk -> pointwise 1x1 -> bn, applied twice; dilated convs are
one relu -> depthwise kxk (dilation 2) -> pointwise -> bn. Convs carry no bias.
"""

from dataclasses import dataclass, field
from typing import List, Sequence, Tuple

import numpy as np

from src.autodiff.param_store import WEIGHT, ParamStore
from src.autodiff.tensor_ops import ComputeGraph, primitive_forward, scalar_weighted_sum, softmax_vector
from src.search_space.genotypes import PRIMITIVES, OpKind

Shape = Tuple[int, ...]


def op_param_shapes(kind: OpKind, channels: int) -> List[Tuple[str, Shape]]:
    c = channels
    if kind in (OpKind.SEP_CONV_3X3, OpKind.SEP_CONV_5X5):
        k = 3 if kind == OpKind.SEP_CONV_3X3 else 5
        return [("dw1", (c, 1, k, k)), ("pw1", (c, c, 1, 1)), ("dw2", (c, 1, k, k)), ("pw2", (c, c, 1, 1))]
    if kind in (OpKind.DIL_CONV_3X3, OpKind.DIL_CONV_5X5):
        k = 3 if kind == OpKind.DIL_CONV_3X3 else 5
        return [("dw", (c, 1, k, k)), ("pw", (c, c, 1, 1))]
    # pools, identity and zero are parameter-free
    return []


@dataclass
class ParamSlot:
    name: str
    shape: Shape
    init: str = "conv"
    section: str = WEIGHT


@dataclass
class LayoutBuilder:
    """Records parameter slots in construction order; ids are slot positions."""

    slots: List[ParamSlot] = field(default_factory=list)

    def add(self, name: str, shape: Shape, init: str = "conv", section: str = WEIGHT) -> int:
        self.slots.append(ParamSlot(name, tuple(shape), init, section))
        return len(self.slots) - 1

    def add_op(self, prefix: str, kind: OpKind, channels: int) -> List[int]:
        return [self.add(f"{prefix}.{kind.value}.{pname}", shape) for pname, shape in op_param_shapes(kind, channels)]

    def materialize(self, rng: np.random.Generator) -> ParamStore:
        store = ParamStore()
        for slot in self.slots:
            store.add(slot.name, _init_tensor(slot, rng), slot.section)
        return store


def _init_tensor(slot: ParamSlot, rng: np.random.Generator) -> np.ndarray:
    if slot.init == "conv":
        fan_in = int(np.prod(slot.shape[1:]))
        return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=slot.shape)
    if slot.init == "linear":
        # Small classifier weights keep the untrained loss near ln(num_classes)
        return rng.normal(0.0, 0.01, size=slot.shape)
    if slot.init == "zeros":
        return np.zeros(slot.shape)
    raise ValueError(f"unknown init {slot.init!r}")


def op_forward(kind: OpKind, graph: ComputeGraph, x: int, params: Sequence[int], stride: int) -> int:
    return primitive_forward(kind.value, [x], params, graph, stride=stride)


def mixed_op_forward(edge_alpha: int, x: int, edge_params: Sequence[Sequence[int]], stride: int,
                     graph: ComputeGraph, kinds: Sequence[OpKind] = PRIMITIVES) -> int:
    """Softmax(edge_alpha)-weighted sum of every candidate applied to x.

    edge_alpha is the node of a d-vector; edge_params holds one param-node list
    per candidate, aligned with kinds.
    """
    p = softmax_vector(graph, edge_alpha)
    outs = [op_forward(kind, graph, x, params, stride) for kind, params in zip(kinds, edge_params)]
    return scalar_weighted_sum(graph, p, outs)
