"""
Cell-based super-network.

Layout: stem (3x3 conv to 3*C, bn) -> num_cells cells, cell k fed by the
outputs of cells k-2 and k-1 -> global average pool -> linear classifier.
Cells at num_cells//3 and 2*num_cells//3 are reduction cells and double the
channel count. Every edge of every cell is a mixed operation; all normal cells
share alpha_normal and all reduction cells share alpha_reduce.
"""

import logging
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from src.autodiff import tensor_ops as ops
from src.autodiff.param_store import ARCH, ParamStore
from src.autodiff.tensor_ops import ComputeGraph, primitive_forward
from src.search_space.genotypes import PRIMITIVES, ArchParams, CellTopology, Genotype, NetworkSpec, discretize
from src.search_space.operations import LayoutBuilder, mixed_op_forward
from src.utils.errors import ShapeError
from src.utils.utils import spawn_rngs

logger = logging.getLogger(__name__)


@dataclass
class CellLayout:
    index: int
    reduction: bool
    pre0_kind: str
    pre0_ids: List[int]
    pre1_ids: List[int]
    edges: list
    channels: int


class CellNetwork:
    """Stem, preprocessing and classifier shared by the search and fixed networks."""

    def __init__(self, spec: NetworkSpec):
        spec.validate()
        self.spec = spec
        self.layout = LayoutBuilder()
        add = self.layout.add

        c_in = spec.input_shape[0]
        c_cur = spec.init_channels
        c_stem = 3 * c_cur
        self.stem_ids = [add("stem.conv", (c_stem, c_in, 3, 3))]

        c_pp, c_p = c_stem, c_stem
        reduction_prev = False
        self.cells: List[CellLayout] = []
        for k in range(spec.num_cells):
            reduction = k in spec.reduction_positions
            if reduction:
                c_cur *= 2
            prefix = f"cells.{k}"
            if reduction_prev:
                pre0_kind = "factorized_reduce"
                pre0_ids = [add(f"{prefix}.pre0.conv1", (c_cur // 2, c_pp, 1, 1)),
                            add(f"{prefix}.pre0.conv2", (c_cur - c_cur // 2, c_pp, 1, 1))]
            else:
                pre0_kind = "relu_conv_bn"
                pre0_ids = [add(f"{prefix}.pre0.conv", (c_cur, c_pp, 1, 1))]
            pre1_ids = [add(f"{prefix}.pre1.conv", (c_cur, c_p, 1, 1))]
            edges = self._build_edges(prefix, reduction, c_cur)
            self.cells.append(CellLayout(k, reduction, pre0_kind, pre0_ids, pre1_ids, edges, c_cur))
            reduction_prev = reduction
            c_pp, c_p = c_p, CellTopology.NUM_NODES * c_cur

        self.classifier_ids = [add("classifier.weight", (spec.num_classes, c_p), "linear"),
                               add("classifier.bias", (spec.num_classes,), "zeros")]

    def _build_edges(self, prefix: str, reduction: bool, channels: int) -> list:
        raise NotImplementedError

    def _node_inputs(self, graph: ComputeGraph, store: ParamStore, arch: ArchParams | None,
                     cell: CellLayout, states: List[int], node: int) -> List[int]:
        raise NotImplementedError

    def _params(self, graph: ComputeGraph, store: ParamStore, ids: Sequence[int]) -> List[int]:
        return [graph.param(store, pid) for pid in ids]

    def _cell_forward(self, graph: ComputeGraph, store: ParamStore, arch: ArchParams | None,
                      cell: CellLayout, s0: int, s1: int) -> int:
        s0 = primitive_forward(cell.pre0_kind, [s0], self._params(graph, store, cell.pre0_ids), graph)
        s1 = primitive_forward("relu_conv_bn", [s1], self._params(graph, store, cell.pre1_ids), graph)
        states = [s0, s1]
        for j in range(CellTopology.NUM_NODES):
            states.append(ops.add(graph, self._node_inputs(graph, store, arch, cell, states, j)))
        return ops.concat_channels(graph, states[CellTopology.NUM_INPUTS:])

    def forward(self, graph: ComputeGraph, store: ParamStore, arch: ArchParams | None, x: int) -> int:
        """Build the forward graph for input node x; returns the logits node."""
        s = primitive_forward("stem", [x], self._params(graph, store, self.stem_ids), graph)
        s0 = s1 = s
        for cell in self.cells:
            s0, s1 = s1, self._cell_forward(graph, store, arch, cell, s0, s1)
        pooled = ops.global_avg_pool(graph, s1)
        w, b = self._params(graph, store, self.classifier_ids)
        return ops.linear(graph, pooled, w, b)

    def loss(self, store: ParamStore, arch: ArchParams | None, batch: np.ndarray,
             labels: np.ndarray) -> Tuple[ComputeGraph, int, int]:
        """Mean cross-entropy of a batch; returns (graph, loss node, logits node)."""
        if batch.ndim != 4 or tuple(batch.shape[1:]) != self.spec.input_shape:
            raise ShapeError("network_input", (batch.shape, self.spec.input_shape))
        graph = ComputeGraph()
        x = graph.constant(batch)
        logits = self.forward(graph, store, arch, x)
        return graph, ops.softmax_cross_entropy(graph, logits, labels), logits


class SuperNetwork(CellNetwork):
    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        self.alpha_ids = (self.layout.add("alpha_normal", (CellTopology.NUM_EDGES, len(PRIMITIVES)), "zeros", ARCH),
                          self.layout.add("alpha_reduce", (CellTopology.NUM_EDGES, len(PRIMITIVES)), "zeros", ARCH))

    def _build_edges(self, prefix: str, reduction: bool, channels: int) -> list:
        # edges[e][k] = param ids of candidate k on edge e
        return [[self.layout.add_op(f"{prefix}.edge{e}", kind, channels) for kind in PRIMITIVES]
                for e in range(CellTopology.NUM_EDGES)]

    def init_params(self, seed: int) -> Tuple[ParamStore, ArchParams]:
        w_rng, a_rng = spawn_rngs(seed, 2)
        store = self.layout.materialize(w_rng)
        arch = ArchParams.initialize(a_rng)
        self.bind_arch(store, arch)
        return store, arch

    def bind_arch(self, store: ParamStore, arch: ArchParams) -> None:
        store.bind(self.alpha_ids[0], arch.alpha_normal)
        store.bind(self.alpha_ids[1], arch.alpha_reduce)

    def _node_inputs(self, graph, store, arch, cell, states, node):
        alpha = graph.param(store, self.alpha_ids[1] if cell.reduction else self.alpha_ids[0])
        outs = []
        for e in CellTopology.incoming(node):
            pred = CellTopology.EDGES[e][0]
            stride = 2 if cell.reduction and pred < CellTopology.NUM_INPUTS else 1
            edge_params = [self._params(graph, store, ids) for ids in cell.edges[e]]
            row = ops.select_row(graph, alpha, e)
            outs.append(mixed_op_forward(row, states[pred], edge_params, stride, graph))
        return outs

    def loss(self, store, arch, batch, labels):
        self.bind_arch(store, arch)
        return super().loss(store, arch, batch, labels)

    def genotype(self, arch: ArchParams) -> Genotype:
        return discretize(arch)


def build_super_network(spec: NetworkSpec, seed: int) -> Tuple[SuperNetwork, ParamStore, ArchParams]:
    net = SuperNetwork(spec)
    store, arch = net.init_params(seed)
    logger.debug(f"super-network: {len(store)} tensors, reductions at {spec.reduction_positions}")
    return net, store, arch


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    return float(np.mean(np.argmax(logits, axis=1) == labels))


def super_forward(net: SuperNetwork, store: ParamStore, arch: ArchParams, batch: np.ndarray,
                  labels: np.ndarray) -> Tuple[ComputeGraph, int, float]:
    """Loss node (mean cross-entropy) and batch accuracy of the super-network."""
    graph, loss, logits = net.loss(store, arch, batch, labels)
    return graph, loss, accuracy(graph.value(logits), labels)
