"""Discretized network: each intermediate node sums exactly the two ops its genotype picked."""

import logging
from typing import Tuple

from src.autodiff.param_store import ParamStore
from src.search_space.genotypes import CellTopology, Genotype, NetworkSpec
from src.search_space.model_search import CellNetwork
from src.search_space.operations import op_forward
from src.utils.utils import spawn_rngs

logger = logging.getLogger(__name__)


class FixedNetwork(CellNetwork):
    def __init__(self, genotype: Genotype, spec: NetworkSpec):
        self.genotype = genotype
        super().__init__(spec)

    def _build_edges(self, prefix, reduction, channels):
        # edges[node] = [(pred, op, param ids), (pred, op, param ids)]
        cell = self.genotype.reduce if reduction else self.genotype.normal
        return [[(pred, op, self.layout.add_op(f"{prefix}.node{j}.from{pred}", op, channels)) for pred, op in node]
                for j, node in enumerate(cell)]

    def _node_inputs(self, graph, store, arch, cell, states, node):
        outs = []
        for pred, op, ids in cell.edges[node]:
            stride = 2 if cell.reduction and pred < CellTopology.NUM_INPUTS else 1
            outs.append(op_forward(op, graph, states[pred], self._params(graph, store, ids), stride))
        return outs

    def init_params(self, seed: int) -> ParamStore:
        (w_rng,) = spawn_rngs(seed, 1)
        return self.layout.materialize(w_rng)


def build_fixed_network(genotype: Genotype, spec: NetworkSpec, seed: int) -> Tuple[FixedNetwork, ParamStore]:
    net = FixedNetwork(genotype, spec)
    store = net.init_params(seed)
    logger.debug(f"fixed network: {len(store)} tensors")
    return net, store
