from .genotypes import (
    OpKind,
    PRIMITIVES,
    CellTopology,
    NetworkSpec,
    ArchParams,
    Genotype,
    discretize,
    spec_hash,
)
from .operations import mixed_op_forward
from .model_search import SuperNetwork, build_super_network, super_forward, accuracy
from .model_fixed import FixedNetwork, build_fixed_network
from .genotype_export import export_genotype, import_genotype, render_genotype
