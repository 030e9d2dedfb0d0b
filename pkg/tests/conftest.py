import numpy as np
import pytest

from src.data_ops.data_loader import synthesize_dataset
from src.data_ops.data_processor import PartitionSpec, dirichlet_partition, make_shards
from src.opt_model.local_search import SearchHyper
from src.search_space.genotypes import NetworkSpec, genotype_from_pairs

# Two reductions at cells 1 and 2, 8x8 -> 4x4 -> 2x2
TINY_SPEC = NetworkSpec(num_cells=3, init_channels=2, num_classes=3, input_shape=(3, 8, 8))
DESK_SPEC = NetworkSpec(num_cells=4, init_channels=8, num_classes=10, input_shape=(3, 16, 16))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_spec():
    return TINY_SPEC


@pytest.fixture
def tiny_train():
    return synthesize_dataset(3, 12, TINY_SPEC.input_shape, seed=7, split="train")


@pytest.fixture
def tiny_test():
    return synthesize_dataset(3, 4, TINY_SPEC.input_shape, seed=7, split="test")


@pytest.fixture
def desk_spec():
    return DESK_SPEC


@pytest.fixture
def tiny_hyper():
    return SearchHyper(local_epochs=1, batch_size=8)


def shards_for(dataset, num_clients, seed=0, concentration=100.0):
    # A large concentration keeps every client non-empty on tiny data
    partition = dirichlet_partition(dataset.labels, PartitionSpec(num_clients, concentration, seed),
                                    dataset.num_classes)
    return make_shards(partition, 0.5, seed)


@pytest.fixture
def shard_maker():
    return shards_for


@pytest.fixture
def sample_genotype():
    return genotype_from_pairs(
        normal=[[(0, "sep_conv_3x3"), (1, "sep_conv_5x5")],
                [(0, "identity"), (2, "dil_conv_3x3")],
                [(1, "max_pool_3x3"), (3, "avg_pool_3x3")],
                [(0, "dil_conv_5x5"), (4, "sep_conv_3x3")]],
        reduce=[[(0, "max_pool_3x3"), (1, "max_pool_3x3")],
                [(1, "identity"), (2, "sep_conv_5x5")],
                [(0, "avg_pool_3x3"), (2, "dil_conv_3x3")],
                [(3, "identity"), (4, "sep_conv_3x3")]],
    )
