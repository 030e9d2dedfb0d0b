from itertools import combinations

import numpy as np
import pytest

from src.search_space.genotypes import (
    NUM_OPS,
    PRIMITIVES,
    ArchParams,
    CellTopology,
    Genotype,
    NetworkSpec,
    OpKind,
    discretize,
    genotype_from_pairs,
    spec_hash,
)
from src.utils.errors import ConfigError, GenotypeError


def test_op_order():
    assert [op.value for op in PRIMITIVES] == [
        "sep_conv_3x3", "sep_conv_5x5", "dil_conv_3x3", "dil_conv_5x5",
        "max_pool_3x3", "avg_pool_3x3", "identity", "zero",
    ]
    assert OpKind.ZERO.ordinal == NUM_OPS - 1


def test_cell_edges():
    assert CellTopology.NUM_EDGES == 14
    assert CellTopology.EDGES[:5] == ((0, 0), (1, 0), (0, 1), (1, 1), (2, 1))
    assert [len(CellTopology.incoming(j)) for j in range(4)] == [2, 3, 4, 5]
    assert CellTopology.edge_index(4, 3) == 13


@pytest.mark.parametrize("num_cells,expected", [(8, (2, 5)), (4, (1, 2)), (3, (1, 2)), (20, (6, 13))])
def test_reduction_positions(num_cells, expected):
    assert NetworkSpec(num_cells=num_cells).reduction_positions == expected


@pytest.mark.parametrize("kwargs", [{"num_cells": 1}, {"init_channels": 0}, {"num_classes": 1},
                                    {"input_shape": (3, 10, 10)}, {"input_shape": (3, 8)}])
def test_invalid_spec(kwargs):
    with pytest.raises(ConfigError):
        NetworkSpec(**kwargs).validate()


def test_spec_hash_is_stable():
    a, b = NetworkSpec(), NetworkSpec(input_shape=[3, 32, 32])
    assert spec_hash(a) == spec_hash(b)
    assert spec_hash(a) != spec_hash(NetworkSpec(init_channels=8))
    assert NetworkSpec.from_dict(a.to_dict()) == a


def test_arch_params_shape_checked():
    with pytest.raises(GenotypeError):
        ArchParams(np.zeros((14, 7)), np.zeros((14, 8)))


def _brute_force_cell(alpha):
    """Independent selector: the chosen pair is the one that beats every other incoming edge."""
    cell = []
    zero = PRIMITIVES.index(OpKind.ZERO)
    for j in range(CellTopology.NUM_NODES):
        edges = []
        for e, (pred, node) in enumerate(CellTopology.EDGES):
            if node != j:
                continue
            p = np.exp(alpha[e] - alpha[e].max())
            p /= p.sum()
            strength = max(p[k] for k in range(NUM_OPS) if k != zero)
            op = min(k for k in range(NUM_OPS) if k != zero and p[k] == strength)
            edges.append((strength, pred, op))

        def beats(a, b):
            return a[0] > b[0] or (a[0] == b[0] and a[1] < b[1])

        winners = [pair for pair in combinations(edges, 2)
                   if all(beats(a, other) for a in pair for other in edges if other not in pair)]
        assert len(winners) == 1
        cell.append(tuple((pred, PRIMITIVES[op]) for _, pred, op in sorted(winners[0], key=lambda t: t[1])))
    return tuple(cell)


def test_discretize_matches_brute_force():
    rng = np.random.default_rng(2024)
    for draw in range(1000):
        # Coarse values make ties common
        scale = 1.0 if draw % 2 else 0.0
        normal = rng.integers(-2, 3, size=(14, 8)) + scale * rng.normal(size=(14, 8))
        reduce = rng.integers(-2, 3, size=(14, 8)) + scale * rng.normal(size=(14, 8))
        genotype = discretize(ArchParams(normal.astype(float), reduce.astype(float)))
        assert genotype.normal == _brute_force_cell(normal)
        assert genotype.reduce == _brute_force_cell(reduce)


def test_discretize_all_ties():
    genotype = discretize(ArchParams.zeros())
    for cell in genotype.cells().values():
        for node in cell:
            assert node == ((0, OpKind.SEP_CONV_3X3), (1, OpKind.SEP_CONV_3X3))


def test_discretize_never_picks_zero():
    arch = ArchParams.zeros()
    arch.alpha_normal[:, OpKind.ZERO.ordinal] = 50.0
    arch.alpha_normal[:, OpKind.IDENTITY.ordinal] = 1.0
    genotype = discretize(arch)
    assert all(op == OpKind.IDENTITY for node in genotype.normal for _, op in node)


def test_discretize_prefers_stronger_edges():
    arch = ArchParams.zeros()
    arch.alpha_normal[CellTopology.edge_index(2, 3), OpKind.MAX_POOL_3X3.ordinal] = 5.0
    arch.alpha_normal[CellTopology.edge_index(4, 3), OpKind.DIL_CONV_5X5.ordinal] = 4.0
    node3 = discretize(arch).normal[3]
    assert node3 == ((2, OpKind.MAX_POOL_3X3), (4, OpKind.DIL_CONV_5X5))


def test_discretize_rejects_non_finite():
    arch = ArchParams.zeros()
    arch.alpha_reduce[0, 0] = np.inf
    with pytest.raises(GenotypeError):
        discretize(arch)


def test_genotype_invariants_hold_on_random_draws():
    rng = np.random.default_rng(5)
    for _ in range(100):
        genotype = discretize(ArchParams.initialize(rng, std=1.0))
        for cell in genotype.cells().values():
            for j, node in enumerate(cell):
                preds = [p for p, _ in node]
                assert preds == sorted(set(preds)) and len(preds) == 2
                assert max(preds) < 2 + j
                assert OpKind.ZERO not in [op for _, op in node]


@pytest.mark.parametrize("normal", [
    [[(0, "zero"), (1, "identity")]] + [[(0, "identity"), (1, "identity")]] * 3,
    [[(0, "identity"), (0, "identity")]] + [[(0, "identity"), (1, "identity")]] * 3,
    [[(0, "identity"), (2, "identity")]] + [[(0, "identity"), (1, "identity")]] * 3,
    [[(0, "identity"), (1, "identity")]] * 3,
])
def test_invalid_genotypes(normal):
    reduce = [[(0, "identity"), (1, "identity")]] * 4
    with pytest.raises(GenotypeError):
        genotype_from_pairs(normal, reduce)


def test_genotype_is_hashable_value(sample_genotype):
    again = Genotype(sample_genotype.normal, sample_genotype.reduce)
    assert again == sample_genotype
    assert hash(again) == hash(sample_genotype)
    assert "sep_conv_3x3(0)" in str(sample_genotype)
