import numpy as np
import pytest

from src.data_ops.data_processor import (
    ClientShard,
    PartitionSpec,
    _largest_remainder,
    augment,
    augment_batch,
    check_partition,
    dirichlet_partition,
    horizontal_flip,
    load_partition,
    make_shards,
    random_crop,
    save_partition,
    train_val_split,
)
from src.data_ops.data_visualizer import DataVisualizer
from src.utils.errors import PartitionError

CIFAR_LIKE_LABELS = np.repeat(np.arange(10), 5000)


@pytest.mark.parametrize("num_clients,concentration", [(16, 0.5), (4, 0.1), (8, 100.0)])
def test_partition_covers_every_index_once(num_clients, concentration):
    partition = dirichlet_partition(CIFAR_LIKE_LABELS, PartitionSpec(num_clients, concentration, 0), 10)
    assert len(partition) == num_clients
    check_partition(partition, len(CIFAR_LIKE_LABELS))
    table = DataVisualizer.class_count_table(partition, CIFAR_LIKE_LABELS, 10)
    sums = DataVisualizer.column_sums(table)
    assert all(sums[f"c_{c}"] == 5000 for c in range(10))
    assert sums["total"] == 50000


def test_partition_is_seeded():
    spec = PartitionSpec(16, 0.5, 7)
    a = dirichlet_partition(CIFAR_LIKE_LABELS, spec, 10)
    b = dirichlet_partition(CIFAR_LIKE_LABELS, spec, 10)
    c = dirichlet_partition(CIFAR_LIKE_LABELS, PartitionSpec(16, 0.5, 8), 10)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert any(not np.array_equal(x, y) for x, y in zip(a, c))


def test_small_concentration_is_skewed():
    partition = dirichlet_partition(CIFAR_LIKE_LABELS, PartitionSpec(16, 0.1, 0), 10)
    table = DataVisualizer.class_count_table(partition, CIFAR_LIKE_LABELS, 10)
    counts = table[[f"c_{c}" for c in range(10)]].to_numpy()
    # under 1% of a class for a large share of (client, class) cells
    assert (counts < 50).sum() > counts.size // 3


def test_single_client_gets_everything():
    (only,) = dirichlet_partition(CIFAR_LIKE_LABELS, PartitionSpec(1, 0.5, 0), 10)
    np.testing.assert_array_equal(only, np.arange(len(CIFAR_LIKE_LABELS)))


def test_empty_client_is_an_error():
    labels = np.array([0, 0, 1])
    with pytest.raises(PartitionError):
        dirichlet_partition(labels, PartitionSpec(8, 0.01, 0), 2)


@pytest.mark.parametrize("spec", [PartitionSpec(0, 0.5, 0), PartitionSpec(4, 0.0, 0), PartitionSpec(4, -1.0, 0)])
def test_partition_spec_validation(spec):
    with pytest.raises(PartitionError):
        spec.validate()


def test_largest_remainder():
    np.testing.assert_array_equal(_largest_remainder(np.array([0.5, 0.25, 0.25]), 10), [5, 3, 2])
    np.testing.assert_array_equal(_largest_remainder(np.array([1 / 3] * 3), 10), [4, 3, 3])
    assert _largest_remainder(np.array([0.1, 0.2, 0.7]), 0).sum() == 0
    np.testing.assert_array_equal(_largest_remainder(np.array([0.45, 0.45, 0.45]), 10), [4, 4, 4])


def test_check_partition_detects_errors():
    with pytest.raises(PartitionError):
        check_partition([np.array([0, 1]), np.array([1, 2])], 3)
    with pytest.raises(PartitionError):
        check_partition([np.array([0]), np.array([2])], 3)
    with pytest.raises(PartitionError):
        check_partition([np.array([0, 1, 3])], 3)


def test_train_val_split():
    train, val = train_val_split(np.arange(10, 21), 0.5, seed=1)
    assert len(train) == 6 and len(val) == 5
    assert np.array_equal(np.sort(np.concatenate([train, val])), np.arange(10, 21))
    assert np.all(np.diff(train) > 0)
    small_train, small_val = train_val_split([4, 9], 0.9, seed=0)
    assert len(small_train) == 1 and len(small_val) == 1
    with pytest.raises(PartitionError):
        train_val_split([3], 0.5)
    with pytest.raises(PartitionError):
        train_val_split(np.arange(10), 1.0)


def test_make_shards():
    partition = [np.arange(0, 10), np.arange(10, 30)]
    shards = make_shards(partition, 0.5, seed=0)
    assert [s.client_id for s in shards] == [0, 1]
    assert [s.num_samples for s in shards] == [10, 20]
    again = make_shards(partition, 0.5, seed=0)
    np.testing.assert_array_equal(shards[1].val_indices, again[1].val_indices)


def test_shard_rejects_overlap():
    with pytest.raises(PartitionError):
        ClientShard(0, np.array([1, 2]), np.array([2, 3]))


def test_random_crop_and_flip():
    image = np.arange(2 * 4 * 4, dtype=float).reshape(2, 4, 4) + 1.0
    np.testing.assert_array_equal(random_crop(image, 4, 4), image)
    shifted = random_crop(image, 5, 4)
    np.testing.assert_array_equal(shifted[:, :3], image[:, 1:])
    assert not shifted[:, 3].any()
    np.testing.assert_array_equal(horizontal_flip(image)[:, :, 0], image[:, :, 3])


def test_augment_is_seeded(rng):
    batch = rng.normal(size=(5, 3, 8, 8))
    a = augment_batch(batch, np.random.default_rng(0))
    b = augment_batch(batch, np.random.default_rng(0))
    np.testing.assert_array_equal(a, b)
    assert a.shape == batch.shape
    out = augment(batch[0], np.random.default_rng(1))
    assert out.shape == (3, 8, 8) and out.flags.c_contiguous


def test_partition_file_is_byte_stable(tmp_path):
    spec = PartitionSpec(5, 0.5, 3)
    partition = dirichlet_partition(CIFAR_LIKE_LABELS, spec, 10)
    first, second = tmp_path / "a.json", tmp_path / "b.json"
    save_partition(first, partition, spec, 0.5)
    loaded_spec, loaded = load_partition(first)
    assert loaded_spec == spec
    save_partition(second, loaded, loaded_spec, 0.5)
    assert first.read_bytes() == second.read_bytes()


def test_partition_file_errors(tmp_path):
    path = tmp_path / "p.json"
    with pytest.raises(PartitionError):
        load_partition(path)
    path.write_text('{"schema_version": 2}')
    with pytest.raises(PartitionError):
        load_partition(path)
    path.write_text('{"schema_version": 1, "num_clients": 2, "concentration": 0.5, "seed": 0, "clients": [[0]]}')
    with pytest.raises(PartitionError):
        load_partition(path)
