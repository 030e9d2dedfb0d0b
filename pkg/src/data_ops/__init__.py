from .data_loader import Dataset, load_cifar10, synthesize_dataset, parse_record, serialize_record
from .data_processor import (
    PartitionSpec,
    ClientShard,
    dirichlet_partition,
    check_partition,
    train_val_split,
    make_shards,
    augment,
    save_partition,
    load_partition,
    write_dataset_manifest,
    verify_dataset_manifest,
)
from .data_visualizer import DataVisualizer
