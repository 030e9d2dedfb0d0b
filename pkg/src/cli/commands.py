"""
Subcommands behind main.py. Each one validates its configuration first,
writes its artifacts under ``output_dir`` and a run manifest next to them.
"""

import logging
import time
from pathlib import Path
from typing import List, Tuple

import numpy as np
import pandas as pd

from src.cli.config import RunConfig, read_run_manifest, write_run_manifest
from src.comm.client import ClientOutcome, client_loop
from src.comm.server import server_loop
from src.comm.transport import ConnectionClosed, TcpListener, connect_tcp
from src.data_ops.data_loader import Dataset, load_cifar10, synthesize_dataset
from src.data_ops.data_processor import (
    ClientShard,
    PartitionSpec,
    check_partition,
    dirichlet_partition,
    load_partition,
    make_shards,
    save_partition,
    verify_dataset_manifest,
    write_dataset_manifest,
)
from src.data_ops.data_visualizer import DataVisualizer
from src.runner.federation import FederatedServer, LocalWorker, fed_config_hash
from src.runner.history import HistoryWriter, save_checkpoint
from src.runner.runner import run_rounds
from src.search_space.genotype_export import export_genotype, import_genotype, render_genotype
from src.search_space.genotypes import Genotype, NetworkSpec, discretize
from src.utils.errors import ConfigError, GenotypeError, PartitionError
from src.utils.utils import client_seed, print_results

logger = logging.getLogger(__name__)

PARTITION_FILE = "partition.json"
CLASS_COUNTS_FILE = "class_counts.csv"
DATASET_MANIFEST_FILE = "dataset_manifest.json"
GENOTYPE_JSON = "genotype.json"
GENOTYPE_DOT = "genotype.dot"
CHECKPOINT_FILES = {"search": "search_checkpoint.bin", "eval": "eval_checkpoint.bin"}
HISTORY_FILES = {"search": "search_history.csv", "eval": "eval_history.csv"}
GENOTYPE_FORMATS = ("json", "dot")


# ===== shared steps =====

def load_datasets(config: RunConfig) -> Tuple[Dataset, Dataset]:
    d = config.dataset
    if d.source == "cifar10":
        return load_cifar10(d.path)
    train = synthesize_dataset(d.num_classes, d.per_class, d.shape, d.seed, d.difficulty, "train")
    test = synthesize_dataset(d.num_classes, d.test_per_class, d.shape, d.seed, d.difficulty, "test")
    logger.info(f"synthetic dataset: {len(train)} train / {len(test)} test, "
                f"{d.num_classes} classes at {tuple(d.shape)}, difficulty {d.difficulty}")
    return train, test


def partition_spec(config: RunConfig) -> PartitionSpec:
    p = config.partition
    return PartitionSpec(p.num_clients, p.concentration, p.seed)


def partition_path(config: RunConfig) -> Path:
    return Path(config.partition.file) if config.partition.file else config.out / PARTITION_FILE


def resolve_partition(config: RunConfig, train: Dataset, create: bool = True) -> List[np.ndarray]:
    """Read the partition file if there is one, else draw it (and save it)."""
    path = partition_path(config)
    if not path.exists() and not create:
        raise ConfigError(f"partition file {path} not found; run the partition command first")
    if path.exists():
        spec, partition = load_partition(path)
        if spec.num_clients != config.partition.num_clients:
            raise ConfigError(f"{path} holds {spec.num_clients} clients, config says {config.partition.num_clients}")
        logger.info(f"using partition file {path}")
    else:
        spec = partition_spec(config)
        partition = dirichlet_partition(train.labels, spec, train.num_classes)
        save_partition(path, partition, spec, config.partition.val_fraction)
    check_partition(partition, len(train))
    return partition


def client_shards(config: RunConfig, train: Dataset, create: bool = True) -> List[ClientShard]:
    partition = resolve_partition(config, train, create)
    return make_shards(partition, config.partition.val_fraction, config.partition.seed)


def read_genotype(path: str | Path) -> Genotype:
    fmt = "dot" if Path(path).suffix in (".dot", ".gv") else "json"
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise GenotypeError(f"cannot read genotype {path}: {exc}") from exc
    return import_genotype(text, fmt)


def check_genotype_spec(config: RunConfig) -> None:
    """A genotype searched next to a manifest must be evaluated with the same network spec."""
    folder = Path(config.genotype).parent
    found = [folder / name for name in ("manifest_search.yaml", "manifest_serve_search.yaml") if (folder / name).exists()]
    if not found:
        return
    manifest = found[0]
    searched = NetworkSpec.from_dict(read_run_manifest(manifest)["network_spec"])
    if searched != config.network_spec():
        raise ConfigError(f"genotype was searched with {searched}, eval config has {config.network_spec()}")


def _write_genotype(config: RunConfig, genotype: Genotype) -> None:
    for name, fmt in ((GENOTYPE_JSON, "json"), (GENOTYPE_DOT, "dot")):
        path = config.out / name
        path.write_text(export_genotype(genotype, fmt), encoding="utf-8")
        logger.info(f"wrote {path}")


def _finish(config: RunConfig, server: FederatedServer, command: str) -> None:
    mode = server.config.mode
    if mode == "search":
        _write_genotype(config, discretize(server.arch))
    save_checkpoint(config.out / CHECKPOINT_FILES[mode], server.store, server.arch, server.config.spec)
    summary = server.summary()
    print_results(summary, mode)
    write_run_manifest(config, command, {"summary": summary})


# ===== subcommands =====

def cmd_partition(config: RunConfig) -> Path:
    """Draw the Dirichlet partition, write it with its class-count table."""
    config.validate()
    train, test = load_datasets(config)
    spec = partition_spec(config)
    partition = dirichlet_partition(train.labels, spec, train.num_classes)
    path = config.out / PARTITION_FILE
    save_partition(path, partition, spec, config.partition.val_fraction)

    table = DataVisualizer.class_count_table(partition, train.labels, train.num_classes)
    DataVisualizer.save_class_counts(table, config.out / CLASS_COUNTS_FILE)
    DataVisualizer.print_class_counts(table)
    write_dataset_manifest(config.out / DATASET_MANIFEST_FILE, config.dataset.source, train, test,
                           {"source": config.dataset.source, "path": config.dataset.path,
                            "seed": config.dataset.seed})
    write_run_manifest(config, "partition", {"partition_file": str(path)})
    return path


def cmd_check_partition(config: RunConfig, path: str | Path | None = None) -> pd.DataFrame:
    """Every index exactly once; per-class column sums equal the class totals."""
    config.validate()
    train, test = load_datasets(config)
    path = Path(path) if path is not None else partition_path(config)
    _, partition = load_partition(path)
    manifest = path.parent / DATASET_MANIFEST_FILE
    if manifest.exists():
        verify_dataset_manifest(manifest, train, test)
    check_partition(partition, len(train))

    table = DataVisualizer.class_count_table(partition, train.labels, train.num_classes)
    sums = DataVisualizer.column_sums(table)
    class_totals = np.bincount(train.labels, minlength=train.num_classes)
    for c, expected in enumerate(class_totals):
        if sums[f"c_{c}"] != expected:
            raise PartitionError(f"class {c}: clients hold {sums[f'c_{c}']} samples, dataset has {expected}")
    DataVisualizer.print_class_counts(table)
    logger.info(f"{path}: {len(partition)} clients cover all {len(train)} samples exactly once")
    return table


def cmd_search(config: RunConfig) -> Genotype:
    config.validate("search")
    train, test = load_datasets(config)
    shards = client_shards(config, train)
    fed = config.to_fed_config("search")
    writer = HistoryWriter(config.out / HISTORY_FILES["search"])
    server = run_rounds(fed, shards, train, test, on_round=writer.append)
    _finish(config, server, "search")
    return discretize(server.arch)


def cmd_eval(config: RunConfig) -> FederatedServer:
    config.validate("eval")
    genotype = read_genotype(config.genotype)
    check_genotype_spec(config)
    train, test = load_datasets(config)
    shards = client_shards(config, train)
    fed = config.to_fed_config("eval")
    writer = HistoryWriter(config.out / HISTORY_FILES["eval"])
    server = run_rounds(fed, shards, train, test, genotype, writer.append)
    _finish(config, server, "eval")
    return server


def cmd_export(genotype_path: str | Path, fmt: str, cell: str | None = None,
               render: str | None = None) -> str:
    if fmt not in GENOTYPE_FORMATS:
        raise ConfigError(f"format must be one of {GENOTYPE_FORMATS}, got {fmt!r}")
    genotype = read_genotype(genotype_path)
    text = export_genotype(genotype, fmt, cell)
    print(text, end="")
    if render:
        render_genotype(genotype, render)
    return text


def cmd_serve(config: RunConfig, mode: str) -> FederatedServer:
    """Server role over TCP; clients are separate `join` processes."""
    config.validate(mode)
    genotype = None
    if mode == "eval":
        genotype = read_genotype(config.genotype)
        check_genotype_spec(config)
    _, test = load_datasets(config)
    fed = config.to_fed_config(mode)
    server = FederatedServer(fed, test, genotype)
    writer = HistoryWriter(config.out / HISTORY_FILES[mode])

    listener = TcpListener(fed.host, fed.port)
    logger.info(f"serving {mode} on {listener.address[0]}:{listener.address[1]}, "
                f"waiting for {fed.num_clients} clients")
    try:
        outcome = server_loop(lambda: listener.accept(timeout=fed.round_timeout), server,
                              fed_config_hash(fed), fed.round_timeout, fed.broadcast_eval, writer.append)
    finally:
        listener.close()
    server.trace = outcome.trace
    _finish(config, server, f"serve_{mode}")
    return server


def cmd_join(config: RunConfig, client_id: int, mode: str, connect_timeout: float = 30.0) -> ClientOutcome:
    """Client role: hold shard `client_id` and answer the server's rounds."""
    config.validate()
    fed = config.to_fed_config(mode)
    fed.validate()
    if not 0 <= client_id < fed.num_clients:
        raise ConfigError(f"client id {client_id} out of range [0, {fed.num_clients})")
    train, _ = load_datasets(config)
    shard = client_shards(config, train, create=False)[client_id]

    def make_worker(spec_text: str) -> LocalWorker:
        return LocalWorker.from_init(spec_text, client_id, shard, train, fed.hyper,
                                     client_seed(fed.seed, client_id))

    deadline = time.monotonic() + connect_timeout
    while True:
        try:
            conn = connect_tcp(fed.host, fed.port)
            break
        except ConnectionClosed:
            if time.monotonic() > deadline:
                raise
            time.sleep(0.5)
    outcome = client_loop(conn, client_id, fed_config_hash(fed), make_worker, fed.round_timeout)
    write_run_manifest(config, f"join_{mode}_{client_id}", {"rounds": outcome.rounds, "reason": outcome.reason})
    return outcome
