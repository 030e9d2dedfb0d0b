"""
Run configuration: typed sections, YAML loading and command-line overrides.

Precedence is flags > file > dataclass defaults. Overrides use dotted keys,
e.g. ``search.rounds=3`` or ``dataset.difficulty=0.5``; values are parsed as
YAML scalars.
"""

import json
import logging
import platform
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace
from pathlib import Path
from typing import Any, Dict, Sequence, Tuple

import numpy as np
import yaml

from src.opt_model.local_search import SearchHyper
from src.runner.federation import MODES, TRANSPORTS, FedConfig
from src.search_space.genotypes import NetworkSpec
from src.utils.errors import ConfigError
from src.utils.utils import canonical_json, sha256_hex

logger = logging.getLogger(__name__)

CODE_VERSION = "0.1.0"
DATASET_SOURCES = ("synthetic", "cifar10")
CIFAR10_SHAPE = (3, 32, 32)


@dataclass
class DatasetConfig:
    source: str = "synthetic"
    path: str | None = None
    # synthetic only
    num_classes: int = 10
    per_class: int = 500
    test_per_class: int = 100
    shape: Tuple[int, int, int] = (3, 16, 16)
    difficulty: float = 0.0
    seed: int = 0


@dataclass
class PartitionConfig:
    num_clients: int = 4
    concentration: float = 0.5
    seed: int = 0
    val_fraction: float = 0.5
    file: str | None = None


@dataclass
class NetworkConfig:
    num_cells: int = 8
    init_channels: int = 16


@dataclass
class PhaseConfig:
    rounds: int = 50
    local_epochs: int = 5
    batch_size: int = 64
    eta_w: float = 0.05
    eta_alpha: float = 0.03
    lam: float = 1.0
    grad_clip: float | None = None
    momentum: float = 0.0
    weight_decay: float = 0.0
    augment: bool = False

    def hyper(self) -> SearchHyper:
        return SearchHyper(
            eta_w=self.eta_w, eta_alpha=self.eta_alpha, lam=self.lam, local_epochs=self.local_epochs,
            batch_size=self.batch_size, grad_clip=self.grad_clip, momentum=self.momentum,
            weight_decay=self.weight_decay, augment=self.augment,
        )


def _eval_defaults() -> PhaseConfig:
    return PhaseConfig(rounds=100, local_epochs=20, eta_w=0.08, eta_alpha=0.0)


@dataclass
class CommConfig:
    transport: str = "sequential"
    host: str = "127.0.0.1"
    port: int = 50515
    round_timeout: float | None = None
    broadcast_eval: bool = False


@dataclass
class RunConfig:
    seed: int = 0
    output_dir: str = "runs/default"
    genotype: str | None = None
    log_level: str | None = None
    eval_batch_size: int = 256
    record_client_payloads: bool = False
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    search: PhaseConfig = field(default_factory=PhaseConfig)
    eval: PhaseConfig = field(default_factory=_eval_defaults)
    comm: CommConfig = field(default_factory=CommConfig)

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    def phase(self, mode: str) -> PhaseConfig:
        if mode not in MODES:
            raise ConfigError(f"phase must be one of {MODES}, got {mode!r}")
        return self.search if mode == "search" else self.eval

    def network_spec(self) -> NetworkSpec:
        if self.dataset.source == "cifar10":
            num_classes, shape = 10, CIFAR10_SHAPE
        else:
            num_classes, shape = self.dataset.num_classes, tuple(self.dataset.shape)
        return NetworkSpec(self.network.num_cells, self.network.init_channels, num_classes, shape)

    def validate(self, mode: str | None = None) -> None:
        """Checks everything a command needs before it touches data."""
        d, p = self.dataset, self.partition
        if d.source not in DATASET_SOURCES:
            raise ConfigError(f"dataset.source must be one of {DATASET_SOURCES}, got {d.source!r}")
        if d.source == "cifar10" and not d.path:
            raise ConfigError("dataset.path is required for cifar10")
        if d.source == "synthetic":
            if d.num_classes < 2 or d.per_class < 2 or d.test_per_class < 1:
                raise ConfigError("synthetic dataset needs num_classes >= 2, per_class >= 2, test_per_class >= 1")
            if d.difficulty < 0:
                raise ConfigError(f"dataset.difficulty must be >= 0, got {d.difficulty}")
        if p.num_clients < 1:
            raise ConfigError(f"partition.num_clients must be >= 1, got {p.num_clients}")
        if p.concentration <= 0:
            raise ConfigError(f"partition.concentration must be > 0, got {p.concentration}")
        if not 0 < p.val_fraction < 1:
            raise ConfigError(f"partition.val_fraction must be in (0, 1), got {p.val_fraction}")
        if self.comm.transport not in TRANSPORTS:
            raise ConfigError(f"comm.transport must be one of {TRANSPORTS}, got {self.comm.transport!r}")
        if not 0 <= self.comm.port < 65536:
            raise ConfigError(f"comm.port out of range: {self.comm.port}")
        if self.eval_batch_size < 1:
            raise ConfigError("eval_batch_size must be >= 1")
        self.network_spec().validate()

        if mode is None:
            return
        phase = self.phase(mode)
        if phase.rounds < 1:
            raise ConfigError(f"{mode}.rounds must be >= 1, got {phase.rounds}")
        if phase.eta_w <= 0:
            raise ConfigError(f"{mode}.eta_w must be > 0, got {phase.eta_w}")
        if mode == "search" and phase.eta_alpha <= 0:
            raise ConfigError(f"search.eta_alpha must be > 0, got {phase.eta_alpha}")
        if mode == "eval" and not self.genotype:
            raise ConfigError("eval needs a genotype path (--genotype)")
        phase.hyper().validate()

    def to_fed_config(self, mode: str, data_tag: str = "") -> FedConfig:
        phase = self.phase(mode)
        return FedConfig(
            num_clients=self.partition.num_clients,
            rounds=phase.rounds,
            hyper=phase.hyper(),
            spec=self.network_spec(),
            seed=self.seed,
            mode=mode,
            transport=self.comm.transport,
            eval_batch_size=self.eval_batch_size,
            round_timeout=self.comm.round_timeout,
            broadcast_eval=self.comm.broadcast_eval,
            record_client_payloads=self.record_client_payloads,
            host=self.comm.host,
            port=self.comm.port,
            data_tag=data_tag or data_tag_of(self),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def data_tag_of(config: RunConfig) -> str:
    """Hash of what decides which samples each client holds."""
    d, p = config.dataset, config.partition
    source = asdict(d) if d.source == "synthetic" else {"source": d.source}
    return sha256_hex(canonical_json({
        "dataset": source,
        "partition": {"num_clients": p.num_clients, "concentration": p.concentration, "seed": p.seed,
                      "val_fraction": p.val_fraction},
    }))


def config_hash(config: RunConfig) -> str:
    """SHA-256 of the numerical part: spec, both phases, seeds and data layout."""
    return sha256_hex(canonical_json({
        "seed": config.seed,
        "network": config.network_spec().to_dict(),
        "search": asdict(config.search),
        "eval": asdict(config.eval),
        "eval_batch_size": config.eval_batch_size,
        "data": data_tag_of(config),
    }))


# ===== loading =====

def _build(cls: type, values: Dict[str, Any], where: str) -> Any:
    if not isinstance(values, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(values).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    base = cls()
    kwargs = {}
    for name, value in values.items():
        current = getattr(base, name)
        if is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}".lstrip("."))
        else:
            kwargs[name] = _coerce(current, value, f"{where}.{name}".lstrip("."))
    return replace(base, **kwargs)


def _coerce(current: Any, value: Any, key: str) -> Any:
    if value is None or current is None:
        return value
    if isinstance(current, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(current, tuple):
        if not isinstance(value, (list, tuple)) or len(value) != len(current):
            raise ConfigError(f"{key}: expected a list of {len(current)} values, got {value!r}")
        return tuple(int(v) for v in value)
    if isinstance(current, int) and isinstance(value, float) and not value.is_integer():
        raise ConfigError(f"{key}: expected an integer, got {value!r}")
    try:
        return type(current)(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: cannot read {value!r} as {type(current).__name__}") from exc


def load_yaml(path: str | Path) -> Dict[str, Any]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file {path} is not valid YAML: {exc}") from exc
    return data or {}


def apply_overrides(values: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``key.subkey=value`` overrides to a nested mapping (in place)."""
    for override in overrides:
        if "=" not in override:
            raise ConfigError(f"override {override!r} is not of the form key=value")
        key_path, raw = override.split("=", 1)
        keys = [k for k in key_path.strip().split(".") if k]
        if not keys:
            raise ConfigError(f"override {override!r} has an empty key")
        node = values
        for k in keys[:-1]:
            node = node.setdefault(k, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {override!r}: {k} is not a section")
        node[keys[-1]] = yaml.safe_load(raw) if raw.strip() else None
        logger.debug(f"override {key_path} = {node[keys[-1]]!r}")
    return values


def load_run_config(path: str | Path | None = None, overrides: Sequence[str] = ()) -> RunConfig:
    values = load_yaml(path) if path is not None else {}
    apply_overrides(values, overrides)
    return _build(RunConfig, values, "")


def write_run_manifest(config: RunConfig, command: str, extra: Dict[str, Any] | None = None) -> Path:
    """Config snapshot, seeds and code version; enough to rerun bit-exactly."""
    manifest = {
        "command": command,
        "code_version": CODE_VERSION,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config_hash": config_hash(config),
        "network_spec": config.network_spec().to_dict(),
        "seeds": {
            "run": config.seed,
            "dataset": config.dataset.seed,
            "partition": config.partition.seed,
        },
        "config": config.to_dict(),
    }
    manifest.update(extra or {})
    path = config.out / f"manifest_{command.replace('-', '_')}.yaml"
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        # tuples become lists
        yaml.safe_dump(json.loads(json.dumps(manifest)), f, sort_keys=True)
    logger.info(f"wrote run manifest {path}")
    return path


def read_run_manifest(path: str | Path) -> Dict[str, Any]:
    data = load_yaml(path)
    if "config" not in data or "network_spec" not in data:
        raise ConfigError(f"{path} is not a run manifest")
    return data
