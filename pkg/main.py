"""
Main entry point: federated architecture search, evaluation of the searched
cell, and the partition / export helpers around them.

    python main.py partition --config config/desk.yaml
    python main.py search --config config/desk.yaml
    python main.py eval --config config/desk.yaml --genotype runs/desk/genotype.json
    python main.py export runs/desk/genotype.json --format dot
    python main.py serve --config config/desk.yaml --phase search
    python main.py join --config config/desk.yaml --phase search --client-id 0

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure,
3 numerical abort.
"""

import argparse
import logging
import sys
from typing import Any, List, Sequence

import yaml

from src.cli.commands import (
    GENOTYPE_FORMATS,
    cmd_check_partition,
    cmd_eval,
    cmd_export,
    cmd_join,
    cmd_partition,
    cmd_search,
    cmd_serve,
)
from src.cli.config import RunConfig, load_run_config
from src.runner.federation import MODES, TRANSPORTS
from src.utils import ConfigError, FedNASError, NumericalError, RoundFailure, setup_logging

logger = logging.getLogger("main")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_NUMERICAL = 0, 1, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _add_run_flags(p: argparse.ArgumentParser, phase_flags: bool = True) -> None:
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field, e.g. search.rounds=3")
    p.add_argument("--output-dir")
    p.add_argument("--seed", type=int)
    p.add_argument("--clients", type=int, help="partition.num_clients")
    p.add_argument("--concentration", type=float, help="Dirichlet concentration")
    p.add_argument("--partition-file")
    p.add_argument("--dataset-path", help="CIFAR-10 binary batch directory")
    p.add_argument("--log-level")
    if phase_flags:
        p.add_argument("--rounds", type=int)
        p.add_argument("--local-epochs", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--lr", type=float, help="weight learning rate")
        p.add_argument("--arch-lr", type=float, help="architecture learning rate (search)")
        p.add_argument("--transport", choices=TRANSPORTS)
        p.add_argument("--genotype")
        p.add_argument("--round-timeout", type=float)
        p.add_argument("--broadcast-eval", action="store_true", default=None)


def _add_endpoint_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--phase", choices=MODES, default="search")
    p.add_argument("--host")
    p.add_argument("--port", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="main.py", description="Federated neural architecture search")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    _add_run_flags(sub.add_parser("partition", help="draw and write the client partition"), phase_flags=False)
    p = sub.add_parser("check-partition", help="verify a partition file covers the dataset")
    _add_run_flags(p, phase_flags=False)
    p.add_argument("path", nargs="?")
    _add_run_flags(sub.add_parser("search", help="federated search, all clients in this process"))
    _add_run_flags(sub.add_parser("eval", help="FedAvg training of a searched genotype"))

    p = sub.add_parser("export", help="print a genotype as JSON or DOT")
    p.add_argument("genotype")
    p.add_argument("--format", choices=GENOTYPE_FORMATS, default="json")
    p.add_argument("--cell", choices=("normal", "reduce"))
    p.add_argument("--render", metavar="FILE_STEM", help="also render the cells with graphviz")
    p.add_argument("--log-level")

    p = sub.add_parser("serve", help="server role over TCP")
    _add_run_flags(p)
    _add_endpoint_flags(p)
    p = sub.add_parser("join", help="client role over TCP")
    _add_run_flags(p)
    _add_endpoint_flags(p)
    p.add_argument("--client-id", type=int, required=True)
    return parser


def _flag_overrides(args: argparse.Namespace, phase: str) -> List[str]:
    """Dedicated flags become dotted overrides; they win over --set."""
    mapping = {
        "output_dir": "output_dir",
        "seed": "seed",
        "clients": "partition.num_clients",
        "concentration": "partition.concentration",
        "partition_file": "partition.file",
        "dataset_path": "dataset.path",
        "log_level": "log_level",
        "rounds": f"{phase}.rounds",
        "local_epochs": f"{phase}.local_epochs",
        "batch_size": f"{phase}.batch_size",
        "lr": f"{phase}.eta_w",
        "arch_lr": f"{phase}.eta_alpha",
        "transport": "comm.transport",
        "genotype": "genotype",
        "round_timeout": "comm.round_timeout",
        "broadcast_eval": "comm.broadcast_eval",
        "host": "comm.host",
        "port": "comm.port",
    }
    out = []
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is None:
            continue
        out.append(f"{key}={_yaml_scalar(value)}")
    return out


def _yaml_scalar(value: Any) -> str:
    # YAML-quoted as needed so paths and hosts come back as the same strings
    text = yaml.safe_dump(value, default_flow_style=True, width=float("inf"))
    return text.removesuffix("\n...\n").strip()


def load_config(args: argparse.Namespace, phase: str) -> RunConfig:
    overrides = list(args.overrides) + _flag_overrides(args, phase)
    return load_run_config(args.config, overrides)


def run(argv: Sequence[str]) -> None:
    args = build_parser().parse_args(argv)
    if args.command == "export":
        setup_logging(args.log_level)
        cmd_export(args.genotype, args.format, args.cell, args.render)
        return

    phase = getattr(args, "phase", None) or ("eval" if args.command == "eval" else "search")
    config = load_config(args, phase)
    setup_logging(config.log_level)
    logger.info(f"{args.command}: output directory {config.output_dir}")

    if args.command == "partition":
        cmd_partition(config)
    elif args.command == "check-partition":
        cmd_check_partition(config, args.path)
    elif args.command == "search":
        cmd_search(config)
    elif args.command == "eval":
        cmd_eval(config)
    elif args.command == "serve":
        cmd_serve(config, phase)
    elif args.command == "join":
        cmd_join(config, args.client_id, phase)


def main(argv: Sequence[str] | None = None) -> int:
    try:
        run(sys.argv[1:] if argv is None else argv)
    except NumericalError as exc:
        logger.error(f"numerical abort: {exc}")
        return EXIT_NUMERICAL
    except RoundFailure as exc:
        logger.error(f"run aborted: {exc}")
        return EXIT_NUMERICAL if isinstance(exc.__cause__, NumericalError) else EXIT_RUNTIME
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FedNASError, OSError) as exc:
        logger.error(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
