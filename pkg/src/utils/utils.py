import hashlib
import json
import logging
import os
import sys
from typing import Any, Dict

import numpy as np

LOG_LEVEL_ENV = "FEDNAS_LOG_LEVEL"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: str | None = None) -> None:
    """Configure the root logger once; flag > env var > INFO."""
    level = (level or os.environ.get(LOG_LEVEL_ENV) or "INFO").upper()
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root.addHandler(handler)
    root.setLevel(level)


def canonical_json(obj: Any) -> str:
    # Stable text for hashing and artifacts
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(data: bytes | str) -> str:
    if isinstance(data, str):
        data = data.encode("utf-8")
    return hashlib.sha256(data).hexdigest()


def spawn_rngs(seed: int, count: int) -> list[np.random.Generator]:
    """Independent generators derived from one integer seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [np.random.default_rng(child) for child in children]


def client_seed(seed: int, client_id: int) -> int:
    """Per-client integer seed; depends only on (run seed, client id)."""
    return int(np.random.SeedSequence([seed, client_id]).generate_state(1)[0])


def print_results(res: Dict[str, Any], phase: str = "search") -> None:
    """Pretty-print a federated run summary."""
    print("\n============================")
    print(f" Results for {phase} phase ")
    print("============================")

    if "rounds" in res:
        print(f"Rounds                : {res['rounds']}")
    if "client_count" in res:
        print(f"Clients               : {res['client_count']}")
    if "total_seconds" in res:
        print(f"Wall-clock            : {res['total_seconds']:.1f} s")

    print("\n--- Global test ---")
    if "final_test_loss" in res:
        print(f"  Final loss          : {res['final_test_loss']:.4f}")
    if "final_test_acc" in res:
        print(f"  Final accuracy      : {res['final_test_acc']:.4f}")
    if "best_test_acc" in res:
        print(f"  Best accuracy       : {res['best_test_acc']:.4f} (round {res.get('best_round')})")

    print("\n--- Model size ---")
    for key in ["super_network_params", "fixed_network_params"]:
        if key in res:
            label = key.replace("_", " ").capitalize()
            print(f"  {label:22s}: {res[key] / 1e6:.4f}M")

    if "genotype" in res:
        print("\n--- Genotype ---")
        print(f"  {res['genotype']}")
