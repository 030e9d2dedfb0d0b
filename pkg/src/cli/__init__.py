from .config import RunConfig, load_run_config, config_hash, write_run_manifest
from .commands import (
    cmd_partition,
    cmd_check_partition,
    cmd_search,
    cmd_eval,
    cmd_export,
    cmd_serve,
    cmd_join,
)
