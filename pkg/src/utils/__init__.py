from .utils import print_results, setup_logging, canonical_json, sha256_hex, spawn_rngs, client_seed
from .errors import (
    FedNASError,
    ConfigError,
    ShapeError,
    NumericalError,
    DatasetError,
    PartitionError,
    GenotypeError,
    ProtocolError,
    CheckpointError,
    RoundFailure,
    AggregationError,
    ArtifactError,
)
