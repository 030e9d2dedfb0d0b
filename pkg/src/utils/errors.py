from typing import Any, Dict, Sequence


class FedNASError(Exception):
    """Root of every error raised by the package."""


class ConfigError(FedNASError):
    """Invalid or inconsistent run configuration."""


class ShapeError(FedNASError):
    def __init__(self, op_kind: str, dims: Sequence[Any], detail: str = ""):
        self.op_kind = op_kind
        self.dims = tuple(dims)
        msg = f"{op_kind}: incompatible dims {self.dims}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class NumericalError(FedNASError):
    """Non-finite loss or tensor; carries whatever diagnostics the caller had."""

    def __init__(self, message: str, diagnostics: Dict[str, Any] | None = None):
        self.diagnostics = dict(diagnostics or {})
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} [{details}]"
        super().__init__(message)


class DatasetError(FedNASError):
    pass


class PartitionError(FedNASError):
    pass


class GenotypeError(FedNASError):
    pass


class ProtocolError(FedNASError):
    pass


class CheckpointError(FedNASError):
    pass


class RoundFailure(FedNASError):
    """A communication round could not complete; the run is aborted."""

    def __init__(self, round_index: int, message: str, client_id: int | None = None):
        self.round_index = round_index
        self.client_id = client_id
        who = f" (client {client_id})" if client_id is not None else ""
        super().__init__(f"round {round_index}{who}: {message}")


class AggregationError(FedNASError):
    pass


class ArtifactError(FedNASError):
    """Unreadable or inconsistent run artifact (history CSV, manifest)."""
