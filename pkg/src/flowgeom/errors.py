"""Exception types shared across the package.

Each error carries a short machine-readable ``category`` used by the CLI to
pick its exit code and to print one-line parseable diagnostics.
"""


class FlowgeomError(Exception):
    """Base class for all package errors."""

    category = "error"


class FileFormatError(FlowgeomError):
    """A file exists but cannot be parsed (corrupt CSV, broken JSON, ...)."""

    category = "bad-file"


class SchemaError(FlowgeomError):
    """A structured document has the wrong or an unsupported schema id."""

    category = "bad-schema"


class DimensionMismatchError(FlowgeomError):
    """Model, data, or point dimensions disagree."""

    category = "dimension-mismatch"


class FlowOverflowError(FlowgeomError):
    """A non-finite intermediate appeared while evaluating the flow."""

    category = "flow-overflow"

    def __init__(self, layer: int, direction: str):
        self.layer = layer
        self.direction = direction
        super().__init__(
            f"non-finite intermediate in coupling layer {layer} ({direction} pass)"
        )


class TrainingDivergedError(FlowgeomError):
    """The training loss or a parameter became non-finite."""

    category = "training-diverged"

    def __init__(self, epoch: int, batch: int, what: str):
        self.epoch = epoch
        self.batch = batch
        super().__init__(f"{what} became non-finite at epoch {epoch}, batch {batch}")
