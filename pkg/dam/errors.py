class DamError(Exception):
    """Base class for every error raised by the dam package"""


class ConfigError(DamError):
    """Invalid or unknown configuration"""


class DataError(DamError):
    """Malformed input data (CSV rows, manifests, series invariants)"""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row


class SamplingError(DamError):
    """The HSR support cannot provide the requested number of points"""


class BasisError(DamError):
    """Basis fitting failed (rank deficiency, fully masked windows)"""


class ShapeError(DamError):
    """Tensor operands have incompatible shapes"""

    def __init__(self, op, *shapes):
        shapes_str = ' vs '.join(str(tuple(s)) for s in shapes)
        super().__init__(f"{op}: incompatible shapes {shapes_str}")
        self.op = op
        self.shapes = shapes


class GraphError(DamError):
    """Backward was called on something that is not a scalar on the graph"""


class ModelError(DamError):
    """Backbone misuse: bad ToME reduction, NaNs, checkpoint mismatch"""

    def __init__(self, message, layer=None):
        if layer is not None:
            message = f"layer {layer}: {message}"
        super().__init__(message)
        self.layer = layer


class TrainingError(DamError):
    """Training diverged or cannot start"""


class EvaluationError(DamError):
    """An evaluation protocol cannot be run on the given inputs"""
