"""Exception types shared across the package."""


class DualConvError(ValueError):
    """Base class for every error raised by this package."""


class ShapeError(DualConvError):
    """Invalid tensor extents (zero/negative extent, element-count overflow, mismatch)."""


class GeometryError(DualConvError):
    """Spatial/matrix geometry that cannot produce a valid result."""


class PrecisionError(DualConvError):
    """Operands of one operation carry different float precisions."""


class SpecError(DualConvError):
    """A ConvSpec or FilterBank violates its invariants."""


class PolicyError(DualConvError):
    """A replacement policy cannot be applied to a selected layer."""


class ConfigError(DualConvError):
    """Malformed or geometrically inconsistent model configuration."""

    def __init__(self, message, line=None, field=None):
        self.line = line
        self.field = field
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field '{field}'")
        super().__init__(f"{', '.join(where)}: {message}" if where else message)


class FormatError(DualConvError):
    """Binary blob with a bad magic, tag, or truncated payload."""
