"""DualConv operator engine, cost model and desk-scale experiments."""

from .errors import (ConfigError, DualConvError, FormatError, GeometryError, PolicyError,
                     PrecisionError, ShapeError, SpecError)
from .kernels import ConvGradients, ConvKind, ConvSpec, FilterBank

__version__ = "0.1.0"
