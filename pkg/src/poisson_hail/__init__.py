"""Simulation toolkit for Poisson hail: random closed sets falling on a
d-dimensional server under FIFO hard exclusion."""
from .errors import CapacityError, ChainViolation, ConfigurationError, PoissonHailError, UsageError
from .rain import Arrival, Dist, Rain, RainConfig, Shape, ShapeDist, diameter, intersects, sample_rain
from .seeds import SeedSpec

__version__ = "0.1.0"

__all__ = [
    "Arrival", "CapacityError", "ChainViolation", "ConfigurationError", "Dist", "PoissonHailError",
    "Rain", "RainConfig", "SeedSpec", "Shape", "ShapeDist", "UsageError", "diameter", "intersects",
    "sample_rain", "__version__",
]
