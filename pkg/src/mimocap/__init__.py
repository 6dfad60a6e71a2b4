"""Monte Carlo system-capacity evaluation of MIMO-BICM demodulators."""

__version__ = "0.1.0"

from .constellation import Constellation, VectorMapper, build_constellation, constellation_by_id
from .demod import DemodSpec, MimoSystem

__all__ = [
    "Constellation",
    "VectorMapper",
    "build_constellation",
    "constellation_by_id",
    "DemodSpec",
    "MimoSystem",
    "__version__",
]
