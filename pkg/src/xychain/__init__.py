"""Free-fermion laboratory for disordered XY spin chains."""

from .model import (
    CapacityError, ChainSpec, ConfigError, DegeneracyError, DisorderSpec, EnsembleConfig,
    NumericalError, Observable, ObservablePair, UniformInterval, draw_realization,
)

__version__ = "0.1.0"
