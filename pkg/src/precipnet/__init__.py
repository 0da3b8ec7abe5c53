"""Two-stage neural precipitation retrieval with a kNN Bayesian baseline."""
from .data import (CoincidenceRecord, PrecipDatabase, PrecipLabel, RadarSource,
                   SurfaceClass, load_database, save_database, split_database)
from .synthetic import SyntheticConfig, generate_synthetic

__version__ = "0.1.0"

__all__ = [
    "CoincidenceRecord", "PrecipDatabase", "PrecipLabel", "RadarSource",
    "SurfaceClass", "SyntheticConfig", "generate_synthetic", "load_database",
    "save_database", "split_database",
]
