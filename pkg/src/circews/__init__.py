"""circews: deterministic early-warning pipeline for circulatory failure.

Cleans irregular ICU time series, imputes them onto a 5-minute grid,
annotates circulatory state, extracts multiscale features (including
learned shapelets), trains a gradient-boosted ensemble, and turns scores
into silenced alarms evaluated per failure episode.
"""

__version__ = "0.1.0"

from .core import DataError, GridStay, PatientStay, VariableCatalog

__all__ = ["DataError", "GridStay", "PatientStay", "VariableCatalog",
           "__version__"]
