"""Quantitative CT phenotypes from organ segmentations, with sparse frozen classifiers.

The package reads CT volumes and label maps (NIfTI-1), computes a catalog of
organ-level descriptors (morphometry, first-order attenuation, high-HU
burden, occupancy), selects descriptors per finding with cross-validated
elastic-net logistic regression, locks the chosen model into a portable
spec, and evaluates it with seeded bootstrap intervals.
"""

__version__ = "0.1.0"

from .errors import DataError, NumericalError, PhenoctError  # noqa: E402

__all__ = ["__version__", "PhenoctError", "DataError", "NumericalError"]
