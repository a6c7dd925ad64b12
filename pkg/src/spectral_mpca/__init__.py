"""Spectral marginal PCA for multivariate functional time series.

Fits a shared frequency-domain principal component basis across subjects,
turns it into real lagged functional filters, extracts per-subject scores
under a Whittle spectral prior, and supports curve imputation and
forecasting from sparse noisy panels.
"""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("spectral-mpca")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0"
