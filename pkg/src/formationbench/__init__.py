"""Formation diagnostics toolkit: fit electrode alignments from slow-rate
voltage curves, extract low-SOC pulse resistances, trace degradation modes,
and benchmark early-life predictors on a built-in synthetic cell."""

from . import (
    degmode,
    errors,
    features,
    hppc,
    ingest,
    ocv,
    predict,
    snr,
    stats,
    stoichsim,
    synthcell,
)

__version__ = "0.1.0"

__all__ = [
    "degmode",
    "errors",
    "features",
    "hppc",
    "ingest",
    "ocv",
    "predict",
    "snr",
    "stats",
    "stoichsim",
    "synthcell",
    "__version__",
]
