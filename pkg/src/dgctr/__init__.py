"""Dual-graph embedding enhancement engine for CTR prediction."""

__version__ = "0.1.0"

from . import (  # noqa: F401
    aggregators,
    attrconv,
    collabconv,
    config,
    data,
    graphs,
    kernels,
    metrics,
    model,
    runtime,
    synthgen,
)
