"""Personalized federated learning simulation (C++ core)."""

from ._core import (
    ConfigError,
    Federation,
    IoError,
    NumericError,
    build_federation,
    config_keys,
    dissimilarity,
    load_federation,
    project_simplex,
    run,
    solve_alpha,
    summarize,
)

__all__ = [
    "ConfigError",
    "Federation",
    "IoError",
    "NumericError",
    "build_federation",
    "config_keys",
    "dissimilarity",
    "load_federation",
    "project_simplex",
    "run",
    "solve_alpha",
    "summarize",
]
