"""Disk-resident IVF-Flat vector search with attribute filters."""

from ._core import (
    DEFAULT_PROBES,
    Index,
    IoError,
    UsageError,
    brute_force,
    canonical_filter,
    default_k,
    gen_synthetic,
)

__all__ = [
    "DEFAULT_PROBES",
    "Index",
    "IoError",
    "UsageError",
    "brute_force",
    "canonical_filter",
    "default_k",
    "gen_synthetic",
]
