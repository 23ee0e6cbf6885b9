"""Cap on BLAS/LAPACK threads, driven by ``HANKELWAVE_THREADS``."""

from __future__ import annotations

import os
from contextlib import nullcontext

from threadpoolctl import threadpool_limits

from .errors import ConfigError

ENV_VAR = "HANKELWAVE_THREADS"


def requested_threads(value: str | int | None = None) -> int | None:
    """Thread cap from ``value`` or the environment; ``None`` means no cap."""
    if value is None:
        value = os.environ.get(ENV_VAR, "").strip() or None
    if value is None:
        return None
    try:
        n = int(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{ENV_VAR} must be a positive integer, got {value!r}") from None
    if n < 1:
        raise ConfigError(f"{ENV_VAR} must be a positive integer, got {n}")
    return n


def thread_limit(value: str | int | None = None):
    """Context manager limiting linear-algebra threads (no-op when uncapped)."""
    n = requested_threads(value)
    return nullcontext() if n is None else threadpool_limits(limits=n)
