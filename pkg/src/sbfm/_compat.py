"""Runtime parallelism detection and run-directory resolution.

Reads the ``SBFM_THREADS`` environment variable that caps internal
parallelism, and decides where a training run writes its files.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from datetime import datetime
from pathlib import Path
from typing import Mapping, Optional

from .errors import ConfigError

THREADS_ENV = "SBFM_THREADS"


@dataclass(frozen=True)
class RuntimeState:
    """Result of runtime detection.

    Attributes:
        threads: Worker threads allowed for sharded work; 0 means the
            single-threaded deterministic mode.
        deterministic: True when ``threads == 0``.
        source: Where the thread count came from ("env" or "default").
    """

    threads: int
    deterministic: bool
    source: str


def detect_runtime(environ: Optional[Mapping[str, str]] = None) -> RuntimeState:
    """Read ``SBFM_THREADS`` and describe the parallelism contract.

    Args:
        environ: Mapping to read from; defaults to ``os.environ``.

    Returns:
        A RuntimeState; an unset or empty variable means single-threaded.

    Raises:
        ConfigError: If the variable is not a non-negative integer.
    """
    env = os.environ if environ is None else environ
    raw = env.get(THREADS_ENV, "").strip()
    if not raw:
        return RuntimeState(threads=0, deterministic=True, source="default")
    try:
        threads = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if threads < 0:
        raise ConfigError(f"{THREADS_ENV} must be >= 0, got {threads}")
    return RuntimeState(threads=threads, deterministic=threads == 0, source="env")


def resolve_run_dir(
    base: str,
    seed: int,
    run_dir: Optional[str] = None,
    now: Optional[datetime] = None,
) -> Path:
    """Return the directory a training run writes into.

    An explicit *run_dir* wins. Otherwise the directory is
    ``<base>/run-<YYYYmmdd-HHMMSS>-seed<seed>``.

    Args:
        base: Parent directory for generated run directories.
        seed: Run seed, embedded in the generated name.
        run_dir: Explicit directory, used verbatim when given.
        now: Timestamp to use; defaults to the current local time.

    Returns:
        The resolved (not yet created) directory path.
    """
    if run_dir is not None:
        return Path(run_dir)
    stamp = (now or datetime.now()).strftime("%Y%m%d-%H%M%S")
    return Path(base) / f"run-{stamp}-seed{seed}"
