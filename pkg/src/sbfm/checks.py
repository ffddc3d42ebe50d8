"""Registry of named verification checks.

Provides a registry for declaring oracle checks (identities, moment
matches, convergence rates) and running them into uniform pass/fail
results. A check that raises is reported as ``"error"``; it never aborts
the rest of the suite.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CheckOutcome:
    """What a check function returns: the measured value and the verdict."""

    passed: bool
    value: float
    threshold: float
    detail: str = ""


@dataclass
class CheckSpec:
    """Specification for one verification check.

    Attributes:
        name: Display name (e.g. "derivation-chain").
        func: Zero-argument callable returning a CheckOutcome.
        description: One-line statement of the identity or property tested.
    """

    name: str
    func: Callable[[], CheckOutcome]
    description: str = ""


@dataclass
class CheckResult:
    """Result of running a single check.

    Attributes:
        name: Display name (copied from CheckSpec).
        status: One of ``"pass"``, ``"fail"``, ``"error"``.
        value: Measured quantity, NaN on error.
        threshold: Bound the value was compared against.
        detail: Free text (the violated identity, or the exception).
        seconds: Wall-clock runtime.
    """

    name: str
    status: str = "error"  # "pass" | "fail" | "error"
    value: float = math.nan
    threshold: float = math.nan
    detail: str = ""
    seconds: float = 0.0

    def to_dict(self) -> Dict[str, Any]:
        return {
            "detail": self.detail,
            "name": self.name,
            "seconds": self.seconds,
            "status": self.status,
            "threshold": self.threshold,
            "value": self.value,
        }


class CheckRegistry:
    """Registry of checks to run.

    Usage::

        registry = CheckRegistry()
        registry.register(CheckSpec(
            name="derivation-chain",
            func=lambda: CheckOutcome(True, 3e-14, 1e-10),
        ))
        results = registry.run_all()
    """

    def __init__(self) -> None:
        self._specs: Dict[str, CheckSpec] = {}

    def register(self, spec: CheckSpec) -> None:
        """Register a check specification."""
        self._specs[spec.name] = spec

    @property
    def names(self) -> List[str]:
        return list(self._specs)

    def run(self, name: str) -> CheckResult:
        """Run a single registered check by name.

        Raises:
            KeyError: If *name* was never registered.
        """
        spec = self._specs[name]
        return self._run_one(spec)

    def run_all(self) -> List[CheckResult]:
        """Run every registered check, in registration order."""
        return [self._run_one(spec) for spec in self._specs.values()]

    # ------------------------------------------------------------------
    # Internal
    # ------------------------------------------------------------------

    @staticmethod
    def _run_one(spec: CheckSpec) -> CheckResult:
        start = time.perf_counter()
        try:
            outcome = spec.func()
        except Exception as exc:  # reported, not raised
            logger.warning("check %s raised %s", spec.name, exc)
            return CheckResult(
                name=spec.name,
                status="error",
                detail=f"{type(exc).__name__}: {exc}",
                seconds=time.perf_counter() - start,
            )
        status = "pass" if outcome.passed else "fail"
        detail = outcome.detail or spec.description
        return CheckResult(
            name=spec.name,
            status=status,
            value=float(outcome.value),
            threshold=float(outcome.threshold),
            detail=detail,
            seconds=time.perf_counter() - start,
        )


def format_table(results: List[CheckResult], width: Optional[int] = None) -> List[str]:
    """Pass/fail table lines."""
    width = width or max([len(r.name) for r in results] + [5])
    lines = [f"{'check':<{width}}  status  {'value':>12}  {'threshold':>12}"]
    for r in results:
        lines.append(
            f"{r.name:<{width}}  {r.status:<6}  {r.value:>12.4g}  {r.threshold:>12.4g}"
        )
        if r.status != "pass":
            lines.append(f"{'':<{width}}  -> {r.detail}")
    return lines
