"""Shared result containers for checks and estimates.

Every verification routine in the package returns one of these rather than a
bare bool, so that the harness can render uniform tables and so that tests can
assert on the numbers that fed a verdict.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from typing import Any


@dataclass
class BoundReport:
    """Outcome of a single inequality or identity check.

    statistic / target / tolerance carry the numbers behind ``passed``.
    ``details`` holds free-form per-item diagnostics (ladders, per-time
    deviations, excluded windows) keyed by short names.
    """

    name: str
    passed: bool
    statistic: float
    target: float
    tolerance: float
    details: dict[str, Any] = field(default_factory=dict)

    def summary_line(self) -> str:
        flag = "PASS" if self.passed else "FAIL"
        return (f"[{flag}] {self.name}: stat={self.statistic:.6g} "
                f"target={self.target:.6g} tol={self.tolerance:.6g}")

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(asdict(self))


@dataclass
class LadderReport:
    """A refinement ladder: parameter values and the statistic at each rung.

    Used for principal-value extrapolation, energy h-ladders and
    total-variation / quadratic-variation level fits.  ``extra`` records
    fitted slopes, extrapolated limits, verdicts.
    """

    name: str
    params: list[float]
    values: list[float]
    extra: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(asdict(self))


@dataclass
class CheckResult:
    """One harness check: verdict plus the reports that produced it."""

    name: str
    passed: bool
    seconds: float
    reports: list[dict[str, Any]] = field(default_factory=list)
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return _jsonable(asdict(self))


def _jsonable(obj):
    """Coerce numpy scalars/arrays inside nested containers to plain python."""
    import numpy as np

    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def dump_report_json(path, payload) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True)
        fh.write("\n")
