"""Scenario reports: per-check records plus deterministic serialization.

Report files must come out byte-identical for identical configuration, seed
and worker count, so nothing time- or machine-dependent is ever written.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

__all__ = ["Check", "Report", "relative_residual"]


def relative_residual(lhs, rhs):
    """|lhs - rhs| relative to the larger magnitude (absolute near zero)."""
    lhs, rhs = float(lhs), float(rhs)
    scale = max(abs(lhs), abs(rhs))
    diff = abs(lhs - rhs)
    return diff if scale < 1e-13 else diff / scale


@dataclass
class Check:
    name: str
    tag: str
    lhs: float
    rhs: float
    residual: float
    tolerance: float
    passed: bool
    extra: dict = field(default_factory=dict)

    def row(self):
        d = {
            "name": self.name,
            "tag": self.tag,
            "lhs": self.lhs,
            "rhs": self.rhs,
            "residual": self.residual,
            "tolerance": self.tolerance,
            "pass": bool(self.passed),
        }
        if self.extra:
            d["extra"] = _plain(self.extra)
        return d


def _plain(obj):
    """Recursively coerce numpy scalars/arrays so json stays stable."""
    import numpy as np

    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


@dataclass
class Report:
    scenario: str
    kind: str
    checks: list
    meta: dict = field(default_factory=dict)
    error: str | None = None

    @property
    def passed(self):
        return self.error is None and all(c.passed for c in self.checks)

    def add(self, name, tag, lhs, rhs, tolerance, residual=None, **extra):
        res = relative_residual(lhs, rhs) if residual is None else float(residual)
        chk = Check(name=name, tag=tag, lhs=float(lhs), rhs=float(rhs),
                    residual=res, tolerance=float(tolerance),
                    passed=res <= tolerance, extra=extra)
        self.checks.append(chk)
        return chk

    def to_dict(self):
        d = {
            "scenario": self.scenario,
            "kind": self.kind,
            "pass": bool(self.passed),
            "meta": _plain(self.meta),
            "checks": [c.row() for c in self.checks],
        }
        if self.error is not None:
            d["error"] = self.error
        return d

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n"

    def summary_lines(self):
        mark = "PASS" if self.passed else "FAIL"
        lines = [f"{mark}  {self.scenario} [{self.kind}]  "
                 f"({sum(c.passed for c in self.checks)}/{len(self.checks)} checks)"]
        width = max((len(c.name) for c in self.checks), default=0)
        for c in self.checks:
            lines.append(
                f"    {'ok ' if c.passed else 'BAD'} {c.name.ljust(width)} "
                f"residual={c.residual:.3e} tol={c.tolerance:.1e}")
        if self.error is not None:
            lines.append(f"    ERROR {self.error}")
        return lines
