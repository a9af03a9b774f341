"""Deterministic text and JSON reports.

A report holds a header (command, input digest, seed, tolerances), named
sections of values and a list of checks.  Rendering never depends on
timing or thread count, so identical inputs give byte-identical output.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional

__all__ = ["Check", "Report", "fmt"]


def fmt(x) -> str:
    """Ten significant digits; integers and strings pass through."""
    if x is None:
        return "-"
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, int):
        return str(x)
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        out = f"{x:.10g}"
        return "0" if out == "-0" else out
    return str(x)


def _jsonable(x):
    if isinstance(x, float):
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return 0.0 if x == 0 else x
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if hasattr(x, "tolist"):
        return _jsonable(x.tolist())
    return x


@dataclass
class Check:
    name: str
    bound: Optional[float]
    measured: Optional[float]
    passed: bool
    note: str = ""

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        text = f"check {self.name}  bound={fmt(self.bound)}  measured={fmt(self.measured)}  {verdict}"
        return f"{text}  ({self.note})" if self.note else text

    def to_dict(self) -> Dict[str, Any]:
        return {"name": self.name, "certified_bound": self.bound, "measured": self.measured,
                "pass": self.passed, "note": self.note}


@dataclass
class Report:
    command: str
    digest: str
    seed: Optional[int] = None
    tolerances: Dict[str, float] = field(default_factory=dict)
    sections: List[tuple] = field(default_factory=list)
    checks: List[Check] = field(default_factory=list)

    def section(self, title: str, rows: List[tuple]) -> None:
        """Add ``rows`` of ``(key, value, ...)`` under ``title``."""
        self.sections.append((title, [tuple(r) for r in rows]))

    def check(self, name: str, bound, measured, passed: bool, note: str = "") -> Check:
        c = Check(name, None if bound is None else float(bound), None if measured is None else float(measured),
                  bool(passed), note)
        self.checks.append(c)
        return c

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)

    @property
    def failing(self) -> List[str]:
        return [c.name for c in self.checks if not c.passed]

    def render(self) -> str:
        lines = [f"command: {self.command}", f"input-sha256: {self.digest}", f"seed: {fmt(self.seed)}"]
        if self.tolerances:
            tol = " ".join(f"{k}={fmt(v)}" for k, v in sorted(self.tolerances.items()))
            lines.append(f"tolerances: {tol}")
        for title, rows in self.sections:
            lines.append(f"[{title}]")
            for row in rows:
                lines.append("  " + "  ".join(fmt(x) for x in row))
        lines.extend(c.line() for c in self.checks)
        if self.ok:
            lines.append("result: PASS")
        else:
            lines.append("result: FAIL " + " ".join(self.failing))
        return "\n".join(lines) + "\n"

    def to_json(self) -> str:
        doc = {
            "command": self.command,
            "input_sha256": self.digest,
            "seed": self.seed,
            "tolerances": self.tolerances,
            "sections": {title: [list(r) for r in rows] for title, rows in self.sections},
            "checks": [c.to_dict() for c in self.checks],
            "pass": self.ok,
        }
        return json.dumps(_jsonable(doc), sort_keys=True, indent=2) + "\n"
