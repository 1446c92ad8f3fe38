"""Shared report containers: probe records, scale parameters, scaling fits.

Every probe emits a ProbeReport: a named list of measured quantities with
the bound each targets and a pass flag.  Reports serialize to JSON (full
structure) and CSV (flat record rows) for downstream aggregation.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class ProbeRecord:
    """One measured quantity: indices, value, bound, and verdict.

    `passed` may be None for record-only quantities that feed a sweep fit
    instead of a per-run threshold.
    """

    indices: dict
    measured: float
    bound: float | None = None
    passed: bool | None = None


@dataclass
class ProbeReport:
    """A probe's output: records plus a recomputable aggregate."""

    probe: str
    target: str
    records: list = field(default_factory=list)
    extras: dict = field(default_factory=dict)

    def add(self, indices, measured, bound=None, passed=None):
        self.records.append(
            ProbeRecord(dict(indices), float(measured),
                        None if bound is None else float(bound), passed)
        )

    def aggregate(self) -> dict:
        values = [r.measured for r in self.records]
        judged = [r for r in self.records if r.passed is not None]
        agg = {
            "count": len(self.records),
            "min": min(values) if values else None,
            "max": max(values) if values else None,
        }
        if judged:
            agg["pass_fraction"] = sum(r.passed for r in judged) / len(judged)
        return agg

    @property
    def all_passed(self) -> bool:
        return all(r.passed for r in self.records if r.passed is not None)

    def to_json_dict(self) -> dict:
        return {
            "probe": self.probe,
            "lemma": self.target,
            "records": [
                {
                    "indices": r.indices,
                    "measured": r.measured,
                    "bound": r.bound,
                    "passed": r.passed,
                }
                for r in self.records
            ],
            "aggregate": self.aggregate(),
            "extras": self.extras,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), sort_keys=True)

    def to_csv(self) -> str:
        """Flat export: one row per record, index keys as columns."""
        keys = sorted({k for r in self.records for k in r.indices})
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["probe", "lemma", *keys, "measured", "bound", "passed"])
        for r in self.records:
            writer.writerow(
                [self.probe, self.target]
                + [r.indices.get(k, "") for k in keys]
                + [repr(r.measured),
                   "" if r.bound is None else repr(r.bound),
                   "" if r.passed is None else int(r.passed)]
            )
        return buf.getvalue()


@dataclass(frozen=True)
class ScaleParams:
    """The polylogarithmic scale parameters used in bound expressions.

    rho = n L d log(m); varrho = n L d log(m / eps) / delta.
    """

    n: int
    L: int
    d: int
    m: int
    delta: float
    eps: float = 1e-3

    @property
    def rho(self) -> float:
        return self.n * self.L * self.d * math.log(self.m)

    @property
    def varrho(self) -> float:
        return self.n * self.L * self.d * math.log(self.m / self.eps) / self.delta


@dataclass(frozen=True)
class ScalingFit:
    """Ordinary least squares fit of y against x (typically log-log)."""

    x: tuple
    y: tuple
    slope: float
    intercept: float
    r_squared: float


def scaling_fit(points) -> ScalingFit:
    """Fit y = slope * x + intercept by OLS over >= 3 finite points."""
    pts = [(float(x), float(y)) for x, y in points]
    if len(pts) < 3:
        raise ValueError("need at least 3 points for a fit")
    x = np.array([p[0] for p in pts])
    y = np.array([p[1] for p in pts])
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("fit points must be finite")
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    total = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 if total == 0 else max(0.0, 1.0 - float(np.sum(resid ** 2)) / float(total))
    return ScalingFit(tuple(x), tuple(y), float(slope), float(intercept), min(r2, 1.0))
