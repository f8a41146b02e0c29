"""Comparison reports and the versioned tolerance table.

A report stores everything its verdict depends on, so the verdict can be
recomputed from (empirical, reference, tolerance, kind) alone.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

PASS, FAIL, INCONCLUSIVE = "pass", "fail", "inconclusive"
FINITE_T_GAP = "finite-t gap"

# kinds:
#   abs    |empirical - reference| <= tolerance
#   upper  empirical <= reference + tolerance (one-sided, e.g. bounds and KS)
#   lower  empirical >= reference - tolerance
#   below  empirical < reference (strict; trend requirements)
#   info   reported unjudged, verdict inconclusive
KINDS = ("abs", "upper", "lower", "below", "info")

TOLERANCES = {
    "version": "1",
    "exact_sigma": 3.0,
    "exact_ks": 0.02,
    "ratio_band": [0.5, 2.0],
    "low_ratio_band": [0.8, 1.25],
    "moderate_band": [0.7, 1.4],
    "exponent_slope": 0.03,
    "moderate_slope": 0.05,
    "atom_share_rel": 0.10,
    "limit_ks_low": 0.1,
    "limit_ks_high": 0.1,
    "limit_ks_moderate": 0.15,
    "critical_l1": 0.1,
    "ch_stability": 0.5,
    "ds_epsilon": 0.05,
    "min_accepted": 500,
}


def band(lo: float, hi: float) -> tuple[float, float]:
    """(reference, tolerance) encoding of the interval [lo, hi]."""
    return 0.5 * (lo + hi), 0.5 * (hi - lo)


def judge(empirical: float, reference: float, tolerance: float, kind: str) -> str:
    if kind not in KINDS:
        raise ValueError(f"unknown report kind {kind!r}")
    if kind == "info":
        return INCONCLUSIVE
    e, r, tol = float(empirical), float(reference), float(tolerance)
    if not (math.isfinite(e) and math.isfinite(r)):
        return FAIL
    if kind == "abs":
        ok = abs(e - r) <= tol
    elif kind == "upper":
        ok = e <= r + tol
    elif kind == "lower":
        ok = e >= r - tol
    else:
        ok = e < r
    return PASS if ok else FAIL


@dataclass(frozen=True)
class ComparisonReport:
    name: str
    empirical: float
    reference: float
    tolerance: float
    verdict: str
    kind: str = "abs"
    metadata: dict = field(default_factory=dict)
    label: str | None = None

    @classmethod
    def make(cls, name, empirical, reference, tolerance=0.0, kind="abs", metadata=None,
             force_inconclusive=False, label=None) -> "ComparisonReport":
        verdict = INCONCLUSIVE if force_inconclusive else judge(empirical, reference, tolerance, kind)
        return cls(name, float(empirical), float(reference), float(tolerance), verdict, kind,
                   dict(metadata or {}), label)

    def recomputed_verdict(self) -> str:
        if self.verdict == INCONCLUSIVE:
            return INCONCLUSIVE
        return judge(self.empirical, self.reference, self.tolerance, self.kind)

    @property
    def passed(self) -> bool:
        return self.verdict == PASS

    def with_label(self, label: str) -> "ComparisonReport":
        return ComparisonReport(self.name, self.empirical, self.reference, self.tolerance,
                                self.verdict, self.kind, self.metadata, label)

    def to_dict(self) -> dict:
        return asdict(self)


def _num(x):
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return x


def sort_reports(reports) -> list:
    return sorted(reports, key=lambda r: r.name)


def reports_to_json(reports, extra: dict | None = None) -> str:
    body = {
        "tolerances": TOLERANCES,
        "reports": [{k: _num(v) for k, v in r.to_dict().items()} for r in sort_reports(reports)],
        "status": suite_status(reports),
    }
    if extra:
        body.update(extra)
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def reports_to_text(reports) -> str:
    """Aligned plain-text table, one row per report."""
    head = ("name", "empirical", "reference", "tolerance", "kind", "verdict", "label")
    rows = [head]
    for r in sort_reports(reports):
        rows.append((r.name, f"{r.empirical:.6g}", f"{r.reference:.6g}", f"{r.tolerance:.6g}",
                     r.kind, r.verdict, r.label or ""))
    widths = [max(len(row[i]) for row in rows) for i in range(len(head))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    return "\n".join(lines) + "\n"


def suite_status(reports) -> str:
    """Conjunction of the judged verdicts; inconclusive reports do not count."""
    judged = [r.verdict for r in reports if r.verdict != INCONCLUSIVE]
    if not judged:
        return INCONCLUSIVE
    return PASS if all(v == PASS for v in judged) else FAIL
