"""Executable checks of the asymptotic statements, exact laws and tail bounds."""

from bbmlab.verify.audit import bound_audit
from bbmlab.verify.conditional import conditional_law_suite, ks_statistic
from bbmlab.verify.diagnostics import (
    critical_profile_check,
    moderate_deviation_check,
    ratio_diagnostic_critical,
    ratio_diagnostic_high,
    ratio_diagnostic_low,
)
from bbmlab.verify.report import ComparisonReport, reports_to_json, reports_to_text, suite_status

__all__ = [
    "ComparisonReport",
    "bound_audit",
    "conditional_law_suite",
    "critical_profile_check",
    "ks_statistic",
    "moderate_deviation_check",
    "ratio_diagnostic_critical",
    "ratio_diagnostic_high",
    "ratio_diagnostic_low",
    "reports_to_json",
    "reports_to_text",
    "suite_status",
]
