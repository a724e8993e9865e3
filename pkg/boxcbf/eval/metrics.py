"""Aggregate statistics over traces and benchmark rows."""
from __future__ import annotations
from typing import Any, Dict, List

import numpy as np

from ..models import SimTrace

__all__ = [
    "active_set_statistics",
    "aggregate_equivalence_metrics",
]


def _runs(mask: np.ndarray) -> List[tuple]:
    """(start, stop) index pairs of maximal True runs."""
    if mask.size == 0:
        return []
    padded = np.concatenate([[False], mask, [False]]).astype(int)
    edges = np.flatnonzero(np.diff(padded))
    return list(zip(edges[0::2], edges[1::2]))


def active_set_statistics(trace: SimTrace) -> Dict[str, Any]:
    lam = trace.lambdas
    if lam.size == 0:
        return {"max_active": 0, "both_sides_events": 0, "max_complementarity": 0.0,
                "two_positive_intervals": 0, "two_positive_first_time": None}
    positive = lam > 0
    lower, upper = positive[:, 0::2], positive[:, 1::2]
    count = positive.sum(axis=1)
    runs = _runs(count == 2)
    return {
        "max_active": int(count.max()),
        "both_sides_events": int(np.sum(np.any(lower & upper, axis=1))),
        "max_complementarity": float(np.max(np.abs(lam * trace.slacks))),
        "two_positive_intervals": len(runs),
        "two_positive_first_time": float(trace.t[runs[0][0]]) if runs else None,
    }


def aggregate_equivalence_metrics(rows: List[Dict]) -> Dict[str, Any]:
    if not rows:
        return {}
    return {
        "samples": len(rows),
        "max_deviation": float(max(r["deviation"] for r in rows)),
        "mean_deviation": float(np.mean([r["deviation"] for r in rows])),
        "worst_kkt_closed_form": float(max(r["kkt_closed_form"] for r in rows)),
        "worst_kkt_oracle": float(max(r["kkt_oracle"] for r in rows)),
        "max_gram_deviation": float(max(r["gram_deviation"] for r in rows)),
        "max_pair_sum_error": float(max(r["pair_sum_error"] for r in rows)),
        "case_iv_count": int(sum(r["case_iv"] for r in rows)),
        "both_sides_events": int(sum(r["both_sides"] for r in rows)),
        "max_active": int(max(r["active"] for r in rows)),
        "active_set_mismatches": int(sum(not r["same_active_set"] for r in rows)),
    }
