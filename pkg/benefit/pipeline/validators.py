"""
Input validators for the targeting pipeline.
Checks cohort columns, per-unit alignment and budget grids.
Validators return plain values and log; callers decide what to raise.
"""

import logging
from typing import Optional

import numpy as np

logger = logging.getLogger("validators")


def first_invalid_row(values) -> Optional[int]:
    """0-based index of the first non-finite entry, or None."""
    arr = np.asarray(values, dtype=float)
    bad = np.flatnonzero(~np.isfinite(arr))
    return int(bad[0]) if bad.size else None


def first_non_binary_row(values) -> Optional[int]:
    """0-based index of the first entry outside {0, 1}, or None."""
    arr = np.asarray(values, dtype=float)
    bad = np.flatnonzero((arr != 0) & (arr != 1))
    return int(bad[0]) if bad.size else None


def arm_counts(treatment) -> dict:
    """
    Count units per arm.
    Returns: {"treated": n1, "control": n0}
    """
    a = np.asarray(treatment)
    n1 = int(np.count_nonzero(a == 1))
    return {"treated": n1, "control": int(a.size - n1)}


def has_both_arms(treatment) -> bool:
    counts = arm_counts(treatment)
    if counts["treated"] == 0 or counts["control"] == 0:
        logger.warning(f"⚠️ Single-arm data: {counts}")
        return False
    return True


def aligned(n: int, **arrays) -> Optional[str]:
    """Name of the first array whose length differs from n, or None."""
    for name, arr in arrays.items():
        if arr is not None and np.asarray(arr).shape[0] != n:
            logger.warning(f"⚠️ {name} has {np.asarray(arr).shape[0]} entries, expected {n}")
            return name
    return None


def check_budget_grid(grid) -> dict:
    """
    Check a budget grid: 1-D, finite, strictly ascending, within [0,1],
    first point 0 and last point 1.
    Returns: {"ok": bool, "reason": str}
    """
    g = np.asarray(grid, dtype=float)
    if g.ndim != 1 or g.size < 2:
        return {"ok": False, "reason": "grid needs at least two points"}
    if not np.isfinite(g).all():
        return {"ok": False, "reason": "grid has non-finite points"}
    if np.any(np.diff(g) <= 0):
        return {"ok": False, "reason": "grid must be strictly ascending"}
    if g[0] != 0.0 or g[-1] != 1.0:
        return {"ok": False, "reason": f"grid must start at 0 and end at 1, got [{g[0]}, {g[-1]}]"}
    return {"ok": True, "reason": ""}


def is_budget(delta) -> bool:
    try:
        d = float(delta)
    except (TypeError, ValueError):
        return False
    return bool(np.isfinite(d) and 0.0 <= d <= 1.0)
