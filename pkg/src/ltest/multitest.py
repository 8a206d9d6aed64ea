"""Multiple-testing procedures: Holm step-down and Benjamini-Hochberg step-up."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BadLevel


@dataclass(frozen=True)
class AdjustedResults:
    """Outcome of a multiple-testing procedure on a vector of p-values."""

    raw: list[float]
    rejected: np.ndarray  # boolean mask aligned with ``raw``
    procedure: str
    level: float

    @property
    def n_rejected(self) -> int:
        return int(np.count_nonzero(self.rejected))


def _validated(p, level: float) -> np.ndarray:
    if not 0.0 < level < 1.0:
        raise BadLevel(f"level must lie in (0, 1), got {level!r}")
    arr = np.asarray(p, dtype=float).ravel()
    if arr.size and (not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0):
        raise ValueError("p-values must lie in [0, 1]")
    return arr


def holm(p, alpha: float) -> AdjustedResults:
    """Step-down Bonferroni: reject while p_(i) <= alpha/(m-i+1), stop at the
    first failure.  Ties are ordered by original index."""
    arr = _validated(p, alpha)
    m = arr.size
    order = np.argsort(arr, kind="stable")
    rejected = np.zeros(m, dtype=bool)
    for rank, idx in enumerate(order):
        if arr[idx] <= alpha / (m - rank):
            rejected[idx] = True
        else:
            break
    return AdjustedResults(
        raw=[float(v) for v in arr], rejected=rejected,
        procedure="holm", level=float(alpha),
    )


def bh(p, q: float) -> AdjustedResults:
    """Benjamini-Hochberg step-up: reject p_(1..i*) for the largest i* with
    p_(i*) <= i* q / m.  Ties are ordered by original index."""
    arr = _validated(p, q)
    m = arr.size
    order = np.argsort(arr, kind="stable")
    rejected = np.zeros(m, dtype=bool)
    if m:
        thresholds = q * np.arange(1, m + 1) / m
        passing = np.nonzero(arr[order] <= thresholds)[0]
        if passing.size:
            rejected[order[: passing[-1] + 1]] = True
    return AdjustedResults(
        raw=[float(v) for v in arr], rejected=rejected,
        procedure="bh", level=float(q),
    )
