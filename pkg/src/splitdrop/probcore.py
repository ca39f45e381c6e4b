"""Probability vectors, the peak-snapping correction rule, and ensemble decisions.

Two decision procedures over an ensemble of softmax outputs:

* ``ensemble_average`` -- element-wise mean, then threshold the peak against
  lambda to call the input known or other.
* ``ensemble_corrected`` -- first snap each member toward its ideal shape
  (one-hot when the peak clears beta2, uniform when it falls below beta1,
  untouched in between), then average and threshold identically.

With ``beta1=0, beta2=1`` the correction is the identity and the two
procedures coincide bitwise (same summation order, float64 accumulation).

All functions here are pure; nothing mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np

#: Absolute tolerance on the total mass of a probability vector.
SUM_TOL = 1e-9

KNOWN = "known"
OTHER = "other"


@dataclass(frozen=True)
class ProbabilityVector:
    """A length-C vector of nonnegative class masses summing to one."""

    mass: np.ndarray

    def __post_init__(self):
        m = np.asarray(self.mass, dtype=np.float64)
        object.__setattr__(self, "mass", m)
        if m.ndim != 1 or m.size < 2:
            raise ValueError("probability vector must be 1-D with at least 2 classes")
        if not np.all(np.isfinite(m)):
            raise ValueError("probability vector has non-finite entries")
        if np.any(m < 0.0):
            raise ValueError("probability vector has negative entries")
        total = float(m.sum())
        if abs(total - 1.0) > SUM_TOL:
            raise ValueError(f"probability mass sums to {total!r}, not 1")

    @classmethod
    def from_scores(cls, scores) -> "ProbabilityVector":
        """Build from nonnegative scores, renormalizing in float64.

        Use this to wrap single-precision softmax rows, whose sums are only
        accurate to ~1e-6 and would fail the strict mass check.
        """
        s = np.asarray(scores, dtype=np.float64)
        total = s.sum()
        if not np.isfinite(total) or total <= 0.0:
            raise ValueError("scores must have a positive finite sum")
        return cls(s / total)

    @property
    def C(self) -> int:
        return self.mass.size

    def peak(self) -> float:
        """The maximum entry."""
        return float(self.mass.max())

    def argmax(self) -> int:
        """Index of the maximum entry; lowest index wins ties."""
        return int(self.mass.argmax())


@dataclass(frozen=True)
class CorrectionParams:
    """Thresholds for the correction rule plus the decision threshold lambda.

    ``beta1 < beta2`` is required strictly; ``lam`` is the known/other peak
    threshold; ``K`` is the nominal ensemble size.
    """

    beta1: float
    beta2: float
    lam: float = 0.5
    K: int = 500

    def __post_init__(self):
        if not (0.0 <= self.beta1 <= 1.0 and 0.0 <= self.beta2 <= 1.0):
            raise ValueError("beta1 and beta2 must lie in [0, 1]")
        if not self.beta1 < self.beta2:
            raise ValueError(f"beta1 must be strictly below beta2, got {self.beta1} >= {self.beta2}")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")
        if self.K < 1:
            raise ValueError("ensemble size K must be positive")


@dataclass(frozen=True)
class EnsembleDecision:
    """Outcome of an ensemble decision.

    ``kind`` is "known" or "other"; ``category`` is the winning class index
    and is present iff known. ``averaged`` is the ensemble mean distribution
    and ``peak`` its maximum entry.
    """

    kind: str
    category: Optional[int]
    averaged: ProbabilityVector
    peak: float

    @property
    def is_known(self) -> bool:
        return self.kind == KNOWN


Rows = Union[np.ndarray, Sequence[ProbabilityVector], Iterable]


def correct_rows(rows: np.ndarray, beta1: float, beta2: float) -> np.ndarray:
    """Apply the three-case correction to a (K, C) stack of distributions.

    Rows with peak >= beta2 become one-hot at their argmax, rows with
    peak < beta1 become uniform, the rest pass through unchanged.
    """
    rows = np.asarray(rows)
    if rows.ndim != 2:
        raise ValueError("expected a 2-D (K, C) array")
    C = rows.shape[1]
    peaks = rows.max(axis=1)
    hi = peaks >= beta2
    lo = peaks < beta1
    out = rows.copy()
    if hi.any():
        idx = np.flatnonzero(hi)
        winners = rows[idx].argmax(axis=1)
        out[idx] = 0.0
        out[idx, winners] = 1.0
    if lo.any():
        out[lo] = 1.0 / C
    return out


def correct(v: ProbabilityVector, p: CorrectionParams) -> ProbabilityVector:
    """Correct a single distribution per the three-case rule."""
    row = correct_rows(v.mass[None, :], p.beta1, p.beta2)[0]
    return ProbabilityVector(row)


def _as_rows(vs: Rows) -> np.ndarray:
    """Stack ensemble members into a float64 (K, C) array, order preserved."""
    if isinstance(vs, np.ndarray):
        arr = np.asarray(vs, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError("ensemble array must be 2-D (K, C)")
        return arr
    rows = []
    for v in vs:
        rows.append(v.mass if isinstance(v, ProbabilityVector) else np.asarray(v, dtype=np.float64))
    if not rows:
        raise ValueError("empty ensemble")
    return np.stack(rows).astype(np.float64, copy=False)


def _decide(total: np.ndarray, K: int, lam: float) -> EnsembleDecision:
    averaged = ProbabilityVector(total / K)
    t = averaged.peak()
    if t < lam:
        return EnsembleDecision(OTHER, None, averaged, t)
    return EnsembleDecision(KNOWN, averaged.argmax(), averaged, t)


def ensemble_average(vs: Rows, lam: float) -> EnsembleDecision:
    """Mean the K member distributions and threshold the peak against lam.

    The decision is "other" iff the peak is strictly below lam. Accumulation
    is float64 regardless of member dtype. Raises on an empty ensemble.
    """
    rows = _as_rows(vs)
    if rows.shape[0] == 0:
        raise ValueError("empty ensemble")
    return _decide(rows.sum(axis=0), rows.shape[0], lam)


def ensemble_corrected(vs: Rows, p: CorrectionParams) -> EnsembleDecision:
    """Correct each member per the three-case rule, then decide as in
    ensemble_average with p.lam.

    With (beta1, beta2) = (0, 1) this reduces bitwise to
    ensemble_average(vs, p.lam): the correction is the identity and the
    summation order is shared.
    """
    rows = _as_rows(vs)
    if rows.shape[0] == 0:
        raise ValueError("empty ensemble")
    corrected = correct_rows(rows, p.beta1, p.beta2)
    return _decide(corrected.sum(axis=0), corrected.shape[0], p.lam)


def normalize_rows(rows: np.ndarray) -> np.ndarray:
    """Renormalize rows to exact unit mass in float64.

    Single-precision softmax rows sum to 1 only within ~1e-6; this brings
    them within the strict ProbabilityVector tolerance.
    """
    rows = np.asarray(rows, dtype=np.float64)
    return rows / rows.sum(axis=-1, keepdims=True)
