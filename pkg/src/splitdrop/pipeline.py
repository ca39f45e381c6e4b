"""Record-level classification and threshold sweeps over MC ensembles.

Shared by the CLI and the end-to-end tests. For every record the K member
distributions are produced once (split network, cached trunk) and consumed by
both decision rules, so the plain and corrected averages see the same inputs
and the same noise realization; the corrected averages are accumulated in the
same order as the plain one, keeping the (beta1, beta2) = (0, 1) column
bitwise equal to the plain column.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .engine import SplitNetwork, mc_stream
from .layers import Network
from .probcore import correct_rows, normalize_rows
from .synthrf import KNOWN_TAG, RANDOM_TAG, UNKNOWN_TAG

BetaPair = Tuple[float, float]


def iq_to_features(iq: np.ndarray) -> np.ndarray:
    """(N, L) complex records -> (N, 2, L) float32 I/Q channel tensors."""
    iq = np.atleast_2d(iq)
    out = np.empty((iq.shape[0], 2, iq.shape[1]), dtype=np.float32)
    out[:, 0, :] = iq.real
    out[:, 1, :] = iq.imag
    return out


def shift_rows(iq: np.ndarray, shifts: np.ndarray) -> np.ndarray:
    """Circularly shift each row of (N, L) by its own offset."""
    n, L = iq.shape
    idx = (np.arange(L)[None, :] - shifts[:, None]) % L
    return np.take_along_axis(iq, idx, axis=1)


@dataclass
class EnsembleStats:
    """Averaged member distributions per record, for each decision rule.

    ``raw`` is the plain K-member mean; ``corrected[pair]`` the mean of the
    per-member corrected distributions. All float64, rows sum to 1.
    """

    raw: np.ndarray
    corrected: Dict[BetaPair, np.ndarray]
    K: int

    @property
    def n(self) -> int:
        return self.raw.shape[0]


def mc_statistics(sn: SplitNetwork, features: np.ndarray, K: int, seed: int,
                  pairs: Sequence[BetaPair], batch_size: int = 256) -> EnsembleStats:
    """Run the cached MC ensemble over all records and average member outputs."""
    n = features.shape[0]
    C = sn.net.spec.n_classes if sn.net.spec else sn.net.forward(features[:1]).shape[1]
    raw_sum = np.zeros((n, C))
    corr_sum = {tuple(p): np.zeros((n, C)) for p in pairs}
    for start in range(0, n, batch_size):
        stop = min(start + batch_size, n)
        xb = features[start:stop]
        for member in mc_stream(sn, xb, K, seed):
            rows = normalize_rows(member)
            raw_sum[start:stop] += rows
            for pair in corr_sum:
                corr_sum[pair] += correct_rows(rows, pair[0], pair[1])
    return EnsembleStats(
        raw=raw_sum / K,
        corrected={p: s / K for p, s in corr_sum.items()},
        K=K,
    )


def decide_rows(s: np.ndarray, lam: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized decision: (is_known, category, peak) per row.

    A row is "other" iff its peak is strictly below lam.
    """
    peaks = s.max(axis=1)
    cats = s.argmax(axis=1)
    return peaks >= lam, cats, peaks


def lambda_grid(step: float = 0.05) -> np.ndarray:
    """The threshold grid [0, step, ..., 1]."""
    if not 0.0 < step <= 1.0:
        raise ValueError("lambda step must lie in (0, 1]")
    return np.round(np.arange(0.0, 1.0 + step / 2, step), 10)


@dataclass(frozen=True)
class SweepRow:
    algorithm: str           # "average" or "corrected"
    beta1: Optional[float]   # None for the plain average
    beta2: Optional[float]
    lam: float
    signal_type: str
    accuracy: float
    n_records: int


def _type_masks(tags: Sequence[str]) -> Dict[str, np.ndarray]:
    tags = np.asarray(tags)
    return {t: tags == t for t in (KNOWN_TAG, UNKNOWN_TAG, RANDOM_TAG) if (tags == t).any()}


def accuracy_rows(stats: EnsembleStats, labels: np.ndarray, tags: Sequence[str],
                  known_ids: Sequence[int], lambdas: np.ndarray) -> List[SweepRow]:
    """Per-lambda accuracies for every rule and signal type.

    Known records count as correct when the decision is known AND the
    category matches; unknown and random records count when rejected.
    """
    known_ids = np.asarray(list(known_ids), dtype=np.int64)
    masks = _type_masks(tags)
    rows: List[SweepRow] = []
    variants = [("average", None, stats.raw)]
    variants += [("corrected", pair, s) for pair, s in stats.corrected.items()]
    for name, pair, s in variants:
        peaks = s.max(axis=1)
        cats = s.argmax(axis=1)
        pred_label = known_ids[cats]
        correct_cls = pred_label == np.asarray(labels)
        for lam in lambdas:
            is_known = peaks >= lam
            for t, mask in masks.items():
                if t == KNOWN_TAG:
                    acc = float((is_known & correct_cls)[mask].mean())
                else:
                    acc = float((~is_known)[mask].mean())
                rows.append(SweepRow(name, pair[0] if pair else None,
                                     pair[1] if pair else None,
                                     float(lam), t, acc, int(mask.sum())))
    return rows


def balanced_accuracy(rows: List[SweepRow], algorithm: str,
                      pair: Optional[BetaPair] = None) -> Dict[float, float]:
    """Mean accuracy across signal types per lambda, for one rule."""
    per_lam: Dict[float, List[float]] = {}
    for r in rows:
        if r.algorithm != algorithm:
            continue
        if algorithm == "corrected" and (r.beta1, r.beta2) != pair:
            continue
        per_lam.setdefault(r.lam, []).append(r.accuracy)
    return {lam: float(np.mean(v)) for lam, v in per_lam.items()}


def known_accuracy_curve(rows: List[SweepRow], algorithm: str,
                         pair: Optional[BetaPair] = None) -> Dict[float, float]:
    """Known-signal accuracy per lambda for one rule."""
    out = {}
    for r in rows:
        if r.signal_type != KNOWN_TAG or r.algorithm != algorithm:
            continue
        if algorithm == "corrected" and (r.beta1, r.beta2) != pair:
            continue
        out[r.lam] = r.accuracy
    return out
