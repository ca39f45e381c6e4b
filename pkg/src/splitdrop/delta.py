"""Closed-form correction gain, its Monte Carlo oracle, and the uniform limit.

The central quantity is the K->infinity gain in averaged mass at the correct
class from running the corrected ensemble instead of the plain average. It
has a closed form in terms of the single-instance hit probability alpha and
conditional statistics of the softmax mass at the correct class:

    gain = alpha * ((1 - vbar_R_hi) * (1 - F_R_b2)
                    - (vbar_R_lo - 1/C) * F_R_b1)
           - (1 - alpha) * (vbar_W_hi * (1 - F_W_b2)
                            - (1/C - vbar_W_lo) * F_W_b1)

where R is the event "the instance predicts the correct class", W its
complement, the vbar terms are conditional means of the correct-class mass,
and the F terms are conditional CDF values of that mass (over R) or of the
peak (over W) at the two thresholds.

``delta_empirical`` estimates the same quantity by brute force: draw vectors,
correct them, difference the means. The two must agree on any model, which is
what the oracle tests check.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .probcore import CorrectionParams, ProbabilityVector, correct_rows
from .rngutil import derive_rng


@dataclass(frozen=True)
class DeltaInputs:
    """Inputs to the closed-form gain.

    alpha is the probability a single instance predicts the correct class;
    the vbar_* fields are conditional means of the correct-class mass and the
    F_* fields conditional CDF values, split by R (hit) / W (miss) and by the
    two thresholds. Empty conditioning sets are encoded as mean 0 with the
    matching probability factor 0.
    """

    alpha: float
    C: int
    beta1: float
    beta2: float
    vbar_R_hi: float
    vbar_R_lo: float
    vbar_W_hi: float
    vbar_W_lo: float
    F_R_b2: float
    F_R_b1: float
    F_W_b2: float
    F_W_b1: float

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.C < 2:
            raise ValueError("need at least 2 classes")
        for name in ("vbar_R_hi", "vbar_R_lo", "vbar_W_hi", "vbar_W_lo",
                     "F_R_b2", "F_R_b1", "F_W_b2", "F_W_b1"):
            val = getattr(self, name)
            if not 0.0 <= val <= 1.0:
                raise ValueError(f"{name}={val} outside [0, 1]")
        if self.F_R_b1 > self.F_R_b2 or self.F_W_b1 > self.F_W_b2:
            raise ValueError("conditional CDF values must be monotone in the threshold")


def delta_closed_form(d: DeltaInputs) -> float:
    """Evaluate the closed-form correction gain."""
    inv_c = 1.0 / d.C
    gain_r = (1.0 - d.vbar_R_hi) * (1.0 - d.F_R_b2) - (d.vbar_R_lo - inv_c) * d.F_R_b1
    loss_w = d.vbar_W_hi * (1.0 - d.F_W_b2) - (inv_c - d.vbar_W_lo) * d.F_W_b1
    return d.alpha * gain_r - (1.0 - d.alpha) * loss_w


def theorem1_holds(d: DeltaInputs) -> bool:
    """True iff the corrected ensemble strictly gains mass at the correct class."""
    return delta_closed_form(d) > 0.0


@dataclass(frozen=True)
class SoftmaxSampleSet:
    """Softmax outputs paired with their correct classes.

    ``vectors`` is (N, C); ``correct`` is the per-sample correct class index.
    The hit set R is where the argmax equals the correct class; W is the rest.
    """

    vectors: np.ndarray
    correct: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        c = np.asarray(self.correct, dtype=np.int64)
        if v.ndim != 2:
            raise ValueError("vectors must be (N, C)")
        if c.shape != (v.shape[0],):
            raise ValueError("correct must be one class index per sample")
        if np.any(c < 0) or np.any(c >= v.shape[1]):
            raise ValueError("correct class index out of range")
        object.__setattr__(self, "vectors", v)
        object.__setattr__(self, "correct", c)

    @classmethod
    def from_pairs(cls, pairs: Sequence[Tuple[ProbabilityVector, int]]) -> "SoftmaxSampleSet":
        vecs = np.stack([p.mass for p, _ in pairs])
        correct = np.array([c for _, c in pairs], dtype=np.int64)
        return cls(vecs, correct)

    @property
    def n(self) -> int:
        return self.vectors.shape[0]

    @property
    def C(self) -> int:
        return self.vectors.shape[1]

    @property
    def right_mask(self) -> np.ndarray:
        return self.vectors.argmax(axis=1) == self.correct


def _cond_mean(x: np.ndarray) -> float:
    # Empty conditioning sets contribute 0 * (probability 0); pin the mean to 0.
    return float(x.mean()) if x.size else 0.0


def estimate_delta_inputs(s: SoftmaxSampleSet, beta1: float, beta2: float) -> DeltaInputs:
    """Empirical DeltaInputs from a sample set.

    CDFs use the <= convention; conditional means use the strict events that
    actually trigger the correction (mass > beta2, mass < beta1). For
    continuous draws the two conventions coincide almost surely.
    """
    if s.n == 0:
        raise ValueError("empty sample set")
    right = s.right_mask
    mass_c = s.vectors[np.arange(s.n), s.correct]
    peaks = s.vectors.max(axis=1)

    alpha = float(right.mean())
    r_mass = mass_c[right]
    w_mass = mass_c[~right]
    w_peak = peaks[~right]

    if r_mass.size:
        f_r_b2 = float((r_mass <= beta2).mean())
        f_r_b1 = float((r_mass <= beta1).mean())
    else:
        f_r_b2 = f_r_b1 = 0.0
    if w_peak.size:
        f_w_b2 = float((w_peak <= beta2).mean())
        f_w_b1 = float((w_peak <= beta1).mean())
    else:
        f_w_b2 = f_w_b1 = 0.0

    return DeltaInputs(
        alpha=alpha,
        C=s.C,
        beta1=beta1,
        beta2=beta2,
        vbar_R_hi=_cond_mean(r_mass[r_mass > beta2]),
        vbar_R_lo=_cond_mean(r_mass[r_mass < beta1]),
        vbar_W_hi=_cond_mean(w_mass[w_peak > beta2]),
        vbar_W_lo=_cond_mean(w_mass[w_peak < beta1]),
        F_R_b2=f_r_b2,
        F_R_b1=f_r_b1,
        F_W_b2=f_w_b2,
        F_W_b1=f_w_b1,
    )


# ---------------------------------------------------------------------------
# Noise models


def _rejection_dirichlet(rng: np.random.Generator, conc: np.ndarray, c: int,
                         want_hit: bool, n: int) -> np.ndarray:
    """Dirichlet draws conditioned on argmax == c (hit) or != c (miss)."""
    C = conc.size
    out = np.empty((n, C))
    filled = 0
    while filled < n:
        chunk = max(2 * (n - filled) + 16, 256)
        draws = rng.dirichlet(conc, size=chunk)
        mask = draws.argmax(axis=1) == c
        if not want_hit:
            mask = ~mask
        take = draws[mask][: n - filled]
        out[filled : filled + take.shape[0]] = take
        filled += take.shape[0]
    return out


@dataclass(frozen=True)
class SymmetricDirichlet:
    """Exchangeable softmax noise: symmetric Dirichlet on the C-simplex.

    Coordinates are identically distributed around 1/C by construction, the
    model for signals that belong to no known class.
    """

    C: int
    concentration: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.C < 2:
            raise ValueError("need at least 2 classes")
        if self.concentration <= 0.0:
            raise ValueError("concentration must be positive")

    def draw(self, n: int, correct_class: int = 0,
             rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """(n, C) draws; correct_class is ignored (coordinates exchangeable)."""
        if rng is None:
            rng = derive_rng(self.seed, "symdir")
        return rng.dirichlet(np.full(self.C, self.concentration), size=n)


@dataclass(frozen=True)
class PeakedMixture:
    """Softmax noise with a controlled single-instance hit probability.

    With probability ``alpha`` a draw is a Dirichlet vector whose
    concentration is boosted at the correct class (``peak_conc`` there,
    ``base_conc`` elsewhere) conditioned by rejection on the argmax landing on
    the correct class; otherwise a symmetric ``base_conc`` Dirichlet
    conditioned on the argmax landing elsewhere. This gives direct,
    independent control of alpha.
    """

    C: int
    alpha: float
    base_conc: float = 0.25
    peak_conc: float = 20.0
    seed: int = 0

    def __post_init__(self):
        if self.C < 2:
            raise ValueError("need at least 2 classes")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must lie in [0, 1]")
        if self.base_conc <= 0.0 or self.peak_conc <= 0.0:
            raise ValueError("concentrations must be positive")

    def draw(self, n: int, correct_class: int = 0,
             rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """(n, C) draws; the argmax hits correct_class with probability alpha."""
        if rng is None:
            rng = derive_rng(self.seed, "peaked")
        c = int(correct_class)
        if not 0 <= c < self.C:
            raise ValueError("correct_class out of range")
        hits = rng.random(n) < self.alpha
        n_hit = int(hits.sum())
        conc_hit = np.full(self.C, self.base_conc)
        conc_hit[c] = self.peak_conc
        conc_miss = np.full(self.C, self.base_conc)
        out = np.empty((n, self.C))
        if n_hit:
            out[hits] = _rejection_dirichlet(rng, conc_hit, c, True, n_hit)
        if n - n_hit:
            out[~hits] = _rejection_dirichlet(rng, conc_miss, c, False, n - n_hit)
        return out


# ---------------------------------------------------------------------------
# Brute-force oracle


def correction_gain(rows: np.ndarray, correct_class: int, p: CorrectionParams) -> np.ndarray:
    """Per-draw change in mass at the correct class under the correction rule.

    Equals correct_rows(rows)[:, c] - rows[:, c], computed without
    materializing the corrected stack.
    """
    rows = np.asarray(rows, dtype=np.float64)
    n, C = rows.shape
    mass_c = rows[:, correct_class]
    peaks = rows.max(axis=1)
    winners = rows.argmax(axis=1)
    gain = np.zeros(n)
    hi = peaks >= p.beta2
    gain[hi] = np.where(winners[hi] == correct_class, 1.0 - mass_c[hi], -mass_c[hi])
    lo = peaks < p.beta1
    gain[lo] = 1.0 / C - mass_c[lo]
    return gain


class EmpiricalDelta(NamedTuple):
    delta: float
    se: float
    n: int


def delta_empirical_stats(model, correct_class: int, p: CorrectionParams,
                          n_draws: int,
                          rng: Optional[np.random.Generator] = None) -> EmpiricalDelta:
    """Monte Carlo estimate of the correction gain with its standard error."""
    if n_draws < 1:
        raise ValueError("need at least one draw")
    draws = model.draw(n_draws, correct_class, rng)
    gains = correction_gain(draws, correct_class, p)
    se = float(gains.std(ddof=1) / np.sqrt(n_draws)) if n_draws > 1 else float("inf")
    return EmpiricalDelta(float(gains.mean()), se, n_draws)


def delta_empirical(model, correct_class: int, p: CorrectionParams, n_draws: int,
                    rng: Optional[np.random.Generator] = None) -> float:
    """Brute-force correction gain: mean corrected mass minus mean raw mass."""
    return delta_empirical_stats(model, correct_class, p, n_draws, rng).delta


class UniformLimitResult(NamedTuple):
    average: float
    corrected: float


def uniform_limit_check(model, p: CorrectionParams, K: int,
                        rng: Optional[np.random.Generator] = None) -> UniformLimitResult:
    """Max per-class deviation of the K-member averaged mass from 1/C.

    Runs both the plain average and the corrected average on the same K draws
    from an exchangeable model; both deviations shrink like 1/sqrt(K).
    """
    draws = model.draw(K, 0, rng)
    inv_c = 1.0 / draws.shape[1]
    s_avg = draws.mean(axis=0)
    s_corr = correct_rows(draws, p.beta1, p.beta2).mean(axis=0)
    return UniformLimitResult(
        average=float(np.abs(s_avg - inv_c).max()),
        corrected=float(np.abs(s_corr - inv_c).max()),
    )
