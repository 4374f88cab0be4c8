"""Threshold calibration: analytic impostor FAR, empirical genuine FRR, SM_ec.

All thresholds live on the grid k/n.  A fractional threshold ``tau`` maps to
the bit count ``floor(tau * n + 1e-9)``; the small slack absorbs the rounding
of values such as ``k / n`` that were themselves computed in floating point.
A response is accepted iff its Hamming distance in bits is at most that count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np
from scipy.special import gammaln

DEFAULT_ALPHA_FRR = 0.01
DEFAULT_ALPHA_FAR = 1e-6
TIGHT_ALPHA_FAR = 1e-9
DEFAULT_N_MIN = 64
DEFAULT_SM_MIN = 0.05
DEFAULT_SM_CEIL = 0.10

_GRID_SLACK = 1e-9


def threshold_bits(tau: float, n: int) -> int:
    """Largest accepted Hamming distance for fractional threshold ``tau``."""
    if not 0.0 <= tau <= 1.0:
        raise ValueError(f"tau must be in [0, 1], got {tau}")
    return min(n, int(math.floor(tau * n + _GRID_SLACK)))


def snap_up(value: float, n: int) -> int:
    """Smallest k with k/n >= value."""
    return max(0, int(math.ceil(value * n - _GRID_SLACK)))


@dataclass(frozen=True)
class ImpostorModel:
    n: int
    mismatch_p: float = 0.5

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be >= 1")
        if not 0.0 < self.mismatch_p < 1.0:
            raise ValueError("mismatch_p must lie in (0, 1)")

    @classmethod
    def from_bias(cls, n: int, bias_q: float, rho_chip: float = 0.0) -> "ImpostorModel":
        """Model from the per-cell probability of powering up as 1."""
        if not 0.0 <= rho_chip < 1.0:
            raise ValueError("rho_chip must lie in [0, 1)")
        return cls(n, 2.0 * bias_q * (1.0 - bias_q) * (1.0 - rho_chip))

    def log_cdf(self) -> np.ndarray:
        return _log_cdf(self.n, self.mismatch_p)


@lru_cache(maxsize=4096)
def _log_cdf(n: int, p: float) -> np.ndarray:
    k = np.arange(n + 1, dtype=np.float64)
    log_pmf = (
        gammaln(n + 1.0)
        - gammaln(k + 1.0)
        - gammaln(n - k + 1.0)
        + k * math.log(p)
        + (n - k) * math.log1p(-p)
    )
    out = np.logaddexp.accumulate(log_pmf)
    out[-1] = 0.0
    out = np.minimum(out, 0.0)
    out.setflags(write=False)
    return out


def binomial_cdf(n: int, p: float) -> np.ndarray:
    """P[X <= k] for k = 0..n, X ~ Bin(n, p)."""
    return np.exp(_log_cdf(n, p))


def far(model: ImpostorModel, tau: float) -> float:
    """Probability that an impostor's Hamming distance falls within ``tau``."""
    k = threshold_bits(tau, model.n)
    return float(math.exp(model.log_cdf()[k]))


def far_curve(model: ImpostorModel) -> np.ndarray:
    return binomial_cdf(model.n, model.mismatch_p)


@dataclass(frozen=True)
class TauMax:
    tau: float
    floored: bool
    bits: int


def tau_max(model: ImpostorModel, alpha_far: float) -> TauMax:
    if not 0.0 < alpha_far < 1.0:
        raise ValueError("alpha_far must lie in (0, 1)")
    ok = np.nonzero(model.log_cdf() <= math.log(alpha_far))[0]
    if ok.size == 0:
        return TauMax(0.0, True, 0)
    k = int(ok[-1])
    return TauMax(k / model.n, False, k)


@dataclass
class GenuineSample:
    """Per-iteration genuine post-authentication BER values for one config."""

    values: np.ndarray
    n: int
    votes: int = 1
    variant: str = "none"

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 1:
            raise ValueError("values must be one-dimensional")
        if self.values.size and (self.values.min() < 0 or self.values.max() > 1):
            raise ValueError("BER values must lie in [0, 1]")
        if self.n < 1:
            raise ValueError("n must be >= 1")

    @classmethod
    def from_bits(cls, hd_bits: Iterable[int], n: int, votes: int = 1, variant: str = "none") -> "GenuineSample":
        return cls(np.asarray(list(hd_bits), dtype=np.float64) / n, n, votes, variant)

    @property
    def count(self) -> int:
        return int(self.values.size)

    def bit_counts(self) -> np.ndarray:
        return np.array([snap_up(v, self.n) for v in self.values], dtype=np.int64)

    def frr(self, tau: float) -> float:
        k = threshold_bits(tau, self.n)
        return float(np.count_nonzero(self.bit_counts() > k)) / self.count

    def frr_curve(self) -> np.ndarray:
        """FRR at every grid threshold k = 0..n."""
        hist = np.bincount(self.bit_counts(), minlength=self.n + 1)
        above = self.count - np.cumsum(hist)
        return above / self.count


def tau_min_bits(sample: GenuineSample, alpha_frr: float) -> int:
    if sample.count == 0:
        raise ValueError("empty genuine sample")
    if not 0.0 < alpha_frr < 1.0:
        raise ValueError("alpha_frr must lie in (0, 1)")
    m = sample.count
    allowed = int(math.floor(alpha_frr * m + _GRID_SLACK))
    # the ceil((1 - alpha) m)-th smallest value
    return int(np.sort(sample.bit_counts())[m - 1 - allowed])


def tau_min(sample: GenuineSample, alpha_frr: float = DEFAULT_ALPHA_FRR) -> float:
    return tau_min_bits(sample, alpha_frr) / sample.n


def sm_ec(tau_min_value: float, tau_max_value: float) -> float:
    for v in (tau_min_value, tau_max_value):
        if not 0.0 <= v <= 1.0:
            raise ValueError("thresholds must lie in [0, 1]")
    return tau_max_value - tau_min_value


@dataclass(frozen=True)
class CalibrationResult:
    n: int
    votes: int
    variant: str
    alpha_far: float
    alpha_frr: float
    tau_min: float
    tau_max: float
    sm_ec: float
    floored: bool
    viable: bool
    n_valid: bool

    @property
    def recommended_tau(self) -> float | None:
        return self.tau_min if self.viable else None

    def row(self) -> dict:
        return {
            "n": self.n,
            "N": self.votes,
            "variant": self.variant,
            "alpha_far": self.alpha_far,
            "alpha_frr": self.alpha_frr,
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "sm_ec": self.sm_ec,
            "floored": self.floored,
            "viable": self.viable,
            "n_valid": self.n_valid,
        }


CALIBRATION_COLUMNS = (
    "n", "N", "variant", "alpha_far", "alpha_frr",
    "tau_min", "tau_max", "sm_ec", "floored", "viable", "n_valid",
)


def calibrate(
    sample: GenuineSample,
    alpha_far: float = DEFAULT_ALPHA_FAR,
    alpha_frr: float = DEFAULT_ALPHA_FRR,
    model: ImpostorModel | None = None,
    n_min: int = DEFAULT_N_MIN,
) -> CalibrationResult:
    model = model or ImpostorModel(sample.n)
    if model.n != sample.n:
        raise ValueError("impostor model and genuine sample disagree on n")
    lo = tau_min(sample, alpha_frr)
    hi = tau_max(model, alpha_far)
    margin = sm_ec(lo, hi.tau)
    return CalibrationResult(
        n=sample.n,
        votes=sample.votes,
        variant=sample.variant,
        alpha_far=alpha_far,
        alpha_frr=alpha_frr,
        tau_min=lo,
        tau_max=hi.tau,
        sm_ec=margin,
        floored=hi.floored,
        viable=margin > 0,
        n_valid=sample.n >= n_min,
    )


# -- analytic sweeps ------------------------------------------------------------


def delta_sm_sweep(
    base_alpha: float,
    tightened_alpha: float,
    n_grid: Iterable[int],
    mismatch_p: float = 0.5,
) -> list[dict]:
    rows = []
    for n in n_grid:
        model = ImpostorModel(n, mismatch_p)
        base = tau_max(model, base_alpha)
        tight = tau_max(model, tightened_alpha)
        rows.append({
            "n": n,
            "mismatch_p": mismatch_p,
            "alpha_base": base_alpha,
            "alpha_tight": tightened_alpha,
            "tau_max_base": base.tau,
            "tau_max_tight": tight.tau,
            "delta_sm": base.tau - tight.tau,
        })
    return rows


def bias_sweep(
    bias_grid: Iterable[float],
    n_grid: Sequence[int],
    alpha_far: float = DEFAULT_ALPHA_FAR,
    as_mismatch: bool = False,
) -> list[dict]:
    """SM_ec loss from a biased impostor relative to the ideal p = 0.5 model.

    ``bias_grid`` holds bit probabilities q (mismatch 2q(1-q)) unless
    ``as_mismatch`` is set, in which case the values are mismatch
    probabilities used as-is.
    """
    rows = []
    for b in bias_grid:
        p = b if as_mismatch else 2.0 * b * (1.0 - b)
        for n in n_grid:
            ideal = tau_max(ImpostorModel(n, 0.5), alpha_far)
            biased = tau_max(ImpostorModel(n, p), alpha_far)
            rows.append({
                "n": n,
                "bias": b,
                "reading": "mismatch" if as_mismatch else "bit_probability",
                "mismatch_p": p,
                "alpha_far": alpha_far,
                "tau_max_ideal": ideal.tau,
                "tau_max_biased": biased.tau,
                "delta_sm": ideal.tau - biased.tau,
            })
    return rows


def correlation_sweep(
    rho_grid: Iterable[float],
    n_grid: Sequence[int],
    alpha_far: float = DEFAULT_ALPHA_FAR,
) -> list[dict]:
    rows = []
    for rho in rho_grid:
        if not 0.0 <= rho < 1.0:
            raise ValueError(f"rho_chip must lie in [0, 1), got {rho}")
        p = 0.5 * (1.0 - rho)
        for n in n_grid:
            base = tau_max(ImpostorModel(n, 0.5), alpha_far)
            corr = tau_max(ImpostorModel(n, p), alpha_far)
            rows.append({
                "n": n,
                "rho_chip": rho,
                "mismatch_p": p,
                "alpha_far": alpha_far,
                "tau_max_uncorrelated": base.tau,
                "tau_max_correlated": corr.tau,
                "delta_sm": base.tau - corr.tau,
            })
    return rows


# -- target zones -------------------------------------------------------------------

ACCEPTED = "accepted"
OVER_PROVISIONED = "over-provisioned"
UNSAFE = "unsafe"
UNVIABLE = "unviable"
BELOW_N_MIN = "below-n-min"


@dataclass(frozen=True)
class ZoneDecision:
    result: CalibrationResult
    zone: str

    @property
    def accepted(self) -> bool:
        return self.zone == ACCEPTED


def classify_zone(
    result: CalibrationResult,
    sm_min: float = DEFAULT_SM_MIN,
    sm_ceil: float = DEFAULT_SM_CEIL,
) -> str:
    if not result.viable:
        return UNVIABLE
    if result.sm_ec < sm_min:
        return UNSAFE
    if result.sm_ec > sm_ceil:
        return OVER_PROVISIONED
    if not result.n_valid:
        return BELOW_N_MIN
    return ACCEPTED


def target_zone_filter(
    results: Iterable[CalibrationResult],
    sm_min: float = DEFAULT_SM_MIN,
    sm_ceil: float = DEFAULT_SM_CEIL,
) -> list[ZoneDecision]:
    """Label every result; callers keep the ``accepted`` ones."""
    if sm_min < 0:
        raise ValueError("sm_min must be >= 0")
    if sm_ceil <= sm_min:
        raise ValueError("sm_ceil must exceed sm_min")
    return [ZoneDecision(r, classify_zone(r, sm_min, sm_ceil)) for r in results]


@dataclass
class CalibrationConfig:
    """JSON-serialisable calibration settings."""

    alpha_far: list[float] = field(default_factory=lambda: [DEFAULT_ALPHA_FAR, TIGHT_ALPHA_FAR])
    alpha_frr: float = DEFAULT_ALPHA_FRR
    n_min: int = DEFAULT_N_MIN
    sm_min: float = DEFAULT_SM_MIN
    sm_ceil: float = DEFAULT_SM_CEIL
