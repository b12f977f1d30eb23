"""Numeric evaluation of the regret bounds for AdaLinUCB and LinUCB.

Every evaluator accepts either a horizon ``T`` or its natural logarithm
``log_T``.  All ``T``-dependent logarithms are composed in the log domain, so
the formulas can be evaluated far beyond the range of a float horizon
(useful for checking asymptotic behaviour).

Notation follows the analysis: ``C_n`` noise sub-Gaussian constant, ``C_th``
bound on ``||theta*||``, ``C_x`` bound on context norms, ``d`` dimension,
``N`` number of distinct context values, ``Delta_min``/``Delta_max`` the gap
range, ``delta~`` the failure probability.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import special, stats

DEFAULT_SEARCH_CAP = 10 ** 12


class CSlotsSearchError(RuntimeError):
    """The C_slots search passed its cap without the inequality holding."""


@dataclass(frozen=True)
class BoundConstants:
    c_noise: float
    c_theta: float
    c_context: float
    delta_min: float
    delta_max: float
    n_contexts: int
    dim: int
    rho: float = 0.5
    eps0: float = 0.0
    eps1: float = 0.0
    delta_tilde: float = 0.1
    l_bar: Optional[float] = None
    cond_low_mean: Optional[float] = None
    cond_high_mean: Optional[float] = None

    def __post_init__(self):
        errs = []
        if not self.c_noise >= 0:
            errs.append(f"c_noise must be >= 0 (got {self.c_noise})")
        for name in ("c_theta", "c_context", "delta_min", "delta_max"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                errs.append(f"{name} must be a positive real (got {v})")
        if not errs and self.delta_min > self.delta_max:
            errs.append(f"delta_min ({self.delta_min}) exceeds delta_max ({self.delta_max})")
        for name in ("n_contexts", "dim"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                errs.append(f"{name} must be a positive integer (got {v})")
        if not 0.0 <= self.rho <= 1.0:
            errs.append(f"rho must be a probability (got {self.rho})")
        if not (self.eps0 >= 0 and self.eps1 >= 0 and self.eps0 < 1.0 - self.eps1):
            errs.append(f"need 0 <= eps0 < 1 - eps1 (got eps0={self.eps0}, eps1={self.eps1})")
        if not 0.0 < self.delta_tilde < 1.0:
            errs.append(f"delta_tilde must lie in (0, 1) (got {self.delta_tilde})")
        if self.l_bar is not None and not self.l_bar >= 0:
            errs.append(f"l_bar must be >= 0 (got {self.l_bar})")
        if errs:
            raise ValueError("; ".join(errs))

    @property
    def mean_variation(self) -> float:
        """``L_bar``: the explicit value or the binary-factor mean."""
        if self.l_bar is not None:
            return self.l_bar
        return self.rho * self.eps0 + (1.0 - self.rho) * (1.0 - self.eps1)

    def replace(self, **changes) -> "BoundConstants":
        d = asdict(self)
        d.update(changes)
        return BoundConstants(**d)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BoundConstants":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown constant fields: {sorted(unknown)}")
        return cls(**d)


# ---------------------------------------------------------------------------
# building blocks


def _log_horizon(T=None, log_T=None) -> float:
    if (T is None) == (log_T is None):
        raise ValueError("pass exactly one of T and log_T")
    if log_T is None:
        if not T >= 1:
            raise ValueError(f"T must be >= 1 (got {T})")
        return math.log(T)
    if not log_T >= 0:
        raise ValueError("log_T must be >= 0")
    return float(log_T)


def _log_sum(log_a: float, log_b: float) -> float:
    return float(np.logaddexp(log_a, log_b))


def log_bracket(c: BoundConstants, log_T: float, log_conf: float) -> float:
    """The bracketed logarithmic expression shared by the problem-dependent bounds::

        log(C_x T) + 2 log_conf
          + 2 (d - 1) log(d log((d + T C_x^2) / d) + 2 log_conf)
          + (d - 1) log(64 C_n^2 C_th^2 C_x / Delta_min^2)

    ``log_conf`` is ``log(2 / delta~)`` for AdaLinUCB and ``log(1 / delta)``
    for LinUCB.  Requires ``c_noise > 0``.
    """
    d = c.dim
    log_cx = math.log(c.c_context)
    det_term = _log_sum(math.log(d), log_T + 2.0 * log_cx) - math.log(d)
    return (log_cx + log_T
            + 2.0 * log_conf
            + 2.0 * (d - 1) * math.log(d * det_term + 2.0 * log_conf)
            + (d - 1) * math.log(64.0 * c.c_noise ** 2 * c.c_theta ** 2 * c.c_context
                                 / c.delta_min ** 2))


def _low_term(c: BoundConstants, log_T: float, log_conf: float, gap_power: int) -> float:
    """``16 C_n^2 C_th^2 / Delta_min^gap_power * bracket^2`` (0 when ``C_n = 0``)."""
    coef = 16.0 * c.c_noise ** 2 * c.c_theta ** 2 / c.delta_min ** gap_power
    if coef == 0.0:
        return 0.0
    return coef * log_bracket(c, log_T, log_conf) ** 2


def alpha_schedule(c: BoundConstants, T=None, *, log_T=None) -> float:
    """``alpha_T = C_n sqrt(d log((2 + 2 T C_x^2) / delta~)) + C_th``."""
    lt = _log_horizon(T, log_T)
    log_arg = _log_sum(math.log(2.0), math.log(2.0) + lt + 2.0 * math.log(c.c_context))
    return c.c_noise * math.sqrt(c.dim * (log_arg - math.log(c.delta_tilde))) + c.c_theta


# ---------------------------------------------------------------------------
# C_slots


def slots_margin(c: BoundConstants, t: float) -> float:
    """Left side minus right side of the C_slots inequality at slot ``t``::

        rho t - sqrt(t/2 log(2/delta~)) - 16 C_n^2 C_th^2 / Delta_min^2 * bracket(t)^2
            - 4 d / Delta_min^2

    The inequality holds exactly when this is ``>= 0``.
    """
    log_conf = math.log(2.0 / c.delta_tilde)
    return (c.rho * t - math.sqrt(t / 2.0 * log_conf)
            - _low_term(c, math.log(t), log_conf, 2)
            - 4.0 * c.dim / c.delta_min ** 2)


def slots_condition_holds(c: BoundConstants, t: int) -> bool:
    return slots_margin(c, t) >= 0.0


def c_slots(c: BoundConstants, cap: int = DEFAULT_SEARCH_CAP) -> int:
    """Smallest positive integer at which the C_slots inequality starts to hold.

    Doubles ``t`` until the inequality holds, then bisects on the bracket
    ``(lo, hi]`` keeping ``margin(lo) < 0 <= margin(hi)``.  The result holds
    at itself and fails at its predecessor (or is 1).
    """
    if not c.rho > 0:
        raise ValueError("C_slots requires rho > 0")
    if slots_condition_holds(c, 1):
        return 1
    lo, hi = 1, 2
    while not slots_condition_holds(c, hi):
        lo, hi = hi, 2 * hi
        if lo > cap:
            raise CSlotsSearchError(f"C_slots search exceeded cap {cap:g} for constants {c}")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if slots_condition_holds(c, mid):
            hi = mid
        else:
            lo = mid
    if hi > cap:
        raise CSlotsSearchError(f"C_slots = {hi} exceeds cap {cap:g} for constants {c}")
    return hi


# ---------------------------------------------------------------------------
# regret bounds


@dataclass(frozen=True)
class BoundTerms:
    """A two-part bound: slots with low variation and slots with high variation."""

    low: float
    high: float
    c_slots: int
    alpha_T: float

    @property
    def total(self) -> float:
        return self.low + self.high


def _adalinucb_terms(c: BoundConstants, lt: float, low_weight: float,
                     high_weight: float, cap: int) -> BoundTerms:
    log_conf = math.log(2.0 / c.delta_tilde)
    low = low_weight * _low_term(c, lt, log_conf, 1) if low_weight else 0.0
    cs = c_slots(c, cap)
    a_t = alpha_schedule(c, log_T=lt)
    high = high_weight * ((c.delta_max * cs + 4.0 * c.dim * (c.n_contexts - 1) / c.delta_min)
                          * a_t ** 2)
    return BoundTerms(low, high, cs, a_t)


def adalinucb_binary_terms(c: BoundConstants, T=None, *, log_T=None,
                           cap: int = DEFAULT_SEARCH_CAP) -> BoundTerms:
    """Binary-factor AdaLinUCB bound split into its two parts::

        low  = eps0 * 16 C_n^2 C_th^2 / Delta_min * bracket(T)^2      with log(2/delta~)
        high = (1 - eps1) * (Delta_max C_slots + 4 d (N - 1) / Delta_min) * alpha_T^2
    """
    return _adalinucb_terms(c, _log_horizon(T, log_T), c.eps0, 1.0 - c.eps1, cap)


def bound_adalinucb_binary(c: BoundConstants, T=None, *, log_T=None,
                           cap: int = DEFAULT_SEARCH_CAP) -> float:
    return adalinucb_binary_terms(c, T, log_T=log_T, cap=cap).total


def adalinucb_continuous_terms(c: BoundConstants, T=None, *, log_T=None,
                               cap: int = DEFAULT_SEARCH_CAP) -> BoundTerms:
    """Single-threshold continuous-factor bound: the binary shape with weights
    ``E[L | L <= l]`` and ``E[L | L > l]``; ``rho`` is ``P{L <= l}``."""
    if c.cond_low_mean is None or c.cond_high_mean is None:
        raise ValueError("cond_low_mean and cond_high_mean are required")
    return _adalinucb_terms(c, _log_horizon(T, log_T), c.cond_low_mean, c.cond_high_mean, cap)


def bound_adalinucb_continuous(c: BoundConstants, T=None, *, log_T=None,
                               cap: int = DEFAULT_SEARCH_CAP) -> float:
    return adalinucb_continuous_terms(c, T, log_T=log_T, cap=cap).total


def bound_linucb(c: BoundConstants, T=None, *, log_T=None, general: bool = False) -> float:
    """LinUCB bound on actual regret.

    Default: the problem-dependent bound
    ``16 L_bar C_n^2 C_th^2 / Delta_min * bracket(T)^2`` with ``log(1/delta)``,
    where ``delta = delta_tilde``.

    ``general=True``: the gap-free bound on nominal regret
    ``sqrt(8T) [C_n sqrt(d log((1 + T C_x^2)/delta)) + C_th] sqrt(d log((d + T C_x^2)/d))``
    (identity regularizer), multiplied by ``L_bar`` to express it in actual
    reward.
    """
    lt = _log_horizon(T, log_T)
    L = c.mean_variation
    if not general:
        return L * _low_term(c, lt, math.log(1.0 / c.delta_tilde), 1) if L else 0.0
    d = c.dim
    log_cx2 = 2.0 * math.log(c.c_context)
    conf = c.c_noise * math.sqrt(d * (_log_sum(0.0, lt + log_cx2) - math.log(c.delta_tilde)))
    det = d * (_log_sum(math.log(d), lt + log_cx2) - math.log(d))
    return L * math.exp(0.5 * (math.log(8.0) + lt)) * (conf + c.c_theta) * math.sqrt(det)


def leading_log2_coefficients(c: BoundConstants) -> tuple[float, float]:
    """Coefficients of ``(log T)^2`` in the binary AdaLinUCB and LinUCB bounds.

    The bracket grows like ``log T``, so the leading terms are
    ``eps0 * 16 C_n^2 C_th^2 / Delta_min`` and ``L_bar * 16 C_n^2 C_th^2 / Delta_min``.
    """
    base = 16.0 * c.c_noise ** 2 * c.c_theta ** 2 / c.delta_min
    return c.eps0 * base, c.mean_variation * base


# ---------------------------------------------------------------------------
# variation-factor quantiles and conditional means


def quantile_threshold(process, rho: float, side: str = "lower") -> float:
    """Threshold ``l`` with ``P{L <= l} = rho`` (lower) or ``P{L >= l} = rho`` (upper).

    Closed form for the beta and binary processes; nearest-rank on the
    recorded values for a trace.  For discrete processes the lower threshold
    is the smallest support point ``s`` with ``P{L <= s} >= rho`` and the
    upper threshold the largest ``s`` with ``P{L >= s} >= rho``.
    """
    from .environments import BetaVariation, BinaryVariation, TraceVariation
    from .policies import nearest_rank_lower, nearest_rank_upper

    if not 0.0 <= rho <= 1.0:
        raise ValueError(f"rho must be a probability (got {rho})")
    if side not in ("lower", "upper"):
        raise ValueError("side must be 'lower' or 'upper'")
    if isinstance(process, BetaVariation):
        dist = stats.beta(process.a, process.b)
        return float(dist.ppf(rho) if side == "lower" else dist.isf(rho))
    if isinstance(process, BinaryVariation):
        if side == "lower":
            return process.low if rho <= process.rho else process.high
        return process.high if rho <= 1.0 - process.rho else process.low
    if isinstance(process, TraceVariation):
        vals = sorted(process.values)
        return float(nearest_rank_lower(vals, rho) if side == "lower"
                     else nearest_rank_upper(vals, rho))
    raise TypeError(f"unsupported variation process {type(process).__name__}")


def conditional_means(process, threshold: float) -> tuple[float, float, float]:
    """``(P{L <= l}, E[L | L <= l], E[L | L > l])``; NaN for an empty side."""
    from .environments import BetaVariation, BinaryVariation, TraceVariation

    if isinstance(process, BetaVariation):
        a, b = process.a, process.b
        x = min(max(threshold, 0.0), 1.0)
        mean = a / (a + b)
        p = float(special.betainc(a, b, x))
        partial = mean * float(special.betainc(a + 1, b, x))   # E[L 1{L <= l}]
        low = partial / p if p > 0 else float("nan")
        high = (mean - partial) / (1.0 - p) if p < 1 else float("nan")
        return p, low, high
    if isinstance(process, BinaryVariation):
        vals = np.array([process.low, process.high])
        probs = np.array([process.rho, 1.0 - process.rho])
    elif isinstance(process, TraceVariation):
        vals = np.asarray(process.values)
        probs = np.full(len(vals), 1.0 / len(vals))
    else:
        raise TypeError(f"unsupported variation process {type(process).__name__}")
    below = vals <= threshold
    p = float(probs[below].sum())
    low = float(probs[below] @ vals[below] / p) if p > 0 else float("nan")
    high = float(probs[~below] @ vals[~below] / (1 - p)) if p < 1 else float("nan")
    return p, low, high
