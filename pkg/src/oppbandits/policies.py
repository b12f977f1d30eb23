"""Decision policies for opportunistic linear bandits.

All policies share one contract: ``select_arm(round)`` returns an arm id and
``update(round, arm_id, nominal_reward)`` feeds back the observed nominal
reward.  Policies that need the actual reward (``L_t * r``) derive it from the
round themselves.

Ties in the index are broken towards the smallest arm id.  Two indices count
as tied when they agree to within ``TIE_TOL`` (relative), so that round-off
in the last bits never decides between arms with mathematically equal scores.
"""

from __future__ import annotations

import bisect
import math
from collections import deque
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .linalg import (DEFAULT_REFACTOR_PERIOD, PdState, RidgeState, pd_init, ridge_init,
                     ridge_observe)

TIE_TOL = 1e-12


@dataclass
class DecisionRound:
    """One slot as seen by the learner: candidate arms, their contexts and ``L_t``."""

    slot: int
    arm_ids: np.ndarray
    contexts: np.ndarray
    variation_factor: float
    group: Optional[int] = None

    def __post_init__(self):
        self.arm_ids = np.asarray(self.arm_ids)
        self.contexts = np.asarray(self.contexts, dtype=np.float64)
        if len(self.arm_ids) == 0:
            raise ValueError("a decision round needs at least one arm")
        if self.contexts.ndim != 2 or self.contexts.shape[0] != len(self.arm_ids):
            raise ValueError("contexts must be a (num_arms, dim) array")
        if len(set(self.arm_ids.tolist())) != len(self.arm_ids):
            raise ValueError("arm ids must be unique within a round")
        if not self.variation_factor >= 0:
            raise ValueError("variation factor must be nonnegative")

    @property
    def dim(self) -> int:
        return self.contexts.shape[1]

    def position(self, arm_id) -> int:
        hits = np.flatnonzero(self.arm_ids == arm_id)
        if len(hits) == 0:
            raise ValueError(f"arm {arm_id!r} is not offered in slot {self.slot}")
        return int(hits[0])


@dataclass(frozen=True)
class ThresholdConfig:
    lower: float
    upper: float

    def __post_init__(self):
        if not self.lower <= self.upper:
            raise ValueError(f"lower threshold {self.lower} exceeds upper {self.upper}")


def normalize_variation(L: float, thresholds: ThresholdConfig) -> float:
    """Clamp ``L`` to ``[lower, upper]`` and rescale to ``[0, 1]``.

    With a single threshold (``lower == upper``) the result is 0 for
    ``L <= lower`` and 1 above it.
    """
    lo, hi = thresholds.lower, thresholds.upper
    if lo == hi:
        return 0.0 if L <= lo else 1.0
    return (min(max(L, lo), hi) - lo) / (hi - lo)


def argmax_smallest_id(scores: np.ndarray, arm_ids: np.ndarray):
    """Arm id with the largest score; near-ties go to the smallest id."""
    top = scores.max()
    tied = scores >= top - TIE_TOL * max(1.0, abs(top))
    return arm_ids[tied].min()


def ucb_scores(theta: np.ndarray, a_inverse: np.ndarray, contexts: np.ndarray,
               alpha: float, scale: float = 1.0) -> np.ndarray:
    """``theta^T x + alpha * scale * ||x||_{A^-1}`` for every row of ``contexts``.

    ``theta``/``a_inverse`` are either shared (shapes (d,), (d, d)) or per-row
    (shapes (k, d), (k, d, d)).
    """
    if theta.ndim == 1:
        est = contexts @ theta
        quad = np.einsum("kd,de,ke->k", contexts, a_inverse, contexts)
    else:
        est = np.einsum("kd,kd->k", theta, contexts)
        quad = np.einsum("kd,kde,ke->k", contexts, a_inverse, contexts)
    return est + (alpha * scale) * np.sqrt(np.maximum(quad, 0.0))


def adalinucb_index(pd: PdState, ridge: RidgeState, x, alpha: float, l_tilde: float) -> float:
    """Adaptive UCB index of a single context under a normalized factor ``l_tilde``."""
    if not 0.0 <= l_tilde <= 1.0:
        raise ValueError(f"l_tilde must lie in [0, 1], got {l_tilde}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (pd.dim,):
        raise ValueError(f"context has shape {x.shape}, expected ({pd.dim},)")
    return float(ucb_scores(ridge.theta_hat, pd.a_inverse, x[None, :], alpha,
                            math.sqrt(1.0 - l_tilde))[0])


# ---------------------------------------------------------------------------
# configuration

POLICY_KINDS = ("adalinucb", "e_adalinucb", "linucb_extracted", "linucb_multiply",
                "linucb_combine", "kernelucb", "random")


@dataclass
class PolicyConfig:
    """Declarative description of a policy.

    ``lower``/``upper`` are fixed thresholds for ``adalinucb``;
    ``rho_lower``/``rho_upper`` the quantile levels of ``e_adalinucb``.
    ``reward`` chooses what the regression is fitted on for the adaptive
    and combine variants (``"nominal"`` or ``"actual"``).
    """

    kind: str
    name: Optional[str] = None
    alpha: float = 1.5
    disjoint: bool = False
    lower: Optional[float] = None
    upper: Optional[float] = None
    rho_lower: float = 0.0
    rho_upper: float = 0.0
    window: Optional[int] = None
    reward: str = "nominal"
    regularizer: float = 1.0
    refactor_period: int = DEFAULT_REFACTOR_PERIOD
    kernel_gamma: float = 2.0
    ridge_lambda: float = 0.5
    seed: Optional[int] = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown policy kind {self.kind!r}; expected one of {POLICY_KINDS}")
        if self.name is None:
            self.name = self.kind
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.reward not in ("nominal", "actual"):
            raise ValueError("reward must be 'nominal' or 'actual'")
        if self.kind == "adalinucb":
            if self.lower is None or self.upper is None:
                raise ValueError("adalinucb needs both 'lower' and 'upper' thresholds")
            ThresholdConfig(self.lower, self.upper)
        for rho in (self.rho_lower, self.rho_upper):
            if not 0.0 <= rho <= 1.0:
                raise ValueError("quantile levels must be probabilities")
        if self.window is not None and self.window < 1:
            raise ValueError("window must be a positive integer")

    @classmethod
    def from_dict(cls, d: dict) -> "PolicyConfig":
        return cls(**d)

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# empirical thresholds


def nearest_rank_lower(sorted_vals, rho: float):
    """Smallest sample ``s`` with empirical ``P{L <= s} >= rho``."""
    n = len(sorted_vals)
    k = math.ceil(round(rho * n, 9))
    return sorted_vals[min(max(k - 1, 0), n - 1)]


def nearest_rank_upper(sorted_vals, rho: float):
    """Largest sample ``s`` with empirical ``P{L >= s} >= rho``."""
    n = len(sorted_vals)
    k = math.ceil(round(rho * n, 9))
    return sorted_vals[min(max(n - k, 0), n - 1)]


class _Merged:
    """Read-only view of a sorted list with one extra value inserted."""

    def __init__(self, base: list, extra: float):
        self.base = base
        self.extra = extra
        self.pos = bisect.bisect_left(base, extra)

    def __len__(self):
        return len(self.base) + 1

    def __getitem__(self, k):
        if k < self.pos:
            return self.base[k]
        if k == self.pos:
            return self.extra
        return self.base[k - 1]


class EmpiricalThresholds:
    """Running quantile thresholds over observed variation factors.

    Keeps every sample (or the most recent ``window``) in sorted order, so
    the nearest-rank quantiles are exact.
    """

    def __init__(self, rho_lower: float = 0.0, rho_upper: float = 0.0,
                 window: Optional[int] = None):
        self.rho_lower = rho_lower
        self.rho_upper = rho_upper
        self.window = window
        self._sorted: list = []
        self._recent: deque = deque()

    def __len__(self) -> int:
        return len(self._sorted)

    def observe(self, L: float) -> None:
        bisect.insort(self._sorted, L)
        if self.window is not None:
            self._recent.append(L)
            if len(self._recent) > self.window:
                old = self._recent.popleft()
                del self._sorted[bisect.bisect_left(self._sorted, old)]

    def thresholds(self, pending: Optional[float] = None) -> ThresholdConfig:
        """Current thresholds; ``pending`` is included without being stored."""
        vals = self._sorted
        if pending is not None:
            if self.window is not None and len(vals) >= self.window:
                # the oldest sample would drop out once pending is committed
                vals = list(vals)
                del vals[bisect.bisect_left(vals, self._recent[0])]
            vals = _Merged(vals, pending)
        if len(vals) == 0:
            return ThresholdConfig(0.0, 0.0)
        lo = nearest_rank_lower(vals, self.rho_lower)
        hi = nearest_rank_upper(vals, self.rho_upper)
        return ThresholdConfig(lo, max(lo, hi))


def empirical_thresholds(samples, rho_lower: float, rho_upper: float) -> ThresholdConfig:
    state = EmpiricalThresholds(rho_lower, rho_upper)
    for s in samples:
        state.observe(float(s))
    return state.thresholds()


# ---------------------------------------------------------------------------
# policies


class Policy:
    """Base class; ``last_l_tilde`` records the normalized factor of the last
    selection (NaN for policies that do not use one)."""

    name = "policy"
    last_l_tilde = float("nan")

    def select_arm(self, rnd: DecisionRound):
        raise NotImplementedError

    def update(self, rnd: DecisionRound, chosen, nominal_reward: float) -> None:
        raise NotImplementedError

    def snapshot(self) -> dict:
        return {"name": self.name}


class LinearPolicy(Policy):
    """The LinUCB family.

    mode
        ``adaptive``   index ``theta^T x + alpha sqrt(1 - l~) ||x||``
        ``extracted``  plain LinUCB on ``x``, ignores ``L_t``
        ``multiply``   LinUCB on ``L_t x`` regressing the actual reward
        ``combine``    LinUCB on ``[L_t, x]``
    With ``disjoint=True`` every arm keeps its own ``(A, b)``.
    """

    def __init__(self, dim: int, mode: str = "adaptive", alpha: float = 1.5,
                 thresholds: Optional[ThresholdConfig] = None,
                 empirical: Optional[EmpiricalThresholds] = None,
                 disjoint: bool = False, reward: str = "nominal",
                 regularizer: float = 1.0,
                 refactor_period: int = DEFAULT_REFACTOR_PERIOD, name: Optional[str] = None):
        if mode not in ("adaptive", "extracted", "multiply", "combine"):
            raise ValueError(f"unknown mode {mode!r}")
        if not alpha > 0:
            raise ValueError("alpha must be positive")
        if mode == "adaptive" and (thresholds is None) == (empirical is None):
            raise ValueError("adaptive mode needs exactly one of thresholds / empirical")
        self.context_dim = dim
        self.dim = dim + 1 if mode == "combine" else dim
        self.mode = mode
        self.alpha = alpha
        self.thresholds = thresholds
        self.empirical = empirical
        self.disjoint = disjoint
        self.reward = "actual" if mode == "multiply" else reward
        self.regularizer = regularizer
        self.refactor_period = refactor_period
        self.name = name or mode
        self.models: dict = {}
        if not disjoint:
            self.models[None] = self._fresh()

    def _fresh(self):
        return (pd_init(self.dim, self.regularizer, self.refactor_period), ridge_init(self.dim))

    def model(self, arm_id=None):
        """``(PdState, RidgeState)`` of an arm (or the shared one)."""
        key = arm_id if self.disjoint else None
        if key not in self.models:
            self.models[key] = self._fresh()
        return self.models[key]

    # effective inputs -------------------------------------------------

    def effective_contexts(self, rnd: DecisionRound) -> np.ndarray:
        X = rnd.contexts
        if X.shape[1] != self.context_dim:
            raise ValueError(f"contexts have dim {X.shape[1]}, policy expects {self.context_dim}")
        L = rnd.variation_factor
        if self.mode == "multiply":
            return L * X
        if self.mode == "combine":
            return np.hstack([np.full((len(X), 1), L), X])
        return X

    def effective_reward(self, rnd: DecisionRound, nominal_reward: float) -> float:
        if self.reward == "actual":
            return rnd.variation_factor * nominal_reward
        return nominal_reward

    def current_thresholds(self, L: Optional[float] = None) -> Optional[ThresholdConfig]:
        if self.empirical is not None:
            return self.empirical.thresholds(pending=L)
        return self.thresholds

    def l_tilde(self, rnd: DecisionRound) -> float:
        if self.mode != "adaptive":
            return float("nan")
        return normalize_variation(rnd.variation_factor,
                                   self.current_thresholds(rnd.variation_factor))

    # contract ---------------------------------------------------------

    def scores(self, rnd: DecisionRound, l_tilde: Optional[float] = None) -> np.ndarray:
        X = self.effective_contexts(rnd)
        if self.mode == "adaptive":
            lt = self.l_tilde(rnd) if l_tilde is None else l_tilde
            scale = math.sqrt(1.0 - lt)
        else:
            scale = 1.0
        if self.disjoint:
            models = [self.model(a) for a in rnd.arm_ids.tolist()]
            theta = np.stack([m[1].theta_hat for m in models])
            a_inv = np.stack([m[0].a_inverse for m in models])
        else:
            pd, ridge = self.models[None]
            theta, a_inv = ridge.theta_hat, pd.a_inverse
        return ucb_scores(theta, a_inv, X, self.alpha, scale)

    def select_arm(self, rnd: DecisionRound):
        lt = self.l_tilde(rnd)
        self.last_l_tilde = lt
        return argmax_smallest_id(self.scores(rnd, lt if self.mode == "adaptive" else None),
                                  rnd.arm_ids)

    def update(self, rnd: DecisionRound, chosen, nominal_reward: float) -> None:
        pos = rnd.position(chosen)
        x = self.effective_contexts(rnd)[pos]
        pd, ridge = self.model(rnd.arm_ids[pos].item())
        ridge_observe(pd, ridge, x, self.effective_reward(rnd, nominal_reward))
        if self.empirical is not None:
            self.empirical.observe(rnd.variation_factor)

    def snapshot(self) -> dict:
        def one(m):
            pd, ridge = m
            return {"A": pd.a_matrix.tolist(), "b": ridge.b_vector.tolist(),
                    "theta": ridge.theta_hat.tolist(), "updates": pd.update_count}

        snap = {"name": self.name, "mode": self.mode, "alpha": self.alpha,
                "disjoint": self.disjoint}
        thr = self.current_thresholds()
        if thr is not None:
            snap["thresholds"] = [thr.lower, thr.upper]
        if self.disjoint:
            snap["arms"] = {str(k): one(v) for k, v in self.models.items()}
        else:
            snap["model"] = one(self.models[None])
        return snap


class RandomPolicy(Policy):
    """Uniform choice among the offered arms."""

    def __init__(self, seed=None, name: str = "random"):
        self.rng = np.random.default_rng(seed)
        self.name = name

    def select_arm(self, rnd: DecisionRound):
        return rnd.arm_ids[self.rng.integers(len(rnd.arm_ids))]

    def update(self, rnd, chosen, nominal_reward) -> None:
        rnd.position(chosen)


# ---------------------------------------------------------------------------
# kernel UCB


def gaussian_kernel(z1: np.ndarray, z2: np.ndarray, gamma: float) -> np.ndarray:
    """``exp(-gamma ||z1 - z2||^2)`` between rows of ``z1`` (n, p) and ``z2`` (m, p)."""
    sq = (np.sum(z1 * z1, axis=1)[:, None] + np.sum(z2 * z2, axis=1)[None, :]
          - 2.0 * z1 @ z2.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def schur_extend(gram_inverse: np.ndarray, cross: np.ndarray, corner: float,
                 gram: Optional[np.ndarray] = None) -> np.ndarray:
    """Inverse of ``[[M, c], [c^T, s]]`` given ``M^{-1}``, ``c`` and ``s``.

    Uses the Schur complement ``s - c^T M^{-1} c``.  If that is not safely
    positive the full matrix is inverted directly, which needs ``gram`` (the
    extended matrix itself).
    """
    n = gram_inverse.shape[0]
    if n == 0:
        return np.array([[1.0 / corner]])
    u = gram_inverse @ cross
    schur = corner - cross @ u
    if not schur > 1e-12 * max(1.0, abs(corner)):
        if gram is None:
            raise np.linalg.LinAlgError("Schur complement is not positive")
        return np.linalg.inv(gram)
    out = np.empty((n + 1, n + 1))
    out[:n, :n] = gram_inverse + np.outer(u, u) / schur
    out[:n, n] = -u / schur
    out[n, :n] = -u / schur
    out[n, n] = 1.0 / schur
    return out


class KernelUCB(Policy):
    """Kernel UCB over augmented contexts ``[L_t, x]`` with a Gaussian kernel.

    The inverse of ``K + lambda I`` is grown one row/column at a time in a
    preallocated buffer.
    """

    def __init__(self, alpha: float = 1.5, gamma: float = 2.0, ridge_lambda: float = 0.5,
                 name: str = "kernelucb"):
        if not (alpha > 0 and gamma > 0 and ridge_lambda > 0):
            raise ValueError("alpha, gamma and ridge_lambda must be positive")
        self.alpha = alpha
        self.gamma = gamma
        self.ridge_lambda = ridge_lambda
        self.name = name
        self.n = 0
        self._z = np.empty((0, 0))
        self._y = np.empty(0)
        self._ginv = np.empty((0, 0))
        self._weights = np.empty(0)

    @property
    def history_contexts(self) -> np.ndarray:
        return self._z[:self.n]

    @property
    def rewards(self) -> np.ndarray:
        return self._y[:self.n]

    @property
    def gram_inverse(self) -> np.ndarray:
        return self._ginv[:self.n, :self.n]

    def kernel(self, z1, z2):
        return gaussian_kernel(np.atleast_2d(z1), np.atleast_2d(z2), self.gamma)

    @staticmethod
    def augment(rnd: DecisionRound) -> np.ndarray:
        return np.hstack([np.full((len(rnd.arm_ids), 1), rnd.variation_factor), rnd.contexts])

    def _reserve(self, p: int, need: int) -> None:
        cap = self._ginv.shape[0]
        if self._z.shape[1] != p and self.n == 0:
            self._z = np.empty((0, p))
        if need <= cap:
            return
        new_cap = max(16, 2 * cap, need)
        z = np.empty((new_cap, p))
        z[:self.n] = self._z[:self.n]
        y = np.empty(new_cap)
        y[:self.n] = self._y[:self.n]
        g = np.empty((new_cap, new_cap))
        g[:self.n, :self.n] = self._ginv[:self.n, :self.n]
        self._z, self._y, self._ginv = z, y, g

    def fit_history(self, contexts: np.ndarray, rewards: np.ndarray) -> None:
        """Replace the history wholesale and invert ``K + lambda I`` directly."""
        contexts = np.atleast_2d(np.asarray(contexts, dtype=float))
        rewards = np.asarray(rewards, dtype=float)
        n, p = contexts.shape
        self.n = 0
        self._z = np.empty((0, p))
        self._ginv = np.empty((0, 0))
        self._reserve(p, n + max(16, n // 8))    # headroom for later observe()
        gram = self.kernel(contexts, contexts) + self.ridge_lambda * np.eye(n)
        self._z[:n] = contexts
        self._y[:n] = rewards
        self._ginv[:n, :n] = np.linalg.inv(gram)
        self.n = n
        self._weights = self.gram_inverse @ self.rewards

    def index_values(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_2d(z)
        if self.n and z.shape[1] != self._z.shape[1]:
            raise ValueError("augmented context dimension mismatch")
        k = self.kernel(z, self.history_contexts)          # (m, n)
        mean = k @ self._weights
        quad = np.sum((k @ self.gram_inverse) * k, axis=1)
        self_sim = np.ones(len(z))                          # Gaussian kernel: k(z, z) = 1
        return mean + self.alpha * np.sqrt(np.maximum(self_sim - quad, 0.0))

    def kernel_index(self, z) -> float:
        if self.n == 0:
            raise ValueError("no history yet: the first action is forced")
        return float(self.index_values(np.asarray(z, dtype=float)[None, :])[0])

    def select_arm(self, rnd: DecisionRound):
        if self.n == 0:
            return rnd.arm_ids[0]
        return argmax_smallest_id(self.index_values(self.augment(rnd)), rnd.arm_ids)

    def observe(self, z: np.ndarray, reward: float) -> None:
        z = np.asarray(z, dtype=float)
        self._reserve(len(z), self.n + 1)
        n = self.n
        cross = self.kernel(z, self.history_contexts)[0] if n else np.empty(0)
        corner = 1.0 + self.ridge_lambda
        gram = None
        u = self.gram_inverse @ cross if n else np.empty(0)
        schur = corner - cross @ u if n else corner
        if not schur > 1e-12 * corner:
            hist = np.vstack([self.history_contexts, z])
            gram = self.kernel(hist, hist) + self.ridge_lambda * np.eye(n + 1)
            self._ginv[:n + 1, :n + 1] = np.linalg.inv(gram)
        else:
            g = self._ginv
            if n:
                g[:n, :n] += np.outer(u / schur, u)
                g[:n, n] = -u / schur
                g[n, :n] = -u / schur
            g[n, n] = 1.0 / schur
        self._z[n] = z
        self._y[n] = reward
        self.n = n + 1
        self._weights = self.gram_inverse @ self.rewards

    def update(self, rnd: DecisionRound, chosen, nominal_reward: float) -> None:
        pos = rnd.position(chosen)
        self.observe(self.augment(rnd)[pos], nominal_reward)

    def snapshot(self) -> dict:
        return {"name": self.name, "n": self.n, "gamma": self.gamma,
                "lambda": self.ridge_lambda, "alpha": self.alpha}


# ---------------------------------------------------------------------------


def make_policy(config: PolicyConfig, dim: int, seed=None) -> Policy:
    """Build a fresh policy for contexts of dimension ``dim``."""
    c = config
    common = dict(alpha=c.alpha, disjoint=c.disjoint, regularizer=c.regularizer,
                  refactor_period=c.refactor_period, name=c.name)
    if c.kind == "adalinucb":
        return LinearPolicy(dim, "adaptive", thresholds=ThresholdConfig(c.lower, c.upper),
                            reward=c.reward, **common)
    if c.kind == "e_adalinucb":
        emp = EmpiricalThresholds(c.rho_lower, c.rho_upper, c.window)
        return LinearPolicy(dim, "adaptive", empirical=emp, reward=c.reward, **common)
    if c.kind == "linucb_extracted":
        return LinearPolicy(dim, "extracted", **common)
    if c.kind == "linucb_multiply":
        return LinearPolicy(dim, "multiply", **common)
    if c.kind == "linucb_combine":
        return LinearPolicy(dim, "combine", reward=c.reward, **common)
    if c.kind == "kernelucb":
        return KernelUCB(c.alpha, c.kernel_gamma, c.ridge_lambda, name=c.name)
    if c.kind == "random":
        return RandomPolicy(c.seed if seed is None else seed, name=c.name)
    raise ValueError(c.kind)
