"""Synthetic opportunistic bandit worlds.

An environment is a catalog of context groups (every group carries one unit
context per arm), per-arm unit coefficient vectors, a noise model and a
variation-factor process.  At each slot one group is shown, ``L_t`` is
revealed, the learner picks an arm and observes the nominal reward
``<x, theta_a> + eta``; the actual reward is ``L_t`` times that.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .policies import DecisionRound

# ---------------------------------------------------------------------------
# variation-factor processes


@dataclass(frozen=True)
class BinaryVariation:
    """``L_t`` is ``eps0`` with probability ``rho`` and ``1 - eps1`` otherwise."""

    eps0: float = 0.0
    eps1: float = 0.0
    rho: float = 0.5
    kind = "binary"

    def __post_init__(self):
        if not (0.0 <= self.eps0 < 1.0 - self.eps1 <= 1.0):
            raise ValueError(f"need 0 <= eps0 < 1 - eps1 <= 1, got eps0={self.eps0}, eps1={self.eps1}")
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError(f"rho must be a probability, got {self.rho}")

    @property
    def low(self) -> float:
        return self.eps0

    @property
    def high(self) -> float:
        return 1.0 - self.eps1

    @property
    def mean(self) -> float:
        return self.rho * self.low + (1.0 - self.rho) * self.high

    def sample(self, n: int, rng: np.random.Generator, start: int = 0) -> np.ndarray:
        is_low = rng.random(n) < self.rho
        return np.where(is_low, self.low, self.high)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "eps0": self.eps0, "eps1": self.eps1, "rho": self.rho}


@dataclass(frozen=True)
class BetaVariation:
    a: float = 2.0
    b: float = 2.0
    kind = "beta"

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError("beta parameters must be positive")

    @property
    def mean(self) -> float:
        return self.a / (self.a + self.b)

    def sample(self, n: int, rng: np.random.Generator, start: int = 0) -> np.ndarray:
        out = rng.beta(self.a, self.b, size=n)
        # keep samples strictly inside (0, 1)
        tiny = np.finfo(float).tiny
        return np.clip(out, tiny, 1.0 - np.finfo(float).epsneg)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "b": self.b}


@dataclass(frozen=True)
class TraceVariation:
    """Replays a recorded series in order, cycling when it runs out.

    ``values`` are stored already normalized (divided by their maximum).
    """

    values: tuple
    kind = "trace"

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or len(vals) == 0:
            raise ValueError("trace must be a nonempty 1-d sequence")
        if np.any(vals < 0) or not np.all(np.isfinite(vals)):
            raise ValueError("trace values must be finite and nonnegative")

    @classmethod
    def from_raw(cls, raw: Sequence[float], normalize: bool = True) -> "TraceVariation":
        vals = np.asarray(raw, dtype=float)
        if normalize:
            top = vals.max() if len(vals) else 0.0
            if top <= 0:
                raise ValueError("cannot normalize a trace whose maximum is not positive")
            vals = vals / top
        return cls(tuple(float(v) for v in vals))

    @classmethod
    def from_file(cls, path, normalize: bool = True) -> "TraceVariation":
        return cls.from_raw(read_trace_file(path), normalize=normalize)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values))

    def at(self, t: int) -> float:
        return self.values[t % len(self.values)]

    def sample(self, n: int, rng: Optional[np.random.Generator] = None, start: int = 0) -> np.ndarray:
        vals = np.asarray(self.values)
        return vals[(start + np.arange(n)) % len(vals)]

    def to_dict(self) -> dict:
        return {"kind": self.kind, "values": list(self.values)}


VariationProcess = BinaryVariation | BetaVariation | TraceVariation


def variation_from_dict(d: dict) -> VariationProcess:
    d = dict(d)
    kind = d.pop("kind")
    if kind == "binary":
        return BinaryVariation(**d)
    if kind == "beta":
        return BetaVariation(**d)
    if kind == "trace":
        if "path" in d:
            return TraceVariation.from_file(d["path"], normalize=d.get("normalize", True))
        return TraceVariation.from_raw(d["values"], normalize=d.get("normalize", False))
    raise ValueError(f"unknown variation kind {kind!r}")


def read_trace_file(path) -> list[float]:
    """Read one nonnegative real per line; blank lines and ``#`` comments are skipped."""
    values = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        v = float(line)
        if v < 0 or not math.isfinite(v):
            raise ValueError(f"{path}:{lineno}: trace values must be finite and nonnegative")
        values.append(v)
    if not values:
        raise ValueError(f"{path}: empty trace")
    return values


# ---------------------------------------------------------------------------
# environment


@dataclass
class EnvConfig:
    num_arms: int = 20
    num_groups: int = 5
    dim: int = 6
    noise_sigma: float = 0.1
    noise_kind: str = "gaussian"
    variation: VariationProcess = field(default_factory=BinaryVariation)
    joint: bool = False

    @classmethod
    def from_dict(cls, d: dict) -> "EnvConfig":
        d = dict(d)
        if "variation" in d and isinstance(d["variation"], dict):
            d["variation"] = variation_from_dict(d["variation"])
        return cls(**d)


@dataclass(frozen=True)
class EnvironmentSpec:
    """Ground truth of a synthetic world (immutable once generated).

    ``theta_star`` has shape (arms, dim); for a joint world every row is the
    same vector.  ``catalog`` has shape (groups, arms, dim).
    """

    theta_star: np.ndarray
    catalog: np.ndarray
    noise_sigma: float
    variation: VariationProcess
    noise_kind: str = "gaussian"
    joint: bool = False
    seed: Optional[int] = None

    def __post_init__(self):
        theta = np.asarray(self.theta_star, dtype=float)
        cat = np.asarray(self.catalog, dtype=float)
        if cat.ndim != 3 or theta.ndim != 2 or theta.shape != cat.shape[1:]:
            raise ValueError("catalog must be (groups, arms, dim) and theta_star (arms, dim)")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be nonnegative")
        if self.noise_kind not in ("gaussian", "uniform"):
            raise ValueError(f"unknown noise kind {self.noise_kind!r}")
        theta.setflags(write=False)
        cat.setflags(write=False)
        object.__setattr__(self, "theta_star", theta)
        object.__setattr__(self, "catalog", cat)
        # expected nominal reward of every (group, arm)
        means = np.einsum("gkd,kd->gk", cat, theta)
        means.setflags(write=False)
        object.__setattr__(self, "expected_rewards", means)

    @property
    def num_groups(self) -> int:
        return self.catalog.shape[0]

    @property
    def num_arms(self) -> int:
        return self.catalog.shape[1]

    @property
    def dim(self) -> int:
        return self.catalog.shape[2]

    @property
    def arm_ids(self) -> np.ndarray:
        return np.arange(self.num_arms)

    def to_dict(self) -> dict:
        return {
            "theta_star": self.theta_star.tolist(),
            "catalog": self.catalog.tolist(),
            "noise_sigma": self.noise_sigma,
            "noise_kind": self.noise_kind,
            "variation": self.variation.to_dict(),
            "joint": self.joint,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EnvironmentSpec":
        return cls(
            theta_star=np.asarray(d["theta_star"], dtype=float),
            catalog=np.asarray(d["catalog"], dtype=float),
            noise_sigma=float(d["noise_sigma"]),
            variation=variation_from_dict(d["variation"]),
            noise_kind=d.get("noise_kind", "gaussian"),
            joint=bool(d.get("joint", False)),
            seed=d.get("seed"),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "EnvironmentSpec":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _unit_rows(raw: np.ndarray) -> np.ndarray:
    return raw / np.linalg.norm(raw, axis=-1, keepdims=True)


def generate_environment(config: EnvConfig, seed: int) -> EnvironmentSpec:
    """Draw coefficients and contexts with i.i.d. Gaussian entries, then L2-normalize."""
    if min(config.num_arms, config.num_groups, config.dim) < 1:
        raise ValueError("arms, groups and dim must be positive")
    rng = np.random.default_rng(seed)
    k, g, d = config.num_arms, config.num_groups, config.dim
    if config.joint:
        theta = np.repeat(_unit_rows(rng.standard_normal((1, d))), k, axis=0)
    else:
        theta = _unit_rows(rng.standard_normal((k, d)))
    catalog = _unit_rows(rng.standard_normal((g, k, d)))
    return EnvironmentSpec(theta, catalog, config.noise_sigma, config.variation,
                           config.noise_kind, config.joint, seed)


# ---------------------------------------------------------------------------
# rounds and outcomes


@dataclass
class EpisodeStream:
    """Exogenous randomness of one episode, drawn up front.

    Policies never touch these draws, so every policy run on the same stream
    faces exactly the same groups, variation factors and noise.
    """

    groups: np.ndarray
    variation: np.ndarray
    noise: np.ndarray

    def __len__(self) -> int:
        return len(self.groups)


def draw_noise(env: EnvironmentSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if env.noise_sigma == 0:
        return np.zeros(n)
    if env.noise_kind == "gaussian":
        return env.noise_sigma * rng.standard_normal(n)
    # zero-mean, support of length 2 * sigma
    return rng.uniform(-env.noise_sigma, env.noise_sigma, size=n)


def draw_stream(env: EnvironmentSpec, horizon: int, rng: np.random.Generator,
                start: int = 0) -> EpisodeStream:
    groups = rng.integers(0, env.num_groups, size=horizon)
    variation = env.variation.sample(horizon, rng, start=start)
    noise = draw_noise(env, horizon, rng)
    return EpisodeStream(groups, np.asarray(variation, dtype=float), noise)


def round_from_group(env: EnvironmentSpec, t: int, group: int, variation: float) -> DecisionRound:
    return DecisionRound(t, env.arm_ids, env.catalog[group], float(variation), group=int(group))


def sample_round(env: EnvironmentSpec, t: int, rng: np.random.Generator) -> DecisionRound:
    """Draw one slot: a uniformly chosen context group and a variation factor."""
    group = int(rng.integers(0, env.num_groups))
    if isinstance(env.variation, TraceVariation):
        var = env.variation.at(t)
    else:
        var = float(env.variation.sample(1, rng)[0])
    return round_from_group(env, t, group, var)


@dataclass(frozen=True)
class RoundOutcome:
    nominal_reward: float
    actual_reward: float
    expected_best: float
    expected_chosen: float
    nominal_regret: float
    actual_regret: float


def realize_reward(env: EnvironmentSpec, rnd: DecisionRound, chosen_arm, rng=None,
                   noise: Optional[float] = None) -> RoundOutcome:
    """Reveal the reward of ``chosen_arm``.  Regret is measured against the
    noise-free best arm of the presented group.  Pass ``noise`` to use a
    pre-drawn value instead of drawing from ``rng``."""
    pos = rnd.position(chosen_arm)
    arm = int(rnd.arm_ids[pos])
    x = rnd.contexts[pos]
    ids = np.asarray(rnd.arm_ids, dtype=int)
    if rnd.group is not None:
        means = env.expected_rewards[rnd.group][ids]
    else:
        means = np.einsum("kd,kd->k", rnd.contexts, env.theta_star[ids])
    best = float(means.max())
    chosen = float(means[pos]) if rnd.group is not None else float(x @ env.theta_star[arm])
    if noise is None:
        if rng is None:
            raise ValueError("either rng or noise must be given")
        noise = float(draw_noise(env, 1, rng)[0])
    nominal = chosen + noise
    regret = max(best - chosen, 0.0)
    L = rnd.variation_factor
    return RoundOutcome(nominal, L * nominal, best, chosen, regret, L * regret)


# ---------------------------------------------------------------------------
# instance constants


@dataclass(frozen=True)
class InstanceSummary:
    """Gap structure of a finite environment.

    ``delta_min`` is ``None`` when every group has all arms tied.
    """

    delta_min: Optional[float]
    delta_max: float
    n_contexts: int
    c_context: float
    c_theta: float
    single_optimal_context: bool
    dim: int

    def bound_constants(self, **kwargs):
        from .bounds import BoundConstants

        if self.delta_min is None:
            raise ValueError("delta_min is undefined: every group has all arms tied")
        base = dict(c_theta=self.c_theta, c_context=self.c_context, delta_min=self.delta_min,
                    delta_max=self.delta_max, n_contexts=self.n_contexts, dim=self.dim)
        base.update(kwargs)
        return BoundConstants(**base)


def problem_constants(env: EnvironmentSpec, tol: float = 1e-12) -> InstanceSummary:
    """Exhaustive scan of the catalog for the gap constants.

    In a disjoint world a "context value" is the pair (arm, x), which is what
    the equivalent joint embedding sees.
    """
    means = env.expected_rewards
    gaps_min = []
    gaps_max = []
    best_keys = set()
    for g in range(env.num_groups):
        row = means[g]
        best = row.max()
        gaps_max.append(best - row.min())
        others = row[row < best - tol]
        if len(others):
            gaps_min.append(best - others.max())
        winners = np.flatnonzero(row >= best - tol)
        keys = {_context_key(env, g, a) for a in winners}
        best_keys |= keys
    if env.joint:
        flat = env.catalog.reshape(-1, env.dim)
        n_ctx = len(np.unique(np.round(flat, 12), axis=0))
    else:
        n_ctx = len({_context_key(env, g, a) for g in range(env.num_groups)
                     for a in range(env.num_arms)})
    return InstanceSummary(
        delta_min=float(min(gaps_min)) if gaps_min else None,
        delta_max=float(max(gaps_max)),
        n_contexts=n_ctx,
        c_context=float(np.linalg.norm(env.catalog, axis=-1).max()),
        c_theta=float(np.linalg.norm(env.theta_star, axis=-1).max()),
        single_optimal_context=len(best_keys) == 1,
        dim=env.dim,
    )


def _context_key(env: EnvironmentSpec, g: int, a: int):
    vec = tuple(np.round(env.catalog[g, a], 12))
    return vec if env.joint else (a, vec)
