"""Episode runner, regret bookkeeping, aggregation and offline replay."""

from __future__ import annotations

import csv
import json
import logging
import math
import warnings
import zlib
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .environments import (EnvironmentSpec, EpisodeStream, TraceVariation, draw_stream,
                           realize_reward, round_from_group)
from .policies import DecisionRound, Policy, PolicyConfig, make_policy

log = logging.getLogger(__name__)

TRACE_HEADER = ["t", "arm", "L", "l_tilde", "nominal_regret", "actual_regret",
                "cum_nominal", "cum_actual"]


# ---------------------------------------------------------------------------
# seeds


def derive_seed(master: int, *keys) -> int:
    """Deterministic 64-bit seed for ``(master, *keys)``.

    String keys are hashed with CRC32, so adding a policy never shifts the
    streams of the others.
    """
    words = [zlib.crc32(k.encode()) if isinstance(k, str) else int(k) for k in keys]
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(words))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def replication_seeds(master: int, rep: int) -> tuple[int, int]:
    """``(environment seed, exogenous-stream seed)`` of replication ``rep``."""
    return derive_seed(master, "env", rep), derive_seed(master, "stream", rep)


# ---------------------------------------------------------------------------
# traces


@dataclass
class RegretTrace:
    """Per-slot record of one episode; slot ``t`` is stored at index ``t - 1``."""

    arm: np.ndarray
    variation: np.ndarray
    l_tilde: np.ndarray
    nominal_regret: np.ndarray
    actual_regret: np.ndarray
    nominal_reward: np.ndarray
    actual_reward: np.ndarray
    policy: str = ""

    def __len__(self) -> int:
        return len(self.arm)

    @property
    def t(self) -> np.ndarray:
        return np.arange(1, len(self) + 1)

    @property
    def cum_nominal(self) -> np.ndarray:
        return np.cumsum(self.nominal_regret)

    @property
    def cum_actual(self) -> np.ndarray:
        return np.cumsum(self.actual_regret)

    @property
    def cum_actual_reward(self) -> np.ndarray:
        return np.cumsum(self.actual_reward)

    def write_csv(self, path, every: int = 100, full: bool = False) -> None:
        """Write checkpoint rows (every ``every`` slots plus the last) or all rows."""
        n = len(self)
        if full:
            rows = np.arange(n)
        else:
            rows = np.unique(np.append(np.arange(every - 1, n, every), n - 1))
        cn, ca = self.cum_nominal, self.cum_actual
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(TRACE_HEADER)
            for i in rows:
                w.writerow([i + 1, self.arm[i], repr(float(self.variation[i])),
                            repr(float(self.l_tilde[i])), repr(float(self.nominal_regret[i])),
                            repr(float(self.actual_regret[i])), repr(float(cn[i])),
                            repr(float(ca[i]))])


def read_trace_csv(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in TRACE_HEADER}


# ---------------------------------------------------------------------------
# episodes


def _as_policy(policy, dim: int, seed) -> Policy:
    if isinstance(policy, PolicyConfig):
        return make_policy(policy, dim, seed=seed)
    return policy


def run_stream(policy: Policy, env: EnvironmentSpec, stream: EpisodeStream) -> RegretTrace:
    """Play ``policy`` against a pre-drawn stream; the policy sees nominal rewards."""
    T = len(stream)
    arm = np.empty(T, dtype=int)
    cols = {k: np.empty(T) for k in ("l_tilde", "nominal_regret", "actual_regret",
                                     "nominal_reward", "actual_reward")}
    for i in range(T):
        rnd = round_from_group(env, i + 1, stream.groups[i], stream.variation[i])
        a = policy.select_arm(rnd)
        out = realize_reward(env, rnd, a, noise=stream.noise[i])
        policy.update(rnd, a, out.nominal_reward)
        arm[i] = a
        cols["l_tilde"][i] = policy.last_l_tilde
        cols["nominal_regret"][i] = out.nominal_regret
        cols["actual_regret"][i] = out.actual_regret
        cols["nominal_reward"][i] = out.nominal_reward
        cols["actual_reward"][i] = out.actual_reward
    return RegretTrace(arm=arm, variation=np.asarray(stream.variation, dtype=float),
                       policy=getattr(policy, "name", ""), **cols)


def run_episode(policy, env: EnvironmentSpec, horizon: int, seed: int = 0,
                policy_seed: Optional[int] = None) -> RegretTrace:
    """Run one episode of ``horizon`` slots.

    ``seed`` drives the exogenous stream (groups, variation factors, noise);
    ``policy_seed`` drives policy-internal randomness and defaults to a value
    derived from ``seed``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    if policy_seed is None:
        policy_seed = derive_seed(seed, "policy")
    stream = draw_stream(env, horizon, np.random.default_rng(seed))
    return run_stream(_as_policy(policy, env.dim, policy_seed), env, stream)


def decompose_regret(trace: RegretTrace, lower_threshold: float) -> tuple[float, float]:
    """Nominal regret split into slots with ``L_t <= lower_threshold`` and the rest."""
    low_mask = trace.variation <= lower_threshold
    low = math.fsum(trace.nominal_regret[low_mask])
    high = math.fsum(trace.nominal_regret[~low_mask])
    return low, high


# ---------------------------------------------------------------------------
# aggregation


@dataclass
class Aggregate:
    """Mean and standard error across replications at sorted checkpoints."""

    policy: str
    checkpoints: np.ndarray
    mean_actual: np.ndarray
    se_actual: np.ndarray
    mean_nominal: np.ndarray
    se_nominal: np.ndarray
    mean_reward: np.ndarray
    se_reward: np.ndarray
    replications: int

    def rows(self) -> Iterable[dict]:
        for i, c in enumerate(self.checkpoints):
            yield {"policy": self.policy, "t": int(c), "replications": self.replications,
                   "mean_cum_actual_regret": self.mean_actual[i],
                   "se_cum_actual_regret": self.se_actual[i],
                   "mean_cum_nominal_regret": self.mean_nominal[i],
                   "se_cum_nominal_regret": self.se_nominal[i],
                   "mean_cum_actual_reward": self.mean_reward[i],
                   "se_cum_actual_reward": self.se_reward[i]}


def _mean_se(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = values.mean(axis=0)
    if values.shape[0] < 2:
        return mean, np.full(values.shape[1:], np.nan)
    return mean, values.std(axis=0, ddof=1) / math.sqrt(values.shape[0])


def aggregate_runs(traces: Sequence[RegretTrace], checkpoints, policy: str = "") -> Aggregate:
    if not traces:
        raise ValueError("nothing to aggregate")
    cps = np.sort(np.asarray(checkpoints, dtype=int))
    horizons = {len(tr) for tr in traces}
    if len(horizons) != 1:
        raise ValueError(f"traces have mismatched horizons {sorted(horizons)}")
    if cps.min() < 1 or cps.max() > horizons.pop():
        raise ValueError("checkpoints must lie within [1, horizon]")
    idx = cps - 1
    act = np.array([tr.cum_actual[idx] for tr in traces])
    nom = np.array([tr.cum_nominal[idx] for tr in traces])
    rew = np.array([tr.cum_actual_reward[idx] for tr in traces])
    ma, sa = _mean_se(act)
    mn, sn = _mean_se(nom)
    mr, sr = _mean_se(rew)
    return Aggregate(policy or traces[0].policy, cps, ma, sa, mn, sn, mr, sr, len(traces))


def write_aggregate_csv(aggregates: Sequence[Aggregate], path) -> None:
    rows = [r for agg in aggregates for r in agg.rows()]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v)
                        for k, v in r.items()})


# ---------------------------------------------------------------------------
# offline replay


@dataclass
class ReplayRecord:
    ts: float
    displayed: object
    pool_ids: np.ndarray
    pool_contexts: np.ndarray
    reward: float
    variation: Optional[float] = None

    def to_json(self) -> str:
        pool = [{"id": _plain(a), "x": x.tolist()}
                for a, x in zip(self.pool_ids, self.pool_contexts)]
        rec = {"ts": self.ts, "displayed": _plain(self.displayed), "pool": pool,
               "reward": self.reward}
        if self.variation is not None:
            rec["L"] = self.variation
        return json.dumps(rec)


def _plain(v):
    return v.item() if isinstance(v, np.generic) else v


def parse_record(obj: dict) -> ReplayRecord:
    pool = obj["pool"]
    ids = np.array([p["id"] for p in pool])
    xs = np.array([p["x"] for p in pool], dtype=float)
    if xs.ndim != 2 or len(ids) == 0:
        raise ValueError("pool must be a nonempty list of equal-length contexts")
    L = obj.get("L")
    return ReplayRecord(obj.get("ts", 0), obj["displayed"], ids, xs, float(obj["reward"]),
                        None if L is None else float(L))


@dataclass
class ReplayLog:
    """Parsed log; ``entries`` holds a record or ``None`` for an unparseable line."""

    entries: list

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def malformed(self) -> int:
        return sum(e is None for e in self.entries)

    @classmethod
    def from_records(cls, records: Iterable[ReplayRecord]) -> "ReplayLog":
        return cls(list(records))

    @classmethod
    def read(cls, path) -> "ReplayLog":
        entries = []
        with open(path) as fh:
            for line in fh:
                if not line.strip():
                    continue
                try:
                    entries.append(parse_record(json.loads(line)))
                except (ValueError, KeyError, TypeError):
                    entries.append(None)
        return cls(entries)

    def write(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.entries:
                fh.write(rec.to_json() + "\n")

    def mean_reward(self) -> float:
        return float(np.mean([r.reward for r in self.entries if r is not None]))


@dataclass
class ReplayResult:
    policy: str
    matched: int
    discarded: int
    invalid: int
    cum_nominal_reward: np.ndarray
    cum_actual_reward: np.ndarray

    @property
    def total(self) -> int:
        return self.matched + self.discarded + self.invalid

    @property
    def nominal_per_match(self) -> float:
        return self.cum_nominal_reward[-1] / self.matched if self.matched else float("nan")

    @property
    def actual_per_match(self) -> float:
        return self.cum_actual_reward[-1] / self.matched if self.matched else float("nan")


def replay_offline(policy, log: ReplayLog, trace: Optional[TraceVariation] = None,
                   seed=None) -> ReplayResult:
    """Rejection-sampling replay of a uniformly logged bandit dataset.

    A record counts only if the candidate policy picks the logged arm; then
    its reward is revealed and the policy is updated.  Otherwise nothing
    happens.  Variation factors come from ``trace`` (cycled positionally)
    when given, else from each record's ``L`` field (default 1).
    """
    if len(log) == 0:
        raise ValueError("replay log is empty")
    if trace is not None and len(trace.values) < len(log):
        warnings.warn(f"variation trace ({len(trace.values)} values) is shorter than the log "
                      f"({len(log)} records); cycling", stacklevel=2)
    pol = None
    matched = discarded = invalid = 0
    nom, act = [], []
    for i, rec in enumerate(log.entries):
        if rec is None or not np.any(rec.pool_ids == rec.displayed):
            invalid += 1
            continue
        if trace is not None:
            L = trace.at(i)
        else:
            L = 1.0 if rec.variation is None else rec.variation
        try:
            rnd = DecisionRound(i + 1, rec.pool_ids, rec.pool_contexts, L)
        except ValueError:
            invalid += 1
            continue
        if pol is None:
            pol = _as_policy(policy, rnd.dim, seed)
        if pol.select_arm(rnd) != rec.displayed:
            discarded += 1
            continue
        pol.update(rnd, rec.displayed, rec.reward)
        matched += 1
        nom.append(rec.reward)
        act.append(L * rec.reward)
    name = getattr(pol, "name", "") if pol is not None else ""
    return ReplayResult(name, matched, discarded, invalid, np.cumsum(nom), np.cumsum(act))


@dataclass(frozen=True)
class PlantedLogModel:
    """Ground truth behind a synthetic replay log.

    Users carry a unit feature vector ``u`` in ``dim - 1`` dimensions; the
    context of every candidate is ``[u, 1] / sqrt(2)`` and article ``a`` is
    clicked with probability ``<x, theta_a> = base + spread * <u, v_a>``.
    """

    article_dirs: np.ndarray
    base: float
    spread: float

    @property
    def thetas(self) -> np.ndarray:
        s2 = math.sqrt(2.0)
        k = len(self.article_dirs)
        return np.hstack([s2 * self.spread * self.article_dirs, np.full((k, 1), s2 * self.base)])

    def click_prob(self, x: np.ndarray, article) -> np.ndarray:
        return x @ self.thetas[article]


def generate_replay_log(n: int, rng: np.random.Generator, num_articles: int = 20,
                        pool_size: int = 10, dim: int = 6, base: float = 0.15,
                        spread: float = 0.12, variation: Optional[TraceVariation] = None,
                        reward_noise="bernoulli") -> tuple[ReplayLog, PlantedLogModel]:
    """Uniformly logged synthetic dataset with planted per-article structure.

    ``reward_noise`` is ``"bernoulli"`` (clicks drawn with the planted
    probability) or a standard deviation of additive Gaussian noise on the
    probability itself (``0`` logs the expected reward exactly).
    """
    if reward_noise != "bernoulli" and not float(reward_noise) >= 0:
        raise ValueError("reward_noise must be 'bernoulli' or a nonnegative float")
    if pool_size > num_articles:
        raise ValueError("pool cannot exceed the article catalog")
    dirs = rng.standard_normal((num_articles, dim - 1))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    model = PlantedLogModel(dirs, base, spread)
    thetas = model.thetas
    records = []
    for i in range(n):
        u = rng.standard_normal(dim - 1)
        u /= np.linalg.norm(u)
        x = np.append(u, 1.0) / math.sqrt(2.0)
        pool = np.sort(rng.choice(num_articles, size=pool_size, replace=False))
        shown = pool[rng.integers(pool_size)]
        p = float(x @ thetas[shown])
        if reward_noise == "bernoulli":
            reward = float(rng.random() < p)
        else:
            reward = p + float(reward_noise) * float(rng.standard_normal())
        L = None if variation is None else variation.at(i)
        records.append(ReplayRecord(i, int(shown), pool, np.tile(x, (pool_size, 1)), reward, L))
    return ReplayLog(records), model
