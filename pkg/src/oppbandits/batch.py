"""Lockstep simulation of the LinUCB family over many replications at once.

Replications are independent, so one policy can be advanced through ``R``
episodes simultaneously with every per-slot operation vectorized over the
replication axis.  The arithmetic mirrors :class:`LinearPolicy` step for
step (same Sherman-Morrison update, same score formula, same tie rule), so
the chosen arms agree with the one-episode reference runner; the test suite
checks this equivalence on short horizons.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .environments import EnvironmentSpec, EpisodeStream
from .evaluation import RegretTrace
from .linalg import refactor, PdState
from .policies import TIE_TOL, EmpiricalThresholds, PolicyConfig

BATCH_KINDS = ("adalinucb", "e_adalinucb", "linucb_extracted", "linucb_multiply",
               "linucb_combine")


def supports(config: PolicyConfig) -> bool:
    return config.kind in BATCH_KINDS


def _normalize(L: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    single = lo == hi
    width = np.where(single, 1.0, hi - lo)
    ramp = (np.clip(L, lo, hi) - lo) / width
    return np.where(single, (L > lo).astype(float), ramp)


def run_batch(config: PolicyConfig, envs: Sequence[EnvironmentSpec],
              streams: Sequence[EpisodeStream]) -> list[RegretTrace]:
    """Run ``config`` on every ``(envs[r], streams[r])`` pair in lockstep."""
    if not supports(config):
        raise ValueError(f"policy kind {config.kind!r} has no batch implementation")
    R = len(envs)
    if R == 0 or len(streams) != R:
        raise ValueError("need one stream per environment")
    shapes = {(e.num_groups, e.num_arms, e.dim) for e in envs}
    if len(shapes) != 1:
        raise ValueError("all environments must share (groups, arms, dim)")
    T = len(streams[0])
    if any(len(s) != T for s in streams):
        raise ValueError("all streams must share the horizon")

    kind = config.kind
    mode = {"adalinucb": "adaptive", "e_adalinucb": "adaptive",
            "linucb_extracted": "extracted", "linucb_multiply": "multiply",
            "linucb_combine": "combine"}[kind]
    actual_reward = mode == "multiply" or config.reward == "actual"
    _, K, d = shapes.pop()
    de = d + 1 if mode == "combine" else d
    M = K if config.disjoint else 1
    rr = np.arange(R)

    catalog = np.stack([e.catalog for e in envs])             # (R, G, K, d)
    means = np.stack([e.expected_rewards for e in envs])      # (R, G, K)
    groups = np.stack([s.groups for s in streams]).astype(int)
    Ls = np.stack([s.variation for s in streams]).astype(float)
    noise = np.stack([s.noise for s in streams]).astype(float)

    eye = np.eye(de)
    A = np.broadcast_to(config.regularizer * eye, (R, M, de, de)).copy()
    Ainv = np.broadcast_to(eye / config.regularizer, (R, M, de, de)).copy()
    b = np.zeros((R, M, de))
    theta = np.zeros((R, M, de))
    counts = np.zeros((R, M), dtype=int)
    period = config.refactor_period

    if kind == "adalinucb":
        lo_fixed = np.full(R, float(config.lower))
        hi_fixed = np.full(R, float(config.upper))
    trackers = ([EmpiricalThresholds(config.rho_lower, config.rho_upper, config.window)
                 for _ in range(R)] if kind == "e_adalinucb" else None)

    chosen = np.empty((R, T), dtype=int)
    l_tilde = np.full((R, T), np.nan)
    alpha = config.alpha

    for t in range(T):
        g = groups[:, t]
        L = Ls[:, t]
        X = catalog[rr, g]                                     # (R, K, d)
        if mode == "multiply":
            X = L[:, None, None] * X
        elif mode == "combine":
            X = np.concatenate([np.broadcast_to(L[:, None, None], (R, K, 1)), X], axis=2)

        if mode == "adaptive":
            if trackers is None:
                lo, hi = lo_fixed, hi_fixed
            else:
                thr = [tr.thresholds(pending=float(v)) for tr, v in zip(trackers, L)]
                lo = np.array([c.lower for c in thr])
                hi = np.array([c.upper for c in thr])
            lt = _normalize(L, lo, hi)
            l_tilde[:, t] = lt
            width = alpha * np.sqrt(1.0 - lt)
        else:
            width = np.full(R, alpha)

        if config.disjoint:
            est = np.einsum("rkd,rkd->rk", theta, X)
            quad = np.einsum("rkd,rkde,rke->rk", X, Ainv, X)
        else:
            est = np.einsum("rkd,rd->rk", X, theta[:, 0])
            quad = np.einsum("rkd,rde,rke->rk", X, Ainv[:, 0], X)
        scores = est + width[:, None] * np.sqrt(np.maximum(quad, 0.0))
        top = scores.max(axis=1)
        tied = scores >= (top - TIE_TOL * np.maximum(1.0, np.abs(top)))[:, None]
        a = np.argmax(tied, axis=1)                            # first tied = smallest id
        chosen[:, t] = a

        # observe and update
        m = a if config.disjoint else np.zeros(R, dtype=int)
        x = X[rr, a]                                           # (R, de)
        reward = means[rr, g, a] + noise[:, t]
        if actual_reward:
            reward = L * reward
        Ai = Ainv[rr, m]
        u = np.einsum("rde,re->rd", Ai, x)
        denom = 1.0 + np.einsum("rd,rd->r", x, u)
        Ai -= u[:, :, None] * u[:, None, :] / denom[:, None, None]
        A[rr, m] += x[:, :, None] * x[:, None, :]
        b[rr, m] += reward[:, None] * x
        counts[rr, m] += 1
        due = np.flatnonzero(counts[rr, m] % period == 0)
        for r in due:
            st = refactor(PdState(de, A[r, m[r]], Ai[r]))
            Ai[r] = st.a_inverse
        Ainv[rr, m] = Ai
        theta[rr, m] = np.einsum("rde,re->rd", Ai, b[rr, m])
        if trackers is not None:
            for tr, v in zip(trackers, L):
                tr.observe(float(v))

    traces = []
    for r in range(R):
        mu = means[r, groups[r]]                               # (T, K)
        picked = mu[np.arange(T), chosen[r]]
        regret = np.maximum(mu.max(axis=1) - picked, 0.0)
        nominal = picked + noise[r]
        traces.append(RegretTrace(arm=chosen[r].copy(), variation=Ls[r].copy(),
                                  l_tilde=l_tilde[r].copy(), nominal_regret=regret,
                                  actual_regret=Ls[r] * regret, nominal_reward=nominal,
                                  actual_reward=Ls[r] * nominal, policy=config.name))
    return traces
