"""Multi-replication experiments driven by a declarative config.

Seeds are derived from one master seed by a counter-based hash (see
:func:`oppbandits.evaluation.derive_seed`):

* environment of replication ``r``: ``(master, "env", r)``
* exogenous stream of replication ``r``: ``(master, "stream", r)``
* policy-internal randomness: ``(master, "policy", name, r)``

so every policy faces the same worlds and draws, and adding or removing a
policy never perturbs the others.
"""

from __future__ import annotations

import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import batch
from .environments import EnvConfig, EnvironmentSpec, draw_stream, generate_environment
from .evaluation import RegretTrace, derive_seed, run_stream
from .policies import PolicyConfig, make_policy

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


@dataclass
class ExperimentConfig:
    environment: EnvConfig
    policies: list
    horizon: int
    replications: int = 20
    checkpoints: Optional[list] = None
    seed: int = 0
    out_dir: Optional[str] = None
    environment_path: Optional[str] = None
    checkpoint_every: int = 100

    def __post_init__(self):
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if not self.policies:
            raise ValueError("at least one policy is required")
        names = [p.name for p in self.policies]
        dupes = sorted({n for n in names if names.count(n) > 1})
        if dupes:
            raise ValueError(f"policy names must be unique; repeated: {dupes}")
        if self.checkpoints is None:
            step = max(1, self.horizon // 50)
            self.checkpoints = sorted(set(range(step, self.horizon + 1, step)) | {self.horizon})
        if min(self.checkpoints) < 1:
            raise ValueError("checkpoints must be >= 1")
        if max(self.checkpoints) > self.horizon:
            raise ValueError(f"horizon ({self.horizon}) must be >= max checkpoint "
                             f"({max(self.checkpoints)})")

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        d = dict(d)
        env_d = dict(d.pop("environment", {}))
        env_path = env_d.pop("path", None)
        if env_path is not None and base_dir is not None:
            env_path = str((base_dir / env_path).resolve())
        variation = env_d.get("variation")
        if isinstance(variation, dict) and "path" in variation and base_dir is not None:
            env_d["variation"] = dict(variation, path=str((base_dir / variation["path"]).resolve()))
        policies = [PolicyConfig.from_dict(p) for p in d.pop("policies", [])]
        return cls(environment=EnvConfig.from_dict(env_d), policies=policies,
                   environment_path=env_path, **d)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        path = Path(path)
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
        return cls.from_dict(data, base_dir=path.parent)


def replication_world(cfg: ExperimentConfig, rep: int):
    """Environment and exogenous stream of replication ``rep``."""
    if cfg.environment_path is not None:
        env = EnvironmentSpec.load(cfg.environment_path)
    else:
        env = generate_environment(cfg.environment, derive_seed(cfg.seed, "env", rep))
    stream = draw_stream(env, cfg.horizon, np.random.default_rng(derive_seed(cfg.seed, "stream", rep)))
    return env, stream


def _run_task(cfg: ExperimentConfig, policy: PolicyConfig, reps: list) -> list[RegretTrace]:
    worlds = [replication_world(cfg, r) for r in reps]
    if batch.supports(policy):
        return batch.run_batch(policy, [w[0] for w in worlds], [w[1] for w in worlds])
    out = []
    for r, (env, stream) in zip(reps, worlds):
        seed = derive_seed(cfg.seed, "policy", policy.name, r)
        out.append(run_stream(make_policy(policy, env.dim, seed=seed), env, stream))
    return out


class ReplicationError(RuntimeError):
    def __init__(self, policy: str, reps: list, cause: BaseException):
        super().__init__(f"policy {policy!r} failed on replication(s) {reps}: {cause!r}")
        self.policy = policy
        self.reps = reps


def run_experiment(cfg: ExperimentConfig, jobs: int = 1) -> dict[str, list[RegretTrace]]:
    """Run every policy on every replication; returns traces keyed by policy name."""
    reps = list(range(cfg.replications))
    chunks = [reps[i::jobs] for i in range(min(jobs, len(reps)))] if jobs > 1 else [reps]
    tasks = [(p, chunk) for p in cfg.policies for chunk in chunks]
    results: dict[str, dict[int, RegretTrace]] = {p.name: {} for p in cfg.policies}

    def collect(policy, chunk, traces):
        for r, tr in zip(chunk, traces):
            results[policy.name][r] = tr

    if jobs <= 1:
        for policy, chunk in tasks:
            log.info("running %s on %d replication(s)", policy.name, len(chunk))
            try:
                collect(policy, chunk, _run_task(cfg, policy, chunk))
            except Exception as exc:
                raise ReplicationError(policy.name, chunk, exc) from exc
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [(p, c, pool.submit(_run_task, cfg, p, c)) for p, c in tasks]
            for policy, chunk, fut in futures:
                try:
                    collect(policy, chunk, fut.result())
                except Exception as exc:
                    raise ReplicationError(policy.name, chunk, exc) from exc
    return {name: [by_rep[r] for r in reps] for name, by_rep in results.items()}


def final_regret(traces: list[RegretTrace]) -> float:
    """Mean cumulative actual regret at the horizon."""
    return float(np.mean([tr.cum_actual[-1] for tr in traces]))
