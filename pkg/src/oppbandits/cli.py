"""Command-line driver: ``simulate``, ``replay`` and ``bounds``.

Exit status is 0 on success, 1 on a runtime failure and 2 on a usage or
validation error.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import bounds as bd
from .environments import variation_from_dict
from .evaluation import (ReplayLog, aggregate_runs, derive_seed, generate_replay_log,
                         replay_offline, write_aggregate_csv)
from .experiment import ExperimentConfig, ReplicationError, run_experiment, tomllib
from .policies import PolicyConfig

log = logging.getLogger("oppbandits")

DEFAULT_GRID = (1e3, 1e4, 1e5, 1e6)


class UsageError(Exception):
    """Bad input: reported with exit status 2."""


def _fmt(v) -> str:
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


# ---------------------------------------------------------------------------
# simulate


def cmd_simulate(args) -> int:
    try:
        cfg = ExperimentConfig.load(args.config)
    except (OSError, ValueError, TypeError, KeyError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"invalid config {args.config}: {exc}") from exc
    if args.seed is not None:
        cfg.seed = args.seed
    out = Path(args.out or cfg.out_dir or "out")
    (out / "traces").mkdir(parents=True, exist_ok=True)

    try:
        results = run_experiment(cfg, jobs=args.jobs)
    except ReplicationError as exc:
        log.error("%s", exc)
        return 1

    aggregates = []
    for name, traces in results.items():
        for rep, tr in enumerate(traces):
            tr.write_csv(out / "traces" / f"{name}_rep{rep:03d}.csv",
                         every=cfg.checkpoint_every, full=args.verbose)
        aggregates.append(aggregate_runs(traces, cfg.checkpoints, policy=name))
    write_aggregate_csv(aggregates, out / "aggregate.csv")

    print(f"T = {cfg.horizon}, replications = {cfg.replications}, seed = {cfg.seed}")
    print(f"{'policy':<24} {'cum actual regret':>18} {'SE':>10}")
    for agg in aggregates:
        print(f"{agg.policy:<24} {agg.mean_actual[-1]:>18.3f} {agg.se_actual[-1]:>10.3f}")
    return 0


# ---------------------------------------------------------------------------
# replay


def _load_replay_config(path: Path):
    with open(path, "rb") as fh:
        data = tomllib.load(fh)
    base = path.parent
    policies = [PolicyConfig.from_dict(p) for p in data.get("policies", [])]
    if not policies:
        raise ValueError("at least one policy is required")
    trace = None
    if "trace" in data:
        t = dict(data["trace"])
        if "path" in t:
            t["path"] = str((base / t["path"]).resolve())
        trace = variation_from_dict(dict(t, kind="trace"))
    log_cfg = dict(data.get("log", {}))
    if "path" in log_cfg:
        log_cfg["path"] = str((base / log_cfg["path"]).resolve())
    elif not log_cfg.get("synthetic", False):
        raise ValueError("[log] needs either 'path' or 'synthetic = true'")
    return data, policies, trace, log_cfg


def _replay_logs(log_cfg: dict, seed: int, trace):
    if "path" in log_cfg:
        yield 0, ReplayLog.read(log_cfg["path"])
        return
    reps = int(log_cfg.get("replications", 1))
    kw = {k: log_cfg[k] for k in ("num_articles", "pool_size", "dim", "base", "spread",
                                  "reward_noise") if k in log_cfg}
    for rep in range(reps):
        rng = np.random.default_rng(derive_seed(seed, "log", rep))
        logd, _ = generate_replay_log(int(log_cfg.get("records", 10000)), rng, **kw)
        yield rep, logd


def cmd_replay(args) -> int:
    path = Path(args.config)
    try:
        data, policies, trace, log_cfg = _load_replay_config(path)
        seed = int(args.seed if args.seed is not None else data.get("seed", 0))
        logs = list(_replay_logs(log_cfg, seed, trace))
    except (OSError, ValueError, TypeError, KeyError, tomllib.TOMLDecodeError) as exc:
        raise UsageError(f"invalid replay config {path}: {exc}") from exc
    out = Path(args.out or data.get("out_dir", "out_replay"))
    out.mkdir(parents=True, exist_ok=True)

    summary = []
    warned = False
    for rep, logd in logs:
        if len(logd) == 0:
            raise UsageError("replay log is empty")
        if logd.malformed:
            log.warning("log %d: %d malformed record(s) skipped", rep, logd.malformed)
        for pc in policies:
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                res = replay_offline(pc, logd, trace=trace,
                                     seed=derive_seed(seed, "policy", pc.name, rep))
            if caught and not warned:
                print(f"warning: {caught[0].message}", file=sys.stderr)
                warned = True
            if res.invalid > 0.5 * len(logd):
                log.error("log %d: %d of %d records are invalid; aborting", rep,
                          res.invalid, len(logd))
                return 1
            with open(out / f"{pc.name}_log{rep:03d}.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["match", "cum_nominal_reward", "cum_actual_reward"])
                for i, (n, a) in enumerate(zip(res.cum_nominal_reward, res.cum_actual_reward), 1):
                    w.writerow([i, _fmt(n), _fmt(a)])
            summary.append({"policy": pc.name, "log": rep, "records": len(logd),
                            "matched": res.matched, "discarded": res.discarded,
                            "invalid": res.invalid,
                            "nominal_per_match": res.nominal_per_match,
                            "actual_per_match": res.actual_per_match})
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(summary[0]))
        w.writeheader()
        for row in summary:
            w.writerow({k: _fmt(v) for k, v in row.items()})

    print(f"{'policy':<24} {'matched':>9} {'actual/match':>13} {'nominal/match':>14}")
    for pc in policies:
        rows = [r for r in summary if r["policy"] == pc.name]
        print(f"{pc.name:<24} {np.mean([r['matched'] for r in rows]):>9.1f} "
              f"{np.mean([r['actual_per_match'] for r in rows]):>13.5f} "
              f"{np.mean([r['nominal_per_match'] for r in rows]):>14.5f}")
    return 0


# ---------------------------------------------------------------------------
# bounds


def _parse_grid(text):
    try:
        grid = [float(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --grid {text!r}: {exc}") from exc
    return grid


def cmd_bounds(args) -> int:
    try:
        raw = json.loads(Path(args.config).read_text())
        grid = raw.pop("grid", None)
        consts = bd.BoundConstants.from_dict(raw)
    except (OSError, ValueError, TypeError) as exc:
        raise UsageError(f"invalid constants {args.config}: {exc}") from exc
    if args.grid:
        grid = _parse_grid(args.grid)
    grid = sorted(grid or DEFAULT_GRID)
    if not grid or min(grid) < 1:
        raise UsageError("every grid horizon must be >= 1")

    continuous = consts.cond_low_mean is not None and consts.cond_high_mean is not None
    ada_coef, lin_coef = bd.leading_log2_coefficients(consts)
    try:
        cs = bd.c_slots(consts)
    except (bd.CSlotsSearchError, ValueError) as exc:
        log.error("%s", exc)
        return 1
    rows = []
    for T in grid:
        row = {"T": T,
               "bound_adalinucb": bd.bound_adalinucb_binary(consts, T),
               "bound_linucb": bd.bound_linucb(consts, T),
               "bound_linucb_general": bd.bound_linucb(consts, T, general=True),
               "c_slots": cs,
               "alpha_T": bd.alpha_schedule(consts, T),
               "adalinucb_log2_coef": ada_coef,
               "linucb_log2_coef": lin_coef}
        if continuous:
            row["bound_adalinucb_continuous"] = bd.bound_adalinucb_continuous(consts, T)
        rows.append(row)

    if args.out:
        dest = Path(args.out)
        if dest.suffix != ".csv":
            dest.mkdir(parents=True, exist_ok=True)
            dest = dest / "bounds.csv"
        fh = open(dest, "w", newline="")
    else:
        fh = sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(v) for k, v in row.items()})
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="oppbandits",
                                     description="Opportunistic linear contextual bandits.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_help):
        p.add_argument("--config", required=True, help=config_help)
        p.add_argument("--seed", type=int, default=None, help="master seed override (u64)")
        p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--verbose", action="store_true",
                       help="log progress; simulate writes every slot to the trace CSVs")

    common(sub.add_parser("simulate", help="run a synthetic experiment"), "experiment TOML")
    common(sub.add_parser("replay", help="offline replay evaluation"), "replay TOML")
    pb = sub.add_parser("bounds", help="evaluate the regret bounds over a horizon grid")
    common(pb, "constants JSON")
    pb.add_argument("--grid", default=None, help="comma-separated horizons, e.g. 1e3,1e4,1e5")
    return parser


COMMANDS = {"simulate": cmd_simulate, "replay": cmd_replay, "bounds": cmd_bounds}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.seed is not None and not 0 <= args.seed < 2 ** 64:
        parser.error("--seed must be an unsigned 64-bit integer")
    if args.jobs < 1:
        parser.error("--jobs must be >= 1")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        log.exception("failed: %s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
