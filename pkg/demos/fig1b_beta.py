"""Continuous variation factor drawn from Beta(2, 2).

Two questions: does AdaLinUCB still help when L_t is continuous, and does
the empirical-quantile variant (no thresholds given up front) keep up?

    python demos/fig1b_beta.py
"""

from pathlib import Path

import numpy as np

from oppbandits.experiment import ExperimentConfig, run_experiment

cfg = ExperimentConfig.load(Path(__file__).resolve().parents[1] / "configs" / "fig1b.toml")
cfg.replications = 5
runs = run_experiment(cfg)

final = {name: np.mean([tr.cum_actual[-1] for tr in traces]) for name, traces in runs.items()}
base = final["LinUCBExtracted"]
for name, value in final.items():
    print(f"{name:<18} {value:8.1f}   {100 * (1 - value / base):+6.1f}% vs LinUCBExtracted")

# Regret growth over time, sampled at a few checkpoints.
print("\n      t " + "".join(f"{n:>18}" for n in runs))
for t in cfg.checkpoints:
    row = [np.mean([tr.cum_actual[t - 1] for tr in traces]) for traces in runs.values()]
    print(f"{t:7d} " + "".join(f"{v:18.1f}" for v in row))
