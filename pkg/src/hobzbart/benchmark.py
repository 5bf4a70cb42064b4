"""Tree ensemble vs linear baseline on simulated scenarios."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .forest import Hyperparams
from .inference import compute_metrics, expected_outcome, fit_linear_hobz
from .sampler import Schedule, run_chain
from .simgen import SimConfig, generate_train_test, get_preset

MODELS = ("hobz_bart", "linear_hobz")


@dataclass(frozen=True)
class BenchmarkRow:
    model: str
    scenario: str
    replication: int
    mae: float
    rmse: float
    adj_r2: float


def replication_seed(base_seed: int, replication: int) -> int:
    return int(np.random.SeedSequence([base_seed, replication]).generate_state(1)[0])


def run_scenario(cfg: SimConfig, replication: int, h: Hyperparams, schedule: Schedule,
                 models=MODELS) -> list[BenchmarkRow]:
    """Fit each model on the training rows and score held-out predictions against observed outcomes."""
    seed = replication_seed(schedule.seed, replication)
    train, _, test, _ = generate_train_test(replace(cfg, seed=seed))
    sched = replace(schedule, seed=seed)
    out = []
    for model in models:
        if model == "hobz_bart":
            draws = run_chain(train, test.X, h, sched)
        elif model == "linear_hobz":
            draws = fit_linear_hobz(train, sched, test.X, h)
        else:
            raise ValueError(f"unknown model {model!r}")
        pred = expected_outcome(draws.test_f1, draws.test_f0, draws.test_fb).mean(axis=0)
        m = compute_metrics(pred, test.y)
        out.append(BenchmarkRow(model, cfg.name, replication, m.mae, m.rmse, m.adj_r2))
    return out


def run_benchmark(scenarios, replications: int, h: Hyperparams, schedule: Schedule) -> list[BenchmarkRow]:
    rows = []
    for name in scenarios:
        cfg = get_preset(name)
        for r in range(replications):
            rows.extend(run_scenario(cfg, r, h, schedule))
    return rows
