"""Monte Carlo experiments: rejection rates, value differences and cross-validated values."""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from functools import partial
from typing import Callable, Sequence

import numpy as np

from ._seeding import derive_seed
from .envs import ChainSpec, GlucoseConfig, GlucoseEnv, TigerConfig, simulate_chain, simulate_glucose, simulate_tiger
from .envs.chain import three_state_chain
from .markov_test import SCHEMA_VERSION, TestConfig, run_test
from .policy import FQE_TREES, RLSettings, cross_validated_value, rows_to_dicts, value_difference_protocol
from .selection import select_order
from .trajectory import Dataset, lag_embed

ENVS = ("chain", "tiger", "tiger-augmented", "glucose")


def mce(rate: float, reps: int) -> float:
    """Binomial Monte Carlo standard error of a rejection rate."""
    return math.sqrt(rate * (1.0 - rate) / reps)


@dataclass(frozen=True)
class Generator:
    """A named data generator: ``generator(N, T, seed) -> Dataset``."""

    name: str
    chain: ChainSpec | None = None
    tiger: TigerConfig | None = None
    glucose: GlucoseConfig | None = None

    def __call__(self, N: int, T: int | None, seed: int) -> Dataset:
        if self.name == "chain":
            return simulate_chain(self.chain or three_state_chain(), N, 100 if T is None else T, seed)
        if self.name in ("tiger", "tiger-augmented"):
            cfg = self.tiger or TigerConfig()
            if T is not None:
                cfg = replace(cfg, horizon=T)
            if self.name == "tiger-augmented":
                cfg = replace(cfg, augment_hidden=True)
            return simulate_tiger(cfg, N, seed)
        if self.name == "glucose":
            return simulate_glucose(self.glucose or GlucoseConfig(), N, T, seed)
        raise ValueError(f"unknown environment {self.name!r}; choose from {', '.join(ENVS)}")


def _one_replication(gen: Generator, N: int, T: int | None, levels, alphas, cfg: TestConfig, seed: int, rep: int):
    d = gen(N, T, derive_seed(seed, "data", rep))
    out = []
    for k in levels:
        res = run_test(lag_embed(d, k), replace(cfg, seed=derive_seed(seed, "test", rep, k)))
        out.append([res.reject_at(a) for a in alphas] + [res.p_value])
    return out


def _map(fn, items, n_jobs: int):
    if n_jobs <= 1:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=n_jobs) as pool:
        return list(pool.map(fn, items))


def rejection_rates(
    gen: Generator,
    N: int,
    T: int | None,
    reps: int,
    cfg: TestConfig = TestConfig(),
    levels: Sequence[int] = (1,),
    alphas: Sequence[float] | None = None,
    seed: int = 0,
    n_jobs: int = 1,
    progress: Callable[[int], None] | None = None,
) -> dict:
    """Rejection rate of the test per (embedding level, alpha) over ``reps`` datasets.

    All alphas share one bootstrap per run. Each cell reports the rate, its
    Monte Carlo error ``sqrt(a(1-a)/reps)`` and the band ``a +- 1.96 MCE``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    alphas = [cfg.alpha] if alphas is None else [float(a) for a in alphas]
    levels = [int(k) for k in levels]
    fn = partial(_one_replication, gen, N, T, levels, alphas, cfg, seed)
    if progress is None:
        results = _map(fn, range(reps), n_jobs)
    else:
        results = []
        for rep in range(reps):
            results.append(fn(rep))
            progress(rep + 1)
    arr = np.array(results, dtype=float)  # (reps, levels, alphas + 1)
    cells = []
    for i, k in enumerate(levels):
        for j, a in enumerate(alphas):
            rate = float(arr[:, i, j].mean())
            err = mce(a, reps)
            cells.append(
                {
                    "k": k,
                    "alpha": a,
                    "rate": rate,
                    "mce": err,
                    "band": [a - 1.96 * err, a + 1.96 * err],
                    "n_reps": reps,
                }
            )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "rejection-rates",
        "env": gen.name,
        "N": N,
        "T": T,
        "seed": seed,
        "cells": cells,
        "p_values": {str(k): arr[:, i, -1].tolist() for i, k in enumerate(levels)},
        "config": cfg.to_dict(),
    }


def value_difference(
    glucose: GlucoseConfig,
    N: int,
    T: int | None,
    reps: int,
    ks: Sequence[int] = tuple(range(1, 11)),
    K: int = 10,
    alpha: float = 0.01,
    cfg: TestConfig = TestConfig(),
    settings: RLSettings | None = None,
    seed: int = 0,
) -> dict:
    """Value of FQI policies at fixed orders minus the value at the selected order.

    A POMDP outcome falls back to order ``K``.
    """
    if reps < 1:
        raise ValueError("reps must be >= 1")
    settings = settings or RLSettings()
    orders = []

    def select(d: Dataset, s: int) -> int:
        res = select_order(d, K, alpha, replace(cfg, seed=s))
        k = K if res.is_pomdp else res.order
        orders.append(k)
        return k

    rows, values = value_difference_protocol(
        lambda s: simulate_glucose(glucose, N, T, s), GlucoseEnv(glucose), select, ks, reps, settings, seed=seed
    )
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "value-difference",
        "N": N,
        "T": T,
        "K": K,
        "alpha": alpha,
        "seed": seed,
        "selected_orders": orders,
        "rows": rows_to_dicts(rows),
        "values": values.tolist(),
        "config": {"test": cfg.to_dict(), "rl": settings.to_dict(), "glucose": glucose.to_dict()},
    }


def cv_value(
    d: Dataset,
    glucose: GlucoseConfig,
    ks: Sequence[int] = tuple(range(1, 11)),
    n_train: int | None = None,
    settings: RLSettings | None = None,
    seed: int = 0,
) -> dict:
    """Split-averaged FQE value of FQI policies per order ``k`` (evaluation states from the glucose model)."""
    settings = settings or RLSettings(fqi_trees=FQE_TREES)
    rows, table = cross_validated_value(d, GlucoseEnv(glucose), ks, n_train, settings, seed=seed)
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": "cv-value",
        "n": d.n,
        "T": d.horizon,
        "n_splits": table.shape[0],
        "seed": seed,
        "rows": rows_to_dicts(rows),
        "values": table.tolist(),
        "config": {"rl": settings.to_dict(), "glucose": glucose.to_dict()},
    }
