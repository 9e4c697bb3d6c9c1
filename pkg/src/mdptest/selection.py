"""Sequential order selection: embed more history until the Markov test stops rejecting."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Callable, Sequence

from ._seeding import derive_seed
from .markov_test import SCHEMA_VERSION, TestConfig, TestResult, run_test
from .trajectory import Dataset, lag_embed

ORDER = "order"
POMDP = "pomdp"


@dataclass(frozen=True)
class LevelRecord:
    k: int
    p_value: float
    reject: bool


@dataclass(frozen=True)
class SelectionResult:
    levels: tuple
    outcome: str  # ORDER or POMDP
    order: int | None
    alpha: float
    K: int
    config: TestConfig | None = None

    @property
    def is_pomdp(self) -> bool:
        return self.outcome == POMDP

    def to_dict(self) -> dict:
        out = {
            "schema_version": SCHEMA_VERSION,
            "levels": [{"k": r.k, "p_value": r.p_value, "reject": r.reject} for r in self.levels],
            "outcome": {"type": self.outcome, "k": self.order},
            "alpha": self.alpha,
            "K": self.K,
        }
        if self.config is not None:
            out["config"] = self.config.to_dict()
        return out

    def to_json(self, **kw) -> str:
        return json.dumps(self.to_dict(), **kw)


def decide(p_values: Sequence[float], alpha: float, K: int | None = None) -> SelectionResult:
    """Apply the stopping rule to a precomputed p-value sequence.

    Level ``k`` rejects when its p-value is below ``alpha``. The first
    non-rejecting level is the order; if all ``K`` levels reject the data are
    flagged as a POMDP.
    """
    K = len(p_values) if K is None else K
    if K < 1:
        raise ValueError("K must be >= 1")
    records = []
    for k in range(1, K + 1):
        if k > len(p_values):
            raise ValueError(f"level {k} is still rejecting but only {len(p_values)} p-values were given")
        p = float(p_values[k - 1])
        rej = p < alpha
        records.append(LevelRecord(k, p, rej))
        if not rej:
            return SelectionResult(tuple(records), ORDER, k, alpha, K)
    return SelectionResult(tuple(records), POMDP, None, alpha, K)


def level_config(cfg: TestConfig, k: int) -> TestConfig:
    return replace(cfg, seed=derive_seed(cfg.seed, "level", k))


def select_order(
    d: Dataset,
    K: int = 10,
    alpha: float | None = None,
    cfg: TestConfig = TestConfig(),
    runner: Callable[[Dataset, TestConfig], TestResult] = run_test,
) -> SelectionResult:
    """Test embedding levels ``1..K`` in turn and stop at the first non-rejection.

    Each level gets its own seed derived from ``cfg.seed``; a level's decision
    is the test's own ``reject`` flag.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    alpha = cfg.alpha if alpha is None else alpha
    cfg = replace(cfg, alpha=alpha)
    if d.horizon - (K - 1) < 3:
        raise ValueError(f"embedding level K={K} leaves horizon {d.horizon - (K - 1)} < 3")
    records = []
    for k in range(1, K + 1):
        res = runner(lag_embed(d, k), level_config(cfg, k))
        records.append(LevelRecord(k, res.p_value, bool(res.reject)))
        if not res.reject:
            return SelectionResult(tuple(records), ORDER, k, alpha, K, cfg)
    return SelectionResult(tuple(records), POMDP, None, alpha, K, cfg)
