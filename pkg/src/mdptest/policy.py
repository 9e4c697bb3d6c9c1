"""Fitted Q-iteration, fitted Q-evaluation and policy-value protocols.

Q-functions use one regressor per action. A regressor is anything with
``fit(X, y) -> self`` and ``predict(X) -> array``. FQI and FQE take a factory
``seed -> regressor`` (e.g. ``lambda seed: TabularRegressor()``).
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ._seeding import derive_seed
from .forest import ForestParams, ForestRegressor
from .trajectory import Dataset, lag_embed

FQI_TREES = 100
FQE_TREES = 75


class TabularRegressor:
    """Exact regressor for finite state spaces: the mean response of each distinct input row."""

    def __init__(self, default: float = 0.0):
        self.default = float(default)
        self._table: dict | None = None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "TabularRegressor":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        y = np.asarray(y, dtype=float)
        keys, inv = np.unique(X, axis=0, return_inverse=True)
        inv = inv.reshape(-1)
        sums = np.bincount(inv, weights=y, minlength=len(keys))
        counts = np.bincount(inv, minlength=len(keys))
        self._table = {tuple(k): s / c for k, s, c in zip(keys, sums, counts)}
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        if self._table is None:
            raise RuntimeError("regressor is not fitted")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.array([self._table.get(tuple(row), self.default) for row in X])


def forest_factory(params: ForestParams) -> Callable[[int], ForestRegressor]:
    """Factory taking a seed, so each fit gets its own derived forest seed."""
    return lambda seed: ForestRegressor(params.with_seed(seed))


@dataclass(frozen=True, eq=False)
class QFunction:
    """``Q(s, a)`` as one fitted regressor per action (``None`` for actions absent from the data)."""

    regressors: tuple
    n_actions: int
    iterations: int

    def values(self, states: np.ndarray) -> np.ndarray:
        """``(m, n_actions)`` Q-values; unseen actions get ``-inf``."""
        states = np.atleast_2d(np.asarray(states, dtype=float))
        out = np.full((states.shape[0], self.n_actions), -np.inf)
        for a, reg in enumerate(self.regressors):
            if reg is not None:
                out[:, a] = reg.predict(states)
        return out

    def __call__(self, states: np.ndarray, actions: np.ndarray) -> np.ndarray:
        q = self.values(states)
        return q[np.arange(q.shape[0]), np.asarray(actions, dtype=np.int64)]


class Policy:
    """A policy over (possibly lag-embedded) states.

    ``probs(states)`` returns ``(m, n_actions)`` action probabilities and
    ``__call__`` the action taken. ``embed_level`` is the number of stacked
    states the policy expects.
    """

    n_actions: int
    embed_level: int = 1

    def probs(self, states: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def __call__(self, states: np.ndarray, rng: np.random.Generator | None = None) -> np.ndarray:
        p = self.probs(states)
        if rng is None:
            return p.argmax(axis=1)
        u = rng.random(p.shape[0])
        return (u[:, None] > np.cumsum(p, axis=1)).sum(axis=1).clip(max=p.shape[1] - 1)


class GreedyPolicy(Policy):
    """``argmax_a Q(s, a)``, ties to the lowest action index."""

    def __init__(self, q: QFunction, embed_level: int = 1):
        self.q = q
        self.n_actions = q.n_actions
        self.embed_level = embed_level

    def probs(self, states: np.ndarray) -> np.ndarray:
        best = self.q.values(states).argmax(axis=1)
        out = np.zeros((len(best), self.n_actions))
        out[np.arange(len(best)), best] = 1.0
        return out

    def __call__(self, states, rng=None):
        return self.q.values(states).argmax(axis=1)


class UniformPolicy(Policy):
    def __init__(self, n_actions: int, embed_level: int = 1):
        self.n_actions = n_actions
        self.embed_level = embed_level

    def probs(self, states: np.ndarray) -> np.ndarray:
        m = np.atleast_2d(states).shape[0]
        return np.full((m, self.n_actions), 1.0 / self.n_actions)


class ConstantPolicy(Policy):
    def __init__(self, action: int, n_actions: int, embed_level: int = 1):
        self.action = int(action)
        self.n_actions = n_actions
        self.embed_level = embed_level

    def probs(self, states: np.ndarray) -> np.ndarray:
        m = np.atleast_2d(states).shape[0]
        out = np.zeros((m, self.n_actions))
        out[:, self.action] = 1.0
        return out


# ---------------------------------------------------------------------------
# batch RL


def transitions(d: Dataset) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Flattened ``(S_t, A_t, R_t, S_{t+1})`` for ``t = 0..T-1``."""
    if d.horizon < 1:
        raise ValueError("no transitions in the data")
    p = d.state_dim
    S = d.states[:, :-1].reshape(-1, p)
    A = d.actions[:, :-1].reshape(-1)
    R = d.rewards.reshape(-1)
    S2 = d.states[:, 1:].reshape(-1, p)
    return S, A, R, S2


def _check(d: Dataset, gamma: float, n_iters: int):
    if not 0.0 <= gamma < 1.0:
        raise ValueError("gamma must lie in [0, 1)")
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if d.n < 1 or d.horizon < 1:
        raise ValueError("empty data")


def _fit_q(S, A, Z, n_actions, factory, seed, it) -> QFunction:
    regs = []
    for a in range(n_actions):
        mask = A == a
        if not mask.any():
            regs.append(None)
            continue
        regs.append(factory(derive_seed(seed, "q", it, a)).fit(S[mask], Z[mask]))
    return QFunction(tuple(regs), n_actions, it)


def _iterate(d, gamma, n_iters, factory, seed, tol, next_value) -> QFunction:
    S, A, R, S2 = transitions(d)
    q = None
    prev = None
    for it in range(1, n_iters + 1):
        Z = R.copy() if q is None else R + gamma * next_value(q, S2)
        q = _fit_q(S, A, Z, d.n_actions, factory, seed, it)
        if prev is not None and tol > 0 and np.max(np.abs(Z - prev)) < tol:
            break
        prev = Z
    return q


def fqi(
    d: Dataset,
    gamma: float = 0.9,
    n_iters: int = 50,
    regressor=None,
    seed: int = 0,
    tol: float = 1e-4,
    embed_level: int = 1,
) -> GreedyPolicy:
    """Fitted Q-iteration from ``Q_0 = 0``; returns the greedy policy (its Q-function is ``.q``).

    Iteration stops early once the Bellman targets move by less than ``tol`` in max-norm.
    """
    _check(d, gamma, n_iters)
    factory = regressor or forest_factory(ForestParams(n_trees=FQI_TREES))

    def best(q, S2):
        v = q.values(S2)
        return np.max(np.where(np.isfinite(v), v, -np.inf), axis=1)

    q = _iterate(d, gamma, n_iters, factory, seed, tol, best)
    return GreedyPolicy(q, embed_level)


def fqe(
    d: Dataset,
    policy: Policy,
    gamma: float = 0.9,
    n_iters: int = 50,
    regressor=None,
    seed: int = 0,
    tol: float = 1e-4,
) -> QFunction:
    """Fitted Q-evaluation of ``policy``; the state value is ``state_value(q, policy, s)``."""
    _check(d, gamma, n_iters)
    factory = regressor or forest_factory(ForestParams(n_trees=FQE_TREES))
    return _iterate(d, gamma, n_iters, factory, seed, tol, lambda q, S2: state_value(q, policy, S2))


def state_value(q: QFunction, policy: Policy, states: np.ndarray) -> np.ndarray:
    """``sum_a pi(a|s) Q(s, a)``; actions with zero probability never contribute."""
    p = policy.probs(states)
    v = q.values(states)
    return (p * np.where(p > 0, v, 0.0)).sum(axis=1)


# ---------------------------------------------------------------------------
# rollouts on simulators


def embed_history(states: np.ndarray, actions: np.ndarray, level: int) -> np.ndarray:
    """Embedded state ending at the last row of ``states`` ``(n, t+1, p)``.

    ``actions`` holds ``A_0..A_{t-1}``; the layout matches :func:`lag_embed`.
    """
    t = states.shape[1] - 1
    if level - 1 > t:
        raise ValueError(f"need {level} states of history, have {t + 1}")
    parts = []
    for i in range(t - level + 1, t + 1):
        parts.append(states[:, i])
        if i < t:
            parts.append(actions[:, i, None].astype(float))
    return np.concatenate(parts, axis=1)


def rollout_value(
    env,
    policy: Policy,
    n_traj: int = 100,
    warmup: int = 10,
    horizon: int = 50,
    gamma: float = 0.9,
    seed: int = 0,
) -> float:
    """Mean of ``sum_{t=warmup}^{horizon} gamma^(t-warmup) R_t`` over simulated trajectories.

    The behavior policy acts for ``t < warmup``; ``policy`` acts from ``warmup``
    on, seeing its lag-embedded state. ``env`` needs ``reset(n, rng)``,
    ``step(actions, rng) -> (next_states, rewards)`` and ``behavior(n, rng)``.
    """
    if horizon < warmup:
        raise ValueError("horizon must be >= warmup")
    if policy.embed_level - 1 > warmup:
        raise ValueError("warmup is too short for the policy's embedding level")
    rng = np.random.default_rng(seed)
    s0 = env.reset(n_traj, rng)
    states = np.empty((n_traj, horizon + 2, s0.shape[1]))
    actions = np.empty((n_traj, horizon + 1), dtype=np.int64)
    states[:, 0] = s0
    total = np.zeros(n_traj)
    for t in range(horizon + 1):
        if t < warmup:
            a = env.behavior(n_traj, rng)
        else:
            a = policy(embed_history(states[:, : t + 1], actions[:, :t], policy.embed_level))
        actions[:, t] = a
        states[:, t + 1], r = env.step(a, rng)
        if t >= warmup:
            total += gamma ** (t - warmup) * r
    return float(total.mean())


def evaluation_states(env, level: int, n_traj: int = 100, length: int = 10, seed: int = 0) -> np.ndarray:
    """Last feasible level-``level`` embedded state of behavior trajectories of ``length`` steps."""
    if not 1 <= level <= length:
        raise ValueError(f"embedding level must lie in 1..{length}")
    rng = np.random.default_rng(seed)
    s0 = env.reset(n_traj, rng)
    states = np.empty((n_traj, length, s0.shape[1]))
    actions = np.empty((n_traj, length - 1), dtype=np.int64)
    states[:, 0] = s0
    for t in range(length - 1):
        actions[:, t] = env.behavior(n_traj, rng)
        states[:, t + 1], _ = env.step(actions[:, t], rng)
    return embed_history(states, actions, level)


# ---------------------------------------------------------------------------
# protocols


@dataclass(frozen=True)
class ValueRow:
    k: int
    value: float
    se: float
    n_reps: int


def rows_to_csv(rows: Sequence[ValueRow]) -> str:
    lines = ["k,value,se,n_reps"]
    lines += [f"{r.k},{r.value!r},{r.se!r},{r.n_reps}" for r in rows]
    return "\n".join(lines) + "\n"


def rows_to_dicts(rows: Sequence[ValueRow]) -> list[dict]:
    return [{"k": r.k, "value": r.value, "se": r.se, "n_reps": r.n_reps} for r in rows]


def _summarize(ks, table: np.ndarray) -> list[ValueRow]:
    n = table.shape[0]
    out = []
    for i, k in enumerate(ks):
        col = table[:, i]
        se = float(col.std(ddof=1) / math.sqrt(n)) if n > 1 else math.nan
        out.append(ValueRow(int(k), float(col.mean()), se, n))
    return out


@dataclass(frozen=True)
class RLSettings:
    gamma: float = 0.9
    n_iters: int = 50
    fqi_trees: int = FQI_TREES
    fqe_trees: int = FQE_TREES
    tol: float = 1e-4
    forest: ForestParams = ForestParams()

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "forest"}
        out["forest"] = self.forest.to_dict()
        return out

    def fqi_regressor(self):
        return forest_factory(replace(self.forest, n_trees=self.fqi_trees))

    def fqe_regressor(self):
        return forest_factory(replace(self.forest, n_trees=self.fqe_trees))


def value_difference_protocol(
    simulate: Callable[[int], Dataset],
    env,
    select: Callable[[Dataset, int], int],
    ks: Sequence[int] = tuple(range(1, 11)),
    n_reps: int = 20,
    settings: RLSettings = RLSettings(),
    n_eval: int = 100,
    warmup: int = 10,
    horizon: int = 50,
    seed: int = 0,
) -> tuple[list[ValueRow], np.ndarray]:
    """Mean of ``V(k) - V(k_hat)`` over replications, one row per ``k``.

    ``simulate(seed)`` draws a training dataset and ``select(d, seed)`` returns
    the selected order (callers map a POMDP flag to a fixed level). Within a
    replication every policy is rolled out with the same seed. Returns the
    rows and the raw ``(n_reps, len(ks))`` value table.
    """
    if n_reps < 1:
        raise ValueError("n_reps must be >= 1")
    ks = [int(k) for k in ks]
    values = np.empty((n_reps, len(ks)))
    diffs = np.empty((n_reps, len(ks)))
    for rep in range(n_reps):
        d = simulate(derive_seed(seed, "data", rep))
        k_hat = int(select(d, derive_seed(seed, "select", rep)))
        roll_seed = derive_seed(seed, "rollout", rep)
        cache = {}
        for k in sorted(set(ks) | {k_hat}):
            pol = fqi(
                lag_embed(d, k),
                settings.gamma,
                settings.n_iters,
                settings.fqi_regressor(),
                derive_seed(seed, "fqi", rep, k),
                settings.tol,
                embed_level=k,
            )
            cache[k] = rollout_value(env, pol, n_eval, warmup, horizon, settings.gamma, roll_seed)
        values[rep] = [cache[k] for k in ks]
        diffs[rep] = [cache[k] - cache[k_hat] for k in ks]
    return _summarize(ks, diffs), values


def splits(n: int, n_train: int | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
    """All train/validation splits of ``n`` trajectories with ``n_train`` in training."""
    if n < 2:
        raise ValueError("need at least two trajectories to split")
    n_train = n // 2 if n_train is None else n_train
    if not 1 <= n_train < n:
        raise ValueError("each split needs nonempty training and validation sets")
    full = np.arange(n)
    return [(np.array(c), np.setdiff1d(full, c)) for c in itertools.combinations(range(n), n_train)]


def cross_validated_value(
    d: Dataset,
    env,
    ks: Sequence[int] = tuple(range(1, 11)),
    n_train: int | None = None,
    settings: RLSettings = RLSettings(fqi_trees=FQE_TREES),
    n_eval: int = 100,
    eval_length: int = 10,
    seed: int = 0,
) -> tuple[list[ValueRow], np.ndarray]:
    """FQI on each training split, FQE on its validation split, averaged over splits.

    Each ``V(k)`` is the FQE state value averaged over the last feasible
    embedded state of ``n_eval`` behavior trajectories of ``eval_length``
    steps drawn from ``env``. Returns per-``k`` rows (``n_reps`` = number of
    splits) and the raw ``(n_splits, len(ks))`` table.
    """
    ks = [int(k) for k in ks]
    parts = splits(d.n, n_train)
    table = np.empty((len(parts), len(ks)))
    for i, k in enumerate(ks):
        dk = lag_embed(d, k)
        eval_s = evaluation_states(env, k, n_eval, eval_length, derive_seed(seed, "eval"))
        for l, (train, valid) in enumerate(parts):
            pol = fqi(
                dk.subset(train),
                settings.gamma,
                settings.n_iters,
                settings.fqi_regressor(),
                derive_seed(seed, "fqi", l, k),
                settings.tol,
                embed_level=k,
            )
            q = fqe(
                dk.subset(valid),
                pol,
                settings.gamma,
                settings.n_iters,
                settings.fqe_regressor(),
                derive_seed(seed, "fqe", l, k),
                settings.tol,
            )
            table[l, i] = float(state_value(q, pol, eval_s).mean())
    return _summarize(ks, table), table
