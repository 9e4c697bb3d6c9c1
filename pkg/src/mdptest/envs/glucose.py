"""Synthetic type-1-diabetes patients following a linear higher-order model.

Glucose evolves as

    G_t = alpha + sum_{i=1}^{order} (beta_i . S_{t-i} + c_i * A_{t-i}) + E_t,   E_t ~ N(0, noise_sd^2)

with state ``S_t = (G_t, C_t, Ex_t)`` (glucose, meal carbohydrates, exercise
intensity) and insulin action ``A_t in {0..4}``. Meals and exercise happen
independently each step with probabilities ``meal_prob`` and
``exercise_prob``; actions are i.i.d. draws from ``action_probs``. The reward
``R_t`` is the glycemic-control index of ``G_{t+1}``.

The default coefficients are synthetic: glucose autoregression halves with each
lag, carbohydrates raise and exercise lowers glucose, and insulin lowers it.
They keep average glucose near 140 mg/dL.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..trajectory import Dataset

N_ACTIONS = 5

DEFAULT_STATE_COEFS = (
    (0.30, 0.50, -0.40),
    (0.15, 0.25, -0.20),
    (0.075, 0.125, -0.10),
    (0.0375, 0.075, -0.05),
)
DEFAULT_ACTION_COEFS = (-20.0, -15.0, -9.0, -4.5)


def igc_reward(glucose_next):
    """Index of glycemic control: 0 on [80, 140], quadratic below, power 1.35 above."""
    g = np.asarray(glucose_next, dtype=float)
    low = -((80.0 - g) ** 2) / 30.0
    high = -(np.abs(g - 140.0) ** 1.35) / 30.0
    out = np.where(g < 80.0, low, np.where(g > 140.0, high, 0.0))
    return float(out) if out.ndim == 0 else out


def discretize_insulin(amount):
    """Map an insulin dose to an action level: 0 for none, then bins (0,4], (4,8], (8,12], >12."""
    x = np.asarray(amount, dtype=float)
    if np.any(x < 0) or np.any(~np.isfinite(x)):
        raise ValueError("insulin amount must be a nonnegative finite number")
    out = np.where(x == 0, 0, np.where(x > 12, 4, np.ceil(x / 4.0))).astype(np.int64)
    return int(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class GlucoseConfig:
    order: int = 4
    intercept: float = 100.0
    state_coefs: tuple = DEFAULT_STATE_COEFS
    action_coefs: tuple = DEFAULT_ACTION_COEFS
    noise_sd: float = 3.0
    meal_prob: float = 0.3
    meal_mean: float = 50.0
    meal_sd: float = 10.0
    exercise_prob: float = 0.2
    exercise_mean: float = 30.0
    exercise_sd: float = 10.0
    action_probs: tuple = (0.5, 0.2, 0.15, 0.1, 0.05)
    burn_in: int = 10
    init_glucose_mean: float = 120.0
    init_glucose_sd: float = 15.0
    horizon: int = 1344

    def __post_init__(self):
        sc = np.asarray(self.state_coefs, dtype=float)
        ac = np.asarray(self.action_coefs, dtype=float)
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if sc.shape != (self.order, 3) or ac.shape != (self.order,):
            raise ValueError(f"need {self.order} rows of (glucose, carbs, exercise) and {self.order} action coefficients")
        for name in ("meal_prob", "exercise_prob"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be a probability")
        probs = np.asarray(self.action_probs, dtype=float)
        if probs.shape != (N_ACTIONS,) or np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValueError("action_probs must be a probability vector over 5 levels")
        if self.noise_sd < 0 or self.meal_sd < 0 or self.exercise_sd < 0 or self.init_glucose_sd < 0:
            raise ValueError("standard deviations must be nonnegative")
        if self.burn_in < 0 or self.horizon < 1:
            raise ValueError("burn_in >= 0 and horizon >= 1 required")
        object.__setattr__(self, "state_coefs", tuple(tuple(float(v) for v in row) for row in sc))
        object.__setattr__(self, "action_coefs", tuple(float(v) for v in ac))
        object.__setattr__(self, "action_probs", tuple(float(v) for v in probs))

    @classmethod
    def with_order(cls, order: int, **kw) -> "GlucoseConfig":
        """Default coefficients restricted to (or zero-padded to) ``order`` lags."""
        sc = list(DEFAULT_STATE_COEFS[:order]) + [(0.0, 0.0, 0.0)] * max(0, order - 4)
        ac = list(DEFAULT_ACTION_COEFS[:order]) + [0.0] * max(0, order - 4)
        return cls(order=order, state_coefs=tuple(sc), action_coefs=tuple(ac), **kw)

    def to_dict(self) -> dict:
        return {k: (list(map(list, v)) if k == "state_coefs" else list(v) if isinstance(v, tuple) else v)
                for k, v in self.__dict__.items()}

    @classmethod
    def from_dict(cls, data: dict) -> "GlucoseConfig":
        data = dict(data)
        for key in ("state_coefs", "action_coefs", "action_probs"):
            if key in data:
                v = data[key]
                data[key] = tuple(tuple(r) for r in v) if key == "state_coefs" else tuple(v)
        return cls(**data)


class GlucoseEnv:
    """Batch simulator that can be driven by an arbitrary policy.

    ``reset`` draws ``order`` initial states, runs ``burn_in`` behavior steps and
    returns ``S_0``; ``step`` applies actions ``A_t`` and returns
    ``(S_{t+1}, R_t)``.
    """

    n_actions = N_ACTIONS
    state_dim = 3

    def __init__(self, cfg: GlucoseConfig = GlucoseConfig()):
        self.cfg = cfg
        self._beta = np.asarray(cfg.state_coefs)  # (order, 3), row i-1 is lag i
        self._c = np.asarray(cfg.action_coefs)
        self._probs = np.asarray(cfg.action_probs)
        self._S = None
        self._A = None

    def behavior(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.choice(N_ACTIONS, size=n, p=self._probs)

    def _exogenous(self, n: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        cfg = self.cfg
        meal = rng.random(n) < cfg.meal_prob
        carbs = np.where(meal, np.maximum(rng.normal(cfg.meal_mean, cfg.meal_sd, n), 0.0), 0.0)
        ex = rng.random(n) < cfg.exercise_prob
        exer = np.where(ex, np.maximum(rng.normal(cfg.exercise_mean, cfg.exercise_sd, n), 0.0), 0.0)
        return carbs, exer

    def reset(self, n: int, rng: np.random.Generator) -> np.ndarray:
        cfg = self.cfg
        k = cfg.order
        S = np.empty((n, k, 3))
        for i in range(k):
            carbs, exer = self._exogenous(n, rng)
            S[:, i, 0] = rng.normal(cfg.init_glucose_mean, cfg.init_glucose_sd, n)
            S[:, i, 1] = carbs
            S[:, i, 2] = exer
        # the last history row is the current state; its action is not chosen yet
        A = np.zeros((n, k), dtype=np.int64)
        for i in range(k - 1):
            A[:, i] = self.behavior(n, rng)
        self._S, self._A = S, A
        for _ in range(cfg.burn_in):
            self.step(self.behavior(n, rng), rng)
        return self._S[:, -1].copy()

    def step(self, actions: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
        if self._S is None:
            raise RuntimeError("call reset() first")
        cfg = self.cfg
        n = self._S.shape[0]
        A = self._A.copy()
        A[:, -1] = np.asarray(actions, dtype=np.int64)
        # lag i (1-based) is history row -i
        lagged_S = self._S[:, ::-1]  # row 0 = S_t
        lagged_A = A[:, ::-1]
        g = (
            cfg.intercept
            + np.einsum("nid,id->n", lagged_S, self._beta)
            + lagged_A @ self._c
            + cfg.noise_sd * rng.standard_normal(n)
        )
        carbs, exer = self._exogenous(n, rng)
        new = np.column_stack([g, carbs, exer])
        self._S = np.concatenate([self._S[:, 1:], new[:, None, :]], axis=1)
        self._A = np.concatenate([A[:, 1:], np.zeros((n, 1), dtype=np.int64)], axis=1)
        return new, igc_reward(g)


def simulate_glucose(cfg: GlucoseConfig = GlucoseConfig(), N: int = 10, T: int | None = None, seed: int = 0) -> Dataset:
    """``N`` behavior-policy trajectories with ``T + 1`` recorded steps after burn-in."""
    T = cfg.horizon if T is None else int(T)
    if N < 1 or T < 1:
        raise ValueError("N >= 1 and T >= 1 required")
    rng = np.random.default_rng(seed)
    env = GlucoseEnv(cfg)
    states = np.empty((N, T + 1, 3))
    actions = np.empty((N, T + 1), dtype=np.int64)
    rewards = np.empty((N, T))
    states[:, 0] = env.reset(N, rng)
    for t in range(T):
        actions[:, t] = env.behavior(N, rng)
        states[:, t + 1], rewards[:, t] = env.step(actions[:, t], rng)
    actions[:, T] = env.behavior(N, rng)
    return Dataset(states, actions, rewards, N_ACTIONS)

