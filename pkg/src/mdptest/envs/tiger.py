"""The tiger game as a data generator.

A tiger sits behind the left (0) or right (1) door for a whole episode. The
behavior policy listens at ``t = 0..T-1`` and opens a uniformly chosen door at
``t = T``. Each observation reports the tiger's side correctly with probability
``listen_accuracy``. Actions: 0 = listen, 1 = open left, 2 = open right.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..trajectory import Dataset

LISTEN, OPEN_LEFT, OPEN_RIGHT = 0, 1, 2


@dataclass(frozen=True)
class TigerConfig:
    listen_accuracy: float = 0.7
    penalty: float = -100.0
    reward: float = 10.0
    horizon: int = 20
    augment_hidden: bool = False

    def __post_init__(self):
        if not 0.5 <= self.listen_accuracy <= 1.0:
            raise ValueError("listen_accuracy must lie in [0.5, 1]")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")


def door_payoff(cfg: TigerConfig, action: np.ndarray, hidden: np.ndarray) -> np.ndarray:
    opened = np.asarray(action) - 1  # 0 = left, 1 = right
    return np.where(opened == np.asarray(hidden), cfg.penalty, cfg.reward)


def simulate_tiger(cfg: TigerConfig, N: int, seed: int) -> Dataset:
    """``N`` episodes; state is the observation, or ``(observation, tiger side)``
    when ``augment_hidden`` is set. Listening earns 0; the door payoff is the
    reward after the final action."""
    if N < 1:
        raise ValueError("N must be positive")
    rng = np.random.default_rng(seed)
    T = cfg.horizon
    hidden = rng.integers(0, 2, N)
    correct = rng.random((N, T + 1)) < cfg.listen_accuracy
    obs = np.where(correct, hidden[:, None], 1 - hidden[:, None]).astype(float)
    actions = np.full((N, T + 1), LISTEN, dtype=np.int64)
    actions[:, T] = rng.integers(OPEN_LEFT, OPEN_RIGHT + 1, N)
    states = obs[..., None]
    if cfg.augment_hidden:
        states = np.concatenate([states, np.broadcast_to(hidden[:, None, None], (N, T + 1, 1)).astype(float)], axis=2)
    return Dataset(
        states,
        actions,
        np.zeros((N, T)),
        3,
        final_rewards=door_payoff(cfg, actions[:, T], hidden).astype(float),
    )
