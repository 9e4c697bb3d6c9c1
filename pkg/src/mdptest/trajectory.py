"""Trajectory data model, CSV ingestion, lag embedding, normalization and folds.

A :class:`Dataset` stores ``n`` trajectories of a common horizon ``T`` as stacked
arrays:

* ``states``  -- ``(n, T+1, p)`` float array, row ``t`` is ``S_t``
* ``actions`` -- ``(n, T+1)`` int array with values in ``{0, ..., n_actions-1}``
* ``rewards`` -- ``(n, T)`` float array, ``R_t`` is received after ``A_t``

The reward that follows the very last action ``A_T`` has no slot in ``rewards``;
when present (e.g. the door payoff of the tiger game) it is kept in
``final_rewards`` and written to the reward column of the last CSV row.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence, TextIO

import numpy as np


class DataError(ValueError):
    """Raised for malformed or inconsistent trajectory data."""


@dataclass(frozen=True)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    id: str = ""
    final_reward: float = math.nan

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        actions = np.asarray(self.actions)
        rewards = np.asarray(self.rewards, dtype=float)
        if states.ndim != 2 or actions.ndim != 1 or rewards.ndim != 1:
            raise DataError(f"trajectory {self.id!r}: bad array ranks")
        if len(states) != len(actions):
            raise DataError(f"trajectory {self.id!r}: states and actions differ in length")
        if len(rewards) != len(states) - 1:
            raise DataError(f"trajectory {self.id!r}: rewards must have one fewer entry than states")
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(rewards))):
            raise DataError(f"trajectory {self.id!r}: non-finite state or reward")
        if not np.all(actions == np.round(actions)):
            raise DataError(f"trajectory {self.id!r}: non-integer action")
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions.astype(np.int64))
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "id", str(self.id))
        object.__setattr__(self, "final_reward", float(self.final_reward))

    @property
    def horizon(self) -> int:
        return len(self.states) - 1

    @property
    def pairs(self) -> np.ndarray:
        """State-action pairs ``X_t = (S_t, A_t)`` as a ``(T+1, p+1)`` array."""
        return np.column_stack([self.states, self.actions.astype(float)])


@dataclass(frozen=True, eq=False)
class Dataset:
    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    n_actions: int
    ids: tuple = ()
    final_rewards: np.ndarray | None = None
    n_truncated: int = field(default=0, compare=False)

    def __post_init__(self):
        states = np.asarray(self.states, dtype=float)
        actions = np.asarray(self.actions, dtype=np.int64)
        rewards = np.asarray(self.rewards, dtype=float)
        if states.ndim != 3:
            raise DataError("states must be a (n, T+1, p) array")
        n, t1, _ = states.shape
        if n < 1:
            raise DataError("a dataset needs at least one trajectory")
        if actions.shape != (n, t1) or rewards.shape != (n, t1 - 1):
            raise DataError(
                f"shape mismatch: states {states.shape}, actions {actions.shape}, rewards {rewards.shape}"
            )
        if not (np.all(np.isfinite(states)) and np.all(np.isfinite(rewards))):
            raise DataError("non-finite state or reward")
        if self.n_actions < 1:
            raise DataError("n_actions must be positive")
        bad = (actions < 0) | (actions >= self.n_actions)
        if bad.any():
            j, t = np.argwhere(bad)[0]
            raise DataError(
                f"action {actions[j, t]} outside 0..{self.n_actions - 1} (trajectory {j}, t={t})"
            )
        ids = tuple(str(i) for i in self.ids) if self.ids else tuple(str(j) for j in range(n))
        if len(ids) != n:
            raise DataError("one id per trajectory required")
        final = (
            np.full(n, np.nan)
            if self.final_rewards is None
            else np.asarray(self.final_rewards, dtype=float).reshape(n)
        )
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "actions", actions)
        object.__setattr__(self, "rewards", rewards)
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "final_rewards", final)

    @classmethod
    def from_trajectories(
        cls, trajectories: Sequence[Trajectory], n_actions: int, horizon: int | None = None
    ) -> "Dataset":
        """Stack trajectories, truncating all of them to a common horizon.

        The common horizon is ``horizon`` when given, otherwise the shortest
        trajectory's horizon. ``n_truncated`` counts trajectories that lost rows.
        """
        if not trajectories:
            raise DataError("a dataset needs at least one trajectory")
        dims = {tr.states.shape[1] for tr in trajectories}
        if len(dims) != 1:
            raise DataError(f"trajectories disagree on state dimension: {sorted(dims)}")
        shortest = min(tr.horizon for tr in trajectories)
        T = shortest if horizon is None else int(horizon)
        if T > shortest:
            raise DataError(f"horizon {T} exceeds the shortest trajectory ({shortest})")
        if T < 0:
            raise DataError("horizon must be nonnegative")
        finals = []
        for tr in trajectories:
            finals.append(tr.final_reward if tr.horizon == T else tr.rewards[T])
        n_trunc = sum(tr.horizon > T for tr in trajectories)
        return cls(
            states=np.stack([tr.states[: T + 1] for tr in trajectories]),
            actions=np.stack([tr.actions[: T + 1] for tr in trajectories]),
            rewards=np.stack([tr.rewards[:T] for tr in trajectories]),
            n_actions=n_actions,
            ids=tuple(tr.id for tr in trajectories),
            final_rewards=np.array(finals, dtype=float),
            n_truncated=n_trunc,
        )

    @property
    def n(self) -> int:
        return self.states.shape[0]

    @property
    def horizon(self) -> int:
        return self.states.shape[1] - 1

    @property
    def state_dim(self) -> int:
        return self.states.shape[2]

    @property
    def pairs(self) -> np.ndarray:
        """``(n, T+1, p+1)`` array of ``X_{j,t} = (S_{j,t}, A_{j,t})``."""
        return np.concatenate([self.states, self.actions[..., None].astype(float)], axis=2)

    def trajectory(self, j: int) -> Trajectory:
        return Trajectory(
            self.states[j], self.actions[j], self.rewards[j], self.ids[j], self.final_rewards[j]
        )

    @property
    def trajectories(self) -> list[Trajectory]:
        return [self.trajectory(j) for j in range(self.n)]

    def subset(self, index: Iterable[int]) -> "Dataset":
        index = np.asarray(list(index), dtype=np.int64)
        return Dataset(
            self.states[index],
            self.actions[index],
            self.rewards[index],
            self.n_actions,
            tuple(self.ids[i] for i in index),
            self.final_rewards[index],
        )

    def with_states(self, states: np.ndarray) -> "Dataset":
        return Dataset(states, self.actions, self.rewards, self.n_actions, self.ids, self.final_rewards)

    def equals(self, other: "Dataset") -> bool:
        """Exact equality of all numeric payloads and labels (NaN final rewards compare equal)."""
        return (
            self.n_actions == other.n_actions
            and self.ids == other.ids
            and self.states.shape == other.states.shape
            and np.array_equal(self.states, other.states)
            and np.array_equal(self.actions, other.actions)
            and np.array_equal(self.rewards, other.rewards)
            and np.array_equal(self.final_rewards, other.final_rewards, equal_nan=True)
        )


# ---------------------------------------------------------------------------
# CSV I/O


def _header(p: int) -> list[str]:
    return ["traj_id", "t"] + [f"s_{i + 1}" for i in range(p)] + ["action", "reward"]


def load_dataset(
    source: str | Path | TextIO,
    n_actions: int,
    state_dim: int | None = None,
    horizon: int | None = None,
) -> Dataset:
    """Read trajectories from CSV with header ``traj_id,t,s_1..s_p,action,reward``.

    Rows are grouped by ``traj_id`` (first-appearance order) and sorted by ``t``,
    which must run 0, 1, 2, ... without gaps. The reward on each trajectory's last
    row may be empty. Trajectories are truncated to the common horizon; a
    :class:`UserWarning` reports how many were cut.
    """
    if isinstance(source, (str, Path)):
        with open(source, newline="", encoding="utf-8") as fh:
            return load_dataset(fh, n_actions, state_dim, horizon)

    reader = csv.reader(source)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty input: header row required") from None
    if len(header) < 5 or header[:2] != ["traj_id", "t"] or header[-2:] != ["action", "reward"]:
        raise DataError(f"bad header {header}; expected traj_id,t,s_1..s_p,action,reward")
    p = len(header) - 4
    if state_dim is not None and p != state_dim:
        raise DataError(f"header has {p} state columns but the schema declares {state_dim}")
    if header != _header(p):
        raise DataError(f"state columns must be named s_1..s_{p}, got {header[2:-2]}")

    rows: dict[str, list[tuple[int, list[float], int, str, int]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != p + 4:
            raise DataError(f"line {lineno}: expected {p + 4} fields, got {len(row)}")
        tid = row[0].strip()
        try:
            t = int(row[1])
            s = [float(v) for v in row[2 : 2 + p]]
            a_val = float(row[2 + p])
        except ValueError as exc:
            raise DataError(f"line {lineno} (trajectory {tid!r}): {exc}") from None
        if a_val != int(a_val):
            raise DataError(f"line {lineno} (trajectory {tid!r}): non-integer action {row[2 + p]!r}")
        a = int(a_val)
        if not 0 <= a < n_actions:
            raise DataError(
                f"line {lineno} (trajectory {tid!r}): action {a} outside 0..{n_actions - 1}"
            )
        if not all(math.isfinite(v) for v in s):
            raise DataError(f"line {lineno} (trajectory {tid!r}): non-finite state")
        rows.setdefault(tid, []).append((t, s, a, row[3 + p].strip(), lineno))

    if not rows:
        raise DataError("no trajectories in input")

    trajectories = []
    for tid, items in rows.items():
        items.sort(key=lambda r: r[0])
        ts = [r[0] for r in items]
        if ts != list(range(len(ts))):
            raise DataError(f"trajectory {tid!r}: time index must be contiguous from 0, got {ts[:10]}...")
        rewards = []
        for t, _, _, rtext, lineno in items[:-1]:
            if not rtext:
                raise DataError(f"line {lineno} (trajectory {tid!r}): missing reward at t={t}")
            try:
                rewards.append(float(rtext))
            except ValueError as exc:
                raise DataError(f"line {lineno} (trajectory {tid!r}): {exc}") from None
        last = items[-1][3]
        try:
            final = float(last) if last else math.nan
        except ValueError as exc:
            raise DataError(f"line {items[-1][4]} (trajectory {tid!r}): {exc}") from None
        trajectories.append(
            Trajectory(
                np.array([r[1] for r in items], dtype=float).reshape(len(items), p),
                np.array([r[2] for r in items]),
                np.array(rewards, dtype=float),
                tid,
                final,
            )
        )
    d = Dataset.from_trajectories(trajectories, n_actions, horizon)
    if d.n_truncated:
        warnings.warn(f"{d.n_truncated} trajectories truncated to horizon {d.horizon}", stacklevel=2)
    return d


def write_dataset(d: Dataset, target: str | Path | TextIO) -> None:
    """Write ``d`` in the CSV layout read by :func:`load_dataset` (lossless floats)."""
    if isinstance(target, (str, Path)):
        with open(target, "w", newline="", encoding="utf-8") as fh:
            write_dataset(d, fh)
        return
    w = csv.writer(target, lineterminator="\n")
    w.writerow(_header(d.state_dim))
    T = d.horizon
    for j in range(d.n):
        for t in range(T + 1):
            if t < T:
                r = repr(float(d.rewards[j, t]))
            else:
                r = "" if math.isnan(d.final_rewards[j]) else repr(float(d.final_rewards[j]))
            w.writerow(
                [d.ids[j], t]
                + [repr(float(v)) for v in d.states[j, t]]
                + [int(d.actions[j, t]), r]
            )


def dataset_to_csv(d: Dataset) -> str:
    buf = io.StringIO()
    write_dataset(d, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Transformations


def lag_embed(d: Dataset, level: int) -> Dataset:
    """Stack ``level`` consecutive states (with the actions between them) into one state.

    The embedded state at time ``t`` is ``(S_t, A_t, S_{t+1}, ..., A_{t+level-2},
    S_{t+level-1})``; its action is ``A_{t+level-1}`` and its reward
    ``R_{t+level-1}``. The horizon shrinks by ``level - 1``. ``level=1`` returns
    ``d`` itself.
    """
    level = int(level)
    if level < 1:
        raise ValueError("embedding level must be >= 1")
    if level == 1:
        return d
    k = level - 1
    T = d.horizon
    if k > T:
        raise ValueError(f"embedding level {level} needs horizon >= {k}, data has T={T}")
    n_rows = T - k + 1
    blocks = []
    for i in range(level):
        blocks.append(d.states[:, i : i + n_rows, :])
        if i < k:
            blocks.append(d.actions[:, i : i + n_rows, None].astype(float))
    return Dataset(
        np.concatenate(blocks, axis=2),
        d.actions[:, k:],
        d.rewards[:, k:],
        d.n_actions,
        d.ids,
        d.final_rewards,
    )


def embedded_dim(p: int, level: int) -> int:
    return level * p + (level - 1)


def normalize(d: Dataset) -> tuple[Dataset, np.ndarray]:
    """Divide each state coordinate by its pooled sample standard deviation.

    Constant coordinates are left as they are (scale 1) with a warning.
    Returns the rescaled dataset and the scale vector.
    """
    flat = d.states.reshape(-1, d.state_dim)
    if flat.shape[0] < 2:
        warnings.warn("fewer than two state rows: normalization skipped", stacklevel=2)
        return d, np.ones(d.state_dim)
    sd = flat.std(axis=0, ddof=1)
    degenerate = ~(sd > 0)
    if degenerate.any():
        warnings.warn(
            f"state coordinates {np.flatnonzero(degenerate).tolist()} have zero variance; left unscaled",
            stacklevel=2,
        )
    scale = np.where(degenerate, 1.0, sd)
    return d.with_states(d.states / scale), scale


def append_reward_to_state(d: Dataset) -> Dataset:
    """Append ``R_{t-1}`` to ``S_t`` as an extra coordinate (0 at ``t=0``)."""
    prev = np.concatenate([np.zeros((d.n, 1)), d.rewards], axis=1)
    return d.with_states(np.concatenate([d.states, prev[..., None]], axis=2))


# ---------------------------------------------------------------------------
# Cross-fitting folds


@dataclass(frozen=True)
class FoldAssignment:
    fold_of: np.ndarray
    n_folds: int

    def members(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of == fold)

    def complement(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.fold_of != fold)

    @property
    def n(self) -> int:
        return len(self.fold_of)


def make_folds(n: int, n_folds: int, seed: int) -> FoldAssignment:
    """Randomly partition trajectory indices ``0..n-1`` into near-equal folds.

    ``n_folds`` larger than ``n`` is clamped to ``n`` (with a warning).
    """
    if n < 2:
        raise ValueError("cross-fitting needs at least two trajectories")
    if n_folds < 1:
        raise ValueError("n_folds must be positive")
    if n_folds > n:
        warnings.warn(f"n_folds={n_folds} exceeds n={n}; clamped to {n}", stacklevel=2)
        n_folds = n
    perm = np.random.default_rng(seed).permutation(n)
    fold_of = np.empty(n, dtype=np.int64)
    for f, chunk in enumerate(np.array_split(perm, n_folds)):
        fold_of[chunk] = f
    return FoldAssignment(fold_of, n_folds)
