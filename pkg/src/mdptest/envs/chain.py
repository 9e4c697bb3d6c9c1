"""Finite-state controlled Markov chains with closed-form conditional CFs."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from ..trajectory import Dataset

_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class ChainSpec:
    """A chain over ``m`` states with ``A`` actions.

    ``transitions`` has shape ``(m,) * order + (A, m)``: the last ``order`` states
    (oldest first) and the current action index the next-state distribution.
    ``policy[s, a]`` is the behavior probability of action ``a`` in state ``s``.
    ``state_values[s]`` is the p-vector recorded for state ``s``. ``initial`` is
    the distribution of the first state; ``None`` means the stationary law
    (order 1 only). Higher-order chains also draw their first ``order`` states
    from ``initial`` (uniform when ``None``) and discard ``burn_in`` steps.
    """

    state_values: np.ndarray
    transitions: np.ndarray
    policy: np.ndarray
    initial: np.ndarray | None = None
    order: int = 1
    burn_in: int = 0

    def __post_init__(self):
        sv = np.asarray(self.state_values, dtype=float)
        if sv.ndim == 1:
            sv = sv[:, None]
        P = np.asarray(self.transitions, dtype=float)
        pi = np.asarray(self.policy, dtype=float)
        m = sv.shape[0]
        if self.order < 1:
            raise ValueError("order must be >= 1")
        if P.shape[: self.order] != (m,) * self.order or P.ndim != self.order + 2 or P.shape[-1] != m:
            raise ValueError(f"transitions must have shape {(m,) * self.order} + (A, {m}), got {P.shape}")
        if pi.shape != (m, P.shape[-2]):
            raise ValueError(f"policy must have shape ({m}, {P.shape[-2]})")
        if np.any(P < 0) or np.any(np.abs(P.sum(-1) - 1) > _TOL):
            raise ValueError("transition rows must be probability vectors")
        if np.any(pi < 0) or np.any(np.abs(pi.sum(-1) - 1) > _TOL):
            raise ValueError("policy rows must be probability vectors")
        if len({tuple(r) for r in sv}) != m:
            raise ValueError("state values must be distinct")
        init = None
        if self.initial is not None:
            init = np.asarray(self.initial, dtype=float)
            if init.shape != (m,) or np.any(init < 0) or abs(init.sum() - 1) > _TOL:
                raise ValueError("initial must be a probability vector over states")
        object.__setattr__(self, "state_values", sv)
        object.__setattr__(self, "transitions", P)
        object.__setattr__(self, "policy", pi)
        object.__setattr__(self, "initial", init)

    @property
    def n_states(self) -> int:
        return self.state_values.shape[0]

    @property
    def n_actions(self) -> int:
        return self.policy.shape[1]

    def state_kernel(self) -> np.ndarray:
        """``K[s, s'] = sum_a policy[s, a] P[s, a, s']`` (order 1)."""
        self._need_order1()
        return np.einsum("sa,sat->st", self.policy, self.transitions)

    def stationary(self) -> np.ndarray:
        self._need_order1()
        vals, vecs = np.linalg.eig(self.state_kernel().T)
        k = int(np.argmin(np.abs(vals - 1.0)))
        v = np.real(vecs[:, k])
        v = np.abs(v) / np.abs(v).sum()
        return v

    def _need_order1(self):
        if self.order != 1:
            raise ValueError("only defined for first-order chains")

    # -- (de)serialization for the CLI --------------------------------------

    def to_dict(self) -> dict:
        return {
            "state_values": self.state_values.tolist(),
            "transitions": self.transitions.tolist(),
            "policy": self.policy.tolist(),
            "initial": None if self.initial is None else self.initial.tolist(),
            "order": self.order,
            "burn_in": self.burn_in,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ChainSpec":
        return cls(
            np.array(data["state_values"], dtype=float),
            np.array(data["transitions"], dtype=float),
            np.array(data["policy"], dtype=float),
            None if data.get("initial") is None else np.array(data["initial"], dtype=float),
            int(data.get("order", 1)),
            int(data.get("burn_in", 0)),
        )

    @classmethod
    def from_json(cls, path) -> "ChainSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def _draw(rng: np.random.Generator, probs: np.ndarray) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    u = rng.random(probs.shape[0])
    cdf = np.cumsum(probs, axis=1)
    cdf[:, -1] = 1.0
    return (u[:, None] > cdf).sum(axis=1)


def simulate_chain(spec: ChainSpec, N: int, T: int, seed: int) -> Dataset:
    """Simulate ``N`` trajectories of ``T+1`` steps (state indices mapped to values).

    Rewards are zero; the chain is an oracle for the test, not a control task.
    """
    if N < 1 or T < 0:
        raise ValueError("N >= 1 and T >= 0 required")
    rng = np.random.default_rng(seed)
    m, A, k = spec.n_states, spec.n_actions, spec.order
    if spec.initial is not None:
        init = spec.initial
    elif k == 1:
        init = spec.stationary()
    else:
        init = np.full(m, 1.0 / m)
    total = spec.burn_in + T + 1
    lead = k - 1
    s = np.empty((N, lead + total), dtype=np.int64)
    a = np.empty((N, lead + total), dtype=np.int64)
    for i in range(k):
        s[:, i] = _draw(rng, np.broadcast_to(init, (N, m)))
    for t in range(lead + total):
        if t >= k:
            hist = tuple(s[:, t - k + i] for i in range(k))
            s[:, t] = _draw(rng, spec.transitions[hist + (a[:, t - 1],)])
        a[:, t] = _draw(rng, spec.policy[s[:, t]])
    s = s[:, lead + spec.burn_in :]
    a = a[:, lead + spec.burn_in :]
    return Dataset(spec.state_values[s], a, np.zeros((N, T)), A)


class _ExactCcf:
    def __init__(self, spec: ChainSpec):
        self.spec = spec

    def _index(self, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        p = self.spec.state_values.shape[1]
        match = np.all(points[:, None, :p] == self.spec.state_values[None, :, :], axis=2)
        if not np.all(match.any(axis=1)):
            raise ValueError("query point has a state value outside the chain's state set")
        return match.argmax(axis=1), np.rint(points[:, p]).astype(np.int64)


class ExactForwardCcf(_ExactCcf):
    """``phi*(mu | s, a) = sum_{s'} P(s' | s, a) exp(i mu . v(s'))``."""

    def table(self, freqs: np.ndarray) -> np.ndarray:
        e = np.exp(1j * self.spec.state_values @ np.atleast_2d(freqs).T)  # (m, B)
        return np.einsum("sat,tb->sab", self.spec.transitions, e)

    def evaluate(self, points: np.ndarray, freqs: np.ndarray) -> np.ndarray:
        s, a = self._index(points)
        return self.table(freqs)[s, a]


class ExactBackwardCcf(_ExactCcf):
    """``psi*(nu | s, a) = E[exp(i nu . X_{t-1}) | S_t = s]`` under the stationary law.

    The current action carries no extra information about the past because it
    is drawn from ``policy[s]``.
    """

    def joint(self) -> np.ndarray:
        """``J[s0, a0, s] = P(X_{t-1} = (s0, a0), S_t = s)`` at stationarity."""
        spec = self.spec
        d = spec.stationary() if spec.initial is None else spec.initial
        return d[:, None, None] * spec.policy[:, :, None] * spec.transitions

    def table(self, freqs: np.ndarray) -> np.ndarray:
        spec = self.spec
        J = self.joint()
        cond = J / J.sum(axis=(0, 1), keepdims=True)
        m, A = spec.n_states, spec.n_actions
        prev = np.concatenate(
            [np.repeat(spec.state_values, A, axis=0), np.tile(np.arange(A, dtype=float), m)[:, None]],
            axis=1,
        )  # rows ordered (s0, a0)
        e = np.exp(1j * prev @ np.atleast_2d(freqs).T).reshape(m, A, -1)
        return np.einsum("xys,xyb->sb", cond, e)

    def evaluate(self, points: np.ndarray, freqs: np.ndarray) -> np.ndarray:
        s, _ = self._index(points)
        return self.table(freqs)[s]


def exact_ccfs(spec: ChainSpec) -> tuple[ExactForwardCcf, ExactBackwardCcf]:
    """Closed-form forward and backward CCFs of a first-order chain."""
    spec._need_order1()
    return ExactForwardCcf(spec), ExactBackwardCcf(spec)


def two_state_chain(stay: float = 0.9, values=(0.0, 1.0), action_bias: float = 0.0) -> ChainSpec:
    """Two states, two actions; the chain stays put w.p. ``stay``.

    ``action_bias`` shifts the stay probability by ``+bias`` under action 1 and
    ``-bias`` under action 0. The behavior policy picks action 1 w.p. 0.7 in
    state 1 and 0.3 in state 0.
    """
    P = np.empty((2, 2, 2))
    for s in range(2):
        for a in range(2):
            p_stay = stay + (action_bias if a == 1 else -action_bias)
            P[s, a, s] = p_stay
            P[s, a, 1 - s] = 1.0 - p_stay
    policy = np.array([[0.7, 0.3], [0.3, 0.7]])
    return ChainSpec(np.asarray(values, dtype=float)[:, None], P, policy)


def three_state_chain() -> ChainSpec:
    """A first-order chain over states {0, 1, 2} with action-dependent moves."""
    P = np.array(
        [
            [[0.6, 0.3, 0.1], [0.2, 0.5, 0.3]],
            [[0.3, 0.4, 0.3], [0.1, 0.3, 0.6]],
            [[0.5, 0.3, 0.2], [0.2, 0.2, 0.6]],
        ]
    )
    policy = np.array([[0.6, 0.4], [0.5, 0.5], [0.3, 0.7]])
    return ChainSpec(np.array([[0.0], [1.0], [2.0]]), P, policy)
