"""Forward and backward conditional characteristic function learners.

The forward learner estimates ``E[exp(i mu.S_{t+1}) | X_t = x]`` and the
backward learner ``E[exp(i nu.X_{t-1}) | X_t = x]``, where ``X_t = (S_t, A_t)``.
Both are forest-weighted averages of complex exponentials of the training
responses; the forest is grown once on the raw responses and reused for every
frequency.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._seeding import derive_seed
from .forest import Forest, ForestParams, fit_forest
from .trajectory import Dataset, FoldAssignment

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True, eq=False)
class CcfLearner:
    forest: Forest
    direction: str
    payload: np.ndarray

    def evaluate(self, points: np.ndarray, freqs: np.ndarray) -> np.ndarray:
        """CCF estimates at ``points`` (m, d) for each frequency row: (m, B) complex."""
        freqs = np.atleast_2d(np.asarray(freqs, dtype=float))
        if freqs.shape[1] != self.payload.shape[1]:
            raise ValueError(
                f"frequency dimension {freqs.shape[1]} != response dimension {self.payload.shape[1]}"
            )
        return self.forest.average(np.exp(1j * (self.payload @ freqs.T)), points)


def eval_ccf(learner, x: np.ndarray, freqs: np.ndarray) -> np.ndarray:
    """CCF values at a single point ``x`` for each frequency in ``freqs``."""
    x = np.asarray(x, dtype=float)
    return learner.evaluate(x[None, :], freqs)[0]


def forward_pairs(d: Dataset, index) -> tuple[np.ndarray, np.ndarray]:
    """Predictors ``X_{j,t-1}`` and responses ``S_{j,t}`` for ``j in index``, ``1<=t<=T``."""
    X = d.pairs[index]
    return X[:, :-1].reshape(-1, d.state_dim + 1), d.states[index][:, 1:].reshape(-1, d.state_dim)


def backward_pairs(d: Dataset, index) -> tuple[np.ndarray, np.ndarray]:
    """Predictors ``X_{j,t}`` and responses ``X_{j,t-1}`` for ``j in index``, ``1<=t<=T``."""
    X = d.pairs[index]
    return X[:, 1:].reshape(-1, d.state_dim + 1), X[:, :-1].reshape(-1, d.state_dim + 1)


def fit_forward(d: Dataset, index, params: ForestParams) -> CcfLearner:
    X, Y = forward_pairs(d, index)
    return CcfLearner(fit_forest(X, Y, params), FORWARD, Y)


def fit_backward(d: Dataset, index, params: ForestParams) -> CcfLearner:
    X, Y = backward_pairs(d, index)
    return CcfLearner(fit_forest(X, Y, params), BACKWARD, Y)


@dataclass(frozen=True, eq=False)
class CrossFitLearners:
    """Per-fold learners; ``forward[l]`` and ``backward[l]`` never saw fold ``l``."""

    forward: tuple
    backward: tuple
    folds: FoldAssignment


def cross_fit_learners(d: Dataset, folds: FoldAssignment, params: ForestParams = ForestParams()) -> CrossFitLearners:
    """Train one forward and one backward learner per fold on the other folds' trajectories."""
    if d.n < 2:
        raise ValueError("cross-fitting needs at least two trajectories")
    if folds.n != d.n:
        raise ValueError("fold assignment does not match the dataset")
    if folds.n_folds < 2:
        raise ValueError("cross-fitting needs at least two folds")
    fwd, bwd = [], []
    for fold in range(folds.n_folds):
        train = folds.complement(fold)
        fwd.append(fit_forward(d, train, params.with_seed(derive_seed(params.seed, "forward", fold))))
        bwd.append(fit_backward(d, train, params.with_seed(derive_seed(params.seed, "backward", fold))))
    return CrossFitLearners(tuple(fwd), tuple(bwd), folds)


def same_learners(forward, backward, folds: FoldAssignment) -> CrossFitLearners:
    """Use one fixed pair of learners for every fold (e.g. exact or deliberately wrong CCFs)."""
    return CrossFitLearners((forward,) * folds.n_folds, (backward,) * folds.n_folds, folds)


class ConstantCcf:
    """A CCF 'learner' that returns the same complex value everywhere."""

    def __init__(self, value: complex = 0.5):
        self.value = complex(value)

    def evaluate(self, points: np.ndarray, freqs: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        freqs = np.atleast_2d(freqs)
        return np.full((points.shape[0], freqs.shape[0]), self.value, dtype=complex)
