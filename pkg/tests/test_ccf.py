import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mdptest.ccf import (
    CcfLearner,
    ConstantCcf,
    backward_pairs,
    cross_fit_learners,
    eval_ccf,
    fit_backward,
    fit_forward,
    forward_pairs,
)
from mdptest.envs import exact_ccfs, simulate_chain, two_state_chain
from mdptest.forest import Forest, ForestParams, Tree, fit_forest
from mdptest.trajectory import Dataset, make_folds

SMALL = ForestParams(n_trees=10, max_depth=6)


def _chain_data(N=12, T=30, seed=0):
    return simulate_chain(two_state_chain(), N, T, seed)


def test_pairs_alignment():
    states = np.arange(4, dtype=float).reshape(1, 4, 1)
    d = Dataset(states, [[1, 0, 1, 0]], np.zeros((1, 3)), 2)
    X, Y = forward_pairs(d, [0])
    assert X.tolist() == [[0, 1], [1, 0], [2, 1]]  # X_{t-1}
    assert Y.tolist() == [[1], [2], [3]]  # S_t
    Xb, Yb = backward_pairs(d, [0])
    assert Xb.tolist() == [[1, 0], [2, 1], [3, 0]]  # X_t
    assert Yb.tolist() == [[0, 1], [1, 0], [2, 1]]  # X_{t-1}


def test_zero_frequency_exactly_one():
    d = _chain_data()
    fwd = fit_forward(d, np.arange(d.n), SMALL)
    bwd = fit_backward(d, np.arange(d.n), SMALL)
    pts = d.pairs.reshape(-1, 2)[:50]
    assert np.all(fwd.evaluate(pts, np.zeros((1, 1))) == 1 + 0j)
    assert np.all(bwd.evaluate(pts, np.zeros((1, 2))) == 1 + 0j)


def test_two_point_weighted_sum():
    # one leaf holding two pairs with payloads 0 and pi: the CCF at mu=1 is 0
    tree = Tree(
        np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([0]), np.array([0, 0]), 1
    )
    learner = CcfLearner(Forest((tree,), 2, 1, ForestParams(n_trees=1)), "forward", np.array([[0.0], [np.pi]]))
    val = eval_ccf(learner, np.array([0.3]), np.array([[1.0]]))
    assert abs(val[0]) < 1e-15


def test_dimension_mismatch():
    d = _chain_data()
    fwd = fit_forward(d, np.arange(d.n), SMALL)
    with pytest.raises(ValueError, match="frequency dimension"):
        fwd.evaluate(np.zeros((1, 2)), np.zeros((1, 2)))
    with pytest.raises(ValueError, match="dimension"):
        fwd.evaluate(np.zeros((1, 3)), np.zeros((1, 1)))


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_modulus_bound(seed):
    rng = np.random.default_rng(seed)
    d = Dataset(rng.normal(size=(4, 15, 2)), rng.integers(0, 3, (4, 15)), np.zeros((4, 14)), 3)
    bwd = fit_backward(d, np.arange(4), ForestParams(n_trees=5, seed=seed))
    vals = bwd.evaluate(rng.normal(size=(20, 3)) * 3, rng.normal(size=(8, 3)) * 5)
    assert np.all(np.abs(vals) <= 1 + 1e-12)


def test_cross_fit_shapes_and_isolation():
    d = _chain_data(N=6, T=40)
    folds = make_folds(6, 3, seed=1)
    cf = cross_fit_learners(d, folds, SMALL)
    assert len(cf.forward) == 3 and len(cf.backward) == 3
    for l in range(3):
        # each learner was trained on the 4 trajectories outside fold l
        assert cf.forward[l].forest.n_train == 4 * 40
        assert cf.backward[l].forest.n_train == 4 * 40
        expected = np.concatenate([d.states[j, 1:] for j in folds.complement(l)])
        assert np.array_equal(cf.forward[l].payload, expected)


def test_minimal_split():
    d = _chain_data(N=2, T=30)
    cf = cross_fit_learners(d, make_folds(2, 2, 0), SMALL)
    assert all(f.forest.n_train == 30 for f in cf.forward + cf.backward)


def test_cross_fit_preconditions():
    d = _chain_data(N=4)
    with pytest.raises(ValueError, match="two folds"):
        cross_fit_learners(d, make_folds(4, 1, 0), SMALL)
    with pytest.raises(ValueError, match="does not match"):
        cross_fit_learners(d, make_folds(5, 2, 0), SMALL)


def test_constant_learner():
    c = ConstantCcf(0.5)
    assert c.evaluate(np.zeros((3, 2)), np.zeros((4, 1))).shape == (3, 4)


def test_forward_learner_is_consistent():
    spec = two_state_chain(stay=0.8, action_bias=0.1)
    phi, _ = exact_ccfs(spec)
    mus = np.random.default_rng(11).normal(size=(5, 1))
    errs = []
    for N in (10, 100):  # 500 and 5000 transitions with T=50
        e = []
        for rep in range(3):
            d = simulate_chain(spec, N, 50, seed=1000 * N + rep)
            X, _ = forward_pairs(d, np.arange(N))
            learner = fit_forward(d, np.arange(N), ForestParams(n_trees=50, seed=rep))
            e.append(np.mean(np.abs(learner.evaluate(X, mus) - phi.evaluate(X, mus)) ** 2))
        errs.append(np.mean(e))
    assert errs[1] < errs[0]


def test_backward_oracle_matches_frequencies():
    spec = two_state_chain(stay=0.7, action_bias=0.15)
    _, psi = exact_ccfs(spec)
    d = simulate_chain(spec, 400, 50, seed=3)
    nus = np.array([[0.4, -1.1], [2.0, 0.5]])
    X, Y = backward_pairs(d, np.arange(d.n))
    for s in (0.0, 1.0):
        mask = X[:, 0] == s
        emp = np.exp(1j * Y[mask] @ nus.T).mean(axis=0)
        exact = psi.evaluate(np.array([[s, 0.0]]), nus)[0]
        assert np.max(np.abs(emp - exact)) < 0.02
