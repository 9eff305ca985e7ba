import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from swarmadmm.graph import CommGraph
from swarmadmm.oracle import ConsensusLSQInstance, centralized_consensus_lsq, grid_minimize


def inst(targets, weights):
    n = len(targets)
    return ConsensusLSQInstance(np.reshape(targets, (n, -1)), np.reshape(weights, (n, -1)),
                                CommGraph.complete(n))


def test_examples():
    assert centralized_consensus_lsq(inst([1.0, 3.0], [1.0, 1.0])) == pytest.approx([2.0])
    assert centralized_consensus_lsq(inst([0.0, 4.0], [1.0, 3.0])) == pytest.approx([3.0])
    assert centralized_consensus_lsq(inst([[7.0, -1.0]], [[2.0, 0.5]])) == pytest.approx([7.0, -1.0])


def test_zero_weight_channel_rejected():
    with pytest.raises(ValueError):
        centralized_consensus_lsq(inst([[1.0, 2.0], [3.0, 4.0]], [[1.0, 0.0], [1.0, 0.0]]))


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2**31 - 1))
def test_permutation_invariant(n, seed):
    rng = np.random.default_rng(seed)
    a = ConsensusLSQInstance.random(rng, n, 3, CommGraph.complete(n))
    perm = rng.permutation(n)
    b = ConsensusLSQInstance(a.targets[perm], a.weights[perm], a.graph)
    assert np.allclose(centralized_consensus_lsq(a), centralized_consensus_lsq(b), atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 5), st.integers(0, 2**31 - 1))
def test_agent_at_optimum_changes_nothing(n, seed):
    rng = np.random.default_rng(seed)
    a = ConsensusLSQInstance.random(rng, n, 2, CommGraph.complete(n))
    opt = centralized_consensus_lsq(a)
    b = ConsensusLSQInstance(np.vstack([a.targets, opt]), np.vstack([a.weights, rng.uniform(0.5, 2, 2)]),
                             CommGraph.complete(n + 1))
    assert np.allclose(centralized_consensus_lsq(b), opt, atol=1e-10)


def test_grid_quadratic():
    x, v = grid_minimize(lambda x: (x - 1.0) ** 2, 0.0, 2.0, 1e-3)
    assert abs(x[0] - 1.0) <= 1e-3


def test_grid_hinge_zero_region():
    d_min = 0.5
    x, v = grid_minimize(lambda s: max(0.0, d_min - s) ** 2, 0.0, 2.0, 1e-3)
    assert v == 0.0 and x[0] >= d_min - 1e-12


def test_grid_dimension_cap():
    with pytest.raises(ValueError):
        grid_minimize(lambda x: 0.0, np.zeros(4), np.ones(4), 0.5)


def test_grid_2d():
    x, _ = grid_minimize(lambda p: (p[0] - 0.3) ** 2 + (p[1] + 0.2) ** 2, [-1, -1], [1, 1], 0.01)
    assert np.allclose(x, [0.3, -0.2], atol=0.01)
