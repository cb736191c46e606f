import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bimrl.curiosity import (
    CuriosityWeights,
    curiosity_term,
    intrinsic_reward,
    kth_distance,
    newness,
    project_to_simplex,
)
from bimrl.neuromem import EpisodicMemory

from .oracles import kth_by_sort

THIRD = CuriosityWeights()


def test_curiosity_term_examples():
    assert curiosity_term(0.0, 0.0, 0.0, THIRD) == 0.0
    assert curiosity_term(3.0, 0.0, 0.0, CuriosityWeights(1.0, 0.0, 0.0)) == 3.0
    assert curiosity_term(1.0, 2.0, 3.0, THIRD) == pytest.approx(2.0)
    assert curiosity_term(-5.0, -1.0, 0.0, THIRD) == 0.0


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        CuriosityWeights(0.5, 0.5, 0.5)
    w = CuriosityWeights.from_raw(2.0, 1.0, 1.0)
    assert w.lambda_state + w.lambda_action + w.lambda_reward == pytest.approx(1.0)
    assert w.lambda_state > w.lambda_action == w.lambda_reward


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-100, 100), min_size=1, max_size=8))
def test_simplex_projection(v):
    p = project_to_simplex(v)
    assert p.min() >= 0 and p.sum() == pytest.approx(1.0)
    assert np.allclose(project_to_simplex(p), p)


def test_newness_examples():
    keys = torch.tensor([[0.0, 0.0], [3.0, 4.0]])
    assert float(newness(torch.tensor([0.0, 0.0]), keys, k=1)) == 0.0
    assert float(newness(torch.tensor([0.0, 0.0]), keys, k=2)) == pytest.approx(5.0)
    assert float(newness(torch.tensor([0.0, 0.0]), keys, k=3, default=1.0)) == 1.0
    empty = EpisodicMemory(1, 4, 2, 3)
    assert float(newness(torch.tensor([1.0, 1.0]), empty, k=1, default=0.7)) == pytest.approx(0.7)
    with pytest.raises(ValueError):
        newness(torch.zeros(2), keys, k=0)


@pytest.mark.parametrize("seed", range(10))
def test_kth_distance_matches_sort(seed):
    rng = np.random.default_rng(seed)
    S, d = int(rng.integers(1, 20)), int(rng.integers(1, 6))
    keys = rng.normal(size=(S, d))
    q = rng.normal(size=d)
    for k in range(1, S + 1):
        got = float(newness(torch.tensor(q), torch.tensor(keys), k))
        assert got == kth_by_sort(q, keys, k) or abs(got - kth_by_sort(q, keys, k)) < 1e-12


def test_kth_distance_ignores_invalid_slots():
    keys = torch.tensor([[[0.0], [1.0], [100.0]]])
    valid = torch.tensor([[True, True, False]])
    assert float(kth_distance(torch.tensor([[0.0]]), keys, valid, 2)) == 1.0
    assert float(kth_distance(torch.tensor([[0.0]]), keys, valid, 3, default=9.0)) == 9.0


def test_newness_reads_episodic_memory():
    mem = EpisodicMemory(1, 8, 2, 3)
    for key in ([0.0, 0.0], [3.0, 4.0]):
        mem.write(torch.tensor(key), torch.zeros(3), 0)
    assert float(newness(torch.tensor([0.0, 0.0]), mem, k=2)) == pytest.approx(5.0)
    # a revisited observation with k=1 earns nothing
    assert float(intrinsic_reward(newness(torch.tensor([3.0, 4.0]), mem, k=1), 2.5, beta=0.1)) == 0.0


def test_intrinsic_reward_examples():
    assert intrinsic_reward(0.0, 10.0) == 0.0
    assert intrinsic_reward(3.0, 0.0) == 0.0
    assert intrinsic_reward(2.0, 1.5, beta=0.1) == pytest.approx(0.3)


@settings(max_examples=100, deadline=None)
@given(st.floats(-10, 10), st.floats(-10, 10), st.floats(0, 10), st.floats(0, 1))
def test_intrinsic_reward_non_negative_and_monotone(alpha, cur, bump, beta):
    r = intrinsic_reward(alpha, cur, beta)
    assert r >= 0
    assert intrinsic_reward(alpha + bump, cur, beta) >= r - 1e-12
    assert intrinsic_reward(alpha, cur + bump, beta) >= r - 1e-12


def test_tensor_inputs_are_floored_elementwise():
    out = intrinsic_reward(torch.tensor([-1.0, 2.0]), torch.tensor([1.0, -3.0]))
    assert out.tolist() == [0.0, 0.0]
