import random

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from torch import nn

from bimrl.exceptions import ContractError, ShapeError
from bimrl.planner import (
    Level2Cell,
    ValueDecoder,
    level2_step,
    planner_loss,
    planner_pairs,
    predict_values,
    td_return,
    teacher_forced_actions,
)

from .oracles import brute_planner_pairs, central_difference, td_recursive

f64 = torch.float64
E, H2 = 3, 4


def test_td_return_examples():
    assert float(td_return([1.0, 0.0], 4.0, 0.5)) == pytest.approx(2.0)
    assert float(td_return([0.0, 0.0, 0.0], 3.3, 1.0)) == pytest.approx(3.3)
    assert float(td_return([0.4], 2.0, 0.9)) == pytest.approx(0.4 + 0.9 * 2.0)


def test_td_return_errors():
    with pytest.raises(ContractError):
        td_return([], 1.0, 0.9)
    with pytest.raises(ContractError):
        td_return([1.0], 1.0, 0.0)


@settings(max_examples=100, deadline=None)
@given(
    st.lists(st.floats(-10, 10), min_size=1, max_size=12),
    st.floats(-10, 10),
    st.floats(0.01, 1.0),
)
def test_td_return_matches_recursion(rewards, v, gamma):
    got = float(td_return(torch.tensor(rewards, dtype=f64), v, gamma))
    assert got == pytest.approx(td_recursive(rewards, v, gamma), abs=1e-6)


@pytest.mark.parametrize("T", range(2, 13))
@pytest.mark.parametrize("n", range(0, 5))
@pytest.mark.parametrize("k", [1, 3, 5])
def test_pair_enumeration_matches_brute_force(T, n, k):
    _, i, j = planner_pairs([T], n, k)
    assert sorted(zip(i.tolist(), j.tolist())) == sorted(brute_planner_pairs(T, n, k))


def test_teacher_forced_windows():
    acts = torch.tensor([[1, 2, 3, 4]])
    out = teacher_forced_actions(acts, torch.tensor([3]), 2)
    assert out.tolist() == [[[1, 2], [2, 3], [3, -1], [-1, -1]]]


def _instance(T=4, B=1, seed=0):
    g = torch.Generator().manual_seed(seed)
    return dict(
        obs_embed=torch.randn(B, T, E, generator=g, dtype=f64),
        actions=torch.randint(0, 7, (B, T), generator=g),
        rewards=torch.rand(B, T, generator=g, dtype=f64),
        h2_seq=torch.randn(B, T, H2, generator=g, dtype=f64),
        critic_values=torch.cat([torch.randn(B, T, generator=g, dtype=f64), torch.zeros(B, 1, dtype=f64)], 1),
        lengths=torch.tensor([T] * B),
    )


def _decoder(n=1):
    torch.manual_seed(0)
    return ValueDecoder(E, H2, 6, n_lookahead=n).double()


def test_loss_equals_hand_summed_residuals():
    n, k, gamma = 1, 2, 0.9
    inst = _instance(T=4)
    dec = _decoder(n)
    got = planner_loss(dec, n=n, k=k, gamma=gamma, **inst)
    pairs = brute_planner_pairs(4, n, k)
    total = 0.0
    for i, j in pairs:
        t = i + j
        target = td_recursive(inst["rewards"][0, t : t + k].tolist(), float(inst["critic_values"][0, t + k]), gamma)
        pred = dec(inst["obs_embed"][0, i], inst["actions"][0, i : i + j + 1], inst["h2_seq"][0, i])
        total += (float(pred) - target) ** 2
    assert float(got) == pytest.approx(total / len(pairs), abs=1e-10)


class _Lookup(nn.Module):
    """Returns a stored value for each (b, i, j); b and i are encoded in the embedding."""

    def __init__(self, table):
        super().__init__()
        self.table = table
        self.scale = nn.Parameter(torch.ones((), dtype=f64))

    def forward(self, obs_embed, window, h2):
        j = (window >= 0).sum(-1) - 1
        keys = zip(obs_embed[:, 0].long().tolist(), obs_embed[:, 1].long().tolist(), j.tolist())
        return self.scale * torch.tensor([self.table.get(key, 0.0) for key in keys], dtype=f64)


def _coded_instance(T=6, B=2):
    inst = _instance(T=T, B=B)
    for b in range(B):
        for i in range(T):
            inst["obs_embed"][b, i, :2] = torch.tensor([b, i], dtype=f64)
    return inst


def test_perfect_predictor_has_zero_loss():
    n, k, gamma = 2, 2, 0.95
    inst = _coded_instance()
    table = {}
    for b in range(2):
        for i, j in brute_planner_pairs(6, n, k):
            t = i + j
            table[(b, i, j)] = td_recursive(
                inst["rewards"][b, t : t + k].tolist(), float(inst["critic_values"][b, t + k]), gamma
            )
    assert float(planner_loss(_Lookup(table), n=n, k=k, gamma=gamma, **inst)) == pytest.approx(0.0, abs=1e-20)


def test_loss_is_quadratic_in_residual_scale():
    inst = _coded_instance()
    zero = _Lookup({})
    base = float(planner_loss(zero, n=1, k=3, gamma=0.9, **inst))
    c = 3.0
    scaled = dict(inst, rewards=inst["rewards"] * c, critic_values=inst["critic_values"] * c)
    assert float(planner_loss(zero, n=1, k=3, gamma=0.9, **scaled)) == pytest.approx(c * c * base, rel=1e-12)


def test_no_gradient_into_critic():
    inst = _instance(T=6)
    critic = nn.Linear(E, 1).double()
    values = critic(inst["obs_embed"]).squeeze(-1)
    inst["critic_values"] = torch.cat([values, torch.zeros(1, 1, dtype=f64)], 1)
    dec = _decoder(2)
    planner_loss(dec, n=2, k=2, gamma=0.9, **inst).backward()
    assert critic.weight.grad is None or torch.all(critic.weight.grad == 0)
    assert any(p.grad is not None and p.grad.abs().sum() > 0 for p in dec.parameters())


def test_gradient_matches_finite_differences():
    inst = _instance(T=6, B=2)
    inst["h2_seq"].requires_grad_(True)
    dec = _decoder(2)

    def f():
        return planner_loss(dec, n=2, k=3, gamma=0.9, **inst)

    f().backward()
    params = [p for p in dec.parameters()] + [inst["h2_seq"]]
    rng = random.Random(0)
    checked = 0
    for _ in range(26):
        p = rng.choice(params)
        idx = tuple(rng.randrange(s) for s in p.shape)
        num = central_difference(f, p, idx)
        ana = p.grad[idx].item()
        if max(abs(num), abs(ana)) < 1e-9:
            continue
        assert abs(ana - num) / max(abs(num), abs(ana)) < 1e-3
        checked += 1
    assert checked >= 20


def test_short_trajectory_rejected():
    inst = _instance(T=4)
    inst["lengths"] = torch.tensor([1])
    with pytest.raises(ContractError):
        planner_loss(_decoder(1), n=1, k=1, gamma=0.9, **inst)


def test_value_decoder_overfit_and_determinism():
    torch.manual_seed(0)
    dec = ValueDecoder(E, H2, 32, n_lookahead=2)
    x, a, h = torch.randn(E), torch.tensor([1, 5]), torch.randn(H2)
    v = predict_values(dec, x, a, h)
    assert v.shape == () and torch.isfinite(v)
    assert torch.equal(v, predict_values(dec, x, a, h))
    opt = torch.optim.Adam(dec.parameters(), lr=1e-2)
    for _ in range(300):
        opt.zero_grad()
        loss = (dec(x, a, h) - 0.37) ** 2
        loss.backward()
        opt.step()
    assert float(loss) < 1e-4


class TestLevel2:
    def test_shapes_padding_and_determinism(self):
        cell = Level2Cell(h1_dim=5, obs_embed_dim=E, hidden_dim=H2, n_lookahead=3)
        h = cell.initial_state(2)
        h1, x = torch.randn(2, 5), torch.randn(2, E)
        out = level2_step(cell, h, h1, x, torch.tensor([[1, 2, 3], [0, -1, -1]]))
        assert out.shape == (2, H2)
        empty = level2_step(cell, h, h1, x, None)
        padded = level2_step(cell, h, h1, x, torch.full((2, 3), -1))
        torch.testing.assert_close(empty, padded)
        torch.testing.assert_close(empty, level2_step(cell, h, h1, x, torch.zeros(2, 0, dtype=torch.long)))
        assert torch.equal(out, level2_step(cell, h, h1, x, torch.tensor([[1, 2, 3], [0, -1, -1]])))
        with pytest.raises(ShapeError):
            level2_step(cell, h, h1, x, torch.zeros(2, 4, dtype=torch.long))
