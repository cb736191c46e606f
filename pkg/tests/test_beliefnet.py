import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from bimrl.beliefnet import BeliefEncoder, BeliefPosterior, kl_to_prior, one_hot_actions, sample
from bimrl.exceptions import ShapeError

from .oracles import central_difference, mc_kl


def _post(mean, logvar, dtype=torch.float64):
    return BeliefPosterior(torch.tensor(mean, dtype=dtype), torch.tensor(logvar, dtype=dtype))


def test_posterior_shapes():
    enc = BeliefEncoder(obs_embed_dim=6, latent_dim=5, hidden_dim=8)
    h, post = enc.encode_step(enc.initial_state(3), torch.randn(3, 6), torch.tensor([-1, 0, 6]), torch.zeros(3))
    assert h.shape == (3, 8)
    assert post.mean.shape == post.logvar.shape == (3, 5)
    assert post.features.shape == (3, 10)


def test_shape_errors():
    enc = BeliefEncoder(obs_embed_dim=6, latent_dim=5, hidden_dim=8)
    with pytest.raises(ShapeError):
        enc.encode_step(enc.initial_state(1), torch.randn(1, 7), torch.tensor([0]), torch.zeros(1))
    with pytest.raises(ShapeError):
        sample(_post([0.0, 0.0], [0.0, 0.0]), torch.zeros(3))


def test_step_and_sequence_agree_and_are_causal():
    torch.manual_seed(1)
    enc = BeliefEncoder(obs_embed_dim=4, latent_dim=3, hidden_dim=8).double()
    T = 6
    e = torch.randn(1, T, 4, dtype=torch.float64)
    a = torch.randint(-1, 7, (1, T))
    r = torch.rand(1, T, dtype=torch.float64)
    seq = enc.encode_sequence(e, a, r)
    h = enc.initial_state(1)
    for t in range(T):
        h, post = enc.encode_step(h, e[:, t], a[:, t], r[:, t])
        torch.testing.assert_close(post.mean, seq.mean[:, t])
        torch.testing.assert_close(post.logvar, seq.logvar[:, t])
    # changing the future leaves the past untouched
    e2 = e.clone()
    e2[:, 4:] = torch.randn(1, 2, 4, dtype=torch.float64)
    seq2 = enc.encode_sequence(e2, a, r)
    torch.testing.assert_close(seq2.mean[:, :4], seq.mean[:, :4], rtol=0, atol=0)
    assert not torch.allclose(seq2.mean[:, 4:], seq.mean[:, 4:])


def test_logvar_is_clamped():
    enc = BeliefEncoder(obs_embed_dim=2, latent_dim=2, hidden_dim=4)
    with torch.no_grad():
        enc.fc_logvar.bias.fill_(1e3)
    _, post = enc.encode_step(enc.initial_state(1), torch.zeros(1, 2), torch.tensor([0]), torch.zeros(1))
    assert torch.all(post.logvar == 10.0)


def test_kl_known_values():
    assert float(kl_to_prior(_post([0.0] * 4, [0.0] * 4))) == 0.0
    assert float(kl_to_prior(_post([1.0], [0.0]))) == pytest.approx(0.5)


@pytest.mark.parametrize("seed", range(5))
def test_kl_matches_monte_carlo(seed):
    rng = np.random.default_rng(seed)
    mean = rng.uniform(-2, 2, size=4)
    logvar = rng.uniform(-2, 2, size=4)
    est = mc_kl(mean, logvar, 17, seed)  # 131072 >= 1e5 samples
    assert float(kl_to_prior(_post(mean, logvar))) == pytest.approx(est, abs=0.01)


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=1, max_size=6),
    st.lists(st.floats(-10, 10), min_size=1, max_size=6),
)
def test_kl_non_negative(mean, logvar):
    d = min(len(mean), len(logvar))
    assert float(kl_to_prior(_post(mean[:d], logvar[:d]))) >= -1e-12


def test_kl_gradient_matches_finite_differences():
    rng = np.random.default_rng(0)
    mean = torch.tensor(rng.uniform(-2, 2, 8), requires_grad=True)
    logvar = torch.tensor(rng.uniform(-2, 2, 8), requires_grad=True)

    def f():
        return kl_to_prior(BeliefPosterior(mean, logvar))

    f().backward()
    for t in (mean, logvar):
        for idx in range(8):
            num = central_difference(f, t, idx)
            assert abs(t.grad[idx].item() - num) <= 1e-3 * max(abs(num), 1e-8)


def test_sample_zero_noise_and_floor():
    post = _post([0.3, -1.2], [0.7, -0.4])
    torch.testing.assert_close(sample(post, torch.zeros(2, dtype=torch.float64)), post.mean)
    floor = _post([0.3, -1.2], [-1e6, -1e6])
    noise = torch.tensor([2.0, -3.0], dtype=torch.float64)
    # exp(-10 / 2) is the smallest scale the clamp allows
    assert torch.all((sample(floor, noise) - floor.mean).abs() <= math.exp(-5) * noise.abs() + 1e-15)


def test_sample_monte_carlo_mean():
    g = torch.Generator().manual_seed(0)
    post = _post([0.5, -1.0, 2.0], [0.2, -0.3, 1.0])
    n = 100_000
    draws = sample(BeliefPosterior(post.mean.expand(n, 3), post.logvar.expand(n, 3)),
                   torch.randn(n, 3, generator=g, dtype=torch.float64))
    sigma = torch.exp(0.5 * post.logvar)
    assert torch.all((draws.mean(0) - post.mean).abs() <= 3 * sigma / math.sqrt(n))


def test_sample_is_reparameterised():
    mean = torch.zeros(3, requires_grad=True)
    logvar = torch.zeros(3, requires_grad=True)
    sample(BeliefPosterior(mean, logvar), torch.ones(3)).sum().backward()
    assert torch.all(mean.grad == 1) and torch.all(logvar.grad == 0.5)


def test_one_hot_padding():
    out = one_hot_actions(torch.tensor([-1, 2]), 4)
    assert out.tolist() == [[0, 0, 0, 0], [0, 0, 1, 0]]
