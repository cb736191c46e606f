"""Recurrent task-inference encoder with a diagonal-Gaussian posterior."""

from __future__ import annotations

from typing import NamedTuple

import torch
from torch import nn
from torch.nn import functional as F

from .exceptions import ShapeError

LOGVAR_MIN, LOGVAR_MAX = -10.0, 10.0


class BeliefPosterior(NamedTuple):
    mean: torch.Tensor
    logvar: torch.Tensor

    @property
    def features(self) -> torch.Tensor:
        """``mean ++ logvar``, the deterministic belief fed to the policy."""
        return torch.cat([self.mean, self.logvar], dim=-1)


def one_hot_actions(actions: torch.Tensor, n_actions: int, dtype=None) -> torch.Tensor:
    """One-hot encode, mapping negative ids (no action / padding) to zeros."""
    actions = torch.as_tensor(actions)
    valid = (actions >= 0).unsqueeze(-1)
    out = F.one_hot(actions.clamp(min=0).long(), n_actions)
    return (out * valid).to(dtype or torch.get_default_dtype())


class BeliefEncoder(nn.Module):
    """GRU over ``(obs_embed, previous action, previous reward)``.

    The same ``nn.GRU`` serves both single steps during rollouts and whole
    sequences when losses are recomputed.
    """

    def __init__(self, obs_embed_dim, latent_dim=10, hidden_dim=128, n_actions=7, input_dim=None):
        super().__init__()
        self.obs_embed_dim = obs_embed_dim
        self.latent_dim = latent_dim
        self.hidden_dim = hidden_dim
        self.n_actions = n_actions
        input_dim = input_dim or hidden_dim
        self.fc_in = nn.Linear(obs_embed_dim + n_actions + 1, input_dim)
        self.gru = nn.GRU(input_dim, hidden_dim, batch_first=True)
        self.fc_mu = nn.Linear(hidden_dim, latent_dim)
        self.fc_logvar = nn.Linear(hidden_dim, latent_dim)

    def initial_state(self, batch_size=1, device=None, dtype=None):
        dtype = dtype or self.fc_mu.weight.dtype
        return torch.zeros(batch_size, self.hidden_dim, device=device, dtype=dtype)

    def _inputs(self, obs_embed, action, reward):
        if obs_embed.shape[-1] != self.obs_embed_dim:
            raise ShapeError(
                f"obs_embed has width {obs_embed.shape[-1]}, expected {self.obs_embed_dim}"
            )
        reward = torch.as_tensor(reward, dtype=obs_embed.dtype, device=obs_embed.device)
        if reward.shape != obs_embed.shape[:-1]:
            raise ShapeError(f"reward shape {tuple(reward.shape)} vs batch {tuple(obs_embed.shape[:-1])}")
        a = one_hot_actions(torch.as_tensor(action, device=obs_embed.device), self.n_actions, obs_embed.dtype)
        x = torch.cat([obs_embed, a, reward.unsqueeze(-1)], dim=-1)
        return F.relu(self.fc_in(x))

    def _posterior(self, h):
        logvar = self.fc_logvar(h).clamp(LOGVAR_MIN, LOGVAR_MAX)
        return BeliefPosterior(self.fc_mu(h), logvar)

    def encode_step(self, state, obs_embed, action, reward):
        """One recurrent step; ``state`` and ``obs_embed`` are ``[B, *]``.

        ``action`` is the previous action (``-1`` at task start) and
        ``reward`` the reward it produced.
        """
        if state.shape[-1] != self.hidden_dim:
            raise ShapeError(f"state has width {state.shape[-1]}, expected {self.hidden_dim}")
        x = self._inputs(obs_embed, action, reward)
        out, h = self.gru(x.unsqueeze(1), state.unsqueeze(0))
        h = h.squeeze(0)
        return h, self._posterior(h)

    def encode_sequence(self, obs_embed, actions, rewards, state=None):
        """Run over ``[B, T, E]`` inputs; returns posteriors shaped ``[B, T, d_m]``."""
        x = self._inputs(obs_embed, actions, rewards)
        h0 = None if state is None else state.unsqueeze(0)
        out, _ = self.gru(x, h0)
        return self._posterior(out)


def kl_to_prior(post: BeliefPosterior) -> torch.Tensor:
    """KL(N(mean, exp(logvar)) || N(0, I)), summed over the last dimension."""
    if post.mean.shape != post.logvar.shape:
        raise ShapeError(f"mean {tuple(post.mean.shape)} vs logvar {tuple(post.logvar.shape)}")
    return 0.5 * (post.mean.pow(2) + post.logvar.exp() - 1.0 - post.logvar).sum(-1)


def sample(post: BeliefPosterior, noise: torch.Tensor) -> torch.Tensor:
    """Reparameterised draw ``mean + exp(logvar / 2) * noise``."""
    if noise.shape[-1] != post.mean.shape[-1]:
        raise ShapeError(f"noise width {noise.shape[-1]} vs latent width {post.mean.shape[-1]}")
    logvar = post.logvar.clamp(LOGVAR_MIN, LOGVAR_MAX)
    return post.mean + torch.exp(0.5 * logvar) * noise
