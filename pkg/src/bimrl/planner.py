"""Level-2 planner: recurrent cell plus an n-step value decoder.

The value decoder ``V_psi(s[i], a[i..i+j], h2[i])`` regresses onto the
k-step TD return that starts at step ``t = i + j``::

    G = r[t] + gamma r[t+1] + ... + gamma^(k-1) r[t+k-1] + gamma^k V_theta(s[t+k])

with ``r[t]`` the reward produced by action ``a[t]`` and ``V_theta`` the
critic.  Pairs whose window runs past the end of the task
(``i + j + k > T``) are dropped.
"""

from __future__ import annotations

import numpy as np
import torch
from torch import nn

from .beliefnet import one_hot_actions
from .envgrid import N_ACTIONS
from .exceptions import ContractError, ShapeError
from .worldmodel import MLP, WindowAggregator


def td_return(rewards, bootstrap_value, gamma):
    """k-step return of ``rewards`` bootstrapped with ``bootstrap_value``."""
    rewards = torch.as_tensor(rewards)
    if rewards.numel() == 0 or rewards.shape[-1] == 0:
        raise ContractError("td_return needs at least one reward")
    if not 0.0 < gamma <= 1.0:
        raise ContractError(f"gamma must lie in (0, 1], got {gamma}")
    k = rewards.shape[-1]
    discounts = gamma ** torch.arange(k, dtype=rewards.dtype, device=rewards.device)
    return (rewards * discounts).sum(-1) + gamma**k * torch.as_tensor(bootstrap_value, dtype=rewards.dtype)


class Level2Cell(nn.Module):
    """GRU over ``(h1, obs_embed, next n actions)``; missing actions are zeros."""

    def __init__(self, h1_dim, obs_embed_dim, hidden_dim, n_lookahead, n_actions=N_ACTIONS):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.n_lookahead = n_lookahead
        self.n_actions = n_actions
        self.in_dim = h1_dim + obs_embed_dim + max(n_lookahead, 1) * n_actions
        self.gru = nn.GRU(self.in_dim, hidden_dim, batch_first=True)

    def initial_state(self, batch_size=1, device=None, dtype=None):
        dtype = dtype or self.gru.weight_hh_l0.dtype
        return torch.zeros(batch_size, self.hidden_dim, device=device, dtype=dtype)

    def encode_actions(self, next_actions, batch_shape, dtype, device):
        """``next_actions`` is ``[..., L]`` with ``L <= n`` (or None); -1 pads."""
        width = max(self.n_lookahead, 1)
        if next_actions is None:
            next_actions = torch.full((*batch_shape, 0), -1, dtype=torch.long, device=device)
        next_actions = torch.as_tensor(next_actions, device=device)
        if next_actions.shape[-1] > self.n_lookahead:
            raise ShapeError(f"at most {self.n_lookahead} next actions, got {next_actions.shape[-1]}")
        pad = width - next_actions.shape[-1]
        if pad:
            fill = torch.full((*next_actions.shape[:-1], pad), -1, dtype=torch.long, device=device)
            next_actions = torch.cat([next_actions.long(), fill], dim=-1)
        return one_hot_actions(next_actions, self.n_actions, dtype).flatten(-2)

    def _inputs(self, h1, obs_embed, next_actions):
        acts = self.encode_actions(next_actions, obs_embed.shape[:-1], obs_embed.dtype, obs_embed.device)
        x = torch.cat([h1, obs_embed, acts], dim=-1)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"level-2 input width {x.shape[-1]}, expected {self.in_dim}")
        return x

    def step(self, state, h1, obs_embed, next_actions=None):
        if state.shape[-1] != self.hidden_dim:
            raise ShapeError(f"h2 width {state.shape[-1]}, expected {self.hidden_dim}")
        _, h = self.gru(self._inputs(h1, obs_embed, next_actions).unsqueeze(1), state.unsqueeze(0))
        return h.squeeze(0)

    def sequence(self, h1, obs_embed, next_actions=None, state=None):
        out, _ = self.gru(self._inputs(h1, obs_embed, next_actions), None if state is None else state.unsqueeze(0))
        return out


def level2_step(cell: Level2Cell, state, h1, obs_embed, next_actions=None):
    return cell.step(state, h1, obs_embed, next_actions)


def teacher_forced_actions(actions, lengths, n):
    """``[B, T, n]`` windows ``a[t..t+n-1]`` (-1 past the trajectory end)."""
    B, T = actions.shape
    if n == 0:
        return actions.new_full((B, T, 0), -1)
    idx = torch.arange(T, device=actions.device).view(T, 1) + torch.arange(n, device=actions.device)
    gathered = actions[:, idx.clamp(max=T - 1)]
    valid = idx.unsqueeze(0) < lengths.view(B, 1, 1).to(actions.device)
    return torch.where(valid, gathered, torch.full_like(gathered, -1))


class ValueDecoder(nn.Module):
    """``V_psi(s_i, a_{i..i+j}, h2)``; distinct parameters from the critic."""

    def __init__(self, obs_embed_dim, h2_dim, hidden_dim, n_lookahead, n_actions=N_ACTIONS):
        super().__init__()
        self.n_lookahead = n_lookahead
        self.n_actions = n_actions
        self.agg = WindowAggregator(n_actions, hidden_dim)
        self.head = MLP(obs_embed_dim + hidden_dim + h2_dim, hidden_dim, 1)

    def forward(self, obs_embed, action_window, h2):
        single = obs_embed.dim() == 1
        if single:
            obs_embed, h2 = obs_embed.unsqueeze(0), h2.unsqueeze(0)
            action_window = torch.as_tensor(action_window).unsqueeze(0)
        action_window = torch.as_tensor(action_window)
        lengths = (action_window >= 0).sum(-1)
        if (lengths < 1).any() or (lengths > self.n_lookahead + 1).any():
            raise ContractError(f"action window length must lie in [1, {self.n_lookahead + 1}]")
        summary = self.agg(one_hot_actions(action_window, self.n_actions, obs_embed.dtype), lengths)
        v = self.head(torch.cat([obs_embed, summary, h2], dim=-1)).squeeze(-1)
        return v.squeeze(0) if single else v


def predict_values(decoder: ValueDecoder, obs_embed, action_window, h2):
    return decoder(obs_embed, action_window, h2)


def planner_pairs(lengths, n, k):
    """Valid ``(b, i, j)``: ``0 <= j <= n`` and ``i + j + k <= T_b``."""
    lengths = np.asarray(lengths, dtype=np.int64)
    T = int(lengths.max()) if lengths.size else 0
    b, i, j = np.meshgrid(np.arange(len(lengths)), np.arange(T), np.arange(n + 1), indexing="ij")
    keep = i + j + k <= lengths[:, None, None]
    return b[keep], i[keep], j[keep]


def planner_targets(rewards, critic_values, lengths, b, i, j, k, gamma):
    """k-step returns from ``t = i + j``; ``critic_values`` is ``[B, T+1]``
    where entry ``T_b`` is the terminal bootstrap value."""
    t = i + j
    offs = torch.arange(k, device=rewards.device)
    r = rewards[b.unsqueeze(1), (t.unsqueeze(1) + offs)]
    boot = critic_values[b, t + k]
    return td_return(r, boot, gamma)


def planner_loss(decoder: ValueDecoder, obs_embed, actions, rewards, h2_seq, critic_values, lengths, n, k, gamma):
    """Mean squared error of ``V_psi`` against detached k-step returns.

    Shapes: obs_embed ``[B, T, E]``, actions/rewards ``[B, T]``, h2_seq
    ``[B, T, d_h2]``, critic_values ``[B, T+1]``, lengths ``[B]``.
    """
    lengths_np = lengths.cpu().numpy()
    if (lengths_np < 2).any():
        raise ContractError("trajectories must span at least 2 steps")
    if critic_values.shape[1] < rewards.shape[1] + 1:
        raise ShapeError("critic_values must carry a bootstrap entry at index T")
    b_np, i_np, j_np = planner_pairs(lengths_np, n, k)
    if b_np.size == 0:
        return obs_embed.sum() * 0.0
    device = obs_embed.device
    b, i, j = (torch.as_tensor(x, device=device) for x in (b_np, i_np, j_np))
    span = torch.arange(n + 1, device=device)
    pos = (i.unsqueeze(1) + span).clamp(max=actions.shape[1] - 1)
    window = torch.where(span.unsqueeze(0) <= j.unsqueeze(1), actions[b.unsqueeze(1), pos], torch.full_like(pos, -1))
    with torch.no_grad():
        target = planner_targets(rewards, critic_values.detach(), lengths, b, i, j, k, gamma)
    pred = decoder(obs_embed[b, i], window, h2_seq[b, i])
    return (pred - target).pow(2).mean()
