"""Level-1 world model: a recurrent cell plus state/reward/action decoders.

The decoders are trained with an n-step factorised trajectory likelihood.
For every anchor step ``i`` and look-back ``j <= min(n, i)`` the model
predicts, from the state ``s[i-j]``, the actions ``a[i-j..i]`` and a belief
sample ``m``:

* the successor state ``s'[i]`` (Gaussian / squared error),
* the reward ``r[i]`` of step ``i`` (Gaussian / squared error),
* the action ``a[i]`` from the state window ``s[i-j..i], s'[i]``
  (categorical / cross-entropy).

``s[i]`` is the observation the agent acted on at step ``i`` and ``s'[i]`` is
the observation returned by that step; they differ only at episode
boundaries, where the next input is the reset observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .beliefnet import one_hot_actions
from .envgrid import N_ACTIONS, OBS_SHAPE
from .exceptions import ContractError, ShapeError

OBS_DIM = int(np.prod(OBS_SHAPE))


@dataclass
class TrajectoryBatch:
    """Padded batch of task trajectories, batch-first.

    obs, next_obs: ``[B, T, 7, 7, 3]``; actions: ``[B, T]`` (long);
    rewards: ``[B, T]``; lengths: ``[B]``.
    """

    obs: torch.Tensor
    actions: torch.Tensor
    rewards: torch.Tensor
    next_obs: torch.Tensor
    lengths: torch.Tensor

    @property
    def batch_size(self):
        return self.obs.shape[0]

    @property
    def max_len(self):
        return self.obs.shape[1]

    def index(self, idx):
        return TrajectoryBatch(
            self.obs[idx], self.actions[idx], self.rewards[idx], self.next_obs[idx], self.lengths[idx]
        )


def term_count(length: int, n: int) -> int:
    """Number of ``(i, j)`` summands per double sum for one trajectory."""
    return sum(min(n, i) + 1 for i in range(length))


def nstep_pairs(lengths, n):
    """Enumerate ``(b, i, j)`` with ``0 <= i < lengths[b]`` and ``j <= min(n, i)``."""
    lengths = np.asarray(lengths, dtype=np.int64)
    T = int(lengths.max()) if lengths.size else 0
    b, i, j = np.meshgrid(np.arange(len(lengths)), np.arange(T), np.arange(n + 1), indexing="ij")
    keep = (i < lengths[:, None, None]) & (j <= np.minimum(n, i))
    return b[keep], i[keep], j[keep]


class MLP(nn.Sequential):
    def __init__(self, in_dim, hidden_dim, out_dim, zero_last=False):
        super().__init__(nn.Linear(in_dim, hidden_dim), nn.ReLU(), nn.Linear(hidden_dim, out_dim))
        if zero_last:
            nn.init.zeros_(self[-1].weight)
            nn.init.zeros_(self[-1].bias)


class WindowAggregator(nn.Module):
    """Summarise a right-padded window with a GRU, read at its last valid step."""

    def __init__(self, in_dim, hidden_dim):
        super().__init__()
        self.gru = nn.GRU(in_dim, hidden_dim, batch_first=True)

    def forward(self, x, lengths):
        out, _ = self.gru(x)
        idx = (lengths - 1).clamp(min=0).view(-1, 1, 1).expand(-1, 1, out.shape[-1])
        return out.gather(1, idx).squeeze(1)


class Level1Cell(nn.Module):
    def __init__(self, obs_embed_dim, belief_dim, hidden_dim, n_actions=N_ACTIONS):
        super().__init__()
        self.hidden_dim = hidden_dim
        self.n_actions = n_actions
        self.in_dim = obs_embed_dim + n_actions + 1 + belief_dim
        self.gru = nn.GRU(self.in_dim, hidden_dim, batch_first=True)

    def _inputs(self, obs_embed, action, reward, m):
        reward = torch.as_tensor(reward, dtype=obs_embed.dtype, device=obs_embed.device)
        a = one_hot_actions(torch.as_tensor(action, device=obs_embed.device), self.n_actions, obs_embed.dtype)
        x = torch.cat([obs_embed, a, reward.unsqueeze(-1), m], dim=-1)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(f"level-1 input width {x.shape[-1]}, expected {self.in_dim}")
        return x

    def initial_state(self, batch_size=1, device=None, dtype=None):
        dtype = dtype or self.gru.weight_hh_l0.dtype
        return torch.zeros(batch_size, self.hidden_dim, device=device, dtype=dtype)

    def step(self, state, obs_embed, action, reward, m):
        if state.shape[-1] != self.hidden_dim:
            raise ShapeError(f"h1 width {state.shape[-1]}, expected {self.hidden_dim}")
        x = self._inputs(obs_embed, action, reward, m)
        _, h = self.gru(x.unsqueeze(1), state.unsqueeze(0))
        return h.squeeze(0)

    def sequence(self, obs_embed, actions, rewards, m, state=None):
        x = self._inputs(obs_embed, actions, rewards, m)
        out, _ = self.gru(x, None if state is None else state.unsqueeze(0))
        return out


def level1_step(cell: Level1Cell, state, obs_embed, action, reward, m):
    return cell.step(state, obs_embed, action, reward, m)


def _batched(fn):
    """Let decoders accept a single unbatched query as well as a batch."""

    def wrapper(self, first, *args):
        if first.dim() == 1:
            args = [a.unsqueeze(0) if torch.is_tensor(a) else torch.as_tensor(a).unsqueeze(0) for a in args]
            return fn(self, first.unsqueeze(0), *args).squeeze(0)
        return fn(self, first, *args)

    wrapper.__doc__ = fn.__doc__
    return wrapper


class StateDecoder(nn.Module):
    def __init__(self, obs_embed_dim, latent_dim, hidden_dim, n_lookahead, n_actions=N_ACTIONS):
        super().__init__()
        self.n_lookahead = n_lookahead
        self.n_actions = n_actions
        self.agg = WindowAggregator(n_actions, hidden_dim)
        self.head = MLP(obs_embed_dim + hidden_dim + latent_dim, hidden_dim, OBS_DIM)

    def summarize(self, action_window):
        action_window = torch.as_tensor(action_window)
        lengths = (action_window >= 0).sum(-1)
        if (lengths < 1).any() or (lengths > self.n_lookahead + 1).any():
            raise ContractError(
                f"action window length must lie in [1, {self.n_lookahead + 1}], got {lengths.tolist()}"
            )
        x = one_hot_actions(action_window, self.n_actions, self.head[0].weight.dtype)
        return self.agg(x, lengths)

    def from_summary(self, anchor_embed, summary, m):
        out = self.head(torch.cat([anchor_embed, summary, m], dim=-1))
        return torch.sigmoid(out).view(*out.shape[:-1], *OBS_SHAPE)

    @_batched
    def forward(self, anchor_embed, action_window, m):
        """Predict ``s[i+1]`` in ``[0, 1]^{7x7x3}``; ``action_window`` is padded with -1."""
        return self.from_summary(anchor_embed, self.summarize(action_window), m)


class RewardDecoder(StateDecoder):
    def __init__(self, obs_embed_dim, latent_dim, hidden_dim, n_lookahead, n_actions=N_ACTIONS):
        super().__init__(obs_embed_dim, latent_dim, hidden_dim, n_lookahead, n_actions)
        self.head = MLP(obs_embed_dim + hidden_dim + latent_dim, hidden_dim, 1)

    def from_summary(self, anchor_embed, summary, m):
        return torch.sigmoid(self.head(torch.cat([anchor_embed, summary, m], dim=-1))).squeeze(-1)


class ActionDecoder(nn.Module):
    """Inverse-dynamics head over a window of state embeddings."""

    def __init__(self, obs_embed_dim, latent_dim, hidden_dim, n_actions=N_ACTIONS):
        super().__init__()
        self.agg = WindowAggregator(obs_embed_dim, hidden_dim)
        self.head = MLP(hidden_dim + latent_dim, hidden_dim, n_actions, zero_last=True)

    def summarize(self, state_windows, lengths=None):
        if state_windows.dim() != 3:
            raise ShapeError("state window must be [N, L, E]")
        if lengths is None:
            lengths = torch.full((state_windows.shape[0],), state_windows.shape[1], dtype=torch.long)
        if (lengths < 2).any():
            raise ContractError("state window must include at least s[i] and its successor")
        return self.agg(state_windows, lengths)

    def logits(self, summary, m):
        return self.head(torch.cat([summary, m], dim=-1))

    def forward(self, state_window_embeds, m, lengths=None):
        """Action probabilities from ``[N, L, E]`` (or ``[L, E]``) state windows."""
        single = state_window_embeds.dim() == 2
        if single:
            state_window_embeds, m = state_window_embeds.unsqueeze(0), m.unsqueeze(0)
        probs = F.softmax(self.logits(self.summarize(state_window_embeds, lengths), m), dim=-1)
        return probs.squeeze(0) if single else probs


class InitialStateDecoder(nn.Module):
    def __init__(self, latent_dim, hidden_dim):
        super().__init__()
        self.head = MLP(latent_dim, hidden_dim, OBS_DIM)

    def forward(self, m):
        out = torch.sigmoid(self.head(m))
        return out.view(*out.shape[:-1], *OBS_SHAPE)


class WorldModel(nn.Module):
    def __init__(self, obs_embed_dim, latent_dim, belief_dim, h1_dim, hidden_dim, n_lookahead):
        super().__init__()
        self.n_lookahead = n_lookahead
        self.level1 = Level1Cell(obs_embed_dim, belief_dim, h1_dim)
        self.state_decoder = StateDecoder(obs_embed_dim, latent_dim, hidden_dim, n_lookahead)
        self.reward_decoder = RewardDecoder(obs_embed_dim, latent_dim, hidden_dim, n_lookahead)
        self.action_decoder = ActionDecoder(obs_embed_dim, latent_dim, hidden_dim)
        self.initial_decoder = InitialStateDecoder(latent_dim, hidden_dim)

    def one_step_errors(self, obs_embed, action, reward, next_obs, next_embed, m):
        """Per-row (state, action, reward) negative log-likelihood surrogates
        for single transitions, as used by the curiosity bonus."""
        window = torch.as_tensor(action).view(-1, 1)
        pred_s = self.state_decoder(obs_embed, window, m)
        pred_r = self.reward_decoder(obs_embed, window, m)
        states = torch.stack([obs_embed, next_embed], dim=1)
        logits = self.action_decoder.logits(self.action_decoder.summarize(states), m)
        err_s = (pred_s - next_obs).pow(2).flatten(1).mean(-1)
        err_r = (pred_r - reward).pow(2)
        err_a = F.cross_entropy(logits, torch.as_tensor(action).long(), reduction="none")
        return err_s, err_a, err_r


def reconstruction_loss(world_model: WorldModel, traj: TrajectoryBatch, obs_embed, next_embed, beliefs, n=None, details=False):
    """Negative n-step factorised log-likelihood (up to constants).

    ``beliefs`` holds belief samples ``[B, P, d_m]``; each of the ``P``
    samples conditions a full reconstruction of its trajectory.  Each double
    sum is divided by its term count; the result is averaged over tasks and
    samples.
    """
    n = world_model.n_lookahead if n is None else n
    if n > world_model.n_lookahead:
        raise ContractError(f"n={n} exceeds the decoders' look-ahead {world_model.n_lookahead}")
    lengths = traj.lengths.cpu().numpy()
    if (lengths < 2).any():
        raise ContractError("trajectories must span at least 2 steps")
    if beliefs.dim() == 2:
        beliefs = beliefs.unsqueeze(1)
    B, P, _ = beliefs.shape
    if B != traj.batch_size:
        raise ShapeError(f"{B} belief rows for {traj.batch_size} trajectories")
    device = obs_embed.device

    b_np, i_np, j_np = nstep_pairs(lengths, n)
    b = torch.as_tensor(b_np, device=device)
    i = torch.as_tensor(i_np, device=device)
    j = torch.as_tensor(j_np, device=device)
    N = b.numel()
    span = torch.arange(n + 2, device=device)
    start = i - j

    # action windows a[i-j..i], right-padded with -1
    pos = (start.unsqueeze(1) + span[: n + 1]).clamp(max=traj.max_len - 1)
    win_valid = span[: n + 1].unsqueeze(0) <= j.unsqueeze(1)
    action_windows = torch.where(win_valid, traj.actions[b.unsqueeze(1), pos], torch.full_like(pos, -1))

    # state windows s[i-j..i] ++ s'[i]
    spos = (start.unsqueeze(1) + span).clamp(max=traj.max_len - 1)
    swin = obs_embed[b.unsqueeze(1), spos]
    is_next = (span.unsqueeze(0) == (j + 1).unsqueeze(1)).unsqueeze(-1)
    swin = torch.where(is_next, next_embed[b, i].unsqueeze(1), swin)
    swin = swin * (span.unsqueeze(0) <= (j + 1).unsqueeze(1)).unsqueeze(-1)

    anchors = obs_embed[b, start]
    s_summary = world_model.state_decoder.summarize(action_windows)
    r_summary = world_model.reward_decoder.summarize(action_windows)
    a_summary = world_model.action_decoder.summarize(swin, j + 2)

    m = beliefs[b]  # [N, P, d_m]
    expand = lambda x: x.unsqueeze(1).expand(-1, P, *x.shape[1:])  # noqa: E731
    pred_s = world_model.state_decoder.from_summary(expand(anchors), expand(s_summary), m)
    pred_r = world_model.reward_decoder.from_summary(expand(anchors), expand(r_summary), m)
    logits = world_model.action_decoder.logits(expand(a_summary), m)

    err_s = (pred_s - expand(traj.next_obs[b, i])).pow(2).flatten(2).mean(-1)
    err_r = (pred_r - expand(traj.rewards[b, i])).pow(2)
    err_a = F.cross_entropy(
        logits.reshape(N * P, -1), expand(traj.actions[b, i]).reshape(-1), reduction="none"
    ).view(N, P)

    counts = torch.zeros(B, dtype=obs_embed.dtype, device=device).index_add_(
        0, b, torch.ones(N, dtype=obs_embed.dtype, device=device)
    )

    def per_task(err):
        return torch.zeros(B, P, dtype=err.dtype, device=device).index_add_(0, b, err) / counts.unsqueeze(1)

    state_term = per_task(err_s)
    reward_term = per_task(err_r)
    action_term = per_task(err_a)
    init_term = (world_model.initial_decoder(beliefs) - traj.obs[:, :1]).pow(2).flatten(2).mean(-1)
    total = (state_term + reward_term + action_term + init_term).mean()
    if details:
        parts = {
            "state": state_term.mean().detach(),
            "reward": reward_term.mean().detach(),
            "action": action_term.mean().detach(),
            "initial": init_term.mean().detach(),
            "term_count": counts.detach(),
        }
        return total, parts
    return total
