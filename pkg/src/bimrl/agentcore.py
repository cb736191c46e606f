"""Agent network, meta-episode rollouts and the combined training loss.

Per environment step the agent

1. embeds the observation,
2. updates the task belief (encoder) and the level-1 / level-2 cells,
3. reads episodic and Hebbian memory with the previous controller state
   and mixes the two readouts,
4. advances the controller and samples an action from the actor head,
5. writes the event ``(obs_embed ++ belief, h3)`` into episodic memory and
   computes the intrinsic reward of the transition.

At each episode end the episodic store is consolidated into the Hebbian
matrix and cleared.  Encoder, recurrent states and the Hebbian matrix carry
over between the four episodes of a task.

During updates the controller is re-run one step from the stored previous
state (``h3_prev``); memory readouts are recomputed from the stored events so
gradients reach the attention projections and the meta-plasticity scalars.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .beliefnet import BeliefEncoder, BeliefPosterior, kl_to_prior, sample
from .curiosity import CuriosityWeights, curiosity_term, intrinsic_reward, newness
from .envgrid import EPISODES_PER_TASK, N_ACTIONS, OBS_SHAPE, GridEnv
from .exceptions import ShapeError, StaleBatchError
from .neuromem import (
    EpisodicAttention,
    EpisodicMemory,
    HebbianStore,
    MemoryCombiner,
    MetaPlasticity,
    consolidate,
    hebbian_update,
    read_episodic,
    read_hebbian,
)
from .planner import Level2Cell, ValueDecoder, planner_loss, teacher_forced_actions
from .worldmodel import MLP, TrajectoryBatch, WorldModel, reconstruction_loss


@dataclass
class AgentConfig:
    """Network sizes and per-step / loss hyper-parameters."""

    obs_embed_dim: int = 64
    latent_dim: int = 10
    encoder_dim: int = 128
    h1_dim: int = 64
    h2_dim: int = 64
    h3_dim: int = 64
    hidden_dim: int = 64
    n_lookahead: int = 3
    recon_n: Optional[int] = None
    td_k: int = 5
    gamma: float = 0.95
    gae_lambda: float = 0.95
    knn_k: int = 10
    alpha_default: float = 1.0
    beta: float = 0.01
    lambda_state: float = 1 / 3
    lambda_action: float = 1 / 3
    lambda_reward: float = 1 / 3
    top_fraction: float = 0.25
    memory_capacity: int = 256
    n_heads: int = 4
    head_dim: int = 16
    use_memory: bool = True
    persist_h3: bool = True
    planner_intrinsic: bool = True
    clip: float = 0.2
    c_value: float = 0.5
    c_ent: float = 0.01
    c_elbo: float = 1.0
    c_plan: float = 0.5
    elbo_stride: Optional[int] = None
    embed_aux_grad: bool = False

    @property
    def belief_dim(self):
        return 2 * self.latent_dim

    @property
    def key_dim(self):
        return self.obs_embed_dim + self.belief_dim

    @property
    def curiosity_weights(self):
        return CuriosityWeights.from_raw(self.lambda_state, self.lambda_action, self.lambda_reward)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


class ObservationEmbedder(nn.Module):
    """Small conv net over the ``7x7x3`` view, tanh-bounded output."""

    def __init__(self, embed_dim=64):
        super().__init__()
        self.embed_dim = embed_dim
        self.conv = nn.Sequential(
            nn.Conv2d(3, 16, 2), nn.ReLU(),
            nn.Conv2d(16, 32, 2), nn.ReLU(),
            nn.Conv2d(32, 32, 2), nn.ReLU(),
        )
        self.fc = nn.Linear(32 * 4 * 4, embed_dim)

    def forward(self, obs):
        obs = torch.as_tensor(obs, dtype=self.fc.weight.dtype)
        if tuple(obs.shape[-3:]) != OBS_SHAPE:
            raise ShapeError(f"observation shape {tuple(obs.shape[-3:])}, expected {OBS_SHAPE}")
        lead = obs.shape[:-3]
        x = obs.reshape(-1, *OBS_SHAPE).permute(0, 3, 1, 2).contiguous()
        x = self.conv(x).flatten(1)
        return torch.tanh(self.fc(x)).view(*lead, self.embed_dim)


class BIMRLNet(nn.Module):
    def __init__(self, cfg: AgentConfig):
        super().__init__()
        self.cfg = cfg
        E, dm = cfg.obs_embed_dim, cfg.latent_dim
        self.embedder = ObservationEmbedder(E)
        self.encoder = BeliefEncoder(E, dm, cfg.encoder_dim)
        self.world_model = WorldModel(E, dm, cfg.belief_dim, cfg.h1_dim, cfg.hidden_dim, cfg.n_lookahead)
        self.level2 = Level2Cell(cfg.h1_dim, E, cfg.h2_dim, cfg.n_lookahead)
        self.value_decoder = ValueDecoder(E, cfg.h2_dim, cfg.hidden_dim, cfg.n_lookahead)
        self.episodic_attention = EpisodicAttention(cfg.h3_dim, cfg.key_dim, cfg.h3_dim, cfg.n_heads, cfg.head_dim)
        self.combiner = MemoryCombiner(cfg.h3_dim, cfg.h3_dim, cfg.head_dim * 2)
        self.meta = MetaPlasticity()
        self.controller = nn.GRUCell(cfg.h2_dim + E + cfg.belief_dim + cfg.h3_dim, cfg.h3_dim)
        self.actor = MLP(cfg.h3_dim, cfg.hidden_dim, N_ACTIONS, zero_last=True)
        self.critic = MLP(cfg.h3_dim, cfg.hidden_dim, 1)

    @property
    def level1(self):
        return self.world_model.level1

    def parameter_groups(self):
        """Acting path vs. model-learning path; gradients are clipped per group."""
        model = ("encoder", "world_model", "level2", "value_decoder")
        groups = {"policy": [], "model": []}
        for name, p in self.named_parameters():
            groups["model" if name.split(".")[0] in model else "policy"].append(p)
        return groups

    def embed(self, obs):
        return self.embedder(obs)

    def controller_step(self, h3, h2, obs_embed, m, memory_readout):
        x = torch.cat([h2, obs_embed, m, memory_readout], dim=-1)
        if x.shape[-1] != self.controller.input_size:
            raise ShapeError(f"controller input width {x.shape[-1]}, expected {self.controller.input_size}")
        lead = x.shape[:-1]
        out = self.controller(x.reshape(-1, x.shape[-1]), h3.reshape(-1, h3.shape[-1]))
        return out.reshape(*lead, -1)

    def act(self, h3):
        """``(policy probabilities [.., 7], value [..])``."""
        return F.softmax(self.actor(h3), dim=-1), self.critic(h3).squeeze(-1)

    def policy_logits(self, h3):
        return self.actor(h3), self.critic(h3).squeeze(-1)


def embed_observation(net: BIMRLNet, obs):
    return net.embed(obs)


def controller_step(net: BIMRLNet, h3, h2, obs_embed, m, memory_readout):
    return net.controller_step(h3, h2, obs_embed, m, memory_readout)


def act(net: BIMRLNet, h3):
    return net.act(h3)


@dataclass
class HierarchyState:
    enc: torch.Tensor
    h1: torch.Tensor
    h2: torch.Tensor
    h3: torch.Tensor

    @classmethod
    def zeros(cls, net: BIMRLNet, batch_size, dtype=None):
        dtype = dtype or net.controller.weight_hh.dtype
        z = lambda d: torch.zeros(batch_size, d, dtype=dtype)  # noqa: E731
        return cls(z(net.encoder.hidden_dim), z(net.cfg.h1_dim), z(net.cfg.h2_dim), z(net.cfg.h3_dim))


_STEP_FIELDS = (
    "obs", "next_obs", "actions", "prev_actions", "prev_rewards", "logp", "values",
    "rewards_ext", "rewards_int", "h2", "h3_prev", "h3", "belief", "keys", "readout",
    "ep_index", "ep_step", "episode_done", "alpha", "r_cur",
)


@dataclass
class RolloutBatch:
    """Per-step records ``[B, T, ...]`` of a batch of meta-episodes.

    Padded steps (``t >= lengths[b]``) hold zeros.  ``cons_*`` hold the
    consolidated events of each episode, ``[B, 4, U, ...]``.
    """

    obs: torch.Tensor
    next_obs: torch.Tensor
    actions: torch.Tensor
    prev_actions: torch.Tensor
    prev_rewards: torch.Tensor
    logp: torch.Tensor
    values: torch.Tensor
    rewards_ext: torch.Tensor
    rewards_int: torch.Tensor
    h2: torch.Tensor
    h3_prev: torch.Tensor
    h3: torch.Tensor
    belief: torch.Tensor
    keys: torch.Tensor
    readout: torch.Tensor
    ep_index: torch.Tensor
    ep_step: torch.Tensor
    episode_done: torch.Tensor
    alpha: torch.Tensor
    r_cur: torch.Tensor
    lengths: torch.Tensor
    cons_keys: torch.Tensor
    cons_values: torch.Tensor
    cons_mask: torch.Tensor
    episode_returns: torch.Tensor
    episode_lengths: torch.Tensor
    task_seeds: list = field(default_factory=list)
    advantages: Optional[torch.Tensor] = None
    returns: Optional[torch.Tensor] = None

    @property
    def batch_size(self):
        return self.obs.shape[0]

    @property
    def valid(self):
        T = self.obs.shape[1]
        return torch.arange(T).unsqueeze(0) < self.lengths.unsqueeze(1)

    @property
    def frames(self):
        return int(self.lengths.sum())

    def index(self, idx):
        idx = torch.as_tensor(idx, dtype=torch.long)
        T = int(self.lengths[idx].max())
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            if f.name == "task_seeds":
                out[f.name] = [v[i] for i in idx.tolist()] if v else []
            elif v is None:
                out[f.name] = None
            elif f.name in _STEP_FIELDS or f.name in ("advantages", "returns"):
                out[f.name] = v[idx, :T]
            else:
                out[f.name] = v[idx]
        return RolloutBatch(**out)

    def trajectory(self) -> TrajectoryBatch:
        return TrajectoryBatch(self.obs, self.actions, self.rewards_ext, self.next_obs, self.lengths)


def _pad_stack(rows, dtype=None):
    """Stack per-step lists of ``[B, ...]`` tensors into ``[B, T, ...]``."""
    return torch.stack(rows, dim=1) if dtype is None else torch.stack(rows, dim=1).to(dtype)


@torch.no_grad()
def meta_rollout(net: BIMRLNet, tasks, generator: torch.Generator, greedy=False) -> RolloutBatch:
    """Run the four-episode protocol on every task of ``tasks`` in lockstep."""
    cfg = net.cfg
    B = len(tasks)
    dtype = net.controller.weight_hh.dtype
    envs = [GridEnv(t) for t in tasks]
    obs = np.stack([env.reset(0) for env in envs])
    state = HierarchyState.zeros(net, B, dtype)
    prev_a = torch.full((B,), -1, dtype=torch.long)
    prev_r = torch.zeros(B, dtype=dtype)
    ep_idx = np.zeros(B, dtype=np.int64)
    ep_step = np.zeros(B, dtype=np.int64)
    active = np.ones(B, dtype=bool)
    lengths = np.zeros(B, dtype=np.int64)
    ep_returns = np.zeros((B, EPISODES_PER_TASK))
    ep_lengths = np.zeros((B, EPISODES_PER_TASK), dtype=np.int64)

    memory = EpisodicMemory(B, cfg.memory_capacity, cfg.key_dim, cfg.h3_dim, dtype=dtype)
    hebb = HebbianStore(B, cfg.key_dim, cfg.h3_dim, dtype=dtype)
    meta = net.meta()
    weights = cfg.curiosity_weights
    consolidated = [[None] * EPISODES_PER_TASK for _ in range(B)]
    rec = {name: [] for name in _STEP_FIELDS}
    zero_readout = torch.zeros(B, cfg.h3_dim, dtype=dtype)

    max_steps = max(t.H_plus for t in tasks)
    for _ in range(max_steps):
        if not active.any():
            break
        act_mask = torch.as_tensor(active)
        x = torch.as_tensor(obs, dtype=dtype)
        e = net.embed(x)
        enc, post = net.encoder.encode_step(state.enc, e, prev_a, prev_r)
        belief = post.features
        h1 = net.level1.step(state.h1, e, prev_a, prev_r, belief)
        h2 = net.level2.step(state.h2, h1, e, None)
        key = torch.cat([e, belief], dim=-1)
        h3_prev = state.h3
        if cfg.use_memory:
            epi, _ = read_episodic(net.episodic_attention, memory, h3_prev, rows=act_mask)
            heb = read_hebbian(hebb.W, key)
            readout, _ = net.combiner(h3_prev, epi, heb)
        else:
            readout = zero_readout
        h3 = net.controller_step(h3_prev, h2, e, belief, readout)
        logits, value = net.policy_logits(h3)
        probs = F.softmax(logits, dim=-1)
        if greedy:
            action = probs.argmax(-1)
        else:
            action = torch.multinomial(probs, 1, generator=generator).squeeze(-1)
        logp = F.log_softmax(logits, dim=-1).gather(-1, action.unsqueeze(-1)).squeeze(-1)

        next_obs = obs.copy()
        r_ext = np.zeros(B)
        ep_done = np.zeros(B, dtype=bool)
        task_done = np.zeros(B, dtype=bool)
        for b in np.nonzero(active)[0]:
            tr = envs[b].step(int(action[b]))
            next_obs[b] = tr.obs
            r_ext[b] = tr.reward
            ep_done[b] = tr.episode_done
            task_done[b] = tr.task_done
        r_ext_t = torch.as_tensor(r_ext, dtype=dtype)

        if cfg.use_memory:
            memory.write(key, h3, torch.as_tensor(ep_step), rows=act_mask)

        # intrinsic reward of the transition just taken
        next_x = torch.as_tensor(next_obs, dtype=dtype)
        e_next = net.embed(next_x)
        noise = torch.randn(post.mean.shape, generator=generator, dtype=dtype)
        m = sample(post, noise)
        err_s, err_a, err_r = net.world_model.one_step_errors(e, action, r_ext_t, next_x, e_next, m)
        r_cur = curiosity_term(err_s, err_a, err_r, weights)
        alpha = newness(torch.cat([e_next, belief], dim=-1), memory, cfg.knn_k, cfg.alpha_default)
        r_int = intrinsic_reward(alpha, r_cur, cfg.beta)

        step_vals = dict(
            obs=x, next_obs=next_x, actions=action, prev_actions=prev_a, prev_rewards=prev_r,
            logp=logp, values=value, rewards_ext=r_ext_t, rewards_int=r_int, h2=h2, h3_prev=h3_prev,
            h3=h3, belief=belief, keys=key, readout=readout,
            ep_index=torch.as_tensor(ep_idx.copy()), ep_step=torch.as_tensor(ep_step.copy()),
            episode_done=torch.as_tensor(ep_done), alpha=alpha, r_cur=r_cur,
        )
        for name, v in step_vals.items():
            v = v.clone() if torch.is_tensor(v) else torch.as_tensor(v)
            v[~act_mask] = 0
            rec[name].append(v)

        lengths[active] += 1
        ep_returns[active, ep_idx[active]] += r_ext[active]
        ep_lengths[active, ep_idx[active]] += 1

        done_rows = np.nonzero(active & ep_done)[0]
        if cfg.use_memory and len(done_rows):
            H = torch.as_tensor(ep_step + 1)
            applied = consolidate(memory, hebb, cfg.top_fraction, H, meta, rows=torch.as_tensor(done_rows))
            for b in done_rows:
                consolidated[b][ep_idx[b]] = applied[b]

        h3_next = h3.clone()
        if not cfg.persist_h3 and len(done_rows):
            h3_next[torch.as_tensor(done_rows)] = 0.0
        state = HierarchyState(enc, h1, h2, h3_next)
        prev_a = torch.where(act_mask, action, prev_a)
        prev_r = torch.where(act_mask, r_ext_t, prev_r)
        for b in np.nonzero(active)[0]:
            if ep_done[b]:
                if task_done[b]:
                    active[b] = False
                    continue
                ep_idx[b] += 1
                ep_step[b] = 0
                next_obs[b] = envs[b].reset(int(ep_idx[b]))
            else:
                ep_step[b] += 1
        obs = next_obs

    batch = {name: torch.stack(v, dim=1) for name, v in rec.items()}
    cons_keys, cons_values, cons_mask = _pack_consolidation(consolidated, cfg, dtype)
    return RolloutBatch(
        **batch,
        lengths=torch.as_tensor(lengths),
        cons_keys=cons_keys,
        cons_values=cons_values,
        cons_mask=cons_mask,
        episode_returns=torch.as_tensor(ep_returns),
        episode_lengths=torch.as_tensor(ep_lengths),
        task_seeds=[t.seed for t in tasks],
    )


def _pack_consolidation(consolidated, cfg, dtype):
    B = len(consolidated)
    U = max([len(c[0]) for row in consolidated for c in row if c is not None] + [1])
    keys = torch.zeros(B, EPISODES_PER_TASK, U, cfg.key_dim, dtype=dtype)
    values = torch.zeros(B, EPISODES_PER_TASK, U, cfg.h3_dim, dtype=dtype)
    mask = torch.zeros(B, EPISODES_PER_TASK, U, dtype=torch.bool)
    for b, row in enumerate(consolidated):
        for e, c in enumerate(row):
            if c is None:
                continue
            n = len(c[0])
            keys[b, e, :n] = c[0]
            values[b, e, :n] = c[1]
            mask[b, e, :n] = True
    return keys, values, mask


def compute_gae(rewards, values, lengths, gamma, lam):
    """GAE within each task; the task end is terminal.  ``[B, T]`` inputs."""
    B, T = rewards.shape
    adv = torch.zeros_like(rewards)
    last = torch.zeros(B, dtype=rewards.dtype)
    valid = torch.arange(T).unsqueeze(0) < lengths.unsqueeze(1)
    for t in reversed(range(T)):
        nxt = values[:, t + 1] if t + 1 < T else torch.zeros(B, dtype=rewards.dtype)
        nxt = torch.where(t + 1 < lengths, nxt, torch.zeros_like(nxt))
        delta = rewards[:, t] + gamma * nxt - values[:, t]
        last = torch.where(valid[:, t], delta + gamma * lam * last, torch.zeros_like(last))
        adv[:, t] = last
    return adv, adv + values * valid


def hebbian_snapshots(net: BIMRLNet, batch: RolloutBatch):
    """Differentiable replay of consolidation: ``W`` in force during each
    episode, ``[B, 4, d_val, d_key]``."""
    cfg = net.cfg
    gp, gm, wm = net.meta()
    B = batch.batch_size
    W = torch.zeros(B, cfg.h3_dim, cfg.key_dim, dtype=batch.keys.dtype)
    snaps = []
    for e in range(EPISODES_PER_TASK):
        snaps.append(W)
        for u in range(batch.cons_mask.shape[2]):
            m = batch.cons_mask[:, e, u]
            if not m.any():
                continue
            W_new = hebbian_update(W, batch.cons_keys[:, e, u], batch.cons_values[:, e, u], gp, gm, wm)
            W = torch.where(m.view(B, 1, 1), W_new, W)
    return torch.stack(snaps, dim=1)


def memory_readout_sequence(net: BIMRLNet, batch: RolloutBatch):
    """Recompute every step's combined memory readout ``[B, T, d_val]``."""
    cfg = net.cfg
    B, T = batch.actions.shape
    if not cfg.use_memory:
        return torch.zeros(B, T, cfg.h3_dim, dtype=batch.h3.dtype)
    valid = batch.valid
    t = torch.arange(T)
    same_ep = batch.ep_index.unsqueeze(2) == batch.ep_index.unsqueeze(1)
    causal = (t.view(1, T, 1) > t.view(1, 1, T)) & (t.view(1, 1, T) >= t.view(1, T, 1) - cfg.memory_capacity)
    mask = same_ep & causal & valid.unsqueeze(1) & valid.unsqueeze(2)
    epi, _ = net.episodic_attention(batch.h3_prev, batch.keys, batch.h3, mask)
    W = hebbian_snapshots(net, batch)
    W_t = W[torch.arange(B).unsqueeze(1), batch.ep_index.clamp(max=EPISODES_PER_TASK - 1)]
    heb = (W_t @ batch.keys.unsqueeze(-1)).squeeze(-1)
    readout, _ = net.combiner(batch.h3_prev, epi, heb)
    return readout * valid.unsqueeze(-1)


def elbo_points(lengths, stride):
    """Belief time points per task: ``0, stride, 2 stride, ...`` below the
    task length, padded by repeating the last point.  ``[B, P]``."""
    T = int(lengths.max())
    P = max(1, math.ceil(T / stride))
    pts = torch.arange(P) * stride
    return torch.minimum(pts.unsqueeze(0), (lengths - 1).unsqueeze(1))


def total_loss(net: BIMRLNet, batch: RolloutBatch, noise=None, coeffs=None, details=False, check_stale=True):
    """Clipped policy loss + value regression - entropy bonus
    + c_elbo (reconstruction + KL) + c_plan planner loss.

    ``noise`` is the standard-normal draw for the belief samples used in the
    reconstruction term, shaped like :func:`elbo_points` ``+ (d_m,)``.
    ``coeffs`` may override any of clip/c_value/c_ent/c_elbo/c_plan.
    """
    cfg = replace(net.cfg, **(coeffs or {}))
    valid = batch.valid
    nvalid = valid.sum().clamp(min=1)
    dtype = batch.h3.dtype
    n_recon = cfg.n_lookahead if cfg.recon_n is None else cfg.recon_n

    e = net.embed(batch.obs)
    e_aux = e if cfg.embed_aux_grad else e.detach()
    parts = {}
    total = torch.zeros((), dtype=dtype)

    need_model = cfg.c_elbo != 0 or cfg.c_plan != 0
    if need_model:
        post = net.encoder.encode_sequence(e_aux, batch.prev_actions, batch.prev_rewards)

    if cfg.c_elbo != 0:
        e_next = net.embed(batch.next_obs)
        if not cfg.embed_aux_grad:
            e_next = e_next.detach()
        kl = (kl_to_prior(post) * valid).sum() / nvalid
        pts = elbo_points(batch.lengths, cfg.elbo_stride or _episode_horizon(batch))
        rows = torch.arange(batch.batch_size).unsqueeze(1)
        sel = BeliefPosterior(post.mean[rows, pts], post.logvar[rows, pts])
        if noise is None:
            noise = torch.zeros_like(sel.mean)
        recon = reconstruction_loss(net.world_model, batch.trajectory(), e_aux, e_next, sample(sel, noise), n=n_recon)
        total = total + cfg.c_elbo * (recon + kl)
        parts.update(recon=recon.detach(), kl=kl.detach())

    if cfg.c_plan != 0:
        belief = post.features.detach()
        h1 = net.level1.sequence(e_aux, batch.prev_actions, batch.prev_rewards, belief)
        next_actions = teacher_forced_actions(batch.actions, batch.lengths, cfg.n_lookahead)
        h2 = net.level2.sequence(h1, e_aux, next_actions)
        rewards = batch.rewards_ext + (batch.rewards_int if cfg.planner_intrinsic else 0.0)
        critic = torch.cat([batch.values * valid, torch.zeros(batch.batch_size, 1, dtype=dtype)], dim=1)
        plan = planner_loss(
            net.value_decoder, e_aux, batch.actions, rewards, h2, critic, batch.lengths,
            cfg.n_lookahead, cfg.td_k, cfg.gamma,
        )
        total = total + cfg.c_plan * plan
        parts["planner"] = plan.detach()

    readout = memory_readout_sequence(net, batch)
    h3 = net.controller_step(batch.h3_prev, batch.h2, e, batch.belief, readout)
    logits, value = net.policy_logits(h3)
    logp_all = F.log_softmax(logits, dim=-1)
    logp = logp_all.gather(-1, batch.actions.unsqueeze(-1)).squeeze(-1)
    entropy = -(logp_all.exp() * logp_all).sum(-1)

    ratio = torch.exp(logp - batch.logp) * valid
    mean_ratio = ratio.sum() / nvalid
    if check_stale and float(mean_ratio.detach()) > 10.0:
        raise StaleBatchError(f"mean importance ratio {float(mean_ratio.detach()):.3g} exceeds 10")
    adv = batch.advantages if batch.advantages is not None else torch.zeros_like(logp)
    surr = torch.minimum(ratio * adv, torch.clamp(ratio, 1 - cfg.clip, 1 + cfg.clip) * adv)
    policy_loss = -(surr * valid).sum() / nvalid
    returns = batch.returns if batch.returns is not None else torch.zeros_like(value)
    value_loss = ((value - returns).pow(2) * valid).sum() / nvalid
    ent = (entropy * valid).sum() / nvalid
    total = total + policy_loss + cfg.c_value * value_loss - cfg.c_ent * ent

    if details:
        with torch.no_grad():
            log_ratio = (logp - batch.logp) * valid
            parts.update(
                policy=policy_loss.detach(),
                value=value_loss.detach(),
                entropy=ent.detach(),
                approx_kl=((ratio - 1 - log_ratio) * valid).sum() / nvalid,
                clipfrac=(((ratio - 1).abs() > cfg.clip) & valid).sum() / nvalid,
            )
        return total, parts
    return total


def _episode_horizon(batch: RolloutBatch):
    return max(1, int(batch.episode_lengths.max()))
