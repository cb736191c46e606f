"""Dual memory: a slot-based episodic store and a Hebbian associative store.

Episodic slots hold ``(key, value)`` events written during an episode.
Reads use multi-head scaled dot-product attention with the controller state
as query; every read adds its (head-averaged) weights into the slots'
``attention_mass``.  At the end of an episode each slot gets a reference
time ``mass / (H - written_at)``, the top fraction is consolidated into the
Hebbian matrix with the rule::

    dW[k, l] = g_plus * (w_max - W[k, l]) * v[k] * key[l] - g_minus * W[k, l] * key[l]**2

and the episodic store is cleared.  The Hebbian matrix survives across the
episodes of a task and is zeroed when a new task starts.

All stores are batched: row ``b`` is the private memory of environment
``b``.  Single-environment use is the ``batch_size=1`` case and accepts
unbatched vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn
from torch.nn import functional as F

from .exceptions import ShapeError


@dataclass
class MemorySlot:
    key: torch.Tensor
    value: torch.Tensor
    written_at: int
    attention_mass: float


def _rows(rows, batch_size, device):
    if rows is None:
        return torch.ones(batch_size, dtype=torch.bool, device=device)
    rows = torch.as_tensor(rows, device=device)
    if rows.dtype != torch.bool:
        mask = torch.zeros(batch_size, dtype=torch.bool, device=device)
        mask[rows.long()] = True
        return mask
    return rows


class EpisodicMemory:
    """Ring buffer of event slots; writing past capacity evicts the oldest."""

    def __init__(self, batch_size, capacity, key_dim, value_dim, dtype=torch.float32, device=None):
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.batch_size = batch_size
        self.capacity = capacity
        self.key_dim = key_dim
        self.value_dim = value_dim
        self.keys = torch.zeros(batch_size, capacity, key_dim, dtype=dtype, device=device)
        self.values = torch.zeros(batch_size, capacity, value_dim, dtype=dtype, device=device)
        self.written_at = torch.full((batch_size, capacity), -1, dtype=torch.long, device=device)
        self.attention_mass = torch.zeros(batch_size, capacity, dtype=dtype, device=device)
        self.n_written = torch.zeros(batch_size, dtype=torch.long, device=device)

    @property
    def size(self) -> torch.Tensor:
        return self.n_written.clamp(max=self.capacity)

    @property
    def valid(self) -> torch.Tensor:
        return torch.arange(self.capacity, device=self.keys.device).unsqueeze(0) < self.size.unsqueeze(1)

    def __len__(self):
        if self.batch_size != 1:
            raise TypeError("len() is only defined for a single-row memory")
        return int(self.size[0])

    def write(self, key, value, step, rows=None):
        if key.dim() == 1:
            key, value = key.unsqueeze(0), value.unsqueeze(0)
        if key.shape != (self.batch_size, self.key_dim):
            raise ShapeError(f"key shape {tuple(key.shape)}, expected {(self.batch_size, self.key_dim)}")
        if value.shape != (self.batch_size, self.value_dim):
            raise ShapeError(f"value shape {tuple(value.shape)}, expected {(self.batch_size, self.value_dim)}")
        mask = _rows(rows, self.batch_size, self.keys.device)
        b = mask.nonzero().squeeze(1)
        if b.numel() == 0:
            return
        step = torch.as_tensor(step, device=self.keys.device).long().expand(self.batch_size)
        slot = self.n_written[b] % self.capacity
        self.keys[b, slot] = key[b].detach().to(self.keys.dtype)
        self.values[b, slot] = value[b].detach().to(self.values.dtype)
        self.written_at[b, slot] = step[b]
        self.attention_mass[b, slot] = 0.0
        self.n_written[b] += 1

    def accumulate(self, weights, rows=None):
        mask = _rows(rows, self.batch_size, self.keys.device)
        self.attention_mass += weights.detach() * (mask.unsqueeze(1) & self.valid)

    def clear(self, rows=None):
        mask = _rows(rows, self.batch_size, self.keys.device)
        self.keys[mask] = 0.0
        self.values[mask] = 0.0
        self.written_at[mask] = -1
        self.attention_mass[mask] = 0.0
        self.n_written[mask] = 0

    def slots(self, row=0):
        """Slots of one row, oldest first."""
        n = int(self.size[row])
        order = torch.argsort(self.written_at[row, :n])
        return [
            MemorySlot(
                self.keys[row, i].clone(),
                self.values[row, i].clone(),
                int(self.written_at[row, i]),
                float(self.attention_mass[row, i]),
            )
            for i in order.tolist()
        ]


class EpisodicAttention(nn.Module):
    """Multi-head attention of a controller query over event keys.

    Values are not projected: head ``h`` mixes the ``h``-th slice of the
    stored values, and the slices are concatenated back, so a memory holding
    a single slot returns that slot's value exactly.
    """

    def __init__(self, query_dim, key_dim, value_dim, n_heads=4, head_dim=16):
        super().__init__()
        if value_dim % n_heads:
            raise ValueError(f"value_dim={value_dim} must be divisible by n_heads={n_heads}")
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.value_dim = value_dim
        self.q_proj = nn.Linear(query_dim, n_heads * head_dim)
        self.k_proj = nn.Linear(key_dim, n_heads * head_dim)

    def forward(self, query, keys, values, mask):
        """query ``[..., Q, dq]``, keys ``[..., S, dk]``, values ``[..., S, dv]``,
        mask ``[..., Q, S]``.  Returns readouts ``[..., Q, dv]`` and weights
        ``[..., Q, S]`` averaged over heads; rows with no valid slot read 0."""
        *lead, Q, _ = query.shape
        S = keys.shape[-2]
        h, d = self.n_heads, self.head_dim
        q = self.q_proj(query).view(*lead, Q, h, d).transpose(-3, -2)
        k = self.k_proj(keys).view(*lead, S, h, d).transpose(-3, -2)
        v = values.view(*lead, S, h, self.value_dim // h).transpose(-3, -2)
        scores = q @ k.transpose(-1, -2) / math.sqrt(d)
        m = mask.unsqueeze(-3)
        scores = scores.masked_fill(~m, float("-inf"))
        any_valid = m.any(-1, keepdim=True)
        weights = torch.where(any_valid, F.softmax(scores.masked_fill(~any_valid, 0.0), dim=-1), torch.zeros_like(scores))
        out = (weights @ v).transpose(-3, -2).reshape(*lead, Q, self.value_dim)
        return out, weights.mean(-3)


def read_episodic(attention: EpisodicAttention, memory: EpisodicMemory, query, rows=None, accumulate=True):
    """Read every row's memory with ``query`` ``[B, dq]`` (or ``[dq]``).

    Returns ``(readout [B, dv], weights [B, capacity])``; with ``accumulate``
    the weights are added into the slots' attention mass.
    """
    single = query.dim() == 1
    if single:
        query = query.unsqueeze(0)
    mask = memory.valid
    if rows is not None:
        mask = mask & _rows(rows, memory.batch_size, mask.device).unsqueeze(1)
    out, weights = attention(query.unsqueeze(1), memory.keys, memory.values, mask.unsqueeze(1))
    out, weights = out.squeeze(1), weights.squeeze(1)
    if accumulate:
        memory.accumulate(weights, rows)
    if single:
        n = int(memory.size[0])
        return out[0], weights[0, :n]
    return out, weights


def reference_times(memory: EpisodicMemory, H):
    """``attention_mass / (H - written_at)`` per slot; 0 where ``H == written_at``
    and for empty slots.  ``H`` is a scalar or one episode length per row."""
    H = torch.as_tensor(H, device=memory.keys.device).expand(memory.batch_size).unsqueeze(1)
    denom = (H - memory.written_at).to(memory.attention_mass.dtype)
    ok = memory.valid & (denom > 0)
    return torch.where(ok, memory.attention_mass / denom.clamp(min=1e-12), torch.zeros_like(denom))


def _inv_softplus(x):
    return math.log(math.expm1(x))


class MetaPlasticity(nn.Module):
    """Learnable positive Hebbian coefficients (softplus-parameterised)."""

    def __init__(self, gamma_plus=0.1, gamma_minus=0.01, w_max=1.0):
        super().__init__()
        self.raw = nn.Parameter(torch.tensor([_inv_softplus(gamma_plus), _inv_softplus(gamma_minus), _inv_softplus(w_max)]))

    def forward(self):
        gp, gm, wm = F.softplus(self.raw)
        return gp, gm, wm

    @property
    def values(self):
        with torch.no_grad():
            return tuple(float(v) for v in self())


class HebbianStore:
    """Associative matrices ``W [B, d_val, d_key]``, one per row."""

    def __init__(self, batch_size, key_dim, value_dim, dtype=torch.float32, device=None):
        self.key_dim = key_dim
        self.value_dim = value_dim
        self.W = torch.zeros(batch_size, value_dim, key_dim, dtype=dtype, device=device)

    def reset(self, rows=None):
        mask = _rows(rows, self.W.shape[0], self.W.device)
        self.W[mask] = 0.0


def hebbian_update(W, key, value, gamma_plus, gamma_minus, w_max):
    """Return ``W + dW``; ``W`` is ``[..., d_val, d_key]``."""
    if key.shape[-1] != W.shape[-1] or value.shape[-1] != W.shape[-2]:
        raise ShapeError(
            f"W {tuple(W.shape)} incompatible with value {tuple(value.shape)} and key {tuple(key.shape)}"
        )
    k = key.unsqueeze(-2)
    v = value.unsqueeze(-1)
    return W + gamma_plus * (w_max - W) * v * k - gamma_minus * W * k.pow(2)


def read_hebbian(W, query_key):
    if query_key.shape[-1] != W.shape[-1]:
        raise ShapeError(f"query key width {query_key.shape[-1]}, expected {W.shape[-1]}")
    return (W @ query_key.unsqueeze(-1)).squeeze(-1)


def consolidation_order(memory: EpisodicMemory, H, top_fraction, row):
    """Slot indices of ``row`` chosen for consolidation, highest reference time first."""
    n = int(memory.size[row])
    if n == 0:
        return []
    r = reference_times(memory, H)[row, :n]
    by_age = torch.argsort(memory.written_at[row, :n])
    order = by_age[torch.argsort(r[by_age], descending=True, stable=True)]
    count = math.ceil(top_fraction * n - 1e-9)
    return order[:count].tolist()


def consolidate(memory: EpisodicMemory, store: HebbianStore, top_fraction, H, meta, rows=None):
    """Move the top ``top_fraction`` slots (by reference time) of each row into
    its Hebbian matrix, then clear those rows.  ``meta`` is a
    :class:`MetaPlasticity` or a ``(gamma_plus, gamma_minus, w_max)`` triple.

    Returns, per row, the ``(keys, values)`` that were applied, in order.
    """
    if not 0.0 < top_fraction <= 1.0:
        raise ValueError("top_fraction must lie in (0, 1]")
    gp, gm, wm = meta() if callable(meta) else meta
    mask = _rows(rows, memory.batch_size, memory.keys.device)
    applied = []
    with torch.no_grad():
        for b in range(memory.batch_size):
            if not mask[b]:
                applied.append(None)
                continue
            idx = consolidation_order(memory, H, top_fraction, b)
            for i in idx:
                store.W[b] = hebbian_update(store.W[b], memory.keys[b, i], memory.values[b, i], gp, gm, wm)
            applied.append((memory.keys[b, idx].clone(), memory.values[b, idx].clone()))
    memory.clear(mask)
    return applied


class MemoryCombiner(nn.Module):
    """Two-way attention between the episodic and Hebbian readouts."""

    def __init__(self, query_dim, value_dim, att_dim=32):
        super().__init__()
        self.att_dim = att_dim
        self.q_proj = nn.Linear(query_dim, att_dim)
        self.s_proj = nn.Linear(value_dim, att_dim)

    def forward(self, query, episodic_out, hebbian_out):
        sources = torch.stack([episodic_out, hebbian_out], dim=-2)
        scores = (self.s_proj(sources) @ self.q_proj(query).unsqueeze(-1)).squeeze(-1) / math.sqrt(self.att_dim)
        weights = F.softmax(scores, dim=-1)
        return (weights.unsqueeze(-1) * sources).sum(-2), weights


def combine(combiner: MemoryCombiner, query, episodic_out, hebbian_out):
    out, _ = combiner(query, episodic_out, hebbian_out)
    return out
