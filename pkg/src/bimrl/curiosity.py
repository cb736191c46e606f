"""Memory-scaled curiosity bonus.

``r_int = beta * alpha * r_cur`` where ``r_cur`` is a convex combination of
the world model's one-step prediction errors and ``alpha`` is the distance
from the current event key to its k-th nearest neighbour in episodic memory.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch


def project_to_simplex(v):
    """Euclidean projection of ``v`` onto the probability simplex."""
    v = np.asarray(v, dtype=np.float64)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    rho = np.nonzero(u - css / np.arange(1, len(v) + 1) > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    return np.maximum(v - theta, 0.0)


@dataclass(frozen=True)
class CuriosityWeights:
    lambda_state: float = 1 / 3
    lambda_action: float = 1 / 3
    lambda_reward: float = 1 / 3

    @classmethod
    def from_raw(cls, state, action, reward):
        s, a, r = project_to_simplex([state, action, reward])
        return cls(float(s), float(a), float(r))

    def __post_init__(self):
        total = self.lambda_state + self.lambda_action + self.lambda_reward
        if min(self.lambda_state, self.lambda_action, self.lambda_reward) < 0 or abs(total - 1.0) > 1e-9:
            raise ValueError("curiosity weights must be non-negative and sum to 1; use from_raw()")


def _floor(x):
    return torch.clamp(x, min=0.0) if torch.is_tensor(x) else max(float(x), 0.0)


def curiosity_term(neg_log_state, neg_log_action, neg_log_reward, w: CuriosityWeights):
    total = (
        w.lambda_state * _floor(neg_log_state)
        + w.lambda_action * _floor(neg_log_action)
        + w.lambda_reward * _floor(neg_log_reward)
    )
    return _floor(total)


def kth_distance(query, keys, valid, k, default=1.0):
    """Distance from each query ``[B, d]`` to its k-th nearest valid key
    ``[B, S, d]``; rows with fewer than ``k`` valid keys get ``default``."""
    d = (keys - query.unsqueeze(1)).pow(2).sum(-1).sqrt()
    d = d.masked_fill(~valid, float("inf"))
    enough = valid.sum(-1) >= k
    kk = min(k, d.shape[-1])
    if kk == 0:
        return torch.full(query.shape[:1], float(default), dtype=query.dtype, device=query.device)
    kth = torch.topk(d, kk, dim=-1, largest=False).values[:, -1]
    return torch.where(enough, kth, torch.full_like(kth, float(default)))


def newness(current_key, memory, k, default=1.0):
    """k-th nearest-neighbour distance of ``current_key`` against the keys in
    an :class:`~bimrl.neuromem.EpisodicMemory` (or a plain ``[S, d]`` tensor)."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if torch.is_tensor(memory):
        keys, valid = memory.unsqueeze(0), torch.ones(1, memory.shape[0], dtype=torch.bool, device=memory.device)
    else:
        keys, valid = memory.keys, memory.valid
    single = current_key.dim() == 1
    q = current_key.unsqueeze(0) if single else current_key
    out = kth_distance(q.to(keys.dtype), keys, valid, k, default)
    return out[0] if single else out


def intrinsic_reward(alpha, r_curiosity, beta=0.1):
    return beta * _floor(alpha) * _floor(r_curiosity)
