"""scikit-learn style estimator around the agent.

``BIMRL().fit()`` meta-trains on freshly generated tasks of one family;
``evaluate`` / ``score`` run the four-episode protocol on held-out tasks.
Hyper-parameters are plain constructor arguments, so ``get_params``,
``set_params`` and ``sklearn.base.clone`` work as usual.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import time
from dataclasses import asdict

import numpy as np
import torch
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import agentcore
from .agentcore import AgentConfig, BIMRLNet, compute_gae, meta_rollout, total_loss
from .envgrid import EPISODES_PER_TASK, generate_task
from .exceptions import ConfigError, NonFiniteLossError
from .validation import check_family, check_params

log = logging.getLogger(__name__)

TRAIN_SEED_SPACE = 1_000_000_000
EVAL_SEED_OFFSET = 1_000_000_000
CHECKPOINT_FORMAT = "bimrl-checkpoint"
CHECKPOINT_VERSION = 1
LOSS_KEYS = ("total", "policy", "value", "entropy", "recon", "kl", "planner", "approx_kl", "clipfrac")


def _stable_hash(obj) -> str:
    text = json.dumps(obj, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


class BIMRL(BaseEstimator):
    """Meta-RL agent with belief inference, hierarchical recurrent core and
    dual episodic/Hebbian memory.

    Parameters mirror :class:`~bimrl.agentcore.AgentConfig` plus the
    environment and optimisation settings below.

    env_family, env_params : task family and its generator parameters.
    tasks_per_iteration : meta-episodes collected per update.
    total_frames, n_iterations : stop when either budget is reached.
    n_epochs, n_minibatches : passes and task-level minibatches per update.
    """

    def __init__(
        self,
        env_family="MultiRoom",
        env_params=None,
        tasks_per_iteration=16,
        total_frames=300_000,
        n_iterations=None,
        n_epochs=4,
        n_minibatches=4,
        learning_rate=7e-4,
        max_grad_norm=0.5,
        seed=0,
        obs_embed_dim=64,
        latent_dim=10,
        encoder_dim=128,
        h1_dim=64,
        h2_dim=64,
        h3_dim=64,
        hidden_dim=64,
        n_lookahead=3,
        recon_n=None,
        td_k=5,
        gamma=0.95,
        gae_lambda=0.95,
        knn_k=10,
        alpha_default=1.0,
        beta=0.01,
        lambda_state=1 / 3,
        lambda_action=1 / 3,
        lambda_reward=1 / 3,
        top_fraction=0.25,
        memory_capacity=256,
        n_heads=4,
        head_dim=16,
        use_memory=True,
        persist_h3=True,
        planner_intrinsic=True,
        clip=0.2,
        c_value=0.5,
        c_ent=0.01,
        c_elbo=1.0,
        c_plan=0.5,
        elbo_stride=None,
        embed_aux_grad=False,
        dtype="float32",
    ):
        self.env_family = env_family
        self.env_params = env_params
        self.tasks_per_iteration = tasks_per_iteration
        self.total_frames = total_frames
        self.n_iterations = n_iterations
        self.n_epochs = n_epochs
        self.n_minibatches = n_minibatches
        self.learning_rate = learning_rate
        self.max_grad_norm = max_grad_norm
        self.seed = seed
        self.obs_embed_dim = obs_embed_dim
        self.latent_dim = latent_dim
        self.encoder_dim = encoder_dim
        self.h1_dim = h1_dim
        self.h2_dim = h2_dim
        self.h3_dim = h3_dim
        self.hidden_dim = hidden_dim
        self.n_lookahead = n_lookahead
        self.recon_n = recon_n
        self.td_k = td_k
        self.gamma = gamma
        self.gae_lambda = gae_lambda
        self.knn_k = knn_k
        self.alpha_default = alpha_default
        self.beta = beta
        self.lambda_state = lambda_state
        self.lambda_action = lambda_action
        self.lambda_reward = lambda_reward
        self.top_fraction = top_fraction
        self.memory_capacity = memory_capacity
        self.n_heads = n_heads
        self.head_dim = head_dim
        self.use_memory = use_memory
        self.persist_h3 = persist_h3
        self.planner_intrinsic = planner_intrinsic
        self.clip = clip
        self.c_value = c_value
        self.c_ent = c_ent
        self.c_elbo = c_elbo
        self.c_plan = c_plan
        self.elbo_stride = elbo_stride
        self.embed_aux_grad = embed_aux_grad
        self.dtype = dtype

    # -- construction --------------------------------------------------------

    def agent_config(self) -> AgentConfig:
        return AgentConfig.from_dict(self.get_params())

    def _torch_dtype(self):
        try:
            return {"float32": torch.float32, "float64": torch.float64}[self.dtype]
        except KeyError:
            raise ConfigError(f"dtype: expected 'float32' or 'float64', got {self.dtype!r}") from None

    def config_hash(self) -> str:
        return _stable_hash(self.get_params())[:16]

    def make_task(self, seed):
        return generate_task(check_family(self.env_family), int(seed), self.env_params or {})

    def _init_state(self):
        check_params(self)
        torch.manual_seed(self.seed)
        self.rng_ = np.random.default_rng(self.seed)
        self.generator_ = torch.Generator().manual_seed(self.seed)
        cfg = self.agent_config()
        if cfg.elbo_stride is None:
            cfg.elbo_stride = self.make_task(0).H
        self.net_ = BIMRLNet(cfg).to(self._torch_dtype())
        self.optimizer_ = torch.optim.Adam(self.net_.parameters(), lr=self.learning_rate, eps=1e-5)
        self.metrics_ = []
        self.n_iter_ = 0
        self.frames_ = 0
        self.last_batch_ = None

    # -- training ------------------------------------------------------------

    def fit(self, X=None, y=None, callback=None):
        """Meta-train until ``total_frames`` or ``n_iterations`` is reached.

        ``X`` and ``y`` are ignored (tasks are generated on the fly).
        ``callback(record, estimator)`` runs after every iteration; returning
        ``False`` stops training.
        """
        self._init_state()
        return self.continue_fit(callback=callback)

    def continue_fit(self, callback=None):
        check_is_fitted(self, "net_")
        while not self._budget_exhausted():
            record = self.train_iteration()
            if callback is not None and callback(record, self) is False:
                break
        return self

    def _budget_exhausted(self):
        if self.n_iterations is not None and self.n_iter_ >= self.n_iterations:
            return True
        if self.total_frames is not None and self.frames_ >= self.total_frames:
            return True
        return False

    def sample_tasks(self, n):
        seeds = self.rng_.integers(0, TRAIN_SEED_SPACE, size=n)
        return [self.make_task(s) for s in seeds]

    def collect(self, tasks):
        """Roll out ``tasks`` and attach normalised GAE advantages."""
        batch = meta_rollout(self.net_, tasks, self.generator_)
        cfg = self.net_.cfg
        adv, ret = compute_gae(
            batch.rewards_ext + batch.rewards_int, batch.values, batch.lengths, cfg.gamma, cfg.gae_lambda
        )
        valid = batch.valid
        mean = adv[valid].mean()
        std = adv[valid].std() if valid.sum() > 1 else torch.ones((), dtype=adv.dtype)
        batch.advantages = ((adv - mean) / (std + 1e-8)) * valid
        batch.returns = ret
        return batch

    def _noise_for(self, batch):
        pts = agentcore.elbo_points(batch.lengths, self.net_.cfg.elbo_stride)
        return torch.randn(*pts.shape, self.net_.cfg.latent_dim, generator=self.generator_, dtype=batch.h3.dtype)

    def train_iteration(self):
        t0 = time.perf_counter()
        tasks = self.sample_tasks(self.tasks_per_iteration)
        batch = self.collect(tasks)
        self.last_batch_ = batch
        B = batch.batch_size
        sums = {k: 0.0 for k in LOSS_KEYS}
        n_updates = 0
        for _ in range(self.n_epochs):
            perm = torch.randperm(B, generator=self.generator_)
            for idx in torch.tensor_split(perm, self.n_minibatches):
                if idx.numel() == 0:
                    continue
                mb = batch.index(idx)
                loss, parts = total_loss(self.net_, mb, noise=self._noise_for(mb), details=True)
                if not torch.isfinite(loss):
                    raise NonFiniteLossError(
                        f"non-finite loss at iteration {self.n_iter_}", self._batch_diagnostics(batch, parts)
                    )
                self.optimizer_.zero_grad()
                loss.backward()
                for group in self.net_.parameter_groups().values():
                    torch.nn.utils.clip_grad_norm_(group, self.max_grad_norm)
                self.optimizer_.step()
                sums["total"] += float(loss.detach())
                for k, v in parts.items():
                    if k in sums:
                        sums[k] += float(v)
                n_updates += 1

        self.n_iter_ += 1
        self.frames_ += batch.frames
        ep_returns = batch.episode_returns.mean(0)
        valid = batch.valid
        r_int = batch.rewards_int[valid]
        record = {
            "iteration": self.n_iter_,
            "frames": self.frames_,
            "episode_returns": [float(v) for v in ep_returns],
            "episode_success": [float(v) for v in (batch.episode_returns > 0).double().mean(0)],
            "losses": {k: v / max(n_updates, 1) for k, v in sums.items()},
            "intrinsic": {
                "mean": float(r_int.mean()),
                "max": float(r_int.max()),
                "alpha_mean": float(batch.alpha[valid].mean()),
                "curiosity_mean": float(batch.r_cur[valid].mean()),
            },
            "meta_plasticity": list(self.net_.meta.values),
            "wall_clock": time.perf_counter() - t0,
        }
        self.metrics_.append(record)
        log.info(
            "iter %d frames %d returns %s", record["iteration"], record["frames"],
            " ".join(f"{r:.3f}" for r in record["episode_returns"]),
        )
        return record

    @staticmethod
    def _batch_diagnostics(batch, parts):
        valid = batch.valid
        return {
            "frames": batch.frames,
            "episode_returns": batch.episode_returns.mean(0).tolist(),
            "value_mean": float(batch.values[valid].mean()),
            "value_absmax": float(batch.values[valid].abs().max()),
            "intrinsic_max": float(batch.rewards_int[valid].max()),
            "advantage_absmax": float(batch.advantages[valid].abs().max()),
            "loss_parts": {k: float(v) for k, v in parts.items()},
        }

    # -- evaluation ----------------------------------------------------------

    def evaluate(self, n_tasks=100, seed=0, batch_size=32):
        """Per-episode-index mean and standard error of the return on
        held-out tasks, with the stochastic policy."""
        check_is_fitted(self, "net_")
        rng = np.random.default_rng(seed)
        gen = torch.Generator().manual_seed(int(seed))
        seeds = EVAL_SEED_OFFSET + rng.choice(TRAIN_SEED_SPACE, size=n_tasks, replace=False) if n_tasks else []
        returns = []
        for start in range(0, n_tasks, batch_size):
            tasks = [self.make_task(s) for s in seeds[start : start + batch_size]]
            returns.append(meta_rollout(self.net_, tasks, gen).episode_returns)
        if not returns:
            return {"n_tasks": 0, "episodes": []}
        R = torch.cat(returns).double().numpy()
        rows = []
        for e in range(EPISODES_PER_TASK):
            col = R[:, e]
            stderr = float(col.std(ddof=1) / math.sqrt(len(col))) if len(col) > 1 else 0.0
            rows.append({"episode": e + 1, "mean": float(col.mean()), "stderr": stderr})
        return {"n_tasks": int(n_tasks), "episodes": rows}

    def score(self, X=None, y=None, n_tasks=32, seed=0):
        """Mean fourth-episode return on held-out tasks."""
        report = self.evaluate(n_tasks=n_tasks, seed=seed)
        return report["episodes"][-1]["mean"] if report["episodes"] else float("nan")

    # -- persistence ---------------------------------------------------------

    def checkpoint(self):
        check_is_fitted(self, "net_")
        params = self.get_params()
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "params": params,
            "config_hash": self.config_hash(),
            "agent_config": asdict(self.net_.cfg),
            "state_dict": self.net_.state_dict(),
            "optimizer": self.optimizer_.state_dict(),
            "meta_plasticity": list(self.net_.meta.values),
            "memory_state": self._memory_state(),
            "n_iter": self.n_iter_,
            "frames": self.frames_,
            "rng_state": self.rng_.bit_generator.state,
            "torch_generator": self.generator_.get_state(),
        }

    def _memory_state(self):
        b = self.last_batch_
        if b is None:
            return None
        # W_assoc per task at the start of the last episode (episodic slots are cleared by then)
        W = agentcore.hebbian_snapshots(self.net_, b)[:, -1].detach()
        return {"W_assoc": W, "task_seeds": list(b.task_seeds)}

    def save(self, path):
        torch.save(self.checkpoint(), path)

    @classmethod
    def load(cls, path, expected_hash=None):
        ckpt = torch.load(path, map_location="cpu", weights_only=False)
        return cls.from_checkpoint(ckpt, expected_hash)

    @classmethod
    def from_checkpoint(cls, ckpt, expected_hash=None):
        if ckpt.get("format") != CHECKPOINT_FORMAT:
            raise ConfigError("not a BIMRL checkpoint")
        if ckpt.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {ckpt.get('version')}")
        est = cls(**ckpt["params"])
        if expected_hash is not None and expected_hash != ckpt["config_hash"]:
            raise ConfigError(
                f"config hash mismatch: checkpoint {ckpt['config_hash']} vs expected {expected_hash}"
            )
        if est.config_hash() != ckpt["config_hash"]:
            raise ConfigError(
                f"config hash mismatch: checkpoint {ckpt['config_hash']} vs recomputed {est.config_hash()}"
            )
        est._init_state()
        est.net_.load_state_dict(ckpt["state_dict"])
        est.optimizer_.load_state_dict(ckpt["optimizer"])
        est.n_iter_ = ckpt["n_iter"]
        est.frames_ = ckpt["frames"]
        est.rng_.bit_generator.state = ckpt["rng_state"]
        est.generator_.set_state(ckpt["torch_generator"])
        return est
