"""Input validation helpers, in the spirit of ``sklearn.utils.validation``."""

from __future__ import annotations

import numbers

import numpy as np

from .envgrid import FAMILIES, OBS_SHAPE
from .exceptions import ConfigError, ShapeError


def check_observation(obs, allow_batch=True):
    """Return ``obs`` as float32 ``[..., 7, 7, 3]`` with entries in ``[0, 1]``."""
    arr = np.asarray(obs, dtype=np.float32)
    if arr.shape[-3:] != OBS_SHAPE or (not allow_batch and arr.ndim != 3):
        raise ShapeError(f"observation shape {arr.shape}, expected {'[...,] ' if allow_batch else ''}{OBS_SHAPE}")
    if not np.all(np.isfinite(arr)) or arr.min(initial=0.0) < 0.0 or arr.max(initial=0.0) > 1.0:
        raise ValueError("observation entries must lie in [0, 1]")
    return arr


def check_scalar(x, name, target_type=numbers.Real, min_val=None, max_val=None, include_min=True, include_max=True):
    if isinstance(x, bool) or not isinstance(x, target_type):
        raise ConfigError(f"{name}: expected {getattr(target_type, '__name__', target_type)}, got {x!r}")
    if min_val is not None and (x < min_val or (x == min_val and not include_min)):
        raise ConfigError(f"{name}: must be {'>=' if include_min else '>'} {min_val}, got {x!r}")
    if max_val is not None and (x > max_val or (x == max_val and not include_max)):
        raise ConfigError(f"{name}: must be {'<=' if include_max else '<'} {max_val}, got {x!r}")
    return x


def check_family(family):
    for name in FAMILIES:
        if str(family).lower() == name.lower():
            return name
    raise ConfigError(f"env_family: unknown family {family!r}; expected one of {FAMILIES}")


def check_params(est):
    """Validate an estimator's hyper-parameters; raises :class:`ConfigError`."""
    check_family(est.env_family)
    I, R = numbers.Integral, numbers.Real
    for name in ("tasks_per_iteration", "n_epochs", "n_minibatches", "obs_embed_dim", "latent_dim",
                 "encoder_dim", "h1_dim", "h2_dim", "h3_dim", "hidden_dim", "td_k", "knn_k",
                 "memory_capacity", "n_heads", "head_dim"):
        check_scalar(getattr(est, name), name, I, min_val=1)
    check_scalar(est.n_lookahead, "n_lookahead", I, min_val=0)
    if est.recon_n is not None:
        check_scalar(est.recon_n, "recon_n", I, min_val=0, max_val=est.n_lookahead)
    if est.elbo_stride is not None:
        check_scalar(est.elbo_stride, "elbo_stride", I, min_val=1)
    if est.total_frames is not None:
        check_scalar(est.total_frames, "total_frames", I, min_val=1)
    if est.n_iterations is not None:
        check_scalar(est.n_iterations, "n_iterations", I, min_val=1)
    check_scalar(est.seed, "seed", I, min_val=0)
    check_scalar(est.gamma, "gamma", R, min_val=0, max_val=1, include_min=False)
    check_scalar(est.gae_lambda, "gae_lambda", R, min_val=0, max_val=1)
    check_scalar(est.top_fraction, "top_fraction", R, min_val=0, max_val=1, include_min=False)
    check_scalar(est.learning_rate, "learning_rate", R, min_val=0, include_min=False)
    for name in ("beta", "alpha_default", "clip", "c_value", "c_ent", "c_elbo", "c_plan",
                 "lambda_state", "lambda_action", "lambda_reward", "max_grad_norm"):
        check_scalar(getattr(est, name), name, R, min_val=0)
    if est.h3_dim % est.n_heads:
        raise ConfigError(f"h3_dim: {est.h3_dim} must be divisible by n_heads={est.n_heads}")
    if est.lambda_state + est.lambda_action + est.lambda_reward <= 0:
        raise ConfigError("lambda_state: curiosity weights must not all be zero")
    if est.n_minibatches > est.tasks_per_iteration:
        raise ConfigError("n_minibatches: cannot exceed tasks_per_iteration")
