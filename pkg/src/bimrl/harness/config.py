"""Experiment configuration: YAML on disk, canonical JSON for hashing.

Precedence is file < ``BIMRL_*`` environment variables < command-line
``--set`` overrides. Nested keys use ``.`` on the command line and ``__``
in environment variable names (``BIMRL_AGENT__LEARNING_RATE=1e-3``).
"""

from __future__ import annotations

import copy
import hashlib
import inspect
import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import yaml

from ..estimator import BIMRL
from ..exceptions import ConfigError

ENV_PREFIX = "BIMRL_"

# estimator arguments that live at the experiment level instead of under ``agent``
_TOP_LEVEL_ARGS = {"env_family", "env_params", "total_frames", "n_iterations", "seed"}


def _agent_defaults():
    sig = inspect.signature(BIMRL.__init__)
    return {
        name: p.default
        for name, p in sig.parameters.items()
        if name != "self" and name not in _TOP_LEVEL_ARGS
    }


AGENT_DEFAULTS = _agent_defaults()

ABLATIONS = {
    "full": {},
    "no_mem": {"use_memory": False},
    "no_value_pred": {"c_plan": 0.0},
    "no_nstep": {"recon_n": 0},
}


@dataclass
class ExperimentConfig:
    name: str = "bimrl"
    env_family: str = "MultiRoom"
    env_params: dict = field(default_factory=lambda: {"room_count": 2, "max_room_size": 4})
    seeds: list = field(default_factory=lambda: [0, 1, 2])
    total_frames: Optional[int] = 300_000
    n_iterations: Optional[int] = None
    checkpoint_every: int = 10
    eval_every: int = 0
    eval_tasks: int = 100
    parallel: bool = False
    run_root: str = "runs"
    agent: dict = field(default_factory=dict)

    def __post_init__(self):
        unknown = sorted(set(self.agent) - set(AGENT_DEFAULTS))
        if unknown:
            raise ConfigError(f"agent.{unknown[0]}: unknown key")
        merged = dict(AGENT_DEFAULTS)
        merged.update(self.agent)
        self.agent = merged
        if not isinstance(self.seeds, list) or not self.seeds:
            raise ConfigError("seeds: expected a non-empty list of integers")
        for name in ("checkpoint_every", "eval_tasks", "eval_every"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise ConfigError(f"{name}: expected a non-negative integer, got {v!r}")
        if self.checkpoint_every < 1:
            raise ConfigError("checkpoint_every: must be >= 1")
        # surfaces field-level errors from the estimator's own checks
        from ..validation import check_params

        for s in self.seeds:
            check_params(self.estimator(s))

    @classmethod
    def from_dict(cls, data):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError("<root>: expected a mapping")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown key")
        data = copy.deepcopy(data)
        if data.get("agent") is None:
            data["agent"] = {}
        if not isinstance(data["agent"], dict):
            raise ConfigError("agent: expected a mapping")
        return cls(**data)

    def to_dict(self):
        return asdict(self)

    def canonical_text(self) -> str:
        return canonicalize(self.to_dict())

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_text().encode()).hexdigest()[:12]

    def estimator_params(self, seed):
        params = dict(self.agent)
        params.update(
            env_family=self.env_family,
            env_params=dict(self.env_params or {}),
            total_frames=self.total_frames,
            n_iterations=self.n_iterations,
            seed=int(seed),
        )
        return params

    def estimator(self, seed) -> BIMRL:
        return BIMRL(**self.estimator_params(seed))

    def with_ablation(self, ablation):
        try:
            switch = ABLATIONS[ablation]
        except KeyError:
            raise ConfigError(f"ablation: unknown {ablation!r}; expected one of {sorted(ABLATIONS)}") from None
        d = self.to_dict()
        d["agent"].update(switch)
        d["name"] = f"{self.name}-{ablation}" if ablation != "full" else self.name
        return ExperimentConfig.from_dict(d)


def canonicalize(data) -> str:
    """Sorted-key compact JSON; applying it to its own parsed output is a no-op."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=True)


def _parse_value(text):
    try:
        return yaml.safe_load(text)
    except yaml.YAMLError:
        return text


def _set_path(data, dotted, value):
    keys = dotted.split(".")
    node = data
    for k in keys[:-1]:
        node = node.setdefault(k, {})
        if not isinstance(node, dict):
            raise ConfigError(f"{dotted}: {k} is not a mapping")
    node[keys[-1]] = value


def env_overrides(environ=None):
    environ = os.environ if environ is None else environ
    out = {}
    for name, raw in environ.items():
        if name.startswith(ENV_PREFIX) and len(name) > len(ENV_PREFIX):
            out[name[len(ENV_PREFIX):].lower().replace("__", ".")] = _parse_value(raw)
    return out


def parse_overrides(items):
    out = {}
    for item in items or ():
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"{item}: override must look like key=value")
        out[key.strip()] = _parse_value(value)
    return out


def load_config(path=None, overrides=None, environ=None) -> ExperimentConfig:
    """Read ``path`` (YAML or JSON), then apply env and explicit overrides."""
    data = {}
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(str(path))
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: not valid YAML ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    for key, value in {**env_overrides(environ), **(overrides or {})}.items():
        _set_path(data, key, value)
    return ExperimentConfig.from_dict(data)


def dump_config(cfg: ExperimentConfig, path):
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
