"""Experiment orchestration: run directories, metrics files, checkpoints."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import torch

from ..estimator import BIMRL
from ..exceptions import ConfigError
from .config import ExperimentConfig, dump_config

log = logging.getLogger(__name__)

METRICS_FILE = "metrics.jsonl"
CONFIG_FILE = "config.yaml"
CHECKPOINT_DIR = "checkpoints"
METRICS_SCHEMA = 1


def make_run_dir(cfg: ExperimentConfig, root=None) -> Path:
    root = Path(root if root is not None else cfg.run_root)
    stamp = time.strftime("%Y%m%d-%H%M%S")
    base = f"{stamp}-{cfg.config_hash}"
    path = root / base
    suffix = 1
    while path.exists():
        path = root / f"{base}.{suffix}"
        suffix += 1
    path.mkdir(parents=True)
    (path / CHECKPOINT_DIR).mkdir()
    dump_config(cfg, path / CONFIG_FILE)
    return path


def metrics_record(record, seed, cfg_hash):
    """Flatten an estimator record into the on-disk layout (fixed key order)."""
    return {
        "schema": METRICS_SCHEMA,
        "config_hash": cfg_hash,
        "seed": seed,
        "iteration": record["iteration"],
        "frames": record["frames"],
        "episode_returns": record["episode_returns"],
        "episode_success": record["episode_success"],
        "losses": record["losses"],
        "intrinsic": record["intrinsic"],
        "meta_plasticity": record["meta_plasticity"],
        "eval": record.get("eval"),
        "wall_clock": record["wall_clock"],
    }


def append_metrics(path, rec):
    with open(path, "a") as fh:
        fh.write(json.dumps(rec) + "\n")


def read_metrics(path):
    path = Path(path)
    if path.is_dir():
        path = path / METRICS_FILE
    if not path.is_file():
        return []
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_checkpoint(est: BIMRL, cfg: ExperimentConfig, path):
    ckpt = est.checkpoint()
    ckpt["experiment_config"] = cfg.to_dict()
    ckpt["experiment_hash"] = cfg.config_hash
    torch.save(ckpt, path)


def load_checkpoint(path, expected_hash=None):
    """Return ``(estimator, checkpoint dict)``; refuses on hash mismatch."""
    ckpt = torch.load(path, map_location="cpu", weights_only=False)
    stored = ckpt.get("experiment_hash")
    if expected_hash is not None and stored != expected_hash:
        raise ConfigError(f"config hash mismatch: checkpoint {stored} vs config {expected_hash}")
    if "experiment_config" in ckpt:
        recomputed = ExperimentConfig.from_dict(ckpt["experiment_config"]).config_hash
        if recomputed != stored:
            raise ConfigError(f"config hash mismatch: checkpoint {stored} vs recomputed {recomputed}")
    return BIMRL.from_checkpoint(ckpt), ckpt


def train_seed(cfg: ExperimentConfig, seed, run_dir):
    run_dir = Path(run_dir)
    metrics_path = run_dir / METRICS_FILE
    ckpt_dir = run_dir / CHECKPOINT_DIR
    est = cfg.estimator(seed)
    h = cfg.config_hash

    def on_iteration(record, e):
        if cfg.eval_every and record["iteration"] % cfg.eval_every == 0:
            record["eval"] = e.evaluate(cfg.eval_tasks, seed=seed)
        append_metrics(metrics_path, metrics_record(record, seed, h))
        if record["iteration"] % cfg.checkpoint_every == 0:
            save_checkpoint(e, cfg, ckpt_dir / f"seed{seed}_iter{record['iteration']:05d}.pt")

    est.fit(callback=on_iteration)
    final = ckpt_dir / f"seed{seed}_final.pt"
    save_checkpoint(est, cfg, final)
    return str(final)


def run(cfg: ExperimentConfig, root=None) -> Path:
    run_dir = make_run_dir(cfg, root)
    log.info("run directory %s", run_dir)
    if cfg.parallel and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=len(cfg.seeds)) as pool:
            # each worker appends whole lines, so the shared metrics file stays line-delimited
            list(pool.map(train_seed, [cfg] * len(cfg.seeds), cfg.seeds, [run_dir] * len(cfg.seeds)))
    else:
        for seed in cfg.seeds:
            train_seed(cfg, seed, run_dir)
    return run_dir


def evaluate_checkpoint(path, n_tasks=100, seed=0, expected_hash=None):
    est, ckpt = load_checkpoint(path, expected_hash)
    report = est.evaluate(n_tasks=n_tasks, seed=seed)
    report["config_hash"] = ckpt.get("experiment_hash")
    report["seed"] = seed
    if report["episodes"]:
        report["final_episode"] = report["episodes"][-1]
    return report
