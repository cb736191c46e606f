import math

import numpy as np
import pytest
import torch
from sklearn.base import clone

from bimrl import BIMRL
from bimrl.exceptions import ConfigError, NonFiniteLossError

TINY = dict(
    env_params={"room_count": 2, "max_room_size": 4, "horizon": 5},
    tasks_per_iteration=2, n_minibatches=2, n_epochs=1, total_frames=None, n_iterations=2,
    obs_embed_dim=8, latent_dim=2, encoder_dim=8, h1_dim=8, h2_dim=8, h3_dim=8, hidden_dim=8,
    n_lookahead=2, td_k=2, knn_k=2, memory_capacity=32, n_heads=2, head_dim=4,
)


def tiny(**kw):
    return BIMRL(**{**TINY, **kw})


def strip_clock(records):
    return [{k: v for k, v in r.items() if k != "wall_clock"} for r in records]


def test_params_roundtrip_and_clone():
    est = tiny(seed=4)
    params = est.get_params()
    assert params["seed"] == 4 and params["beta"] == 0.01
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    assert twin.config_hash() == est.config_hash()
    assert tiny(seed=5).config_hash() != est.config_hash()


@pytest.mark.parametrize(
    "bad",
    [dict(learning_rate=-1.0), dict(gamma=1.5), dict(h3_dim=7, n_heads=2), dict(n_minibatches=3),
     dict(lambda_state=0.0, lambda_action=0.0, lambda_reward=0.0), dict(env_family="Maze"), dict(dtype="half")],
)
def test_invalid_hyperparameters_rejected_before_training(bad):
    with pytest.raises(ConfigError):
        tiny(**bad).fit()


def test_fit_records_one_entry_per_iteration():
    est = tiny(n_iterations=3).fit()
    assert est.n_iter_ == 3 and len(est.metrics_) == 3
    assert [r["iteration"] for r in est.metrics_] == [1, 2, 3]
    frames = [r["frames"] for r in est.metrics_]
    assert frames == sorted(frames) and frames[-1] == est.frames_
    for rec in est.metrics_:
        assert len(rec["episode_returns"]) == 4
        assert all(math.isfinite(v) for v in rec["losses"].values())
        assert rec["intrinsic"]["mean"] >= 0


def test_frame_budget_stops_training():
    est = tiny(n_iterations=None, total_frames=30).fit()
    assert est.frames_ >= 30
    assert est.frames_ - est.metrics_[-1]["frames"] == 0
    assert len(est.metrics_) == 1 or est.metrics_[-2]["frames"] < 30


def test_callback_can_stop():
    est = tiny(n_iterations=5).fit(callback=lambda rec, e: rec["iteration"] < 2)
    assert est.n_iter_ == 2


def test_first_iterations_are_deterministic():
    a = tiny(n_iterations=5, seed=11).fit()
    b = tiny(n_iterations=5, seed=11).fit()
    assert strip_clock(a.metrics_) == strip_clock(b.metrics_)
    c = tiny(n_iterations=5, seed=12).fit()
    assert strip_clock(a.metrics_) != strip_clock(c.metrics_)


def test_evaluate_report():
    est = tiny().fit()
    report = est.evaluate(n_tasks=5, seed=0)
    assert report["n_tasks"] == 5 and [r["episode"] for r in report["episodes"]] == [1, 2, 3, 4]
    assert all(0 <= r["mean"] <= 1 and r["stderr"] >= 0 for r in report["episodes"])
    assert report == est.evaluate(n_tasks=5, seed=0)
    assert est.evaluate(n_tasks=0) == {"n_tasks": 0, "episodes": []}
    assert est.score(n_tasks=5) == report["episodes"][-1]["mean"]


def test_checkpoint_roundtrip(tmp_path):
    est = tiny().fit()
    path = tmp_path / "model.pt"
    est.save(path)
    back = BIMRL.load(path)
    assert back.get_params() == est.get_params() and back.n_iter_ == est.n_iter_
    for k, v in est.net_.state_dict().items():
        assert torch.equal(v, back.net_.state_dict()[k])
    assert back.evaluate(n_tasks=3) == est.evaluate(n_tasks=3)
    ckpt = torch.load(path, weights_only=False)
    assert ckpt["memory_state"]["W_assoc"].shape[0] == 2
    assert len(ckpt["meta_plasticity"]) == 3
    back.continue_fit()
    assert back.n_iter_ == est.n_iter_


def test_checkpoint_hash_mismatch_names_both(tmp_path):
    est = tiny().fit()
    path = tmp_path / "model.pt"
    est.save(path)
    with pytest.raises(ConfigError) as info:
        BIMRL.load(path, expected_hash="0" * 16)
    assert est.config_hash() in str(info.value) and "0" * 16 in str(info.value)


def test_non_finite_loss_aborts_with_diagnostics(monkeypatch):
    import bimrl.estimator as mod

    real = mod.total_loss

    def broken(*args, **kw):
        loss, parts = real(*args, **kw)
        return loss * float("nan"), parts

    monkeypatch.setattr(mod, "total_loss", broken)
    with pytest.raises(NonFiniteLossError) as info:
        tiny().fit()
    assert "episode_returns" in info.value.diagnostics


def test_float64_training():
    est = tiny(dtype="float64", n_iterations=1).fit()
    assert next(est.net_.parameters()).dtype == torch.float64
    assert np.isfinite(est.metrics_[0]["losses"]["total"])
