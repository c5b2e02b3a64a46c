import dataclasses

import numpy as np
import pytest

from posetransfer.networks import init_params, pose_transfer
from posetransfer.synth import DatasetConfig, make_dataset
from posetransfer.train import (
    Adam,
    ConfigError,
    TrainConfig,
    fit,
    load_checkpoint,
    parse_config,
    sample_paired_batch,
    save_checkpoint,
)


TINY = TrainConfig(steps=6, accum_pairs=1, ckpt_every=0, probe_every=0,
                   k_parts=6, latent=8, skin_hidden=(8, 8), enc_hidden=(8, 8),
                   dec_hidden=(12,), n_skin_pairs=32)


@pytest.fixture(scope="module")
def tiny_dataset():
    return make_dataset(DatasetConfig(
        n_paired=2, n_static=2, n_held=2, n_poses=2, seed=21,
        ring_verts=3, rings_per_segment=2, limb_count=2, segments_per_limb=1,
        torso_segments=1))


# ---- configuration -----------------------------------------------------

def test_config_validation():
    with pytest.raises(ConfigError):
        TrainConfig(lr=0.0)
    with pytest.raises(ConfigError):
        TrainConfig(accum_pairs=0)
    with pytest.raises(ConfigError):
        TrainConfig(paired_ratio=0, unpaired_ratio=0)
    with pytest.raises(ConfigError):
        TrainConfig(lr_schedule="linear")


def test_lr_schedule_endpoints():
    cfg = TrainConfig(steps=100, lr=1e-3, lr_schedule="cosine", lr_floor=0.05)
    assert abs(cfg.lr_at(0) - 1e-3) < 1e-15
    assert abs(cfg.lr_at(99) - 0.05e-3) < 1e-15
    mid = cfg.lr_at(49)
    assert 0.05e-3 < mid < 1e-3
    const = TrainConfig(steps=100, lr=1e-3, lr_schedule="constant")
    assert const.lr_at(0) == const.lr_at(99) == 1e-3


def test_parse_config_file_and_overrides(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("steps = 50\nlr = 0.01  # comment\nuse_edge = false\n"
                 "dec_hidden = 32,16\n")
    cfg = parse_config(p, overrides={"steps": 7})
    assert cfg.steps == 7  # override wins over file
    assert cfg.lr == 0.01
    assert cfg.use_edge is False
    assert cfg.dec_hidden == (32, 16)


def test_parse_config_rejects_unknown_key(tmp_path):
    p = tmp_path / "cfg.txt"
    p.write_text("not_a_key = 3\n")
    with pytest.raises(ConfigError):
        parse_config(p)


def test_ablation_flags_zero_loss_weights():
    cfg = TrainConfig(use_edge=False, use_skin=False)
    w = cfg.loss_weights()
    assert w.edge == 0.0
    assert w.skin == 0.0
    assert w.rec == 1.0


# ---- optimizer ---------------------------------------------------------

def test_adam_single_step_oracle(tiny_config):
    params = init_params(tiny_config, seed=0)
    opt = Adam(params, lr=0.1, beta1=0.9, beta2=0.999, eps=1e-8)
    name, tensor = next(iter(params.named_tensors()))
    before = tensor.data.copy()
    g = np.ones_like(tensor.data)
    tensor.grad = g
    opt.step()
    # first step: m-hat = g, v-hat = g*g -> update is lr * g / (|g| + eps)
    expected = before - 0.1 * g / (np.abs(g) + 1e-8)
    assert np.abs(tensor.data - expected).max() < 1e-12


def test_adam_skips_parameters_without_grads(tiny_config):
    params = init_params(tiny_config, seed=0)
    opt = Adam(params, lr=0.1)
    snapshot = [(n, t.data.copy()) for n, t in params.named_tensors()]
    opt.step()
    for (n, before), (_, t) in zip(snapshot, params.named_tensors()):
        assert (t.data == before).all(), n


# ---- batch sampling ----------------------------------------------------

def test_paired_batches_prefer_cross_pairs(tiny_dataset):
    rng = np.random.default_rng(0)
    for _ in range(50):
        src, tgt, pose = sample_paired_batch(tiny_dataset, rng)
        assert src is not tgt
        assert 0 <= pose < len(src.poses)


# ---- training loop -----------------------------------------------------

def test_fit_zero_steps_returns_initial_params(tiny_dataset):
    cfg = dataclasses.replace(TINY, steps=0)
    result = fit(tiny_dataset, cfg)
    fresh = init_params(cfg.pipeline_config(), seed=cfg.seed)
    for (na, ta), (_, tb) in zip(result.params.named_tensors(),
                                 fresh.named_tensors()):
        assert (ta.data == tb.data).all(), na
    assert result.metrics == []


def test_fit_decreases_loss(tiny_dataset):
    cfg = dataclasses.replace(TINY, steps=40, unpaired_ratio=0)
    result = fit(tiny_dataset, cfg)
    first = result.metrics[0]["total"]
    last = np.mean([m["total"] for m in result.metrics[-5:]])
    assert last < first


def test_fit_deterministic(tiny_dataset):
    a = fit(tiny_dataset, TINY)
    b = fit(tiny_dataset, TINY)
    assert a.metrics == b.metrics
    for (na, ta), (_, tb) in zip(a.params.named_tensors(), b.params.named_tensors()):
        assert (ta.data == tb.data).all(), na


def test_resume_replays_identical_trajectory(tiny_dataset, tmp_path):
    cfg = dataclasses.replace(TINY, steps=6, ckpt_every=3, probe_every=1)
    full = fit(tiny_dataset, cfg, out_dir=tmp_path / "full")
    resumed = fit(tiny_dataset, cfg, out_dir=tmp_path / "resumed",
                  resume_from=tmp_path / "full" / "ckpt_000003.npz")
    for (na, ta), (_, tb) in zip(full.params.named_tensors(),
                                 resumed.params.named_tensors()):
        assert (ta.data == tb.data).all(), na
    assert resumed.metrics == full.metrics[3:]


def test_checkpoint_round_trip_is_bitwise(tiny_dataset, tmp_path):
    result = fit(tiny_dataset, TINY)
    path = tmp_path / "ckpt.npz"
    save_checkpoint(path, result.params, result.optimizer, TINY.steps, TINY)
    params, opt, step, config = load_checkpoint(path)
    assert step == TINY.steps
    assert config == TINY
    assert opt.t == result.optimizer.t
    for (na, ta), (_, tb) in zip(result.params.named_tensors(),
                                 params.named_tensors()):
        assert (ta.data == tb.data).all(), na
    src, tgt = tiny_dataset.held[0], tiny_dataset.held[1]
    before = pose_transfer(src.poses[0][1], src.rest, tgt.rest, result.params)
    after = pose_transfer(src.poses[0][1], src.rest, tgt.rest, params)
    assert (before.mesh.vertices == after.mesh.vertices).all()


def test_fit_writes_metrics_and_final_checkpoint(tiny_dataset, tmp_path):
    result = fit(tiny_dataset, TINY, out_dir=tmp_path)
    assert (tmp_path / "metrics.csv").is_file()
    assert (tmp_path / "ckpt_final.npz").is_file()
    header = (tmp_path / "metrics.csv").read_text().splitlines()[0]
    assert header == "step,mode,total,rec,trans,cyc,skin,edge,pmd_probe"
    assert result.final_checkpoint == str(tmp_path / "ckpt_final.npz")
