"""Semi-supervised training: paired batches (reconstruction + transform
regression) interleaved with static-target batches (cycle consistency +
pseudo-ground truth), with skinning and edge losses throughout.

The reference loop is single-threaded and fully deterministic: batch
sampling derives a fresh rng from (seed, step, substep), so resuming
from a checkpoint replays the identical trajectory.
"""
from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .articulation import PartCenters
from .evaluation import pmd
from .losses import (
    LossWeights,
    loss_cycle,
    loss_edge,
    loss_rec,
    loss_skin,
    loss_trans,
    total_loss,
)
from .mesh import edge_set
from .networks import (
    CharContext,
    PipelineConfig,
    PoseTransferParams,
    char_context,
    init_params,
    transfer_pose_graph,
)
from .synth import Dataset

METRICS_HEADER = ["step", "mode", "total", "rec", "trans", "cyc", "skin", "edge", "pmd_probe"]


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 240
    lr: float = 1e-3
    lr_schedule: str = "cosine"  # "cosine" (decay to lr_floor * lr) or "constant"
    lr_floor: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    paired_ratio: int = 1
    unpaired_ratio: int = 1
    accum_pairs: int = 4
    seed: int = 0
    ckpt_every: int = 100
    probe_every: int = 10
    use_edge: bool = True
    use_pseudo: bool = True
    use_skin: bool = True
    lambda_rec: float = 1.0
    lambda_trans: float = 1.0
    lambda_cyc: float = 1.0
    lambda_skin: float = 0.1
    lambda_edge: float = 0.5
    w_pseudo: float = 0.3
    n_skin_pairs: int = 256
    skin_clamp: float = 5.0
    k_parts: int = 40
    latent: int = 128
    skin_hidden: tuple = (64, 128, 128)
    enc_hidden: tuple = (64, 128, 128)
    dec_hidden: tuple = (256, 128)
    leak: float = 0.2

    def __post_init__(self):
        if self.lr <= 0 or self.adam_eps <= 0:
            raise ConfigError("rates must be positive")
        if self.paired_ratio < 0 or self.unpaired_ratio < 0 or \
                self.paired_ratio + self.unpaired_ratio == 0:
            raise ConfigError("batch ratio weights must be >= 0 and not both zero")
        if self.accum_pairs < 1:
            raise ConfigError("accum_pairs must be >= 1")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ConfigError(f"unknown lr_schedule {self.lr_schedule!r}")
        if not 0.0 <= self.lr_floor <= 1.0:
            raise ConfigError("lr_floor must be in [0, 1]")

    def lr_at(self, step: int) -> float:
        """Learning rate for a given step under the configured schedule."""
        if self.lr_schedule == "constant" or self.steps <= 1:
            return self.lr
        frac = min(max(step / (self.steps - 1), 0.0), 1.0)
        lo = self.lr * self.lr_floor
        return lo + 0.5 * (self.lr - lo) * (1.0 + np.cos(np.pi * frac))

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            rec=self.lambda_rec,
            trans=self.lambda_trans,
            cyc=self.lambda_cyc,
            skin=self.lambda_skin if self.use_skin else 0.0,
            edge=self.lambda_edge if self.use_edge else 0.0,
            w_pseudo=self.w_pseudo,
        )

    def pipeline_config(self) -> PipelineConfig:
        return PipelineConfig(k_parts=self.k_parts, latent=self.latent,
                              skin_hidden=tuple(self.skin_hidden),
                              enc_hidden=tuple(self.enc_hidden),
                              dec_hidden=tuple(self.dec_hidden), leak=self.leak)


def _coerce(value: str, default):
    if isinstance(default, bool):
        low = value.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ConfigError(f"expected boolean, got {value!r}")
    if isinstance(default, int):
        return int(value)
    if isinstance(default, float):
        return float(value)
    if isinstance(default, tuple):
        return tuple(int(v) for v in value.split(",") if v.strip())
    return value


def parse_config(path, base: TrainConfig | None = None,
                 overrides: dict | None = None) -> TrainConfig:
    """Line-based ``key = value`` config; CLI overrides win over the file."""
    values = {}
    if path is not None:
        defaults = dataclasses.asdict(TrainConfig())
        try:
            fh = open(path, "r")
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}")
        with fh:
            for lineno, raw in enumerate(fh, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
                key, _, val = line.partition("=")
                key, val = key.strip(), val.strip()
                if key not in defaults:
                    raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
                try:
                    values[key] = _coerce(val, defaults[key])
                except (ValueError, ConfigError) as exc:
                    raise ConfigError(f"{path}:{lineno}: {exc}")
    merged = dataclasses.asdict(base or TrainConfig())
    merged.update(values)
    if overrides:
        merged.update(overrides)
    try:
        return TrainConfig(**merged)
    except TypeError as exc:
        raise ConfigError(str(exc))


def config_hash(config: TrainConfig) -> str:
    import hashlib

    payload = json.dumps(dataclasses.asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


class Adam:
    """Adaptive-moment optimizer over the named parameter tensors."""

    def __init__(self, params: PoseTransferParams, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.t = 0
        self.m = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}
        self.v = {name: np.zeros_like(t.data) for name, t in params.named_tensors()}

    @classmethod
    def from_config(cls, params: PoseTransferParams, config: TrainConfig) -> "Adam":
        return cls(params, lr=config.lr, beta1=config.beta1, beta2=config.beta2,
                   eps=config.adam_eps)

    def step(self):
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, tensor in self.params.named_tensors():
            if tensor.grad is None:
                continue
            g = tensor.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            tensor.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


# ---- checkpointing -----------------------------------------------------

def save_checkpoint(path, params: PoseTransferParams, opt: Adam | None,
                    step: int, config: TrainConfig) -> None:
    arrays = {f"param/{n}": t.data for n, t in params.named_tensors()}
    if opt is not None:
        arrays.update({f"adam_m/{n}": a for n, a in opt.m.items()})
        arrays.update({f"adam_v/{n}": a for n, a in opt.v.items()})
        arrays["adam_t"] = np.array(opt.t)
    arrays["step"] = np.array(step)
    arrays["config_json"] = np.frombuffer(
        json.dumps(dataclasses.asdict(config)).encode(), dtype=np.uint8)
    arrays["config_hash"] = np.frombuffer(config_hash(config).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_checkpoint(path):
    """Returns (params, optimizer-or-None, step, config).

    Parameter arrays round-trip bitwise through the npz container.
    """
    with np.load(path) as data:
        config = TrainConfig(**{
            k: tuple(v) if isinstance(v, list) else v
            for k, v in json.loads(bytes(data["config_json"]).decode()).items()
        })
        params = init_params(config.pipeline_config(), seed=config.seed)
        for name, tensor in params.named_tensors():
            tensor.data = data[f"param/{name}"].copy()
        opt = None
        if "adam_t" in data:
            opt = Adam.from_config(params, config)
            opt.t = int(data["adam_t"])
            for name in opt.m:
                opt.m[name] = data[f"adam_m/{name}"].copy()
                opt.v[name] = data[f"adam_v/{name}"].copy()
        step = int(data["step"])
    return params, opt, step, config


# ---- batch construction ------------------------------------------------

class _ContextCache:
    """Per-character pipeline precomputation, keyed by sample identity."""

    def __init__(self):
        self._ctx: dict = {}
        self._edges: dict = {}

    def context(self, sample) -> CharContext:
        key = id(sample)
        if key not in self._ctx:
            self._ctx[key] = char_context(sample.rest)
        return self._ctx[key]

    def edges(self, sample) -> np.ndarray:
        key = id(sample)
        if key not in self._edges:
            self._edges[key] = edge_set(sample.rest)
        return self._edges[key]


def _skin_component(graph, src_sample, tgt_sample, config: TrainConfig, seed: int):
    terms = []
    for w, sample in ((graph.w_source, src_sample), (graph.w_target, tgt_sample)):
        if sample.gt_skinning is not None:
            terms.append(loss_skin(w, sample.gt_skinning,
                                   n_pairs=config.n_skin_pairs, rng_seed=seed,
                                   clamp=config.skin_clamp))
    if not terms:
        return None
    out = terms[0]
    for t in terms[1:]:
        out = out + t
    return out * (1.0 / len(terms))


def paired_components(src_sample, tgt_sample, pose_idx: int, cache: _ContextCache,
                      params: PoseTransferParams, config: TrainConfig, seed: int):
    """Loss components for a paired batch: both characters share the pose."""
    src = cache.context(src_sample)
    tgt = cache.context(tgt_sample)
    posed_norm = src.normalize(src_sample.poses[pose_idx][1].vertices)
    gt_norm = tgt.normalize(tgt_sample.poses[pose_idx][1].vertices)
    graph = transfer_pose_graph(posed_norm, src, tgt, params)

    tgt_rest_norm = tgt.mesh.with_vertices(tgt.norm_vertices)
    components = {
        "rec": loss_rec(graph.deformed, gt_norm),
        "trans": loss_trans(
            graph.t_flat, tgt_rest_norm, tgt_rest_norm.with_vertices(gt_norm),
            graph.w_target.data,
            centers=PartCenters(centers=graph.target_centers.data,
                                coverage=graph.w_target.data.sum(axis=0))),
    }
    if config.use_skin:
        components["skin"] = _skin_component(graph, src_sample, tgt_sample, config, seed)
    if config.use_edge:
        components["edge"] = loss_edge(graph.deformed, tgt_rest_norm,
                                       edges=cache.edges(tgt_sample))
    return components, graph


def unpaired_components(src_sample, pose_idx: int, tgt_sample, cache: _ContextCache,
                        params: PoseTransferParams, config: TrainConfig, seed: int):
    """Loss components for a static-target batch (cycle + pseudo)."""
    src = cache.context(src_sample)
    tgt = cache.context(tgt_sample)
    posed_norm = src.normalize(src_sample.poses[pose_idx][1].vertices)
    cyc = loss_cycle(params, posed_norm, src, tgt,
                     w_pseudo=config.w_pseudo, use_pseudo=config.use_pseudo)
    components = {"cyc": cyc.total}
    if config.use_skin:
        components["skin"] = _skin_component(cyc.forward, src_sample, tgt_sample,
                                             config, seed)
    if config.use_edge:
        tgt_rest_norm = tgt.mesh.with_vertices(tgt.norm_vertices)
        components["edge"] = loss_edge(cyc.forward.deformed, tgt_rest_norm,
                                       edges=cache.edges(tgt_sample))
    return components, cyc


def _component_report(components: dict) -> dict:
    report = {}
    for name in ("rec", "trans", "cyc", "skin", "edge"):
        term = components.get(name)
        report[name] = float(term.data) if term is not None else 0.0
    return report


def _batch_rng(seed: int, step: int, substep: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, substep]))


def sample_paired_batch(dataset: Dataset, rng: np.random.Generator):
    """Sample a (source, target, pose) paired batch.

    Source and target are distinct whenever possible: self-pairs need no
    residual correction and carry little training signal.
    """
    chars = dataset.paired
    si = int(rng.integers(len(chars)))
    ti = int(rng.integers(len(chars)))
    if len(chars) > 1 and ti == si:
        ti = (si + 1 + int(rng.integers(len(chars) - 1))) % len(chars)
    pose = int(rng.integers(len(chars[si].poses)))
    return chars[si], chars[ti], pose


def sample_unpaired_batch(dataset: Dataset, rng: np.random.Generator):
    src = dataset.paired[int(rng.integers(len(dataset.paired)))]
    pose = int(rng.integers(len(src.poses)))
    tgt = dataset.static[int(rng.integers(len(dataset.static)))]
    return src, pose, tgt


def train_step_paired(batch, params: PoseTransferParams, opt: Adam,
                      config: TrainConfig, cache: _ContextCache | None = None,
                      seed: int = 0) -> dict:
    """One paired batch -> one optimizer update; returns per-loss values."""
    cache = cache or _ContextCache()
    src, tgt, pose_idx = batch
    components, _ = paired_components(src, tgt, pose_idx, cache, params, config, seed)
    total = total_loss(components, config.loss_weights(), "paired")
    total.backward()
    opt.step()
    params.zero_grads()
    report = _component_report(components)
    report["total"] = float(total.data)
    return report


def train_step_unpaired(batch, params: PoseTransferParams, opt: Adam,
                        config: TrainConfig, cache: _ContextCache | None = None,
                        seed: int = 0) -> dict:
    """One static-target batch -> one optimizer update."""
    cache = cache or _ContextCache()
    src, pose_idx, tgt = batch
    components, _ = unpaired_components(src, pose_idx, tgt, cache, params, config, seed)
    total = total_loss(components, config.loss_weights(), "unpaired")
    total.backward()
    opt.step()
    params.zero_grads()
    report = _component_report(components)
    report["total"] = float(total.data)
    return report


def _mode_pattern(dataset: Dataset, config: TrainConfig) -> str:
    if not dataset.paired or not dataset.paired[0].poses:
        raise ConfigError("training requires paired characters with poses")
    pattern = "p" * config.paired_ratio + "u" * config.unpaired_ratio
    if not dataset.static:
        pattern = pattern.replace("u", "") or "p"
    return pattern


def _probe_pmd(dataset: Dataset, params: PoseTransferParams) -> float:
    from .networks import pose_transfer

    probe = dataset.held if len(dataset.held) >= 2 else dataset.paired
    if len(probe) < 2 or not probe[0].poses:
        return float("nan")
    src, tgt = probe[0], probe[1]
    result = pose_transfer(src.poses[0][1], src.rest, tgt.rest, params)
    return pmd(result.mesh, tgt.poses[0][1])


@dataclass
class FitResult:
    params: PoseTransferParams
    optimizer: Adam
    metrics: list
    final_checkpoint: str | None


def fit(dataset: Dataset, config: TrainConfig, out_dir=None,
        resume_from=None, log=None) -> FitResult:
    """Run the training loop; optionally write checkpoints + metrics CSV."""
    if resume_from is not None:
        params, opt, start_step, config = load_checkpoint(resume_from)
        if opt is None:
            opt = Adam.from_config(params, config)
    else:
        params = init_params(config.pipeline_config(), seed=config.seed)
        opt = Adam.from_config(params, config)
        start_step = 0
    cache = _ContextCache()
    pattern = _mode_pattern(dataset, config)
    weights = config.loss_weights()
    metrics: list = []
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    last_probe = _probe_pmd(dataset, params)

    for step in range(start_step, config.steps):
        opt.lr = config.lr_at(step)
        mode = pattern[step % len(pattern)]
        accum_reports = []
        for sub in range(config.accum_pairs):
            rng = _batch_rng(config.seed, step, sub)
            skin_seed = int(rng.integers(2 ** 31))
            if mode == "p":
                src, tgt, pose_idx = sample_paired_batch(dataset, rng)
                components, _ = paired_components(src, tgt, pose_idx, cache,
                                                  params, config, skin_seed)
                total = total_loss(components, weights, "paired")
            else:
                src, pose_idx, tgt = sample_unpaired_batch(dataset, rng)
                components, _ = unpaired_components(src, pose_idx, tgt, cache,
                                                    params, config, skin_seed)
                total = total_loss(components, weights, "unpaired")
            (total * (1.0 / config.accum_pairs)).backward()
            report = _component_report(components)
            report["total"] = float(total.data)
            accum_reports.append(report)
        opt.step()
        params.zero_grads()

        row = {k: float(np.mean([r[k] for r in accum_reports]))
               for k in ("total", "rec", "trans", "cyc", "skin", "edge")}
        if config.probe_every and (step + 1) % config.probe_every == 0:
            last_probe = _probe_pmd(dataset, params)
        row.update(step=step, mode="paired" if mode == "p" else "unpaired",
                   pmd_probe=last_probe)
        metrics.append(row)
        if log:
            log(row)
        if out_dir is not None and config.ckpt_every and \
                (step + 1) % config.ckpt_every == 0:
            save_checkpoint(os.path.join(out_dir, f"ckpt_{step + 1:06d}.npz"),
                            params, opt, step + 1, config)

    final = None
    if out_dir is not None:
        final = os.path.join(out_dir, "ckpt_final.npz")
        save_checkpoint(final, params, opt, config.steps, config)
        write_metrics_csv(os.path.join(out_dir, "metrics.csv"), metrics)
    return FitResult(params=params, optimizer=opt, metrics=metrics,
                     final_checkpoint=final)


def write_metrics_csv(path, metrics: list) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=METRICS_HEADER)
        writer.writeheader()
        for row in metrics:
            writer.writerow({k: row[k] for k in METRICS_HEADER})
