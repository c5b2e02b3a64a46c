"""Training objectives: reconstruction, transformation regression, cycle
consistency with a pseudo-ground-truth guard, contrastive skinning, and
edge-length preservation.

All losses are means (not sums) so values are comparable across meshes
of different sizes, and all return scalar autodiff tensors.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .articulation import PartCenters, hard_assignment, hard_part_transforms, part_centers
from .mesh import Mesh, edge_set
from .networks import (
    CharContext,
    PoseTransferParams,
    TransferGraph,
    _renormalized,
    transfer_pose_graph,
)


@dataclass(frozen=True)
class LossWeights:
    """Combination weights for the total objective.

    The pseudo-ground-truth weight inside the cycle loss is 0.3; the
    remaining weights are configuration defaults.
    """

    rec: float = 1.0
    trans: float = 1.0
    cyc: float = 1.0
    skin: float = 0.1
    edge: float = 0.5
    w_pseudo: float = 0.3

    def __post_init__(self):
        for name in ("rec", "trans", "cyc", "skin", "edge"):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight {name} must be non-negative")


def _mean_l1(a, b) -> ad.Tensor:
    return ad.mean(ad.abs_(ad.as_tensor(a) - ad.as_tensor(b)))


def loss_rec(pred, gt) -> ad.Tensor:
    """Per-vertex L1 between predicted and ground-truth vertex positions."""
    pred = pred.vertices if isinstance(pred, Mesh) else pred
    gt = gt.vertices if isinstance(gt, Mesh) else gt
    pred_t = ad.as_tensor(pred)
    gt_arr = gt.data if isinstance(gt, ad.Tensor) else np.asarray(gt)
    if pred_t.shape != gt_arr.shape:
        raise ValueError(f"vertex count mismatch: {pred_t.shape} vs {gt_arr.shape}")
    return _mean_l1(pred_t, ad.constant(gt_arr))


def loss_trans(pred_flat, rest: Mesh, gt_posed: Mesh, w: np.ndarray,
               centers: PartCenters | None = None) -> ad.Tensor:
    """L1 between predicted part transforms and analytic ground truth.

    Ground truth comes from unweighted Kabsch on argmax-assigned vertex
    groups; parts with fewer than 3 assigned vertices are skipped.  The
    prediction is the (K, 12) flattened transform tensor.
    """
    pred_flat = ad.as_tensor(pred_flat)
    w = _renormalized(np.asarray(w, dtype=np.float64))
    if centers is None:
        centers = part_centers(rest, w)
    labels = hard_assignment(w)
    gt = hard_part_transforms(rest, gt_posed, labels, centers)
    keep = [k for k, tf in enumerate(gt) if tf is not None]
    if not keep:
        return ad.Tensor(0.0)
    gt_rows = ad.constant(np.stack([gt[k].flat() for k in keep]))
    return _mean_l1(ad.rows(pred_flat, np.array(keep)), gt_rows)


def loss_edge(pred, target_rest: Mesh, edges: np.ndarray | None = None) -> ad.Tensor:
    """Mean absolute change of edge lengths against the rest target."""
    pred_v = ad.as_tensor(pred.vertices if isinstance(pred, Mesh) else pred)
    if edges is None:
        edges = edge_set(target_rest)
    if pred_v.shape[0] != target_rest.n_vertices:
        raise ValueError("predicted vertices do not match target mesh")
    rest_len = np.linalg.norm(
        target_rest.vertices[edges[:, 0]] - target_rest.vertices[edges[:, 1]], axis=1)
    d = ad.rows(pred_v, edges[:, 0]) - ad.rows(pred_v, edges[:, 1])
    pred_len = ad.norm_rows(d, 1e-18)
    return ad.mean(ad.abs_(pred_len - ad.constant(rest_len[:, None])))


def skin_loss_pairs(gt_skinning: np.ndarray, n_pairs: int,
                    rng: np.random.Generator, threshold: float = 0.9):
    """Sample contrastive vertex pairs from confidently-skinned vertices.

    Returns (i, j, sign) index arrays; empty when fewer than 2 vertices
    exceed the ground-truth confidence threshold.
    """
    gt = np.asarray(gt_skinning, dtype=np.float64)
    confident = np.flatnonzero(gt.max(axis=1) > threshold)
    if confident.size < 2:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, np.zeros(0)
    gt_labels = gt.argmax(axis=1)
    i = rng.choice(confident, size=n_pairs)
    j = rng.choice(confident, size=n_pairs)
    sign = np.where(gt_labels[i] == gt_labels[j], 1.0, -1.0)
    return i, j, sign


def loss_skin(w_pred, gt_skinning: np.ndarray, n_pairs: int = 256,
              rng_seed: int = 0, clamp: float = 5.0) -> ad.Tensor:
    """Contrastive KL divergence between predicted skinning rows.

    Vertices whose ground-truth row is confident (max weight > 0.9) form
    the candidate pool; same-part pairs are pulled together (KL >= 0)
    and different-part pairs pushed apart (negated KL, clamped at
    ``-clamp`` per pair to keep the objective bounded).
    """
    w_pred = ad.as_tensor(w_pred)
    rng = np.random.default_rng(rng_seed)
    i, j, sign = skin_loss_pairs(gt_skinning, n_pairs, rng)
    if i.size == 0:
        return ad.Tensor(0.0)
    wi = ad.clip(ad.rows(w_pred, i), 1e-8, 1.0)
    wj = ad.clip(ad.rows(w_pred, j), 1e-8, 1.0)
    kl = ad.sum_(wi * (ad.log(wi) - ad.log(wj)), axis=1, keepdims=True)
    signed = ad.constant(sign[:, None]) * kl
    return ad.mean(ad.clip(signed, -clamp, np.inf))


@dataclass
class CycleResult:
    total: ad.Tensor
    cycle_term: ad.Tensor
    pseudo_term: ad.Tensor
    forward: TransferGraph
    backward: TransferGraph
    pseudo_target: np.ndarray


def loss_cycle(params: PoseTransferParams, source_posed_norm: np.ndarray,
               source: CharContext, target: CharContext,
               t_source=None, t_backward=None, w_pseudo: float = 0.3,
               use_pseudo: bool = True) -> CycleResult:
    """Source -> target -> source round trip plus pseudo-ground truth.

    All geometry lives in the normalized per-character frames.  The
    backward pass reuses the forward pass's predicted skinnings; its
    analytic transforms are recomputed from the (detached) predicted
    target and enter the graph as constants unless ``t_backward`` pins
    them (gradient checking does, so both stop-gradients stay fixed).
    """
    fwd = transfer_pose_graph(source_posed_norm, source, target, params,
                              t_source=t_source)
    bwd = transfer_pose_graph(fwd.deformed, target, source, params,
                              t_source=t_backward,
                              w_source=fwd.w_target, w_target=fwd.w_source)
    cycle_term = loss_rec(bwd.deformed, ad.constant(source_posed_norm))
    from .networks import lbs_tensor  # local import to avoid cycle at module load

    pseudo = None
    pseudo_term = ad.Tensor(0.0)
    if use_pseudo:
        rot_const = [ad.constant(tf.rotation) for tf in fwd.t_source]
        tr_const = [ad.constant(tf.translation[None, :]) for tf in fwd.t_source]
        pseudo_t = lbs_tensor(target.norm_vertices, ad.constant(fwd.w_target.data),
                              rot_const, tr_const,
                              ad.constant(fwd.target_centers.data))
        pseudo = pseudo_t.data
        pseudo_term = loss_rec(fwd.deformed, ad.constant(pseudo))
    total = cycle_term + w_pseudo * pseudo_term if use_pseudo else cycle_term
    return CycleResult(total=total, cycle_term=cycle_term, pseudo_term=pseudo_term,
                       forward=fwd, backward=bwd,
                       pseudo_target=pseudo if pseudo is not None else np.zeros(0))


def total_loss(components: dict, weights: LossWeights, mode: str) -> ad.Tensor:
    """Weighted sum of whatever components the batch mode supplies.

    Paired batches carry rec + trans, unpaired batches carry cyc; skin
    and edge apply in both when present.  Missing components count as 0.
    """
    if mode not in ("paired", "unpaired"):
        raise ValueError(f"unknown mode {mode!r}")
    out = ad.Tensor(0.0)
    for name, lam in (("rec", weights.rec), ("trans", weights.trans),
                      ("cyc", weights.cyc), ("skin", weights.skin),
                      ("edge", weights.edge)):
        term = components.get(name)
        if term is not None and lam != 0.0:
            out = out + lam * ad.as_tensor(term)
    return out
