"""Learned pose-transfer modules and the composed pipeline.

Three networks cooperate:

* a skinning weight predictor (graph convolutions + row softmax) that
  softly segments any mesh into K corresponding deformation parts,
* a mesh encoder (graph convolutions) whose per-vertex features are
  aggregated into per-part latents through the skinning weights acting
  as an attention map,
* a per-part transformation decoder (shared MLP) that turns the target
  part latent, the source pose delta, and the analytic source transform
  into a residual rigid transform for each part.

The decoder output parameterizes rotations with the continuous 6D
representation and is composed onto the analytic source transform, so a
zero-initialized output layer reproduces the analytic retarget exactly.

The analytic registration (weighted Kabsch) is treated as a constant
with respect to gradients: transforms enter the graph as fixed inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .articulation import (
    COVERAGE_EPS,
    PartCenters,
    RigidTransform,
    estimate_part_transforms,
    part_centers,
)
from .mesh import (
    GraphOperator,
    Mesh,
    graph_operator,
    normalize_vertices,
    vertex_features,
)

#: Bias added to the raw 6D rotation output so that a zero network output
#: orthonormalizes to the identity rotation.
ROT6D_IDENTITY = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])


@dataclass(frozen=True)
class PipelineConfig:
    """Architecture hyperparameters shared by all three networks."""

    k_parts: int = 40
    latent: int = 128
    feature_dim: int = 6
    skin_hidden: tuple = (64, 128, 128)
    enc_hidden: tuple = (64, 128, 128)
    dec_hidden: tuple = (256, 128)
    leak: float = 0.2


@dataclass
class GraphConvLayer:
    """h' = leaky(A h W_neigh + h W_self + b) with A the graph operator."""

    w_neigh: ad.Tensor
    w_self: ad.Tensor
    bias: ad.Tensor


@dataclass
class SkinningPredictorParams:
    layers: list
    out_w: ad.Tensor
    out_b: ad.Tensor


@dataclass
class EncoderParams:
    layers: list
    out_w: ad.Tensor
    out_b: ad.Tensor
    conv_w: ad.Tensor  # per-part kernel-size-1 conv on attended features
    conv_b: ad.Tensor


@dataclass
class DecoderParams:
    layers: list  # list of (w, b); final layer maps to 9 = 6D rotation + translation


@dataclass
class PoseTransferParams:
    config: PipelineConfig
    skinning: SkinningPredictorParams
    encoder: EncoderParams
    decoder: DecoderParams

    def named_tensors(self):
        for i, layer in enumerate(self.skinning.layers):
            yield f"skin.conv{i}.w_neigh", layer.w_neigh
            yield f"skin.conv{i}.w_self", layer.w_self
            yield f"skin.conv{i}.bias", layer.bias
        yield "skin.out.w", self.skinning.out_w
        yield "skin.out.b", self.skinning.out_b
        for i, layer in enumerate(self.encoder.layers):
            yield f"enc.conv{i}.w_neigh", layer.w_neigh
            yield f"enc.conv{i}.w_self", layer.w_self
            yield f"enc.conv{i}.bias", layer.bias
        yield "enc.out.w", self.encoder.out_w
        yield "enc.out.b", self.encoder.out_b
        yield "enc.attend.w", self.encoder.conv_w
        yield "enc.attend.b", self.encoder.conv_b
        for i, (w, b) in enumerate(self.decoder.layers):
            yield f"dec.fc{i}.w", w
            yield f"dec.fc{i}.b", b

    def zero_grads(self):
        for _, t in self.named_tensors():
            t.zero_grad()

    def groups(self) -> dict:
        """Parameter tensors bucketed by module, for gradient checking."""
        out = {"skinning": [], "encoder": [], "decoder": []}
        for name, t in self.named_tensors():
            key = {"skin": "skinning", "enc": "encoder", "dec": "decoder"}[name.split(".")[0]]
            out[key].append((name, t))
        return out


def _leaf(rng: np.random.Generator, shape, scale: float) -> ad.Tensor:
    return ad.Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _conv_stack_params(rng, dims) -> list:
    layers = []
    for d_in, d_out in zip(dims[:-1], dims[1:]):
        s = np.sqrt(1.0 / d_in)
        layers.append(GraphConvLayer(
            w_neigh=_leaf(rng, (d_in, d_out), s),
            w_self=_leaf(rng, (d_in, d_out), s),
            bias=ad.Tensor(np.zeros(d_out), requires_grad=True),
        ))
    return layers


def init_params(config: PipelineConfig = PipelineConfig(), seed: int = 0,
                zero_decoder_out: bool = True) -> PoseTransferParams:
    """Seeded parameter initialization.

    The decoder output layer starts at zero by default so that the whole
    pipeline initially applies the analytic source transforms unchanged.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x9e3779b9]))
    c = config
    skin_dims = (c.feature_dim,) + tuple(c.skin_hidden)
    enc_dims = (c.feature_dim,) + tuple(c.enc_hidden)
    skinning = SkinningPredictorParams(
        layers=_conv_stack_params(rng, skin_dims),
        out_w=_leaf(rng, (skin_dims[-1], c.k_parts), np.sqrt(1.0 / skin_dims[-1])),
        out_b=ad.Tensor(np.zeros(c.k_parts), requires_grad=True),
    )
    encoder = EncoderParams(
        layers=_conv_stack_params(rng, enc_dims),
        out_w=_leaf(rng, (enc_dims[-1], c.latent), np.sqrt(1.0 / enc_dims[-1])),
        out_b=ad.Tensor(np.zeros(c.latent), requires_grad=True),
        conv_w=_leaf(rng, (c.latent, c.latent), np.sqrt(1.0 / c.latent)),
        conv_b=ad.Tensor(np.zeros(c.latent), requires_grad=True),
    )
    dec_dims = (2 * c.latent + 12,) + tuple(c.dec_hidden) + (9,)
    dec_layers = []
    for i, (d_in, d_out) in enumerate(zip(dec_dims[:-1], dec_dims[1:])):
        last = i == len(dec_dims) - 2
        if last and zero_decoder_out:
            w = ad.Tensor(np.zeros((d_in, d_out)), requires_grad=True)
        else:
            w = _leaf(rng, (d_in, d_out), np.sqrt(2.0 / d_in))
        dec_layers.append((w, ad.Tensor(np.zeros(d_out), requires_grad=True)))
    decoder = DecoderParams(layers=dec_layers)
    return PoseTransferParams(config=config, skinning=skinning,
                              encoder=encoder, decoder=decoder)


# ---- forward passes ----------------------------------------------------

def _conv_stack(x, graph: GraphOperator, layers, leak: float):
    h = ad.as_tensor(x)
    for layer in layers:
        h = ad.leaky_relu(
            ad.sparse_matmul(graph.matrix, h) @ layer.w_neigh
            + h @ layer.w_self + layer.bias,
            alpha=leak,
        )
    return h


def predict_skinning(features, graph: GraphOperator, params: SkinningPredictorParams,
                     leak: float = 0.2) -> ad.Tensor:
    """(N, 6) features -> (N, K) row-stochastic skinning weights."""
    h = _conv_stack(features, graph, params.layers, leak)
    return ad.softmax_rows(h @ params.out_w + params.out_b)


def encode(features, graph: GraphOperator, params: EncoderParams,
           leak: float = 0.2) -> ad.Tensor:
    """(N, 6) features -> (N, C) per-vertex latent."""
    h = _conv_stack(features, graph, params.layers, leak)
    return h @ params.out_w + params.out_b


def attend(w, y, params: EncoderParams) -> ad.Tensor:
    """Aggregate per-vertex latents into per-part latents: conv1d(W^T Y)."""
    pooled = ad.transpose(ad.as_tensor(w)) @ ad.as_tensor(y)
    return pooled @ params.conv_w + params.conv_b


def rotations_from_6d(raw: ad.Tensor) -> list:
    """(K, 6) -> K rotation matrices via Gram-Schmidt of two 3-vectors.

    The identity bias is added first, so zero input gives the identity.
    Columns of each rotation are the two orthonormalized vectors and
    their cross product.
    """
    biased = raw + ad.constant(ROT6D_IDENTITY[None, :])
    a, b = biased[:, 0:3], biased[:, 3:6]
    b1 = a / ad.norm_rows(a, 1e-12)
    dot = ad.sum_(b * b1, axis=1, keepdims=True)
    u = b - dot * b1
    b2 = u / ad.norm_rows(u, 1e-12)
    b3 = ad.cross_rows(b1, b2)
    k = raw.shape[0]
    rotations = []
    for i in range(k):
        cols = ad.concat([b1[i:i + 1, :], b2[i:i + 1, :], b3[i:i + 1, :]], axis=0)
        rotations.append(ad.transpose(cols))
    return rotations


def decode_transforms(z_target, z_pose_delta, t_source: list[RigidTransform],
                      params: DecoderParams, leak: float = 0.2):
    """Predict target part transforms as residuals on the source transforms.

    Returns (rotations, translations, flat) where rotations/translations
    are per-part tensors and flat is the (K, 12) flattened prediction
    used by the transformation-regression loss.
    """
    t_flat = ad.constant(np.stack([tf.flat() for tf in t_source]))
    h = ad.concat([ad.as_tensor(z_target), ad.as_tensor(z_pose_delta), t_flat], axis=1)
    for i, (w, b) in enumerate(params.layers):
        h = h @ w + b
        if i < len(params.layers) - 1:
            h = ad.leaky_relu(h, alpha=leak)
    res_rotations = rotations_from_6d(h[:, 0:6])
    res_translation = h[:, 6:9]
    rotations, translations, flat_rows = [], [], []
    for k, tf in enumerate(t_source):
        r = res_rotations[k] @ ad.constant(tf.rotation)
        t = res_translation[k:k + 1, :] + ad.constant(tf.translation[None, :])
        rotations.append(r)
        translations.append(t)
        flat_rows.append(ad.concat([r.reshape(1, 9), t], axis=1))
    return rotations, translations, ad.concat(flat_rows, axis=0)


def centers_tensor(w: ad.Tensor, vertices) -> ad.Tensor:
    """Differentiable part centers: (W^T V) / column sums, (K, 3)."""
    v = ad.as_tensor(vertices)
    num = ad.transpose(w) @ v
    cov = ad.transpose(ad.sum_(w, axis=0, keepdims=True))
    return num / ad.clip(cov, COVERAGE_EPS, np.inf)


def lbs_tensor(vertices, w: ad.Tensor, rotations, translations,
               centers: ad.Tensor) -> ad.Tensor:
    """Differentiable LBS over K per-part rigid transforms."""
    v = ad.as_tensor(vertices)
    out = None
    for k in range(w.shape[1]):
        local = (v - centers[k:k + 1, :]) @ ad.transpose(rotations[k]) + translations[k]
        term = w[:, k:k + 1] * local
        out = term if out is None else out + term
    return out


def vertex_features_tensor(v: ad.Tensor, faces: np.ndarray) -> ad.Tensor:
    """Differentiable [position | area-weighted unit normal] features."""
    n = v.shape[0]
    v0, v1, v2 = (ad.rows(v, faces[:, c]) for c in range(3))
    fn = ad.cross_rows(v1 - v0, v2 - v0)
    acc = None
    for c in range(3):
        s = ad.scatter_rows(fn, faces[:, c], n)
        acc = s if acc is None else acc + s
    normals = acc / ad.norm_rows(acc, 1e-12)
    return ad.concat([v, normals], axis=1)


# ---- composed pipeline -------------------------------------------------

@dataclass
class CharContext:
    """Per-character precomputation in the unit-height normalized frame."""

    mesh: Mesh
    norm_vertices: np.ndarray
    center: np.ndarray
    scale: float
    graph: GraphOperator
    features: np.ndarray

    def normalize(self, vertices: np.ndarray) -> np.ndarray:
        return (vertices - self.center) / self.scale

    def denormalize(self, vertices: np.ndarray) -> np.ndarray:
        return vertices * self.scale + self.center


def char_context(mesh: Mesh) -> CharContext:
    norm, center, scale = normalize_vertices(mesh.vertices)
    normed = mesh.with_vertices(norm)
    return CharContext(mesh=mesh, norm_vertices=norm, center=center, scale=scale,
                       graph=graph_operator(mesh), features=vertex_features(normed))


@dataclass
class TransferGraph:
    """All live tensors of one source-to-target transfer (normalized frame)."""

    deformed: ad.Tensor  # (N_t, 3), target frame
    w_source: ad.Tensor
    w_target: ad.Tensor
    t_source: list[RigidTransform]
    rotations: list
    translations: list
    t_flat: ad.Tensor  # (K, 12)
    target_centers: ad.Tensor


def transfer_pose_graph(posed_source_vertices, source: CharContext, target: CharContext,
                        params: PoseTransferParams,
                        t_source: list[RigidTransform] | None = None,
                        w_source: ad.Tensor | None = None,
                        w_target: ad.Tensor | None = None) -> TransferGraph:
    """Build the differentiable transfer graph.

    ``posed_source_vertices`` must already be in the source rest frame;
    it may be a plain array or a live tensor (the cycle pass feeds the
    predicted target back in).  The analytic source transforms enter as
    constants; pass ``t_source`` to pin them (gradient checking does).
    """
    leak = params.config.leak
    if w_source is None:
        w_source = predict_skinning(source.features, source.graph, params.skinning, leak)
    if w_target is None:
        w_target = predict_skinning(target.features, target.graph, params.skinning, leak)

    if isinstance(posed_source_vertices, ad.Tensor):
        posed_feats = vertex_features_tensor(posed_source_vertices, source.mesh.faces)
        posed_np = posed_source_vertices.data
    else:
        posed_np = np.asarray(posed_source_vertices, dtype=np.float64)
        posed_feats = ad.constant(
            vertex_features(source.mesh.with_vertices(posed_np)))

    y_rest = encode(source.features, source.graph, params.encoder, leak)
    y_posed = encode(posed_feats, source.graph, params.encoder, leak)
    y_target = encode(target.features, target.graph, params.encoder, leak)

    z_rest = attend(w_source, y_rest, params.encoder)
    z_posed = attend(w_source, y_posed, params.encoder)
    z_target = attend(w_target, y_target, params.encoder)

    if t_source is None:
        rest_mesh = source.mesh.with_vertices(source.norm_vertices)
        posed_mesh = source.mesh.with_vertices(posed_np)
        w_np = _renormalized(w_source.data)
        t_source = estimate_part_transforms(rest_mesh, posed_mesh, w_np)

    rotations, translations, t_flat = decode_transforms(
        z_target, z_posed - z_rest, t_source, params.decoder, leak)

    target_centers = centers_tensor(w_target, target.norm_vertices)
    deformed = lbs_tensor(target.norm_vertices, w_target, rotations,
                          translations, target_centers)
    return TransferGraph(deformed=deformed, w_source=w_source, w_target=w_target,
                         t_source=t_source, rotations=rotations,
                         translations=translations, t_flat=t_flat,
                         target_centers=target_centers)


def _renormalized(w: np.ndarray) -> np.ndarray:
    # softmax rows sum to 1 only up to float error; tighten for validation
    return w / w.sum(axis=1, keepdims=True)


@dataclass
class TransferResult:
    mesh: Mesh
    w_source: np.ndarray
    w_target: np.ndarray
    transforms: list[RigidTransform]
    t_source: list[RigidTransform]


def pose_transfer(source_posed: Mesh, source_rest: Mesh, target_rest: Mesh,
                  params: PoseTransferParams,
                  t_source: list[RigidTransform] | None = None) -> TransferResult:
    """Full transfer on plain meshes: returns the deformed target in model
    units plus the predicted skinnings and part transforms."""
    if source_posed.n_vertices != source_rest.n_vertices:
        raise ValueError("posed and rest source must share vertices")
    src = char_context(source_rest)
    tgt = char_context(target_rest)
    posed_norm = src.normalize(source_posed.vertices)
    graph = transfer_pose_graph(posed_norm, src, tgt, params, t_source=t_source)
    out_vertices = tgt.denormalize(graph.deformed.data)
    transforms = [
        RigidTransform(rotation=r.data, translation=t.data.ravel())
        for r, t in zip(graph.rotations, graph.translations)
    ]
    return TransferResult(
        mesh=target_rest.with_vertices(out_vertices),
        w_source=_renormalized(graph.w_source.data),
        w_target=_renormalized(graph.w_target.data),
        transforms=transforms,
        t_source=graph.t_source,
    )
