"""Graph fusion network: three aggregation layers plus a node-collapsing head.

Layer ``l`` maps node features ``X`` (N x d_in) to ``act([X, G X] @ W_l)``,
where ``G`` is the instance sub-graph's aggregation matrix. Layers 1-2 use
ReLU, the last layer is linear. The head is a learned weighted sum over the
N nodes plus a scalar bias, so each sub-graph yields one 10-vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

import numpy as np

from .clustering import DEFAULT_CLUSTER_THRESHOLD, cluster_partitioned
from .geometry import ImageMeta, QuadBox, quads_array
from .graph import (
    ADJ_THRESHOLD,
    FEATURE_DIM,
    NODES_TEXT,
    InstanceSubGraph,
    cluster_subgraph,
    denormalize_quads,
    normalize_quads,
)
from .matching import hungarian_match

MODEL_FORMAT = "boxfuse-fusion-model"
MODEL_VERSION = 1
DEFAULT_WIDTHS = (FEATURE_DIM, 64, 64, FEATURE_DIM)
LOSS_BETA = 0.33


class ShapeError(ValueError):
    pass


# ------------------------------------------------------------------ losses


def smooth_l1(x, beta: float = LOSS_BETA, mode: str = "continuous"):
    """Smooth-L1 of a residual.

    ``continuous``: ``0.5 x^2 / beta`` inside ``|x| < beta``, ``|x| - beta / 2`` outside.
    ``paper_literal``: ``0.5 x^2`` inside, ``|x| - 0.5`` outside. With beta != 1 the
    two pieces do not meet; at beta = 0.33 the value jumps by
    ``0.5 beta^2 - beta + 0.5`` and is negative for ``0.33 <= |x| < 0.5``.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    if mode == "continuous":
        out = np.where(ax < beta, 0.5 * x * x / beta, ax - 0.5 * beta)
    elif mode == "paper_literal":
        out = np.where(ax < beta, 0.5 * x * x, ax - 0.5)
    else:
        raise ValueError(f"unknown smooth-L1 mode {mode!r}")
    return float(out) if out.ndim == 0 else out


def smooth_l1_grad(x, beta: float = LOSS_BETA, mode: str = "continuous") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    inside = np.abs(x) < beta
    if mode == "continuous":
        return np.where(inside, x / beta, np.sign(x))
    if mode == "paper_literal":
        return np.where(inside, x, np.sign(x))
    raise ValueError(f"unknown smooth-L1 mode {mode!r}")


def box_loss(pred, target, beta: float = LOSS_BETA, mode: str = "continuous") -> float:
    """Sum of smooth-L1 over the 10 normalized coordinates."""
    r = np.asarray(pred, dtype=np.float64) - np.asarray(target, dtype=np.float64)
    return float(np.sum(smooth_l1(r, beta, mode)))


def box_loss_matrix(preds: np.ndarray, targets: np.ndarray, beta: float = LOSS_BETA, mode: str = "continuous") -> np.ndarray:
    r = preds[:, None, :] - targets[None, :, :]
    return np.sum(smooth_l1(r, beta, mode), axis=-1).reshape(len(preds), len(targets))


# ------------------------------------------------------------------ model


@dataclass
class FusionModel:
    layer_weights: list[np.ndarray]
    fusion_weights: np.ndarray
    fusion_bias: float = 0.0
    node_count: int = NODES_TEXT
    adj_threshold: float = ADJ_THRESHOLD
    cluster_threshold: float = DEFAULT_CLUSTER_THRESHOLD
    aggregation: str = "hadamard"
    _cache: Optional[dict] = field(default=None, repr=False, compare=False)

    @classmethod
    def init(
        cls,
        node_count: int = NODES_TEXT,
        widths: Sequence[int] = DEFAULT_WIDTHS,
        seed: int = 0,
        **hyper,
    ) -> "FusionModel":
        """Glorot-uniform initialization, deterministic in ``seed``."""
        if widths[0] != FEATURE_DIM or widths[-1] != FEATURE_DIM:
            raise ShapeError(f"first and last widths must be {FEATURE_DIM}, got {tuple(widths)}")
        rng = np.random.default_rng(seed)
        layers = []
        for d_in, d_out in zip(widths[:-1], widths[1:]):
            fan_in = 2 * d_in
            a = math.sqrt(6.0 / (fan_in + d_out))
            layers.append(rng.uniform(-a, a, size=(fan_in, d_out)))
        a = math.sqrt(6.0 / (node_count + 1))
        fusion = rng.uniform(-a, a, size=node_count)
        return cls(layers, fusion, 0.0, node_count, **hyper)

    @classmethod
    def mean_fusion(cls, node_count: int = NODES_TEXT, widths: Sequence[int] = DEFAULT_WIDTHS, **hyper) -> "FusionModel":
        """Hand-set weights that output the plain average of the node features.

        Layer 1 splits x into relu(x) and relu(-x), layer 2 passes both through,
        layer 3 recombines them; the head averages over nodes. Useful as a
        no-learning reference and for pipeline tests.
        """
        d = FEATURE_DIM
        if widths[0] != d or widths[-1] != d or min(widths[1], widths[2]) < 2 * d:
            raise ShapeError(f"mean fusion needs widths 10, >=20, >=20, 10, got {tuple(widths)}")
        w1 = np.zeros((2 * d, widths[1]))
        w1[:d, :d] = np.eye(d)
        w1[:d, d : 2 * d] = -np.eye(d)
        w2 = np.zeros((2 * widths[1], widths[2]))
        w2[: 2 * d, : 2 * d] = np.eye(2 * d)
        w3 = np.zeros((2 * widths[2], d))
        w3[:d] = np.eye(d)
        w3[d : 2 * d] = -np.eye(d)
        return cls([w1, w2, w3], np.full(node_count, 1.0 / node_count), 0.0, node_count, **hyper)

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple([self.layer_weights[0].shape[0] // 2] + [w.shape[1] for w in self.layer_weights])

    def parameters(self) -> list[np.ndarray]:
        return [*self.layer_weights, self.fusion_weights, np.array([self.fusion_bias])]

    def set_parameters(self, params: Sequence[np.ndarray]) -> None:
        k = len(self.layer_weights)
        self.layer_weights = [np.array(p, dtype=np.float64) for p in params[:k]]
        self.fusion_weights = np.array(params[k], dtype=np.float64)
        self.fusion_bias = float(np.asarray(params[k + 1]).reshape(-1)[0])

    # -------------------------------------------------------------- passes

    def forward(self, batch, keep_cache: bool = True) -> np.ndarray:
        """Run a batch of sub-graphs; returns a (B, 10) array of normalized boxes."""
        x, g = stack_batch(batch, self.node_count)
        acts = []
        h = x
        last = len(self.layer_weights) - 1
        for l, w in enumerate(self.layer_weights):
            if h.shape[-1] * 2 != w.shape[0]:
                raise ShapeError(f"layer {l} expects width {w.shape[0] // 2}, got {h.shape[-1]}")
            c = np.concatenate([h, g @ h], axis=-1)
            z = c @ w
            acts.append((c, z))
            h = z if l == last else np.maximum(z, 0.0)
        y = np.einsum("n,bnk->bk", self.fusion_weights, h) + self.fusion_bias
        if keep_cache:
            self._cache = {"g": g, "acts": acts, "yg": h}
        return y

    def backward(self, upstream) -> list[np.ndarray]:
        """Gradients of ``sum(upstream * forward(batch))`` for every parameter."""
        if self._cache is None:
            raise RuntimeError("backward called without a cached forward pass")
        g, acts, yg = self._cache["g"], self._cache["acts"], self._cache["yg"]
        dy = np.asarray(upstream, dtype=np.float64)
        if dy.shape != (yg.shape[0], yg.shape[2]):
            raise ShapeError(f"upstream gradient must have shape {(yg.shape[0], yg.shape[2])}, got {dy.shape}")
        d_fusion = np.einsum("bk,bnk->n", dy, yg)
        d_bias = np.array([dy.sum()])
        dh = self.fusion_weights[None, :, None] * dy[:, None, :]
        grads: list[np.ndarray] = [None] * len(self.layer_weights)  # type: ignore[list-item]
        gt = np.swapaxes(g, 1, 2)
        last = len(self.layer_weights) - 1
        for l in range(last, -1, -1):
            c, z = acts[l]
            w = self.layer_weights[l]
            dz = dh if l == last else dh * (z > 0)
            grads[l] = c.reshape(-1, c.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
            dc = dz @ w.T
            d = w.shape[0] // 2
            dh = dc[..., :d] + gt @ dc[..., d:]
        return [*grads, d_fusion, d_bias]

    # -------------------------------------------------------------- io

    def to_dict(self) -> dict:
        return {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "widths": list(self.widths),
            "node_count": self.node_count,
            "adj_threshold": self.adj_threshold,
            "cluster_threshold": self.cluster_threshold,
            "aggregation": self.aggregation,
            "layers": [{"shape": list(w.shape), "data": w.reshape(-1).tolist()} for w in self.layer_weights],
            "fusion_weights": self.fusion_weights.tolist(),
            "fusion_bias": self.fusion_bias,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FusionModel":
        if d.get("format") != MODEL_FORMAT:
            raise ValueError("not a fusion model file")
        if d.get("version") != MODEL_VERSION:
            raise ValueError(f"unsupported model version {d.get('version')}")
        layers = [np.asarray(e["data"], dtype=np.float64).reshape(e["shape"]) for e in d["layers"]]
        fusion = np.asarray(d["fusion_weights"], dtype=np.float64)
        if len(fusion) != d["node_count"]:
            raise ShapeError("fusion weight count does not match node_count")
        return cls(
            layers,
            fusion,
            float(d["fusion_bias"]),
            int(d["node_count"]),
            float(d["adj_threshold"]),
            float(d["cluster_threshold"]),
            d.get("aggregation", "hadamard"),
        )

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh)

    @classmethod
    def load(cls, path) -> "FusionModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def stack_batch(batch, node_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Accept a list of sub-graphs or an ``(X, G)`` pair and return stacked arrays."""
    if isinstance(batch, tuple):
        x, g = batch
    else:
        batch = list(batch)
        if not batch:
            return np.zeros((0, node_count, FEATURE_DIM)), np.zeros((0, node_count, node_count))
        x = np.stack([sg.node_features for sg in batch])
        g = np.stack([sg.aggregation for sg in batch])
    if x.ndim != 3 or x.shape[1] != node_count or g.shape[1:] != (node_count, node_count):
        raise ShapeError(f"sub-graphs must have {node_count} nodes, got features of shape {x.shape}")
    return x, g


# ------------------------------------------------------------------ optimizer


@dataclass
class AdamState:
    lr: float = 1e-4
    decay: float = 0.94
    decay_every: int = 10_000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def lr_at(self, step: int) -> float:
        """Learning rate used by update number ``step`` (1-based)."""
        return self.lr * self.decay ** ((max(step, 1) - 1) // self.decay_every)

    def update(self, params: list[np.ndarray], grads: list[np.ndarray]) -> list[np.ndarray]:
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        self.step += 1
        lr = self.lr_at(self.step)
        c1 = 1.0 - self.beta1**self.step
        c2 = 1.0 - self.beta2**self.step
        out = []
        for i, (p, g) in enumerate(zip(params, grads)):
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g
            out.append(p - lr * (self.m[i] / c1) / (np.sqrt(self.v[i] / c2) + self.eps))
        return out


# ------------------------------------------------------------------ training


@dataclass
class TrainingImage:
    """Stacked sub-graphs of one image and its normalized ground-truth targets."""

    features: np.ndarray  # (M, N, 10)
    aggregation: np.ndarray  # (M, N, N)
    targets: np.ndarray  # (K, 10)
    image_id: str = ""


def image_subgraphs(
    boxes: Sequence[QuadBox],
    meta: ImageMeta,
    node_count: int,
    cluster_threshold: float,
    adj_threshold: float,
    aggregation: str = "hadamard",
):
    clusters = cluster_partitioned(boxes, cluster_threshold, meta.image_id)
    graphs = [cluster_subgraph(c, meta, node_count, adj_threshold, aggregation) for c in clusters]
    return clusters, graphs


def prepare_image(
    dense: Sequence[QuadBox],
    ground_truth: Sequence[QuadBox],
    meta: ImageMeta,
    node_count: int = NODES_TEXT,
    cluster_threshold: float = DEFAULT_CLUSTER_THRESHOLD,
    adj_threshold: float = ADJ_THRESHOLD,
    aggregation: str = "hadamard",
) -> TrainingImage:
    _, graphs = image_subgraphs(dense, meta, node_count, cluster_threshold, adj_threshold, aggregation)
    x, g = stack_batch(graphs, node_count)
    targets = normalize_quads(quads_array(ground_truth), meta.width, meta.height) if ground_truth else np.zeros((0, FEATURE_DIM))
    return TrainingImage(x, g, targets, meta.image_id)


def matched_loss(
    preds: np.ndarray, targets: np.ndarray, beta: float = LOSS_BETA, mode: str = "continuous"
) -> tuple[float, np.ndarray]:
    """Loss of the optimal prediction/target matching and its gradient w.r.t. ``preds``.

    Unmatched predictions and targets contribute nothing.
    """
    grad = np.zeros_like(preds)
    if len(preds) == 0 or len(targets) == 0:
        return 0.0, grad
    cost = box_loss_matrix(preds, targets, beta, mode)
    total = 0.0
    for i, j in hungarian_match(cost):
        total += cost[i, j]
        grad[i] = smooth_l1_grad(preds[i] - targets[j], beta, mode)
    return total, grad


def batch_loss(model: FusionModel, images: Sequence[TrainingImage], beta: float = LOSS_BETA, mode: str = "continuous"):
    """Mean matched loss over the images and the gradient w.r.t. the stacked predictions."""
    x = np.concatenate([im.features for im in images]) if images else np.zeros((0, model.node_count, FEATURE_DIM))
    g = np.concatenate([im.aggregation for im in images]) if images else np.zeros((0, model.node_count, model.node_count))
    preds = model.forward((x, g))
    upstream = np.zeros_like(preds)
    total = 0.0
    lo = 0
    for im in images:
        hi = lo + len(im.features)
        loss, grad = matched_loss(preds[lo:hi], im.targets, beta, mode)
        total += loss
        upstream[lo:hi] = grad
        lo = hi
    n = max(len(images), 1)
    return total / n, upstream / n


def dataset_loss(
    model: FusionModel, images: Sequence[TrainingImage], beta: float = LOSS_BETA, mode: str = "continuous", chunk: int = 64
) -> float:
    """Mean matched loss over a whole image set, evaluated in chunks without touching the cache."""
    total = 0.0
    for lo in range(0, len(images), chunk):
        part = [im for im in images[lo : lo + chunk] if len(im.features)]
        if not part:
            continue
        preds = model.forward((np.concatenate([im.features for im in part]), np.concatenate([im.aggregation for im in part])), keep_cache=False)
        at = 0
        for im in part:
            total += matched_loss(preds[at : at + len(im.features)], im.targets, beta, mode)[0]
            at += len(im.features)
    return total / max(len(images), 1)


def train_step(
    model: FusionModel,
    optimizer: AdamState,
    images: Sequence[TrainingImage],
    beta: float = LOSS_BETA,
    mode: str = "continuous",
) -> float:
    """One Adam update on the batch; returns the loss before the update."""
    if not any(len(im.targets) for im in images):
        return 0.0
    loss, upstream = batch_loss(model, images, beta, mode)
    grads = model.backward(upstream)
    model.set_parameters(optimizer.update(model.parameters(), grads))
    model._cache = None
    return loss


def train(
    model: FusionModel,
    optimizer: AdamState,
    images: Sequence[TrainingImage],
    steps: int,
    batch_size: int = 8,
    seed: int = 0,
    beta: float = LOSS_BETA,
    mode: str = "continuous",
) -> Iterator[tuple[int, float, float]]:
    """Yield ``(step, loss, lr)`` per update; images are reshuffled every epoch."""
    usable = [im for im in images if len(im.features)]
    if not usable:
        return
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(usable))
    pos = 0
    for _ in range(steps):
        if pos + batch_size > len(order):
            order = rng.permutation(len(usable))
            pos = 0
        batch = [usable[i] for i in order[pos : pos + batch_size]]
        pos += batch_size
        lr = optimizer.lr_at(optimizer.step + 1)
        loss = train_step(model, optimizer, batch, beta, mode)
        yield optimizer.step, loss, lr


# ------------------------------------------------------------------ inference


def fuse(
    model: FusionModel,
    boxes: Sequence[QuadBox],
    meta: ImageMeta,
    cluster_threshold: Optional[float] = None,
    adj_threshold: Optional[float] = None,
) -> list[QuadBox]:
    """Cluster, build sub-graphs, run the network and map each output back to pixels."""
    if not boxes:
        return []
    ct = model.cluster_threshold if cluster_threshold is None else cluster_threshold
    at = model.adj_threshold if adj_threshold is None else adj_threshold
    clusters, graphs = image_subgraphs(boxes, meta, model.node_count, ct, at, model.aggregation)
    preds = model.forward(graphs, keep_cache=False)
    quads = denormalize_quads(preds, meta.width, meta.height)
    out = []
    for c, q in zip(clusters, quads):
        score = min(1.0, max(0.0, c.mean_score))
        out.append(QuadBox(tuple(map(tuple, q)), score, c.class_id))
    return out
