"""Instance sub-graphs: fixed-size node sets built from one cluster."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .clustering import Cluster
from .geometry import ImageMeta, QuadBox, iou_matrix, quads_array

ADJ_THRESHOLD = 0.7
NODES_TEXT = 128
NODES_AERIAL = 64
FEATURE_DIM = 10


def sample_nodes(cluster: Cluster | Sequence[QuadBox], n: int) -> list[QuadBox]:
    """Rank members by score, then take ``n`` evenly strided picks (or cycle when short)."""
    members = cluster.members if isinstance(cluster, Cluster) else list(cluster)
    if not members:
        raise ValueError("cannot sample nodes from an empty cluster")
    if n < 1:
        raise ValueError(f"node count must be >= 1, got {n}")
    ranked = sorted(members, key=lambda b: (-b.score, b.vertices))
    m = len(ranked)
    if m >= n:
        return [ranked[(k * m) // n] for k in range(n)]
    return [ranked[k % m] for k in range(n)]


def normalize_quads(quads: np.ndarray, width: float, height: float) -> np.ndarray:
    """(k, 4, 2) vertices -> (k, 10) features: center / size, then vertex offsets / size."""
    q = np.asarray(quads, dtype=np.float64).reshape(-1, 4, 2)
    center = q.mean(axis=1)
    scale = np.array([width, height], dtype=np.float64)
    offsets = (q - center[:, None, :]) / scale
    return np.concatenate([center / scale, offsets.reshape(-1, 8)], axis=1)


def denormalize_quads(u: np.ndarray, width: float, height: float) -> np.ndarray:
    """Inverse of :func:`normalize_quads`: (k, 10) -> (k, 4, 2)."""
    u = np.asarray(u, dtype=np.float64).reshape(-1, FEATURE_DIM)
    scale = np.array([width, height], dtype=np.float64)
    center = u[:, :2] * scale
    return u[:, 2:].reshape(-1, 4, 2) * scale + center[:, None, :]


def normalize_features(box: QuadBox, meta: ImageMeta) -> np.ndarray:
    return normalize_quads(box.as_array(), meta.width, meta.height)[0]


def denormalize_features(u: np.ndarray, meta: ImageMeta) -> np.ndarray:
    return denormalize_quads(u, meta.width, meta.height)[0]


@dataclass
class InstanceSubGraph:
    node_features: np.ndarray  # (N, 10)
    iou_weights: np.ndarray  # W
    adjacency: np.ndarray  # A + I
    laplacian: np.ndarray  # D^-1/2 (A + I) D^-1/2
    aggregation: np.ndarray  # G
    image_meta: ImageMeta
    source_cluster_id: Optional[int] = None

    @property
    def num_nodes(self) -> int:
        return self.node_features.shape[0]

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "image_id": self.image_meta.image_id,
            "width": self.image_meta.width,
            "height": self.image_meta.height,
            "source_cluster_id": self.source_cluster_id,
            "node_features": self.node_features.tolist(),
            "iou_weights": self.iou_weights.tolist(),
            "adjacency": self.adjacency.astype(int).tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict, aggregation: str = "hadamard") -> "InstanceSubGraph":
        meta = ImageMeta(d["width"], d["height"], d.get("image_id", ""))
        w = np.asarray(d["iou_weights"], dtype=np.float64)
        a = np.asarray(d["adjacency"], dtype=np.float64)
        lap = normalized_laplacian(a)
        return cls(
            np.asarray(d["node_features"], dtype=np.float64),
            w,
            a,
            lap,
            aggregation_matrix(lap, w, aggregation),
            meta,
            d.get("source_cluster_id"),
        )


def normalized_laplacian(adjacency: np.ndarray) -> np.ndarray:
    d = adjacency.sum(axis=1)
    # d_i * d_j is commutative in floating point, so L comes out exactly symmetric
    return adjacency / np.sqrt(np.outer(d, d))


def aggregation_matrix(laplacian: np.ndarray, weights: np.ndarray, mode: str = "hadamard") -> np.ndarray:
    # "hadamard" weights existing edges by IoU; "matmul" is the literal matrix product
    if mode == "hadamard":
        return laplacian * weights
    if mode == "matmul":
        return laplacian @ weights
    raise ValueError(f"unknown aggregation mode {mode!r}")


def build_subgraph(
    sampled: Sequence[QuadBox],
    meta: ImageMeta,
    adj_threshold: float = ADJ_THRESHOLD,
    aggregation: str = "hadamard",
    source_cluster_id: Optional[int] = None,
) -> InstanceSubGraph:
    if not 0.0 < adj_threshold < 1.0:
        raise ValueError(f"adj_threshold must lie in (0, 1), got {adj_threshold}")
    if not sampled:
        raise ValueError("sub-graph needs at least one node")
    # padding repeats boxes, so compute IoU on distinct ones and expand
    index: dict[tuple, int] = {}
    slots = [index.setdefault(b.vertices, len(index)) for b in sampled]
    uniq = [None] * len(index)
    for b in sampled:
        uniq[index[b.vertices]] = b
    w_unique = iou_matrix(quads_array(uniq))
    slots_arr = np.asarray(slots)
    w = w_unique[np.ix_(slots_arr, slots_arr)]
    np.fill_diagonal(w, 1.0)

    adj = (w >= adj_threshold).astype(np.float64)
    np.fill_diagonal(adj, 1.0)
    lap = normalized_laplacian(adj)
    return InstanceSubGraph(
        node_features=normalize_quads(quads_array(sampled), meta.width, meta.height),
        iou_weights=w,
        adjacency=adj,
        laplacian=lap,
        aggregation=aggregation_matrix(lap, w, aggregation),
        image_meta=meta,
        source_cluster_id=source_cluster_id,
    )


def cluster_subgraph(
    cluster: Cluster,
    meta: ImageMeta,
    n: int = NODES_TEXT,
    adj_threshold: float = ADJ_THRESHOLD,
    aggregation: str = "hadamard",
) -> InstanceSubGraph:
    return build_subgraph(sample_nodes(cluster, n), meta, adj_threshold, aggregation, cluster.cluster_id)
