"""Perceptual clustering weighted graph over k-means clusters."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .clustering import ClusterSet
from .errors import EmptyCluster, ShapeMismatch
from .features import FeatureSet
from .pointcloud_io import PointCloud, bounding_box

log = logging.getLogger(__name__)

# column layout of the per-point / per-node feature matrix
COLOR = (0, 1, 2)
CURVATURE = (3,)
SALIENCY = (4,)
SPATIAL = (5, 6, 7)
NODE_DIM = 8
ALPHA_RATIO = 0.15

WEIGHT_MODES = ("product", "similarity-only")
CLUSTER_SPACES = ("weighted", "features-only")


@dataclass(frozen=True)
class GraphConfig:
    cluster_radius_frac: float = 0.35
    weight_mode: str = "product"

    def __post_init__(self):
        if not self.cluster_radius_frac > 0:
            raise ValueError("cluster_radius_frac must be positive")
        if self.weight_mode not in WEIGHT_MODES:
            raise ValueError(f"weight_mode must be one of {WEIGHT_MODES}")


@dataclass
class PcwGraph:
    node_features: np.ndarray        # (k, 8)
    adjacency_color: np.ndarray      # (k, k)
    adjacency_curvature: np.ndarray  # (k, k)
    adjacency_saliency: np.ndarray   # (k, k)
    cluster_radius: float
    alpha: float
    diagonal: float = 1.0
    warnings: list = field(default_factory=list)

    @property
    def k(self):
        return self.node_features.shape[0]

    @property
    def adjacencies(self):
        return (self.adjacency_color, self.adjacency_curvature, self.adjacency_saliency)

    def support_mask(self):
        """Union of the three adjacency supports plus self-loops."""
        mask = np.zeros((self.k, self.k), dtype=bool)
        for adj in self.adjacencies:
            mask |= adj != 0
        np.fill_diagonal(mask, True)
        return mask

    def permuted(self, perm):
        perm = np.asarray(perm)
        sub = np.ix_(perm, perm)
        return PcwGraph(self.node_features[perm], self.adjacency_color[sub],
                        self.adjacency_curvature[sub], self.adjacency_saliency[sub],
                        self.cluster_radius, self.alpha, self.diagonal, list(self.warnings))


def point_feature_matrix(features: FeatureSet, cloud: PointCloud) -> np.ndarray:
    """(N, 8): five min/max-normalised channels then positions scaled by the bbox diagonal."""
    box = bounding_box(cloud)
    spatial = (cloud.positions - box.min_corner) / (box.diagonal if box.diagonal > 0 else 1.0)
    return np.column_stack([features.normalized(), spatial])


def clustering_space(point_features, mode="weighted", spatial_weight=0.5):
    if mode == "weighted":
        out = np.array(point_features, dtype=np.float64, copy=True)
        out[:, list(SPATIAL)] *= spatial_weight
        return out
    if mode == "features-only":
        return np.ascontiguousarray(point_features[:, :5], dtype=np.float64)
    raise ValueError(f"cluster space must be one of {CLUSTER_SPACES}")


def cluster_centroids(features, clusters: ClusterSet) -> np.ndarray:
    X = np.asarray(features, dtype=np.float64)
    a = np.asarray(clusters.assignments)
    if a.shape != (X.shape[0],):
        raise ShapeMismatch(f"{a.shape[0]} assignments for {X.shape[0]} points")
    counts = np.bincount(a, minlength=clusters.k)
    if np.any(counts == 0):
        raise EmptyCluster(f"clusters {np.flatnonzero(counts == 0).tolist()} have no points")
    sums = np.column_stack([np.bincount(a, X[:, c], minlength=clusters.k) for c in range(X.shape[1])])
    return sums / counts[:, None]


def rbf_similarity(distance, alpha):
    """exp(-distance / (2 alpha^2)); the distance is deliberately not squared."""
    if np.any(np.asarray(alpha) <= 0):
        raise ValueError("alpha must be positive")
    return np.exp(-np.asarray(distance, dtype=np.float64) / (2.0 * alpha * alpha))


def _pairwise(X):
    diff = X[:, None, :] - X[None, :, :]
    return np.sqrt(np.einsum("ijk,ijk->ij", diff, diff))


def build_channel_adjacency(centroids, channel_slice, spatial_slice, cluster_radius, alpha,
                            spatial_scale=1.0, weight_mode="product"):
    """Sim(d_c) * d_c between clusters whose spatial distance is within the radius.

    ``d_c`` is the Euclidean distance between the channel sub-vectors;
    ``spatial_scale`` converts spatial sub-vector distances to the units of
    ``cluster_radius``.
    """
    if cluster_radius <= 0:
        raise ValueError("cluster_radius must be positive")
    mu = np.asarray(centroids, dtype=np.float64)
    d_c = _pairwise(mu[:, list(channel_slice)])
    d_s = _pairwise(mu[:, list(spatial_slice)]) * spatial_scale
    sim = rbf_similarity(d_c, alpha)
    W = sim * d_c if weight_mode == "product" else sim
    W = np.where(d_s <= cluster_radius, W, 0.0)
    np.fill_diagonal(W, 0.0)
    # d_c is exactly symmetric, but keep the contract explicit
    return np.triu(W, 1) + np.triu(W, 1).T


def build_pcw_graph(features: FeatureSet, cloud: PointCloud, clusters: ClusterSet,
                    config: GraphConfig = GraphConfig(), point_features=None) -> PcwGraph:
    if point_features is None:
        point_features = point_feature_matrix(features, cloud)
    mu = cluster_centroids(point_features, clusters)
    diag = bounding_box(cloud).diagonal
    radius = config.cluster_radius_frac * diag
    alpha = ALPHA_RATIO * radius
    adjs = [build_channel_adjacency(mu, sl, SPATIAL, radius, alpha, spatial_scale=diag,
                                    weight_mode=config.weight_mode)
            for sl in (COLOR, CURVATURE, SALIENCY)]
    graph = PcwGraph(mu, *adjs, cluster_radius=radius, alpha=alpha, diagonal=diag)
    isolated = np.flatnonzero(~np.any(np.stack(adjs) != 0, axis=(0, 2)))
    if isolated.size:
        msg = f"DisconnectedGraph: {isolated.size} of {graph.k} nodes have no weighted edges"
        graph.warnings.append(msg)
        log.warning("%s: %s", cloud.name or "cloud", msg)
    return graph


def write_graph(graph: PcwGraph, directory) -> None:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    header = {"k": graph.k, "cluster_radius": graph.cluster_radius, "alpha": graph.alpha,
              "diagonal": graph.diagonal, "warnings": graph.warnings}
    (out / "graph.json").write_text(json.dumps(header, indent=2) + "\n")
    for name, adj in zip(("color", "curvature", "saliency"), graph.adjacencies):
        np.savetxt(out / f"adjacency_{name}.csv", adj, delimiter=",", fmt="%.17g")
    np.savetxt(out / "node_features.csv", graph.node_features, delimiter=",", fmt="%.17g")


def read_graph(directory) -> PcwGraph:
    src = Path(directory)
    header = json.loads((src / "graph.json").read_text())
    k = header["k"]
    load = lambda name: np.loadtxt(src / name, delimiter=",", ndmin=2).reshape(k, -1)
    adjs = [load(f"adjacency_{n}.csv") for n in ("color", "curvature", "saliency")]
    return PcwGraph(load("node_features.csv"), *adjs, cluster_radius=header["cluster_radius"],
                    alpha=header["alpha"], diagonal=header.get("diagonal", 1.0),
                    warnings=list(header.get("warnings", [])))
