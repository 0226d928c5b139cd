"""Cloud -> features -> clusters -> PCW graph, with an on-disk graph cache."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from pathlib import Path

import numpy as np

from .clustering import kmeans
from .config import PipelineConfig
from .errors import PcqaError, PipelineError
from .features import extract_features
from .graph import PcwGraph, build_pcw_graph, clustering_space, point_feature_matrix
from .pointcloud_io import PointCloud, parse_ply

log = logging.getLogger(__name__)

CACHE_ENV = "PCQA_CACHE_DIR"


def cloud_to_graph(cloud: PointCloud, config: PipelineConfig = PipelineConfig(), threads=1) -> PcwGraph:
    feats = extract_features(cloud, config.feature, threads=threads)
    pf = point_feature_matrix(feats, cloud)
    space = clustering_space(pf, config.clustering.cluster_space, config.clustering.spatial_weight)
    clusters = kmeans(space, config.clustering.k, config.clustering.seed, config.clustering.max_iter)
    return build_pcw_graph(feats, cloud, clusters, config.graph, point_features=pf)


def default_cache_dir():
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


class GraphCache:
    """Graphs stored as .npz, keyed by (cloud bytes hash, pipeline config hash)."""

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory is not None else default_cache_dir()

    def _path(self, data: bytes, config: PipelineConfig):
        digest = hashlib.sha256(data).hexdigest()[:24]
        return self.directory / f"{digest}-{config.pipeline_hash()}.npz"

    def get(self, data, config):
        if self.directory is None:
            return None
        path = self._path(data, config)
        if not path.exists():
            return None
        with np.load(path, allow_pickle=False) as z:
            meta = json.loads(str(z["meta"]))
            return PcwGraph(z["node_features"], z["adjacency_color"], z["adjacency_curvature"],
                            z["adjacency_saliency"], meta["cluster_radius"], meta["alpha"],
                            meta["diagonal"], meta["warnings"])

    def put(self, data, config, graph: PcwGraph):
        if self.directory is None:
            return
        self.directory.mkdir(parents=True, exist_ok=True)
        path = self._path(data, config)
        meta = json.dumps({"cluster_radius": graph.cluster_radius, "alpha": graph.alpha,
                           "diagonal": graph.diagonal, "warnings": graph.warnings})
        tmp = path.with_suffix(".tmp.npz")
        np.savez(tmp, node_features=graph.node_features, adjacency_color=graph.adjacency_color,
                 adjacency_curvature=graph.adjacency_curvature,
                 adjacency_saliency=graph.adjacency_saliency, meta=np.array(meta))
        os.replace(tmp, path)


def graph_for_file(path, config: PipelineConfig, cache: GraphCache | None = None, threads=1) -> PcwGraph:
    """Build (or fetch from cache) the graph for one PLY file; errors name the file."""
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as exc:
        raise PipelineError(path, f"cannot read file ({exc.strerror or exc})") from None
    if cache is not None:
        hit = cache.get(data, config)
        if hit is not None:
            return hit
    try:
        graph = cloud_to_graph(parse_ply(data, name=path.stem), config, threads=threads)
    except PcqaError as exc:
        raise PipelineError(path, exc) from exc
    if cache is not None:
        cache.put(data, config, graph)
    return graph
