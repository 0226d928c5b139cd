"""Per-point perceptual features: CIELAB color, covariance curvature, saliency."""

from __future__ import annotations

import csv
import logging
from itertools import chain
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .eigen import eigvalsh3, smallest_eigvec3
from .errors import InvalidCloud
from .pointcloud_io import PointCloud, bounding_box

log = logging.getLogger(__name__)

CHANNELS = ("L", "a", "b", "curvature", "saliency")
_CHUNK = 8192

# sRGB (D65) -> XYZ
_RGB2XYZ = np.array([
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
])
# reference white as the image of sRGB white, so (255,255,255) maps to a = b = 0
_WHITE = _RGB2XYZ.sum(axis=1)


@dataclass(frozen=True)
class FeatureConfig:
    neighbor_radius_frac: float = 0.02
    sigma1: float | None = None
    sigma2: float | None = None
    knn_fallback: int = 16

    def __post_init__(self):
        if not 0.0 < self.neighbor_radius_frac < 1.0:
            raise ValueError("neighbor_radius_frac must lie in (0, 1)")
        if self.knn_fallback < 4:
            raise ValueError("knn_fallback must be >= 4")
        if self.sigma1 is not None and self.sigma1 <= 0:
            raise ValueError("sigma1 must be positive")
        if self.sigma1 is not None and self.sigma2 is not None and not self.sigma1 < self.sigma2:
            raise ValueError("sigma1 must be smaller than sigma2")


@dataclass
class FeatureSet:
    lab: np.ndarray          # (N, 3)
    curvature: np.ndarray    # (N,)
    saliency: np.ndarray     # (N,)
    normals: np.ndarray      # (N, 3)
    channel_min: np.ndarray  # (5,)
    channel_max: np.ndarray  # (5,)
    sigma1: float = 0.0
    sigma2: float = 0.0
    radius: float = 0.0
    warnings: dict = field(default_factory=dict)

    def __len__(self):
        return self.curvature.shape[0]

    def channels(self):
        return np.column_stack([self.lab, self.curvature, self.saliency])

    def normalized(self):
        """Channels min/max scaled to [0, 1]; constant channels become 0."""
        return minmax_normalize(self.channels(), self.channel_min, self.channel_max)


def minmax_normalize(values, lo, hi):
    span = hi - lo
    out = np.zeros_like(values, dtype=np.float64)
    live = span > 0
    out[:, live] = (values[:, live] - lo[live]) / span[live]
    return out


# ---------------------------------------------------------------------------
# color
# ---------------------------------------------------------------------------

def rgb_to_lab(rgb):
    """sRGB 0-255 triplets to CIELAB (D65). Accepts one triplet or an (N, 3) array."""
    arr = np.asarray(rgb, dtype=np.float64)
    single = arr.ndim == 1
    arr = np.atleast_2d(arr) / 255.0
    lin = np.where(arr <= 0.04045, arr / 12.92, ((arr + 0.055) / 1.055) ** 2.4)
    xyz = lin @ _RGB2XYZ.T / _WHITE
    eps = (6.0 / 29.0) ** 3
    f = np.where(xyz > eps, np.cbrt(xyz), xyz / (3.0 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)
    L = 116.0 * f[:, 1] - 16.0
    a = 500.0 * (f[:, 0] - f[:, 1])
    b = 200.0 * (f[:, 1] - f[:, 2])
    lab = np.column_stack([np.clip(L, 0.0, 100.0), a, b])
    return lab[0] if single else lab


# ---------------------------------------------------------------------------
# spatial queries
# ---------------------------------------------------------------------------

class SpatialIndex:
    """Read-only k-d tree over cloud positions."""

    def __init__(self, positions):
        self.positions = np.asarray(positions, dtype=np.float64)
        self.tree = cKDTree(self.positions)

    def radius(self, point, radius):
        """Sorted indices with ||p_j - point|| <= radius (inclusive)."""
        point = np.asarray(point, dtype=np.float64)
        cand = np.asarray(self.tree.query_ball_point(point, radius * (1.0 + 1e-9) + 1e-300), dtype=np.intp)
        d = np.linalg.norm(self.positions[cand] - point, axis=1)
        return np.sort(cand[d <= radius])

    def radius_flat(self, indices, radius):
        """Neighbourhoods of many query points as (owner, neighbour) flat arrays.

        Owners come out grouped in the order of ``indices`` with neighbours
        sorted inside each group.
        """
        pts = self.positions[indices]
        lists = self.tree.query_ball_point(pts, radius * (1.0 + 1e-9) + 1e-300, return_sorted=True)
        counts = np.fromiter(map(len, lists), dtype=np.intp, count=len(lists))
        nbr = np.fromiter(chain.from_iterable(lists), dtype=np.intp, count=int(counts.sum()))
        owner = np.repeat(np.arange(len(indices)), counts)
        d = np.linalg.norm(self.positions[nbr] - pts[owner], axis=1)
        keep = d <= radius
        return owner[keep], nbr[keep], d[keep]

    def knn(self, indices, k):
        k = min(k, self.positions.shape[0])
        _, idx = self.tree.query(self.positions[indices], k=k)
        return np.asarray(idx).reshape(len(indices), k)

    def mean_nn_distance(self):
        if self.positions.shape[0] < 2:
            return 0.0
        d, _ = self.tree.query(self.positions, k=2)
        return float(d[:, 1].mean())


def radius_neighbors(cloud: PointCloud, query_index: int, radius: float, index: SpatialIndex | None = None):
    if radius <= 0:
        raise ValueError("radius must be positive")
    index = index or SpatialIndex(cloud.positions)
    return index.radius(cloud.positions[query_index], radius).tolist()


# ---------------------------------------------------------------------------
# covariance, curvature, normals
# ---------------------------------------------------------------------------

def neighborhood_covariance(points):
    """Centroid-centred covariance averaged over the neighbourhood size."""
    pts = np.asarray(points, dtype=np.float64)
    centered = pts - pts.mean(axis=0)
    return centered.T @ centered / pts.shape[0]


def curvature_from_covariance(C, counts=None):
    """lambda3 / (lambda1 + lambda2 + lambda3), 0 for tiny spectra or < 3 points."""
    C = np.asarray(C, dtype=np.float64)
    vals = np.clip(eigvalsh3(C.reshape(-1, 3, 3)), 0.0, None)
    total = vals.sum(axis=1)
    curv = np.where(total < 1e-12, 0.0, vals[:, 2] / np.where(total < 1e-12, 1.0, total))
    if counts is not None:
        curv = np.where(np.asarray(counts) < 3, 0.0, curv)
    return curv.reshape(C.shape[:-2])


def covariance_curvature(points):
    pts = np.asarray(points, dtype=np.float64)
    if pts.shape[0] < 3:
        return 0.0
    return float(curvature_from_covariance(neighborhood_covariance(pts)))


def point_curvature(cloud: PointCloud, index: int, radius: float, spatial: SpatialIndex | None = None) -> float:
    if radius <= 0:
        raise ValueError("radius must be positive")
    spatial = spatial or SpatialIndex(cloud.positions)
    nbrs = spatial.radius(cloud.positions[index], radius)
    return covariance_curvature(cloud.positions[nbrs])


def _grouped_covariance(positions, owner, nbr, m):
    counts = np.bincount(owner, minlength=m).astype(np.float64)
    safe = np.maximum(counts, 1.0)
    mean = np.column_stack([np.bincount(owner, positions[nbr, c], minlength=m) for c in range(3)]) / safe[:, None]
    d = positions[nbr] - mean[owner]
    C = np.empty((m, 3, 3))
    for a in range(3):
        for b in range(a, 3):
            s = np.bincount(owner, d[:, a] * d[:, b], minlength=m) / safe
            C[:, a, b] = s
            C[:, b, a] = s
    return C, counts


def _map_chunks(fn, n, threads):
    chunks = [np.arange(s, min(s + _CHUNK, n)) for s in range(0, n, _CHUNK)]
    if threads and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, chunks))
    return [fn(c) for c in chunks]


def _local_covariances(cloud, spatial, radius, knn_fallback, threads=1):
    """Radius covariances and counts; knn covariances where the radius set has < 4 points."""
    pos = cloud.positions

    def work(chunk):
        owner, nbr, _ = spatial.radius_flat(chunk, radius)
        C, counts = _grouped_covariance(pos, owner, nbr, len(chunk))
        Cn = C.copy()
        sparse = np.flatnonzero(counts < 4)
        if sparse.size:
            knn = spatial.knn(chunk[sparse], knn_fallback)
            o = np.repeat(np.arange(sparse.size), knn.shape[1])
            Ck, _ = _grouped_covariance(pos, o, knn.ravel(), sparse.size)
            Cn[sparse] = Ck
        return C, counts, Cn

    parts = _map_chunks(work, len(cloud), threads)
    return (np.concatenate([p[0] for p in parts]),
            np.concatenate([p[1] for p in parts]),
            np.concatenate([p[2] for p in parts]))


def _orient_normals(normals, positions, degenerate):
    out = normals.copy()
    out[degenerate] = (0.0, 0.0, 1.0)
    rel = positions - positions.mean(axis=0)
    dot = np.einsum("ij,ij->i", out, rel)
    tie = np.abs(dot) <= 1e-9 * np.linalg.norm(rel, axis=1)
    flip = (dot < 0) & ~tie
    # on ties, make the first non-negligible component positive
    lead = np.argmax(np.abs(out) > 1e-9, axis=1)
    lead_sign = out[np.arange(len(out)), lead]
    flip |= tie & (lead_sign < 0)
    flip &= ~degenerate
    out[flip] *= -1.0
    return out


def _normals_from_covariance(Cn, positions):
    _, vec = smallest_eigvec3(Cn)
    trace = np.einsum("nii->n", Cn)
    degenerate = trace <= 1e-20 * (1.0 + np.einsum("ij,ij->i", positions, positions))
    return _orient_normals(vec, positions, degenerate), int(degenerate.sum())


def estimate_normals(cloud: PointCloud, config: FeatureConfig = FeatureConfig(), spatial=None, threads=1):
    """Smallest-eigenvector normals oriented away from the cloud centroid.

    Returns ``(normals, degenerate_count)``; degenerate neighbourhoods get
    (0, 0, 1).
    """
    spatial = spatial or SpatialIndex(cloud.positions)
    radius = config.neighbor_radius_frac * bounding_box(cloud).diagonal
    if radius <= 0:
        radius = 1e-300
    _, _, Cn = _local_covariances(cloud, spatial, radius, config.knn_fallback, threads)
    return _normals_from_covariance(Cn, cloud.positions)


# ---------------------------------------------------------------------------
# smoothing and saliency
# ---------------------------------------------------------------------------

def gaussian_smooth(cloud: PointCloud, sigma: float, spatial=None, threads=1):
    """Gaussian-weighted mean position over the 3-sigma ball around each point."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    spatial = spatial or SpatialIndex(cloud.positions)
    pos = cloud.positions

    def work(chunk):
        owner, nbr, d = spatial.radius_flat(chunk, 3.0 * sigma)
        w = np.exp(-(d * d) / (2.0 * sigma * sigma))
        m = len(chunk)
        wsum = np.bincount(owner, w, minlength=m)
        acc = np.column_stack([np.bincount(owner, w * pos[nbr, c], minlength=m) for c in range(3)])
        return acc / wsum[:, None]

    return np.concatenate(_map_chunks(work, len(cloud), threads))


def point_saliency(cloud: PointCloud, normals, config: FeatureConfig | None = None,
                   sigma1=None, sigma2=None, spatial=None, threads=1):
    """|n_i . (g_sigma1(p_i) - g_sigma2(p_i))| for every point."""
    if config is not None:
        sigma1 = config.sigma1 if sigma1 is None else sigma1
        sigma2 = config.sigma2 if sigma2 is None else sigma2
    if sigma1 is None or sigma2 is None:
        raise ValueError("both smoothing scales are required")
    spatial = spatial or SpatialIndex(cloud.positions)
    g1 = gaussian_smooth(cloud, sigma1, spatial, threads)
    g2 = g1 if sigma2 == sigma1 else gaussian_smooth(cloud, sigma2, spatial, threads)
    return np.abs(np.einsum("ij,ij->i", np.asarray(normals, dtype=np.float64), g1 - g2))


def smoothing_scales(config: FeatureConfig, spatial: SpatialIndex, diagonal: float):
    s1 = config.sigma1
    if s1 is None:
        nn = spatial.mean_nn_distance()
        s1 = 2.0 * nn if nn > 0 else 0.01 * diagonal
    s2 = config.sigma2 if config.sigma2 is not None else 2.0 * s1
    if not s1 < s2:
        raise ValueError(f"sigma1 ({s1}) must be smaller than sigma2 ({s2})")
    return s1, s2


# ---------------------------------------------------------------------------
# assembly
# ---------------------------------------------------------------------------

def extract_features(cloud: PointCloud, config: FeatureConfig = FeatureConfig(), threads=1) -> FeatureSet:
    n = len(cloud)
    if n == 0:
        raise InvalidCloud("cannot extract features from an empty cloud")
    diag = bounding_box(cloud).diagonal
    if diag <= 0:
        raise InvalidCloud(f"{cloud.name or 'cloud'}: all points coincide")
    warnings = {}
    if cloud.colors is not None:
        lab = rgb_to_lab(cloud.colors)
    else:
        lab = np.tile([50.0, 0.0, 0.0], (n, 1))
        warnings["MissingColor"] = True
        log.warning("%s: no colors, LAB channels set to (50, 0, 0)", cloud.name or "cloud")

    spatial = SpatialIndex(cloud.positions)
    radius = config.neighbor_radius_frac * diag
    C, counts, Cn = _local_covariances(cloud, spatial, radius, config.knn_fallback, threads)
    curvature = curvature_from_covariance(C, counts)
    normals, degenerate = _normals_from_covariance(Cn, cloud.positions)
    if degenerate:
        warnings["DegenerateNeighborhood"] = degenerate
        log.warning("%s: %d degenerate neighbourhoods, normals set to (0, 0, 1)", cloud.name or "cloud", degenerate)

    s1, s2 = smoothing_scales(config, spatial, diag)
    saliency = point_saliency(cloud, normals, sigma1=s1, sigma2=s2, spatial=spatial, threads=threads)

    chans = np.column_stack([lab, curvature, saliency])
    return FeatureSet(
        lab=lab, curvature=curvature, saliency=saliency, normals=normals,
        channel_min=chans.min(axis=0), channel_max=chans.max(axis=0),
        sigma1=s1, sigma2=s2, radius=radius, warnings=warnings,
    )


def write_feature_csv(features: FeatureSet, fp) -> None:
    w = csv.writer(fp, lineterminator="\n")
    w.writerow(["index", "L", "a", "b", "curvature", "saliency", "nx", "ny", "nz"])
    for i in range(len(features)):
        w.writerow([i, *(f"{v:.9g}" for v in features.lab[i]),
                    f"{features.curvature[i]:.9g}", f"{features.saliency[i]:.9g}",
                    *(f"{v:.9g}" for v in features.normals[i])])
