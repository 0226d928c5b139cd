"""Small synthetic clouds and manifests shared by the tests."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from pcwgat.pointcloud_io import PointCloud, save_ply

SHAPES = ("sphere", "cylinder", "saddle", "ellipsoid")
LEVELS = (0.0, 0.01, 0.025, 0.05)


def surface(shape, n, rng):
    u, v = rng.random(n), rng.random(n)
    if shape == "sphere":
        th, ph = np.arccos(1 - 2 * u), 2 * np.pi * v
        return np.column_stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)])
    if shape == "cylinder":
        ph = 2 * np.pi * v
        return np.column_stack([np.cos(ph), np.sin(ph), 2 * u - 1])
    if shape == "saddle":
        x, y = 2 * u - 1, 2 * v - 1
        return np.column_stack([x, y, 0.5 * (x * x - y * y)])
    th, ph = np.arccos(1 - 2 * u), 2 * np.pi * v
    return np.column_stack([1.5 * np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), 0.7 * np.cos(th)])


def colored_cloud(shape, level, n=600, seed=0, name=""):
    """A surface with a smooth colour gradient; ``level`` adds geometry and colour noise."""
    rng = np.random.default_rng(seed)
    pos = surface(shape, n, rng)
    t = (pos - pos.min(0)) / np.ptp(pos, axis=0).clip(1e-12)
    rgb = np.column_stack([40 + 180 * t[:, 0], 60 + 150 * t[:, 1], 200 - 150 * t[:, 2]])
    noise = np.random.default_rng(seed + 1)
    pos = pos + level * noise.normal(size=pos.shape)
    rgb = rgb + 1500 * level * noise.normal(size=rgb.shape)
    return PointCloud(pos, np.clip(np.rint(rgb), 0, 255).astype(np.uint8), name=name)


def write_dataset(directory, shapes=SHAPES, levels=LEVELS, n=600):
    """One PLY per (shape, level) and a manifest whose MOS falls with the noise level."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    rows = ["cloud_path,mos,reference_id"]
    for s, shape in enumerate(shapes):
        for j, level in enumerate(levels):
            name = f"{shape}_{j}"
            save_ply(colored_cloud(shape, level, n=n, seed=10 * s + j, name=name), d / f"{name}.ply")
            mos = 5.0 - 1.0 * j - 0.1 * s
            rows.append(f"{name}.ply,{mos:.2f},{shape}")
    (d / "manifest.csv").write_text("\n".join(rows) + "\n")
    return d / "manifest.csv"
