"""PLY point cloud I/O, dataset manifests and bounding boxes."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyManifest,
    EmptyRange,
    InvalidCloud,
    InvalidRow,
    MalformedHeader,
    MissingColumn,
    TruncatedBody,
    UnparsableScore,
    UnsupportedFormat,
)

log = logging.getLogger(__name__)

_PLY_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Positions (N, 3) float64, optional uint8 colors (N, 3) and unit normals (N, 3)."""

    positions: np.ndarray
    colors: np.ndarray | None = None
    normals: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidCloud(f"positions must have shape (N, 3), got {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise InvalidCloud("positions contain non-finite values")
        pos.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        if self.colors is not None:
            col = np.asarray(self.colors)
            if col.shape != pos.shape:
                raise InvalidCloud(f"colors shape {col.shape} does not match positions {pos.shape}")
            if col.dtype != np.uint8:
                if np.any(col < 0) or np.any(col > 255):
                    raise InvalidCloud("color channels must lie in [0, 255]")
                col = col.astype(np.uint8)
            col = np.ascontiguousarray(col)
            col.setflags(write=False)
            object.__setattr__(self, "colors", col)
        if self.normals is not None:
            nrm = np.ascontiguousarray(self.normals, dtype=np.float64)
            if nrm.shape != pos.shape:
                raise InvalidCloud(f"normals shape {nrm.shape} does not match positions {pos.shape}")
            if np.any(np.abs(np.linalg.norm(nrm, axis=1) - 1.0) > 1e-6):
                raise InvalidCloud("normals must have unit length")
            nrm.setflags(write=False)
            object.__setattr__(self, "normals", nrm)

    def __len__(self):
        return self.positions.shape[0]

    @property
    def has_colors(self):
        return self.colors is not None


@dataclass(frozen=True)
class BoundingBox:
    min_corner: np.ndarray
    max_corner: np.ndarray
    diagonal: float


@dataclass(frozen=True)
class ManifestEntry:
    cloud_path: str
    reference_id: str
    mos: float


@dataclass(frozen=True)
class DatasetManifest:
    entries: tuple[ManifestEntry, ...]
    mos_min: float
    mos_max: float
    base_dir: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.entries)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.cloud_path)
        return p if p.is_absolute() else self.base_dir / p


# ---------------------------------------------------------------------------
# PLY
# ---------------------------------------------------------------------------

@dataclass
class _Element:
    name: str
    count: int
    props: list = field(default_factory=list)  # (name, dtype) or (name, None) for lists
    has_list: bool = False


def _parse_header(data: bytes):
    if not data.startswith(b"ply\n") and not data.startswith(b"ply\r\n"):
        raise MalformedHeader("missing 'ply' magic")
    end = data.find(b"end_header")
    if end < 0:
        raise MalformedHeader("missing end_header")
    nl = data.find(b"\n", end)
    body_start = len(data) if nl < 0 else nl + 1
    lines = data[:end].decode("ascii", errors="replace").splitlines()[1:]

    fmt = None
    elements: list[_Element] = []
    for raw in lines:
        tok = raw.split()
        if not tok or tok[0] in ("comment", "obj_info"):
            continue
        if tok[0] == "format":
            if len(tok) != 3:
                raise MalformedHeader(f"bad format line {raw!r}")
            if tok[2] != "1.0":
                raise UnsupportedFormat(f"unsupported PLY version {tok[2]}")
            if tok[1] not in ("ascii", "binary_little_endian"):
                raise UnsupportedFormat(f"unsupported PLY format {tok[1]}")
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3:
                raise MalformedHeader(f"bad element line {raw!r}")
            try:
                count = int(tok[2])
            except ValueError:
                raise MalformedHeader(f"bad element count in {raw!r}") from None
            elements.append(_Element(tok[1], count))
        elif tok[0] == "property":
            if not elements:
                raise MalformedHeader("property before any element")
            el = elements[-1]
            if len(tok) >= 2 and tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _PLY_TYPES or tok[3] not in _PLY_TYPES:
                    raise MalformedHeader(f"bad list property {raw!r}")
                el.props.append((tok[4], ("list", _PLY_TYPES[tok[2]], _PLY_TYPES[tok[3]])))
                el.has_list = True
            else:
                if len(tok) != 3 or tok[1] not in _PLY_TYPES:
                    raise MalformedHeader(f"bad property line {raw!r}")
                el.props.append((tok[2], _PLY_TYPES[tok[1]]))
        else:
            raise MalformedHeader(f"unexpected header line {raw!r}")
    if fmt is None:
        raise MalformedHeader("missing format line")
    return fmt, elements, body_start


def _skip_binary_element(data, offset, el):
    if not el.has_list:
        size = sum(np.dtype(t).itemsize for _, t in el.props)
        return offset + size * el.count
    for _ in range(el.count):
        for _, t in el.props:
            if isinstance(t, tuple):
                ct = np.dtype("<" + t[1])
                if offset + ct.itemsize > len(data):
                    raise TruncatedBody(f"element {el.name} truncated")
                n = int(np.frombuffer(data, ct, 1, offset)[0])
                offset += ct.itemsize + n * np.dtype(t[2]).itemsize
            else:
                offset += np.dtype(t).itemsize
    return offset


def parse_ply(data: bytes, name: str = "") -> PointCloud:
    """Parse an ASCII or binary little-endian PLY into a ``PointCloud``.

    Only the vertex element is read. Properties other than x/y/z,
    red/green/blue and nx/ny/nz are skipped.
    """
    fmt, elements, body = _parse_header(data)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise MalformedHeader("no vertex element declared")
    names = [p for p, _ in vertex.props]
    for axis in "xyz":
        if axis not in names:
            raise MalformedHeader(f"vertex element lacks property {axis!r}")
    if vertex.count <= 0:
        raise MalformedHeader("vertex count must be positive (empty cloud)")
    if vertex.has_list:
        raise UnsupportedFormat("list properties on the vertex element are not supported")

    n = vertex.count
    if fmt == "ascii":
        lines = data[body:].decode("ascii", errors="replace").splitlines()
        lines = [ln for ln in lines if ln.strip()]
        cursor = 0
        for el in elements:
            if el is vertex:
                break
            cursor += el.count
        rows = lines[cursor:cursor + n]
        if len(rows) < n:
            raise TruncatedBody(f"declared {n} vertices, found {len(rows)}")
        try:
            table = np.array([ln.split()[: len(names)] for ln in rows], dtype=np.float64)
        except ValueError as exc:
            raise TruncatedBody(f"unreadable vertex row: {exc}") from None
        if table.ndim != 2 or table.shape[1] != len(names):
            raise TruncatedBody("vertex rows have fewer values than declared properties")
        cols = {nm: table[:, i] for i, nm in enumerate(names)}
    else:
        offset = body
        for el in elements:
            if el is vertex:
                break
            offset = _skip_binary_element(data, offset, el)
        dt = np.dtype([(nm, "<" + t) for nm, t in vertex.props])
        if offset + dt.itemsize * n > len(data):
            raise TruncatedBody(f"declared {n} vertices, body holds {(len(data) - offset) // dt.itemsize}")
        arr = np.frombuffer(data, dtype=dt, count=n, offset=offset)
        cols = {nm: arr[nm].astype(np.float64) for nm in names}

    positions = np.column_stack([cols["x"], cols["y"], cols["z"]])
    colors = None
    if all(c in cols for c in ("red", "green", "blue")):
        rgb = np.column_stack([cols["red"], cols["green"], cols["blue"]])
        types = dict(vertex.props)
        if types["red"].startswith("f"):
            rgb = np.round(np.clip(rgb, 0.0, 1.0) * 255.0)
        colors = np.clip(np.round(rgb), 0, 255).astype(np.uint8)
    normals = None
    if all(c in cols for c in ("nx", "ny", "nz")):
        nrm = np.column_stack([cols["nx"], cols["ny"], cols["nz"]])
        length = np.linalg.norm(nrm, axis=1)
        if np.all(length > 1e-12):
            normals = nrm / length[:, None]
        else:
            # normals are re-estimated downstream; zero vectors are common in datasets
            log.warning("%s: dropping stored normals containing zero vectors", name or "cloud")
    return PointCloud(positions, colors, normals, name)


def write_ply(cloud: PointCloud, format: str = "binary_little_endian") -> bytes:
    if format not in ("ascii", "binary_little_endian"):
        raise ValueError(f"unknown PLY format {format!r}")
    n = len(cloud)
    header = ["ply", f"format {format} 1.0"]
    if cloud.name:
        header.append(f"comment name {cloud.name}")
    header += [f"element vertex {n}", "property double x", "property double y", "property double z"]
    fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
    if cloud.normals is not None:
        header += ["property double nx", "property double ny", "property double nz"]
        fields += [("nx", "<f8"), ("ny", "<f8"), ("nz", "<f8")]
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    header.append("end_header")
    head = ("\n".join(header) + "\n").encode("ascii")

    rec = np.empty(n, dtype=fields)
    rec["x"], rec["y"], rec["z"] = cloud.positions.T
    if cloud.normals is not None:
        rec["nx"], rec["ny"], rec["nz"] = cloud.normals.T
    if cloud.colors is not None:
        rec["red"], rec["green"], rec["blue"] = cloud.colors.T
    if format == "binary_little_endian":
        return head + rec.tobytes()

    buf = io.StringIO()
    float_fmt = "%.6f"
    fmt = [float_fmt] * 3
    cols = [cloud.positions]
    if cloud.normals is not None:
        fmt += [float_fmt] * 3
        cols.append(cloud.normals)
    if cloud.colors is not None:
        fmt += ["%d"] * 3
        cols.append(cloud.colors.astype(np.float64))
    np.savetxt(buf, np.hstack(cols), fmt=fmt, delimiter=" ", newline="\n")
    return head + buf.getvalue().encode("ascii")


def read_ply(path) -> PointCloud:
    path = Path(path)
    return parse_ply(path.read_bytes(), name=path.stem)


def save_ply(cloud: PointCloud, path, format: str = "binary_little_endian") -> None:
    Path(path).write_bytes(write_ply(cloud, format))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

MANIFEST_COLUMNS = ("cloud_path", "reference_id", "mos")


def parse_manifest(text: str, base_dir=".", allow_degenerate: bool = False) -> DatasetManifest:
    reader = csv.DictReader(io.StringIO(text.lstrip("﻿"), newline=""))
    header = [h.strip() for h in (reader.fieldnames or [])]
    for col in MANIFEST_COLUMNS:
        if col not in header:
            raise MissingColumn(f"manifest lacks column {col!r}")
    reader.fieldnames = header
    entries = []
    for row_no, row in enumerate(reader, start=1):
        raw = (row.get("mos") or "").strip()
        try:
            mos = float(raw)
        except ValueError:
            raise UnparsableScore(row_no, "mos", raw) from None
        if not np.isfinite(mos):
            raise UnparsableScore(row_no, "mos", raw)
        ref = (row.get("reference_id") or "").strip()
        path = (row.get("cloud_path") or "").strip()
        if not ref:
            raise InvalidRow(f"row {row_no}: empty reference_id")
        if not path:
            raise InvalidRow(f"row {row_no}: empty cloud_path")
        entries.append(ManifestEntry(path, ref, mos))
    if not entries:
        raise EmptyManifest("manifest has no data rows")
    scores = [e.mos for e in entries]
    lo, hi = min(scores), max(scores)
    if not lo < hi and not allow_degenerate:
        raise EmptyRange(f"all MOS values equal {lo}; a training manifest needs a score range")
    return DatasetManifest(tuple(entries), lo, hi, Path(base_dir))


def load_manifest(path, allow_degenerate: bool = False) -> DatasetManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    return parse_manifest(text, base_dir=path.parent, allow_degenerate=allow_degenerate)


def bounding_box(cloud: PointCloud) -> BoundingBox:
    pos = cloud.positions
    lo = pos.min(axis=0)
    hi = pos.max(axis=0)
    return BoundingBox(lo, hi, float(np.linalg.norm(hi - lo)))
