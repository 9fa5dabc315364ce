"""Triangle meshes: loading, saving, normalization, and attribute offsets.

File formats:

* OBJ — ``v x y z [r g b]`` vertex lines (the 6-float form is a widely used
  vertex-color extension) and ``f`` faces; polygons are fan-triangulated.
* PLY — ASCII or binary little-endian, with optional uchar ``red green blue``
  vertex properties (bytes are mapped to [0, 1]).

Vertex positions are dimensionless; ``normalize_and_init`` rescales a mesh
into the unit cube [-0.5, 0.5]^3 and paints it mid-gray. Face connectivity is
never modified by any operation in this module.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autograd import Tensor, as_tensor, concat, gather_rows, maximum, segment_sum
from .errors import DimensionError, GeometryError, MeshFormatError

GRAY = 0.5
MAX_POSITION_OFFSET = 0.1

_PLY_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


@dataclass
class Mesh:
    """Immutable triangle mesh with per-vertex colors.

    vertices: (N, 3) float positions
    faces: (M, 3) int vertex indices
    colors: (N, 3) RGB in [0, 1]
    """

    vertices: np.ndarray
    faces: np.ndarray
    colors: np.ndarray
    _normals: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        self.colors = np.ascontiguousarray(self.colors, dtype=np.float64)
        if self.vertices.ndim != 2 or self.vertices.shape[1] != 3:
            raise GeometryError(f"vertices must be (N, 3), got {self.vertices.shape}")
        if self.faces.ndim != 2 or self.faces.shape[1] != 3:
            raise GeometryError(f"faces must be (M, 3) triangles, got {self.faces.shape}")
        if self.colors.shape != self.vertices.shape:
            raise GeometryError(f"colors shape {self.colors.shape} does not match vertices")
        n = len(self.vertices)
        if self.faces.size and (self.faces.min() < 0 or self.faces.max() >= n):
            raise GeometryError(f"face index out of range for {n} vertices")
        if self.colors.size and (self.colors.min() < -1e-9 or self.colors.max() > 1 + 1e-9):
            raise GeometryError("colors must lie in [0, 1]")
        self.colors = np.clip(self.colors, 0.0, 1.0)

    @property
    def num_vertices(self) -> int:
        return len(self.vertices)

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    @property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted per-vertex unit normals (computed once, then cached)."""
        if self._normals is None:
            self._normals = _vertex_normals_np(self.vertices, self.faces)
        return self._normals


def _vertex_normals_np(vertices: np.ndarray, faces: np.ndarray) -> np.ndarray:
    normals = np.zeros_like(vertices)
    if len(faces):
        a, b, c = (vertices[faces[:, k]] for k in range(3))
        face_n = np.cross(b - a, c - a)  # magnitude = 2 * area, the weighting
        for k in range(3):
            np.add.at(normals, faces[:, k], face_n)
    lengths = np.linalg.norm(normals, axis=1, keepdims=True)
    degenerate = lengths[:, 0] < 1e-12
    normals[degenerate] = (0.0, 0.0, 1.0)
    lengths[degenerate] = 1.0
    return normals / lengths


def vertex_normals_tensor(positions: Tensor, faces: np.ndarray) -> Tensor:
    """Differentiable per-vertex unit normals of deformed geometry."""
    n = positions.shape[0]
    a = gather_rows(positions, faces[:, 0])
    b = gather_rows(positions, faces[:, 1])
    c = gather_rows(positions, faces[:, 2])
    face_n = _cross3(b - a, c - a)
    acc = segment_sum(face_n, faces[:, 0], n)
    acc = acc + segment_sum(face_n, faces[:, 1], n)
    acc = acc + segment_sum(face_n, faces[:, 2], n)
    lengths = ((acc * acc).sum(axis=1, keepdims=True) + 1e-24).sqrt()
    return acc / lengths


def _cross3(u: Tensor, v: Tensor) -> Tensor:
    ux, uy, uz = (u.narrow(1, k, 1) for k in range(3))
    vx, vy, vz = (v.narrow(1, k, 1) for k in range(3))
    return concat([uy * vz - uz * vy, uz * vx - ux * vz, ux * vy - uy * vx], axis=1)


@dataclass
class StylizedMesh:
    """A base mesh plus per-vertex color and position offsets.

    ``position_offsets`` rows are guaranteed to have L2 norm <= 0.1 (enforced
    by ``apply_offsets``). ``gray=True`` selects the uniform mid-gray variant
    that shares the (possibly deformed) geometry.
    """

    base: Mesh
    color_offsets: Tensor
    position_offsets: Tensor
    gray: bool = False

    def effective_positions(self) -> Tensor:
        return Tensor(self.base.vertices) + self.position_offsets

    def effective_colors(self) -> Tensor:
        if self.gray:
            return Tensor(np.full_like(self.base.colors, GRAY))
        return (Tensor(self.base.colors) + self.color_offsets).clamp(0.0, 1.0)

    @property
    def faces(self) -> np.ndarray:
        return self.base.faces


def rescale_position_offsets(dp: Tensor) -> Tensor:
    """Differentiably rescale rows with norm > 0.1 down to norm 0.1.

    Rows already inside the ball are left (numerically) untouched, so the map
    is idempotent up to float rounding.
    """
    norms = ((dp * dp).sum(axis=1, keepdims=True) + 1e-24).sqrt()
    scale = Tensor(np.array([[MAX_POSITION_OFFSET]])) / maximum(norms, MAX_POSITION_OFFSET)
    return dp * scale


def apply_offsets(mesh: Mesh, color_offsets, position_offsets) -> StylizedMesh:
    """Attach offsets to a mesh, enforcing the position-offset norm bound."""
    dc = as_tensor(color_offsets)
    dp = as_tensor(position_offsets)
    expected = (mesh.num_vertices, 3)
    if dc.shape != expected or dp.shape != expected:
        raise DimensionError(
            f"offsets must have shape {expected}, got {dc.shape} and {dp.shape}")
    return StylizedMesh(base=mesh, color_offsets=dc,
                        position_offsets=rescale_position_offsets(dp))


def gray_variant(s: StylizedMesh) -> StylizedMesh:
    """Same geometry (offsets included), every effective color mid-gray."""
    return StylizedMesh(base=s.base, color_offsets=s.color_offsets,
                        position_offsets=s.position_offsets, gray=True)


def normalize_and_init(mesh: Mesh) -> Mesh:
    """Center the bounding box at the origin, scale the largest extent to 1,
    and reset every color to mid-gray."""
    if mesh.num_vertices < 3:
        raise GeometryError(f"need at least 3 vertices, got {mesh.num_vertices}")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0.0:
        raise GeometryError("mesh has zero extent on every axis")
    centered = mesh.vertices - (lo + hi) / 2.0
    return Mesh(vertices=centered / extent, faces=mesh.faces,
                colors=np.full_like(mesh.colors, GRAY))


# ---------------------------------------------------------------------------
# loading


def load_mesh(path, fmt: str | None = None) -> Mesh:
    """Load an OBJ or PLY file; quads and larger polygons are fan-triangulated.

    Vertices without a stored color come back mid-gray. Non-manifold input is
    accepted as-is.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        return _load_obj(path)
    if fmt == "ply":
        return _load_ply(path)
    raise MeshFormatError(f"unsupported mesh format {fmt!r} for {path}")


def _fan(indices: list[int]) -> list[tuple[int, int, int]]:
    return [(indices[0], indices[i], indices[i + 1]) for i in range(1, len(indices) - 1)]


def _load_obj(path: Path) -> Mesh:
    vertices: list[list[float]] = []
    colors: list[list[float]] = []
    faces: list[tuple[int, int, int]] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            kind = parts[0]
            try:
                if kind == "v":
                    values = [float(tok) for tok in parts[1:]]
                    if len(values) not in (3, 6):
                        raise ValueError(f"expected 3 or 6 numbers, got {len(values)}")
                    vertices.append(values[:3])
                    colors.append(values[3:6] if len(values) == 6 else [GRAY] * 3)
                elif kind == "f":
                    idx = []
                    for tok in parts[1:]:
                        raw = int(tok.split("/")[0])
                        idx.append(raw - 1 if raw > 0 else len(vertices) + raw)
                    if len(idx) < 3:
                        raise ValueError("face with fewer than 3 vertices")
                    faces.extend(_fan(idx))
            except ValueError as exc:
                raise MeshFormatError(f"{path}:{ln}: {exc}") from exc
    if not vertices:
        raise MeshFormatError(f"{path}: no vertices found")
    return Mesh(vertices=np.array(vertices), faces=np.array(faces).reshape(-1, 3),
                colors=np.array(colors))


def _load_ply(path: Path) -> Mesh:
    with open(path, "rb") as fh:
        raw = fh.read()
    if not raw.startswith(b"ply"):
        raise MeshFormatError(f"{path}:1: missing 'ply' magic")
    header_end = raw.find(b"end_header")
    if header_end < 0:
        raise MeshFormatError(f"{path}: no end_header")
    header_lines = raw[:header_end].decode("ascii", errors="replace").splitlines()
    body = raw[raw.find(b"\n", header_end) + 1:]

    fmt = None
    elements: list[dict] = []
    for ln, line in enumerate(header_lines, start=1):
        parts = line.split()
        if not parts or parts[0] == "comment":
            continue
        if parts[0] == "format":
            if parts[1] not in ("ascii", "binary_little_endian"):
                raise MeshFormatError(f"{path}:{ln}: unsupported format {parts[1]!r}")
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append({"name": parts[1], "count": int(parts[2]), "props": []})
        elif parts[0] == "property":
            if not elements:
                raise MeshFormatError(f"{path}:{ln}: property before element")
            if parts[1] == "list":
                elements[-1]["props"].append(("list", parts[2], parts[3], parts[4]))
            else:
                elements[-1]["props"].append(("scalar", parts[1], parts[2]))
    if fmt is None:
        raise MeshFormatError(f"{path}: header has no format line")

    data = {}
    if fmt == "ascii":
        rows = body.decode("ascii", errors="replace").split()
        cursor = 0
        for elem in elements:
            parsed = []
            for _ in range(elem["count"]):
                row = {}
                for prop in elem["props"]:
                    if prop[0] == "list":
                        n = int(float(rows[cursor])); cursor += 1
                        row[prop[3]] = [float(rows[cursor + i]) for i in range(n)]
                        cursor += n
                    else:
                        row[prop[2]] = float(rows[cursor]); cursor += 1
                parsed.append(row)
            data[elem["name"]] = parsed
    else:
        offset = 0
        for elem in elements:
            parsed = []
            for _ in range(elem["count"]):
                row = {}
                for prop in elem["props"]:
                    if prop[0] == "list":
                        count_t = np.dtype("<" + _PLY_TYPES[prop[1]])
                        item_t = np.dtype("<" + _PLY_TYPES[prop[2]])
                        n = int(np.frombuffer(body, count_t, 1, offset)[0])
                        offset += count_t.itemsize
                        row[prop[3]] = np.frombuffer(body, item_t, n, offset).tolist()
                        offset += item_t.itemsize * n
                    else:
                        item_t = np.dtype("<" + _PLY_TYPES[prop[1]])
                        row[prop[2]] = float(np.frombuffer(body, item_t, 1, offset)[0])
                        offset += item_t.itemsize
                parsed.append(row)
            data[elem["name"]] = parsed

    if "vertex" not in data:
        raise MeshFormatError(f"{path}: no vertex element")
    verts = data["vertex"]
    try:
        vertices = np.array([[v["x"], v["y"], v["z"]] for v in verts])
    except KeyError as exc:
        raise MeshFormatError(f"{path}: vertex element lacks {exc} property") from exc
    if verts and all(k in verts[0] for k in ("red", "green", "blue")):
        colors = np.array([[v["red"], v["green"], v["blue"]] for v in verts]) / 255.0
    else:
        colors = np.full_like(vertices, GRAY)

    faces: list[tuple[int, int, int]] = []
    for row in data.get("face", []):
        idx = [int(i) for i in next(iter(row.values()))]
        if len(idx) >= 3:
            faces.extend(_fan(idx))
    return Mesh(vertices=vertices, faces=np.array(faces, dtype=np.int64).reshape(-1, 3),
                colors=colors)


# ---------------------------------------------------------------------------
# saving


def _effective_arrays(mesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if isinstance(mesh, StylizedMesh):
        return (mesh.effective_positions().data, mesh.effective_colors().data, mesh.faces)
    return mesh.vertices, mesh.colors, mesh.faces


def save_mesh(mesh, path, fmt: str | None = None, binary: bool = False) -> None:
    """Write effective (offset-applied) positions and colors to OBJ or PLY."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    positions, colors, faces = _effective_arrays(mesh)
    if fmt == "obj":
        _save_obj(positions, colors, faces, path)
    elif fmt == "ply":
        _save_ply(positions, colors, faces, path, binary=binary)
    else:
        raise MeshFormatError(f"unsupported mesh format {fmt!r} for {path}")


def _save_obj(positions, colors, faces, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p, c in zip(positions, colors):
            fh.write(f"v {p[0]:.8g} {p[1]:.8g} {p[2]:.8g} "
                     f"{c[0]:.8g} {c[1]:.8g} {c[2]:.8g}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def _save_ply(positions, colors, faces, path: Path, binary: bool) -> None:
    bytes_rgb = np.clip(np.rint(colors * 255.0), 0, 255).astype(np.uint8)
    header = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(positions)}",
        "property float x", "property float y", "property float z",
        "property uchar red", "property uchar green", "property uchar blue",
        f"element face {len(faces)}",
        "property list uchar int vertex_indices",
        "end_header",
    ]
    if binary:
        with open(path, "wb") as fh:
            fh.write(("\n".join(header) + "\n").encode("ascii"))
            for p, c in zip(positions.astype(np.float32), bytes_rgb):
                fh.write(struct.pack("<fffBBB", *p, *c))
            for f in faces:
                fh.write(struct.pack("<Biii", 3, *f))
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(header) + "\n")
            for p, c in zip(positions, bytes_rgb):
                fh.write(f"{p[0]:.8g} {p[1]:.8g} {p[2]:.8g} {c[0]} {c[1]} {c[2]}\n")
            for f in faces:
                fh.write(f"3 {f[0]} {f[1]} {f[2]}\n")
