"""Triangle meshes with per-face UVs, paintable flags and base colors.

Paintable faces sample their color from a shared texture atlas; every other
face keeps a fixed base color (wheels, windows and the other scene classes).
Builders return meshes normalized so the longest bounding-box axis is 1.0,
centered at the origin; the vehicle's length runs along +x, so its side
profile faces +y.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

__all__ = [
    "Mesh", "MeshError",
    "make_box", "make_cylinder", "make_sphere", "make_pyramid", "make_vehicle",
    "assign_atlas", "trainable_mask_from_mesh",
    "transform_mesh", "merge_meshes", "normalize_longest_axis",
    "save_obj", "load_obj",
]


class MeshError(ValueError):
    pass


@dataclass
class Mesh:
    vertices: np.ndarray      # (V, 3) float64
    faces: np.ndarray         # (F, 3) int32 vertex indices
    face_uvs: np.ndarray      # (F, 3, 2) float64 in [0, 1]^2
    paintable: np.ndarray     # (F,) bool
    base_colors: np.ndarray   # (F, 3) float32 in [0, 1]
    # paintable faces grouped per atlas cell (e.g. the two triangles of a quad)
    uv_groups: list[list[int]] = field(default_factory=list)

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64)
        self.faces = np.asarray(self.faces, dtype=np.int32)
        self.face_uvs = np.asarray(self.face_uvs, dtype=np.float64)
        self.paintable = np.asarray(self.paintable, dtype=bool)
        self.base_colors = np.asarray(self.base_colors, dtype=np.float32)
        self.validate()

    def validate(self):
        v, f = self.vertices, self.faces
        if v.ndim != 2 or v.shape[1] != 3:
            raise MeshError(f"vertices must be (V,3), got {v.shape}")
        if f.ndim != 2 or f.shape[1] != 3:
            raise MeshError(f"faces must be (F,3), got {f.shape}")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        if self.face_uvs.shape != (len(f), 3, 2):
            raise MeshError(f"face_uvs must be (F,3,2), got {self.face_uvs.shape}")
        if self.face_uvs.size and (self.face_uvs.min() < -1e-9 or self.face_uvs.max() > 1 + 1e-9):
            raise MeshError("UVs must lie in [0,1]")
        if self.paintable.shape != (len(f),):
            raise MeshError("paintable must be (F,)")
        if self.base_colors.shape != (len(f), 3):
            raise MeshError("base_colors must be (F,3)")

    @property
    def num_faces(self) -> int:
        return len(self.faces)

    def face_corners(self) -> np.ndarray:
        """(F, 3, 3) world positions of every face's corners."""
        return self.vertices[self.faces]


def _zero_uvs(n_faces: int) -> np.ndarray:
    return np.zeros((n_faces, 3, 2), dtype=np.float64)


def _mesh_from_parts(verts, faces, paintable, colors, groups=None) -> Mesh:
    faces = np.asarray(faces, dtype=np.int32)
    return Mesh(np.asarray(verts, dtype=np.float64), faces, _zero_uvs(len(faces)),
                np.asarray(paintable, bool), np.asarray(colors, np.float32),
                uv_groups=groups or [])


# ---------------------------------------------------------------------------
# primitive builders


def make_box(size=(1.0, 1.0, 1.0), center=(0.0, 0.0, 0.0), color=(0.5, 0.5, 0.5),
             paintable=False) -> Mesh:
    """Axis-aligned box; 12 triangles, quads grouped per side for the atlas."""
    sx, sy, sz = (s / 2.0 for s in size)
    cx, cy, cz = center
    corners = np.array([[x, y, z] for x in (-sx, sx) for y in (-sy, sy) for z in (-sz, sz)])
    corners += (cx, cy, cz)
    # index by (x,y,z) bit: 4*bx + 2*by + bz
    quads = [
        (0, 1, 3, 2),  # -x
        (4, 6, 7, 5),  # +x
        (0, 4, 5, 1),  # -y
        (2, 3, 7, 6),  # +y
        (0, 2, 6, 4),  # -z
        (1, 5, 7, 3),  # +z
    ]
    faces, groups = [], []
    for q in quads:
        a, b, c, d = q
        groups.append([len(faces), len(faces) + 1])
        faces.append((a, b, c))
        faces.append((a, c, d))
    n = len(faces)
    return _mesh_from_parts(corners, faces, [paintable] * n, [color] * n, groups)


def make_cylinder(radius=0.5, length=1.0, axis=2, segments=12, center=(0, 0, 0),
                  color=(0.5, 0.5, 0.5)) -> Mesh:
    """Closed cylinder along the given axis; non-paintable."""
    ang = np.linspace(0.0, 2 * np.pi, segments, endpoint=False)
    ring = np.stack([np.cos(ang) * radius, np.sin(ang) * radius], axis=1)
    half = length / 2.0
    order = [i for i in range(3) if i != axis]
    verts = np.zeros((2 * segments + 2, 3))
    for side, off in enumerate((-half, half)):
        rows = slice(side * segments, (side + 1) * segments)
        verts[rows, order[0]] = ring[:, 0]
        verts[rows, order[1]] = ring[:, 1]
        verts[rows, axis] = off
    verts[2 * segments, axis] = -half      # bottom cap center
    verts[2 * segments + 1, axis] = half   # top cap center
    faces = []
    for i in range(segments):
        j = (i + 1) % segments
        faces.append((i, j, segments + j))
        faces.append((i, segments + j, segments + i))
        faces.append((2 * segments, j, i))                      # bottom cap
        faces.append((2 * segments + 1, segments + i, segments + j))  # top cap
    verts += np.asarray(center, dtype=np.float64)
    n = len(faces)
    return _mesh_from_parts(verts, faces, [False] * n, [color] * n)


def make_sphere(radius=0.5, center=(0, 0, 0), n_az=10, n_el=6, color=(0.5, 0.5, 0.5)) -> Mesh:
    """UV sphere; non-paintable."""
    verts = [(0.0, 0.0, radius), (0.0, 0.0, -radius)]
    rows = []
    for i in range(1, n_el):
        el = np.pi * i / n_el
        row = []
        for j in range(n_az):
            az = 2 * np.pi * j / n_az
            row.append(len(verts))
            verts.append((radius * np.sin(el) * np.cos(az),
                          radius * np.sin(el) * np.sin(az),
                          radius * np.cos(el)))
        rows.append(row)
    faces = []
    for j in range(n_az):
        jn = (j + 1) % n_az
        faces.append((0, rows[0][j], rows[0][jn]))
        faces.append((1, rows[-1][jn], rows[-1][j]))
    for i in range(len(rows) - 1):
        for j in range(n_az):
            jn = (j + 1) % n_az
            a, b = rows[i][j], rows[i][jn]
            c, d = rows[i + 1][j], rows[i + 1][jn]
            faces.append((a, c, d))
            faces.append((a, d, b))
    verts = np.asarray(verts) + np.asarray(center, dtype=np.float64)
    n = len(faces)
    return _mesh_from_parts(verts, faces, [False] * n, [color] * n)


def make_pyramid(base=1.0, height=1.0, center=(0, 0, 0), color=(0.5, 0.5, 0.5)) -> Mesh:
    """Square pyramid, apex up; non-paintable."""
    h = base / 2.0
    verts = np.array([
        [-h, -h, 0.0], [h, -h, 0.0], [h, h, 0.0], [-h, h, 0.0],
        [0.0, 0.0, height],
    ])
    verts[:, 2] -= height / 2.0
    faces = [(0, 2, 1), (0, 3, 2), (0, 1, 4), (1, 2, 4), (2, 3, 4), (3, 0, 4)]
    verts += np.asarray(center, dtype=np.float64)
    n = len(faces)
    return _mesh_from_parts(verts, faces, [False] * n, [color] * n)


# vehicle palette: body is the paintable canvas, wheels/windows stay fixed
BODY_COLOR = np.array([0.70, 0.13, 0.10], np.float32)
ROOF_COLOR = np.array([0.58, 0.10, 0.08], np.float32)
WHEEL_COLOR = np.array([0.09, 0.09, 0.10], np.float32)
GLASS_COLOR = np.array([0.56, 0.68, 0.78], np.float32)


def make_vehicle(texture_size: int = 64) -> Mesh:
    """Low-poly wheeled vehicle: paintable body + cabin sides, fixed wheels
    and window band. Length axis = x, normalized to longest axis 1.0."""
    body = make_box(size=(2.0, 0.90, 0.52), center=(0.0, 0.0, 0.50),
                    color=BODY_COLOR, paintable=True)
    cabin = make_box(size=(0.95, 0.80, 0.42), center=(-0.12, 0.0, 0.97),
                     color=ROOF_COLOR, paintable=True)
    glass = make_box(size=(0.97, 0.82, 0.16), center=(-0.12, 0.0, 0.84),
                     color=GLASS_COLOR, paintable=False)
    parts = [body, cabin, glass]
    for dx in (-0.62, 0.62):
        for dy in (-0.40, 0.40):
            parts.append(make_cylinder(radius=0.22, length=0.14, axis=1,
                                       center=(dx, dy, 0.22), segments=10,
                                       color=WHEEL_COLOR))
    mesh = merge_meshes(parts)
    mesh = normalize_longest_axis(mesh)
    # roof/top quads keep the roof tone, the rest of the body keeps the body tone
    assign_atlas(mesh, texture_size)
    return mesh


# ---------------------------------------------------------------------------
# transforms and merging


def transform_mesh(mesh: Mesh, yaw: float = 0.0, offset=(0.0, 0.0, 0.0),
                   scale: float = 1.0) -> Mesh:
    """Rotate about +z, scale uniformly, then translate. Returns a new mesh."""
    c, s = np.cos(yaw), np.sin(yaw)
    rot = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    verts = (mesh.vertices * scale) @ rot.T + np.asarray(offset, dtype=np.float64)
    return replace(mesh, vertices=verts)


def merge_meshes(parts: list[Mesh]) -> Mesh:
    verts, faces, uvs, paint, colors, groups = [], [], [], [], [], []
    v_off = f_off = 0
    for m in parts:
        verts.append(m.vertices)
        faces.append(m.faces + v_off)
        uvs.append(m.face_uvs)
        paint.append(m.paintable)
        colors.append(m.base_colors)
        groups.extend([[f + f_off for f in g] for g in m.uv_groups])
        v_off += len(m.vertices)
        f_off += len(m.faces)
    return Mesh(np.concatenate(verts), np.concatenate(faces), np.concatenate(uvs),
                np.concatenate(paint), np.concatenate(colors), uv_groups=groups)


def normalize_longest_axis(mesh: Mesh) -> Mesh:
    """Scale so the longest bounding-box axis is 1.0 and center on the origin."""
    lo, hi = mesh.vertices.min(axis=0), mesh.vertices.max(axis=0)
    extent = (hi - lo).max()
    if extent <= 0:
        raise MeshError("degenerate mesh: zero extent")
    verts = (mesh.vertices - (lo + hi) / 2.0) / extent
    return replace(mesh, vertices=verts)


# ---------------------------------------------------------------------------
# UV atlas


def assign_atlas(mesh: Mesh, texture_size: int, margin: float = 2.0) -> None:
    """Give every paintable uv_group its own texture cell (in place).

    Each group's vertices are projected onto their two dominant world axes and
    mapped to the cell interior, inset far enough that bilinear sampling never
    reads a neighboring cell.
    """
    groups = [g for g in mesh.uv_groups if mesh.paintable[g].all()]
    if not groups:
        return
    cols = int(np.ceil(np.sqrt(len(groups))))
    rows = int(np.ceil(len(groups) / cols))
    cell_w = texture_size / cols
    cell_h = texture_size / rows
    if min(cell_w, cell_h) <= 2 * margin + 2:
        raise MeshError(f"texture {texture_size} too small for {len(groups)} atlas cells")
    tmax = texture_size - 1  # uv * (size-1) = texel coordinate
    for gi, group in enumerate(groups):
        r, c = divmod(gi, cols)
        x0, x1 = c * cell_w + margin, (c + 1) * cell_w - 1 - margin
        y0, y1 = r * cell_h + margin, (r + 1) * cell_h - 1 - margin
        pts = mesh.vertices[np.unique(mesh.faces[group])]
        spread = pts.max(axis=0) - pts.min(axis=0)
        ax = np.argsort(spread)[-2:][::-1]  # two dominant axes
        lo = pts[:, ax].min(axis=0)
        rng = np.maximum(pts[:, ax].max(axis=0) - lo, 1e-12)
        for f in group:
            p = mesh.vertices[mesh.faces[f]][:, ax]
            s = (p - lo) / rng
            mesh.face_uvs[f, :, 0] = (x0 + s[:, 0] * (x1 - x0)) / tmax
            mesh.face_uvs[f, :, 1] = (y0 + s[:, 1] * (y1 - y0)) / tmax


def trainable_mask_from_mesh(mesh: Mesh, texture_size: int) -> np.ndarray:
    """Texels covered by paintable faces' UV triangles, dilated by one texel
    so the full bilinear support of any sampled point is inside the mask."""
    size = texture_size
    mask = np.zeros((size, size), dtype=bool)
    tmax = size - 1
    xs = (np.arange(size) + 0.0)  # texel centers in texel coordinates
    for f in np.flatnonzero(mesh.paintable):
        tri = mesh.face_uvs[f] * tmax  # (3,2) texel coords
        lo = np.floor(tri.min(axis=0)).astype(int)
        hi = np.ceil(tri.max(axis=0)).astype(int)
        x0, y0 = np.maximum(lo, 0)
        x1, y1 = np.minimum(hi, tmax)
        if x1 < x0 or y1 < y0:
            continue
        gx, gy = np.meshgrid(xs[x0:x1 + 1], xs[y0:y1 + 1])
        a, b, c = tri
        det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
        if abs(det) < 1e-12:
            continue
        w0 = ((b[0] - gx) * (c[1] - gy) - (b[1] - gy) * (c[0] - gx)) / det
        w1 = ((c[0] - gx) * (a[1] - gy) - (c[1] - gy) * (a[0] - gx)) / det
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-9) & (w1 >= -1e-9) & (w2 >= -1e-9)
        mask[y0:y1 + 1, x0:x1 + 1] |= inside
    # one-texel dilation (8-neighborhood)
    out = mask.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            src = mask[max(0, -dy):size - max(0, dy), max(0, -dx):size - max(0, dx)]
            out[max(0, dy):size - max(0, -dy), max(0, dx):size - max(0, -dx)] |= src
    return out


# ---------------------------------------------------------------------------
# Wavefront-style persistence


def save_obj(mesh: Mesh, path: str | Path) -> None:
    """Write vertices/UVs/faces plus a `<stem>.paint.txt` sidecar listing the
    paintable face indices (one per line)."""
    path = Path(path)
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    uv_index: dict[tuple, int] = {}
    face_uv_ids = np.zeros((mesh.num_faces, 3), dtype=np.int64)
    for f in range(mesh.num_faces):
        for k in range(3):
            key = (round(mesh.face_uvs[f, k, 0], 9), round(mesh.face_uvs[f, k, 1], 9))
            if key not in uv_index:
                uv_index[key] = len(uv_index)
            face_uv_ids[f, k] = uv_index[key]
    lines += [f"vt {u:.9g} {v:.9g}" for u, v in uv_index]
    for f in range(mesh.num_faces):
        a, b, c = mesh.faces[f] + 1
        ta, tb, tc = face_uv_ids[f] + 1
        lines.append(f"f {a}/{ta} {b}/{tb} {c}/{tc}")
    path.write_text("\n".join(lines) + "\n")
    paint_path = path.with_suffix(".paint.txt")
    paint_path.write_text("\n".join(str(i) for i in np.flatnonzero(mesh.paintable)) + "\n")


def load_obj(path: str | Path, paint_path: str | Path | None = None,
             base_color=(0.5, 0.5, 0.5)) -> Mesh:
    """Read a Wavefront-style mesh (v/vt/f with v/vt references) and its
    paintable sidecar. Base colors default to `base_color` everywhere."""
    path = Path(path)
    verts, uvs, faces, face_uv_ids = [], [], [], []
    for raw in path.read_text().splitlines():
        parts = raw.split()
        if not parts or parts[0].startswith("#"):
            continue
        if parts[0] == "v":
            verts.append([float(x) for x in parts[1:4]])
        elif parts[0] == "vt":
            uvs.append([float(x) for x in parts[1:3]])
        elif parts[0] == "f":
            if len(parts) != 4:
                raise MeshError(f"only triangle faces supported: {raw!r}")
            vi, ti = [], []
            for tok in parts[1:]:
                bits = tok.split("/")
                vi.append(int(bits[0]) - 1)
                ti.append(int(bits[1]) - 1 if len(bits) > 1 and bits[1] else -1)
            faces.append(vi)
            face_uv_ids.append(ti)
    faces = np.asarray(faces, dtype=np.int32)
    n = len(faces)
    face_uvs = _zero_uvs(n)
    if uvs:
        uvs = np.asarray(uvs, dtype=np.float64)
        ids = np.asarray(face_uv_ids)
        ok = ids >= 0
        face_uvs[ok] = uvs[ids[ok]]
    paintable = np.zeros(n, dtype=bool)
    paint_path = Path(paint_path) if paint_path else path.with_suffix(".paint.txt")
    if paint_path.exists():
        for line in paint_path.read_text().split():
            paintable[int(line)] = True
    colors = np.tile(np.asarray(base_color, np.float32), (n, 1))
    return Mesh(np.asarray(verts, dtype=np.float64), faces, face_uvs, paintable, colors)
