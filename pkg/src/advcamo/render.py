"""Deterministic z-buffered rasterizer, differentiable in the texture only.

Pipeline per view: perspective-project the mesh from a camera on the viewing
sphere, rasterize with a depth buffer (perspective-correct barycentrics),
shade each face with a fixed-light Lambertian term, color paintable faces by
bilinear texture lookup and everything else by its base color, then apply
the photometric chain. Gradients flow to the texture through the bilinear
weights alone; geometry, visibility and shading are constants.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .envs import EnvCondition
from .meshes import Mesh
from .textures import TextureMap

__all__ = [
    "Camera", "FragmentBuffer", "RenderedImage", "RenderError",
    "camera_from_env", "project_vertices", "rasterize",
    "render", "render_flat", "apply_photometrics",
    "FOV_Y", "NEAR_PLANE", "LIGHT_DIR", "AMBIENT",
]

FOV_Y = np.deg2rad(60.0)
NEAR_PLANE = 0.05
# fixed scene light, mostly overhead so elevation changes matter
LIGHT_DIR = np.array([0.30, -0.45, 0.84])
LIGHT_DIR = LIGHT_DIR / np.linalg.norm(LIGHT_DIR)
AMBIENT = 0.3

_WORLD_UP = np.array([0.0, 0.0, 1.0])


class RenderError(ValueError):
    pass


@dataclass(frozen=True)
class Camera:
    position: np.ndarray
    right: np.ndarray
    up: np.ndarray
    forward: np.ndarray
    tan_half_fov: float


def camera_from_env(env: EnvCondition) -> Camera:
    """Camera on the viewing sphere, looking at the origin, shifted in its own
    image plane by the env translation."""
    az, el = env.rotation
    d = env.camera_distance
    pos = d * np.array([np.cos(el) * np.cos(az), np.cos(el) * np.sin(az), np.sin(el)])
    forward = -pos / np.linalg.norm(pos)
    right = np.cross(forward, _WORLD_UP)
    nr = np.linalg.norm(right)
    if nr < 1e-9:  # looking straight down; pick a stable right axis
        right = np.array([1.0, 0.0, 0.0])
    else:
        right = right / nr
    up = np.cross(right, forward)
    shift = env.translation[0] * right + env.translation[1] * up
    return Camera(pos + shift, right, up, forward, float(np.tan(FOV_Y / 2.0)))


def project_vertices(vertices: np.ndarray, cam: Camera,
                     image_size: int) -> tuple[np.ndarray, np.ndarray]:
    """Screen-space (x, y) pixel coordinates plus view depth for each vertex.

    y grows downward; coordinates are valid only where depth > 0.
    """
    rel = vertices - cam.position
    vx = rel @ cam.right
    vy = rel @ cam.up
    vz = rel @ cam.forward
    safe = np.where(vz > 1e-12, vz, 1e-12)
    ndc_x = vx / (safe * cam.tan_half_fov)
    ndc_y = vy / (safe * cam.tan_half_fov)
    sx = (ndc_x * 0.5 + 0.5) * image_size
    sy = (0.5 - ndc_y * 0.5) * image_size
    return np.stack([sx, sy], axis=1), vz


@dataclass
class FragmentBuffer:
    face_id: np.ndarray   # (H, W) int32, -1 for background
    bary: np.ndarray      # (H, W, 3) perspective-correct barycentrics
    depth: np.ndarray     # (H, W) view depth, inf for background
    diagnostics: dict = field(default_factory=dict)


@dataclass
class RenderedImage:
    rgb: np.ndarray            # (H, W, 3) float32 in [0, 1]
    coverage: np.ndarray       # (H, W) int32 face id, -1 background
    node: "ad.Tensor | None" = None  # graph node when the texture was a leaf
    diagnostics: dict = field(default_factory=dict)


def rasterize(mesh: Mesh, env: EnvCondition, image_size: int) -> FragmentBuffer:
    """Depth-buffered coverage: nearest face per pixel, ties to the lower face id."""
    if image_size < 16:
        raise RenderError(f"image_size must be >= 16, got {image_size}")
    cam = camera_from_env(env)
    screen, vz = project_vertices(mesh.vertices, cam, image_size)
    size = image_size
    face_id = np.full((size, size), -1, dtype=np.int32)
    depth = np.full((size, size), np.inf)
    bary = np.zeros((size, size, 3))
    degenerate = 0
    near_clipped = 0
    tri_z = vz[mesh.faces]             # (F, 3)
    tri_xy = screen[mesh.faces]        # (F, 3, 2)
    for f in range(mesh.num_faces):
        z = tri_z[f]
        if (z <= NEAR_PLANE).any():
            near_clipped += 1
            continue
        pts = tri_xy[f]
        (ax, ay), (bx, by), (cx, cy) = pts
        area = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax)
        if abs(area) < 1e-12:
            degenerate += 1
            continue
        x0 = max(int(np.floor(pts[:, 0].min() - 0.5)), 0)
        x1 = min(int(np.ceil(pts[:, 0].max() + 0.5)), size - 1)
        y0 = max(int(np.floor(pts[:, 1].min() - 0.5)), 0)
        y1 = min(int(np.ceil(pts[:, 1].max() + 0.5)), size - 1)
        if x1 < x0 or y1 < y0:
            continue
        px = np.arange(x0, x1 + 1) + 0.5
        py = np.arange(y0, y1 + 1) + 0.5
        gx, gy = np.meshgrid(px, py)
        w0 = ((bx - gx) * (cy - gy) - (by - gy) * (cx - gx)) / area
        w1 = ((cx - gx) * (ay - gy) - (cy - gy) * (ax - gx)) / area
        w2 = 1.0 - w0 - w1
        inside = (w0 >= -1e-12) & (w1 >= -1e-12) & (w2 >= -1e-12)
        if not inside.any():
            continue
        inv_z = w0 / z[0] + w1 / z[1] + w2 / z[2]
        d = 1.0 / np.where(inv_z > 1e-12, inv_z, 1e-12)
        sub = depth[y0:y1 + 1, x0:x1 + 1]
        win = inside & (d < sub)
        if not win.any():
            continue
        sub[win] = d[win]
        face_id[y0:y1 + 1, x0:x1 + 1][win] = f
        # perspective-correct barycentrics
        pw0 = (w0 / z[0]) / inv_z
        pw1 = (w1 / z[1]) / inv_z
        pw2 = 1.0 - pw0 - pw1
        bsub = bary[y0:y1 + 1, x0:x1 + 1]
        bsub[win] = np.stack([pw0[win], pw1[win], pw2[win]], axis=-1)
    return FragmentBuffer(face_id, bary, depth,
                          {"degenerate_faces": degenerate, "near_clipped_faces": near_clipped})


def face_shading(mesh: Mesh, cam: Camera) -> np.ndarray:
    """Lambertian shade per face with normals oriented toward the camera."""
    corners = mesh.face_corners()
    normals = np.cross(corners[:, 1] - corners[:, 0], corners[:, 2] - corners[:, 0])
    norms = np.linalg.norm(normals, axis=1)
    normals = normals / np.where(norms > 1e-12, norms, 1.0)[:, None]
    to_cam = cam.position[None, :] - corners.mean(axis=1)
    flip = (normals * to_cam).sum(axis=1) < 0.0
    normals[flip] *= -1.0
    return np.maximum(normals @ LIGHT_DIR, AMBIENT)


def _bilinear_taps(x: np.ndarray, y: np.ndarray, width: int,
                   height: int) -> tuple[np.ndarray, np.ndarray]:
    """4-tap indices/weights for sampling a (height, width) grid at (x, y)."""
    x = np.clip(x, 0.0, width - 1.0)
    y = np.clip(y, 0.0, height - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, width - 2 if width > 1 else 0)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, height - 2 if height > 1 else 0)
    fx = x - x0
    fy = y - y0
    x1 = np.minimum(x0 + 1, width - 1)
    y1 = np.minimum(y0 + 1, height - 1)
    idx4 = np.stack([y0 * width + x0, y0 * width + x1,
                     y1 * width + x0, y1 * width + x1], axis=1)
    w4 = np.stack([(1 - fx) * (1 - fy), fx * (1 - fy),
                   (1 - fx) * fy, fx * fy], axis=1)
    return idx4, w4


def apply_photometrics(rgb, env: EnvCondition, rng: np.random.Generator | None = None):
    """clip(((rgb * light_mul + light_add) * channel_mul + channel_add) + noise, 0, 1).

    Accepts either a graph tensor or a plain array and returns the same kind.
    Noise is drawn per pixel per channel from `rng` and is a constant in the
    backward pass.
    """
    is_tensor = isinstance(rgb, ad.Tensor)
    shape = rgb.values.shape if is_tensor else np.asarray(rgb).shape
    noise = None
    if env.noise_std > 0.0:
        if rng is None:
            raise RenderError("noise_std > 0 requires a seeded rng")
        noise = rng.normal(0.0, env.noise_std, size=shape)
    cmul = np.asarray(env.channel_mul)
    cadd = np.asarray(env.channel_add)
    if is_tensor:
        dt = rgb.values.dtype
        out = ad.add(ad.scale(rgb, env.light_mul), dt.type(env.light_add))
        out = ad.add(ad.mul(out, cmul.astype(dt)), cadd.astype(dt))
        if noise is not None:
            out = ad.add(out, noise.astype(dt))
        return ad.clip(out, 0.0, 1.0)
    arr = np.asarray(rgb)
    out = (arr * env.light_mul + env.light_add) * cmul + cadd
    if noise is not None:
        out = out + noise
    return np.clip(out, 0.0, 1.0).astype(arr.dtype)


def _assemble_constant(mesh: Mesh, frag: FragmentBuffer, shade: np.ndarray,
                       env: EnvCondition, textured: bool) -> np.ndarray:
    """Background plus base-colored pixels; paintable pixels zeroed when a
    texture will be composited on top."""
    size = frag.face_id.shape[0]
    img = np.empty((size, size, 3))
    img[:] = np.asarray(env.background_rgb)
    ys, xs = np.nonzero(frag.face_id >= 0)
    fids = frag.face_id[ys, xs]
    colors = mesh.base_colors[fids].astype(np.float64) * shade[fids][:, None]
    if textured:
        colors[mesh.paintable[fids]] = 0.0
    img[ys, xs] = colors
    return img


def render_flat(mesh: Mesh, env: EnvCondition, image_size: int,
                rng: np.random.Generator | None = None) -> RenderedImage:
    """Base-color rendering (no texture lookup); used for scene generation."""
    frag = rasterize(mesh, env, image_size)
    shade = face_shading(mesh, camera_from_env(env))
    img = _assemble_constant(mesh, frag, shade, env, textured=False)
    rgb = apply_photometrics(img.astype(np.float32), env, rng)
    return RenderedImage(rgb, frag.face_id, None, frag.diagnostics)


def render(mesh: Mesh, texture, env: EnvCondition, image_size: int,
           rng: np.random.Generator | None = None) -> RenderedImage:
    """Textured rendering. `texture` may be a TextureMap or a graph tensor of
    shape (H, W, 3); in the latter case the result carries a graph node whose
    gradients reach the texture through the bilinear sample weights."""
    if isinstance(texture, TextureMap):
        tex_tensor = ad.Tensor(texture.rgb)
        th, tw = texture.height, texture.width
    elif isinstance(texture, ad.Tensor):
        tex_tensor = texture
        th, tw = texture.values.shape[:2]
    else:
        raise RenderError(f"unsupported texture type {type(texture)!r}")
    dt = tex_tensor.values.dtype

    frag = rasterize(mesh, env, image_size)
    cam = camera_from_env(env)
    shade = face_shading(mesh, cam)
    base = _assemble_constant(mesh, frag, shade, env, textured=True).astype(dt)

    ys, xs = np.nonzero((frag.face_id >= 0) & mesh.paintable[np.maximum(frag.face_id, 0)])
    if ys.size:
        fids = frag.face_id[ys, xs]
        bw = frag.bary[ys, xs]                       # (P, 3)
        uv = np.einsum("pk,pkd->pd", bw, mesh.face_uvs[fids])
        uv = np.clip(uv, 0.0, 1.0)
        idx4, w4 = _bilinear_taps(uv[:, 0] * (tw - 1), uv[:, 1] * (th - 1), tw, th)
        tex_flat = ad.reshape(tex_tensor, (th * tw, 3))
        sampled = ad.bilinear_gather(tex_flat, idx4, w4.astype(dt))
        lit = ad.mul(sampled, shade[fids][:, None].astype(dt))
        flat = ad.index_add(ad.Tensor(base.reshape(-1, 3)), ys * image_size + xs, lit)
        node = ad.reshape(flat, (image_size, image_size, 3))
    else:
        node = ad.Tensor(base.reshape(image_size, image_size, 3))
    node = apply_photometrics(node, env, rng)
    return RenderedImage(node.values.astype(np.float32, copy=False), frag.face_id,
                         node, frag.diagnostics)
