"""Differentiable multi-view soft rasterization and 2D augmentation.

Rasterization model, per pixel:

* coverage: each face contributes a sigmoid of its signed squared distance to
  the pixel center, ``D = sigmoid(sign * d^2 / sigma^2)`` (positive inside the
  projected triangle). Pixel opacity is ``alpha = 1 - prod_j (1 - D_j)``,
  accumulated stably in log space, so pixels farther than a few ``sigma`` from
  every face are transparent.
* color: a softmax over faces of ``log D + depth / gamma`` picks the nearest
  covering face softly; face color is the barycentric interpolation (clipped
  weights) of shaded vertex colors. The result is composited over a uniform
  gray background with ``alpha``.
* shading: Gouraud — vertex colors are scaled by ``ambient + diffuse *
  max(0, n . l)`` with one fixed directional light, then clamped to [0, 1]
  and interpolated. The light is identical for color and gray renders.

Gradients flow to vertex colors everywhere and to vertex positions through
the coverage, barycentric, depth, and shading terms. Candidate face/pixel
pairs are pruned with screen-space bounding boxes expanded by the coverage
support (``5 * sigma`` plus half a pixel); excluded pairs contribute less
than 1e-11 to any pixel.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .autograd import (
    Tensor,
    concat,
    cross2d,
    gather_rows,
    matmul,
    minimum,
    rowwise_dot,
    segment_max_data,
    segment_sum,
)
from .errors import DimensionError, GeometryError
from .meshio import StylizedMesh, vertex_normals_tensor


@dataclass(frozen=True)
class Camera:
    """Orbit camera looking at the origin with +Y up."""

    azimuth: float = 0.0       # degrees around +Y; 0 puts the eye on +Z
    elevation: float = 0.0     # degrees above the XZ plane
    radius: float = 2.5
    fov: float = 60.0          # vertical field of view, degrees
    image_size: int = 64

    def eye(self) -> np.ndarray:
        az = math.radians(self.azimuth)
        el = math.radians(self.elevation)
        return self.radius * np.array([math.sin(az) * math.cos(el),
                                       math.sin(el),
                                       math.cos(az) * math.cos(el)])

    def rotation(self) -> np.ndarray:
        """World-to-camera rotation; rows are the camera x/y/z axes."""
        z_axis = self.eye()
        z_axis = z_axis / np.linalg.norm(z_axis)
        x_axis = np.cross(np.array([0.0, 1.0, 0.0]), z_axis)
        nx = np.linalg.norm(x_axis)
        if nx < 1e-12:
            raise GeometryError("camera at a pole: up direction is degenerate")
        x_axis = x_axis / nx
        y_axis = np.cross(z_axis, x_axis)
        return np.stack([x_axis, y_axis, z_axis])

    def focal(self) -> float:
        return 1.0 / math.tan(math.radians(self.fov) / 2.0)

    def to_dict(self) -> dict:
        return {"azimuth": self.azimuth, "elevation": self.elevation,
                "radius": self.radius, "fov": self.fov, "image_size": self.image_size}


@dataclass(frozen=True)
class SoftSettings:
    """Rasterizer softness, lighting, and background.

    The light direction is given in camera coordinates (so every view sees
    the same relative lighting, which makes renders equivariant under
    camera-vs-mesh rotation); it is rotated into world space per view.
    """

    sigma: float = 1e-4        # coverage falloff scale, NDC units
    gamma: float = 1e-4        # depth softmax temperature
    ambient: float = 0.5
    diffuse: float = 0.7
    light_direction: tuple[float, float, float] = (
        1 / math.sqrt(3), 1 / math.sqrt(3), 1 / math.sqrt(3))
    background: float = 0.5


HARD = SoftSettings(sigma=1e-6, ambient=1.0, diffuse=0.0)


@dataclass
class RenderedView:
    image: Tensor              # (H, W, 3) in [0, 1]
    alpha: Tensor              # (H, W) coverage in [0, 1]
    camera: Camera


def _edge_sq_distance(rel: Tensor, edge: Tensor) -> Tensor:
    t = (rowwise_dot(rel, edge) / (rowwise_dot(edge, edge) + 1e-24)).clamp(0.0, 1.0)
    offset = rel - edge * t
    return rowwise_dot(offset, offset)


def _candidate_pairs(xy: np.ndarray, faces: np.ndarray, size: int, margin: float,
                     pixel_offset: int):
    """Face/pixel candidate pairs from expanded screen bounding boxes.

    Returns (face_row_id, pixel_id, pixel_centers); ``face_row_id`` indexes
    rows of ``faces`` and ``pixel_id`` is ``pixel_offset + row * size + col``.
    """
    px = 2.0 / size
    corners = xy[faces]                                    # (M, 3, 2)
    lo = corners.min(axis=1) - margin
    hi = corners.max(axis=1) + margin
    col0 = np.ceil((lo[:, 0] + 1.0) / px - 0.5).astype(np.int64)
    col1 = np.floor((hi[:, 0] + 1.0) / px - 0.5).astype(np.int64)
    row0 = np.ceil((1.0 - hi[:, 1]) / px - 0.5).astype(np.int64)
    row1 = np.floor((1.0 - lo[:, 1]) / px - 0.5).astype(np.int64)
    col0 = np.clip(col0, 0, size - 1)
    col1 = np.clip(col1, -1, size - 1)
    row0 = np.clip(row0, 0, size - 1)
    row1 = np.clip(row1, -1, size - 1)

    widths = np.maximum(col1 - col0 + 1, 0)
    heights = np.maximum(row1 - row0 + 1, 0)
    counts = widths * heights
    total = int(counts.sum())
    if total == 0:
        return (np.empty(0, np.int64), np.empty(0, np.int64), np.empty((0, 2)))

    face_id = np.repeat(np.arange(len(faces)), counts)
    starts = np.cumsum(counts) - counts
    offsets = np.arange(total) - np.repeat(starts, counts)
    w = widths[face_id]
    cols = col0[face_id] + offsets % w
    rows = row0[face_id] + offsets // w
    pixel_id = pixel_offset + rows * size + cols
    centers = np.stack([-1.0 + (cols + 0.5) * px, 1.0 - (rows + 0.5) * px], axis=1)
    return face_id, pixel_id, centers


class _ViewBatchGeometry:
    """Projection and face/pixel pairing shared by every color variant of one
    geometry rendered from one list of cameras."""

    def __init__(self, positions: Tensor, faces: np.ndarray, cams: list[Camera],
                 settings: SoftSettings):
        size = cams[0].image_size
        if any(c.image_size != size for c in cams):
            raise DimensionError("all cameras in one batch must share image_size")
        self.cams = cams
        self.size = size
        self.npix = size * size
        self.total_pixels = len(cams) * self.npix
        self.faces = faces
        self.settings = settings
        n = positions.shape[0]

        xy_views = []
        zhat_views = []
        face_ids = []
        pixel_ids = []
        centers = []
        faces_stacked = []
        # coverage support is 5 sigma around a face; the extra half-pixel
        # absorbs grid rounding at the bounding-box edge
        margin = 5.0 * settings.sigma + 0.51 * (2.0 / size)
        for v, cam in enumerate(cams):
            rot = cam.rotation()
            cam_pts = matmul(positions - Tensor(cam.eye()[None, :]), Tensor(rot.T))
            depth = -cam_pts.narrow(1, 2, 1)
            xy = cam_pts.narrow(1, 0, 2) * cam.focal() / depth
            near, far = cam.radius - 1.0, cam.radius + 1.0
            zhat_views.append(((far - depth) * (1.0 / (far - near))).clamp(0.0, 1.0))
            xy_views.append(xy)
            fid, pid, ctr = _candidate_pairs(xy.data, faces, size, margin, v * self.npix)
            face_ids.append(fid + v * len(faces))
            pixel_ids.append(pid)
            centers.append(ctr)
            faces_stacked.append(faces + v * n)

        self.xy_all = concat(xy_views, axis=0) if len(cams) > 1 else xy_views[0]
        self.zhat_all = concat(zhat_views, axis=0) if len(cams) > 1 else zhat_views[0]
        faces_all = np.concatenate(faces_stacked, axis=0)
        self.face_id = np.concatenate(face_ids)
        self.pixel_id = np.concatenate(pixel_ids)
        self.pixel_centers = np.concatenate(centers, axis=0)
        self.empty = len(self.face_id) == 0
        if self.empty:
            return
        self.corner_idx = [faces_all[self.face_id, k] for k in range(3)]
        self._build_pair_terms()

    def _build_pair_terms(self):
        a2, b2, c2 = (gather_rows(self.xy_all, idx) for idx in self.corner_idx)
        pc = Tensor(self.pixel_centers)
        rel_a, rel_b, rel_c = pc - a2, pc - b2, pc - c2
        e_ab, e_bc, e_ca = b2 - a2, c2 - b2, a2 - c2

        denom = cross2d(e_ab, c2 - a2)
        fix = np.where(np.abs(denom.data) < 1e-12,
                       np.where(denom.data < 0, -1e-12, 1e-12) - denom.data, 0.0)
        denom = denom + Tensor(fix)  # constant shift: keeps gradients, avoids 0-division
        lam_a = cross2d(e_bc, rel_b) / denom
        lam_b = cross2d(e_ca, rel_c) / denom
        lam_c = cross2d(e_ab, rel_a) / denom
        inside = ((lam_a.data >= 0) & (lam_b.data >= 0) & (lam_c.data >= 0))

        d2 = minimum(minimum(_edge_sq_distance(rel_a, e_ab), _edge_sq_distance(rel_b, e_bc)),
                     _edge_sq_distance(rel_c, e_ca))
        signed = Tensor(2.0 * inside.astype(np.float64) - 1.0) * d2 \
            * (1.0 / self.settings.sigma ** 2)

        # alpha = 1 - prod(1 - D), accumulated as exp(-sum softplus(x))
        coverage_nll = signed.softplus()
        self.alpha = 1.0 - (-segment_sum(coverage_nll, self.pixel_id, self.total_pixels)).exp()

        # clipped, renormalized barycentrics for interpolation
        la, lb, lc = (l.clamp(0.0, 1.0) for l in (lam_a, lam_b, lam_c))
        inv_sum = 1.0 / (la + lb + lc + 1e-12)
        self.bary = (la * inv_sum, lb * inv_sum, lc * inv_sum)
        za, zb, zc = (gather_rows(self.zhat_all, idx) for idx in self.corner_idx)
        wa, wb, wc = self.bary
        zbar = wa * za + wb * zb + wc * zc
        logits = -(-signed).softplus() + zbar * (1.0 / self.settings.gamma)

        shift = segment_max_data(logits.data[:, 0], self.pixel_id, self.total_pixels)
        self.weights = (logits - Tensor(shift[self.pixel_id][:, None])).exp()
        weight_sum = segment_sum(self.weights, self.pixel_id, self.total_pixels)
        empty_pixels = weight_sum.data[:, 0] == 0.0
        self.weight_sum = weight_sum + Tensor(empty_pixels.astype(np.float64)[:, None])

    def composite(self, shaded_all: Tensor) -> list[RenderedView]:
        """Blend shaded per-vertex colors (stacked per view) into images."""
        size, npix = self.size, self.npix
        background = np.full((npix, 3), self.settings.background)
        if self.empty:
            return [RenderedView(image=Tensor(background.reshape(size, size, 3)),
                                 alpha=Tensor(np.zeros((size, size))), camera=cam)
                    for cam in self.cams]
        wa, wb, wc = self.bary
        ca, cb, cc = (gather_rows(shaded_all, idx) for idx in self.corner_idx)
        face_color = wa * ca + wb * cb + wc * cc
        color_sum = segment_sum(self.weights * face_color, self.pixel_id,
                                self.total_pixels) / self.weight_sum
        image_all = self.alpha * color_sum \
            + (1.0 - self.alpha) * Tensor(np.tile(background, (len(self.cams), 1)))

        views = []
        for v, cam in enumerate(self.cams):
            image = image_all.narrow(0, v * npix, npix).reshape(size, size, 3)
            alpha = self.alpha.narrow(0, v * npix, npix).reshape(size, size)
            views.append(RenderedView(image=image, alpha=alpha, camera=cam))
        return views


def _shade_views(colors: Tensor, normals: Tensor, cams: list[Camera],
                 settings: SoftSettings) -> Tensor:
    """Per-view Gouraud-shaded vertex colors, stacked view-major: the
    camera-space light direction is rotated into world space per view.
    Views are shaded independently so batched and single-view rendering
    agree bit for bit."""
    shaded = []
    for cam in cams:
        light = cam.rotation().T @ np.asarray(settings.light_direction)
        lambert = rowwise_dot(normals, Tensor(np.broadcast_to(light, normals.shape))).relu()
        factor = lambert * settings.diffuse + settings.ambient
        shaded.append((colors * factor).clamp(0.0, 1.0))
    return concat(shaded, axis=0) if len(cams) > 1 else shaded[0]


def _check_renderable(s: StylizedMesh) -> None:
    if s.base.num_vertices == 0 or len(s.faces) == 0:
        raise GeometryError("cannot render an empty mesh")


def render_batch(s: StylizedMesh, cams: list[Camera],
                 settings: SoftSettings = SoftSettings()) -> list[RenderedView]:
    """Render one mesh from several equal-size cameras in a single pass."""
    _check_renderable(s)
    positions = s.effective_positions()
    geometry = _ViewBatchGeometry(positions, s.faces, cams, settings)
    normals = vertex_normals_tensor(positions, s.faces)
    return geometry.composite(_shade_views(s.effective_colors(), normals, cams, settings))


def render_color_and_gray(s: StylizedMesh, gray: StylizedMesh, cams: list[Camera],
                          settings: SoftSettings = SoftSettings()
                          ) -> tuple[list[RenderedView], list[RenderedView]]:
    """Render a stylized mesh and its gray twin, sharing all geometry work
    (they differ only in vertex colors by construction)."""
    _check_renderable(s)
    positions = s.effective_positions()
    geometry = _ViewBatchGeometry(positions, s.faces, cams, settings)
    normals = vertex_normals_tensor(positions, s.faces)
    color_views = geometry.composite(_shade_views(s.effective_colors(), normals, cams, settings))
    gray_views = geometry.composite(_shade_views(gray.effective_colors(), normals, cams, settings))
    return color_views, gray_views


def render(s: StylizedMesh, cam: Camera, settings: SoftSettings = SoftSettings()) -> RenderedView:
    """Rasterize one view. Pure function of its inputs; bit-deterministic."""
    return render_batch(s, [cam], settings)[0]


def render_views(s: StylizedMesh, cams: list[Camera],
                 settings: SoftSettings = SoftSettings(),
                 chunk: int = 8) -> list[RenderedView]:
    """Render many views (order preserved), batching up to ``chunk`` same-size
    cameras per rasterization pass to bound peak memory."""
    if not cams:
        raise DimensionError("render_views needs at least one camera")
    views: list[RenderedView] = []
    start = 0
    while start < len(cams):
        end = start + 1
        while (end < len(cams) and end - start < chunk
               and cams[end].image_size == cams[start].image_size):
            end += 1
        views.extend(render_batch(s, cams[start:end], settings))
        start = end
    return views


def sample_train_cameras(rng: np.random.Generator, n: int, image_size: int = 64,
                         radius: float = 2.5, fov: float = 60.0) -> list[Camera]:
    """Azimuth uniform over the circle, elevation normal (sd 15deg, clamped)."""
    cams = []
    for _ in range(n):
        azimuth = float(rng.uniform(0.0, 360.0))
        elevation = float(np.clip(rng.normal(0.0, 15.0), -45.0, 45.0))
        cams.append(Camera(azimuth=azimuth, elevation=elevation, radius=radius,
                           fov=fov, image_size=image_size))
    return cams


# ---------------------------------------------------------------------------
# image resampling and augmentation


def sample_bilinear(img: Tensor, src_xy: np.ndarray, out_shape: tuple[int, int]) -> Tensor:
    """Bilinearly sample ``img`` (H, W, 3) at float pixel coordinates.

    Differentiable w.r.t. image values only; coordinates are data. Samples
    outside the frame clamp to the border.
    """
    h, w = img.shape[0], img.shape[1]
    x = np.clip(src_xy[:, 0], 0.0, w - 1.0)
    y = np.clip(src_xy[:, 1], 0.0, h - 1.0)
    x0 = np.clip(np.floor(x).astype(np.int64), 0, w - 2) if w > 1 else np.zeros_like(x, np.int64)
    y0 = np.clip(np.floor(y).astype(np.int64), 0, h - 2) if h > 1 else np.zeros_like(y, np.int64)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]

    flat = img.reshape(h * w, 3)
    v00 = gather_rows(flat, y0 * w + x0)
    v01 = gather_rows(flat, y0 * w + np.minimum(x0 + 1, w - 1))
    v10 = gather_rows(flat, np.minimum(y0 + 1, h - 1) * w + x0)
    v11 = gather_rows(flat, np.minimum(y0 + 1, h - 1) * w + np.minimum(x0 + 1, w - 1))
    top = v00 * Tensor(1.0 - fx) + v01 * Tensor(fx)
    bottom = v10 * Tensor(1.0 - fx) + v11 * Tensor(fx)
    out = top * Tensor(1.0 - fy) + bottom * Tensor(fy)
    return out.reshape(out_shape[0], out_shape[1], 3)


def _output_grid(out_size: int) -> tuple[np.ndarray, np.ndarray]:
    idx = np.arange(out_size) + 0.5
    gx, gy = np.meshgrid(idx, idx)
    return gx.ravel(), gy.ravel()


def resize_bilinear(img: Tensor, out_size: int) -> Tensor:
    h, w = img.shape[0], img.shape[1]
    gx, gy = _output_grid(out_size)
    src = np.stack([gx * (w / out_size) - 0.5, gy * (h / out_size) - 0.5], axis=1)
    return sample_bilinear(img, src, (out_size, out_size))


def _homography_from_points(src_pts, dst_pts) -> np.ndarray:
    """3x3 matrix H with H @ [x, y, 1] ~ destination, from 4 correspondences."""
    rows = []
    rhs = []
    for (x, y), (u, v) in zip(src_pts, dst_pts):
        rows.append([x, y, 1, 0, 0, 0, -u * x, -u * y])
        rhs.append(u)
        rows.append([0, 0, 0, x, y, 1, -v * x, -v * y])
        rhs.append(v)
    coeffs = np.linalg.solve(np.array(rows), np.array(rhs))
    return np.append(coeffs, 1.0).reshape(3, 3)


@dataclass(frozen=True)
class AugmentConfig:
    distortion: float = 0.3
    perspective_prob: float = 0.5
    area_range: tuple[float, float] = (0.5, 1.0)
    aspect_range: tuple[float, float] = (3.0 / 4.0, 4.0 / 3.0)


def warp_crop_resize(img: Tensor, homography: np.ndarray | None,
                     crop: tuple[float, float, float, float], out_size: int) -> Tensor:
    """Apply an inverse-sampling homography, then crop (x, y, w, h), then
    resize to ``out_size`` — all in one bilinear pass."""
    x0, y0, cw, ch = crop
    gx, gy = _output_grid(out_size)
    sx = x0 + gx * (cw / out_size) - 0.5
    sy = y0 + gy * (ch / out_size) - 0.5
    if homography is not None:
        ones = np.ones_like(sx)
        pts = homography @ np.stack([sx, sy, ones])
        sx, sy = pts[0] / pts[2], pts[1] / pts[2]
    return sample_bilinear(img, np.stack([sx, sy], axis=1), (out_size, out_size))


def sample_augment_params(rng: np.random.Generator, h: int, w: int,
                          cfg: AugmentConfig) -> tuple[np.ndarray | None,
                                                       tuple[float, float, float, float]]:
    homography = None
    if rng.random() < cfg.perspective_prob:
        dx, dy = cfg.distortion * w / 2.0, cfg.distortion * h / 2.0
        corners = np.array([[0.0, 0.0], [w - 1.0, 0.0], [w - 1.0, h - 1.0], [0.0, h - 1.0]])
        displaced = corners + np.stack([
            [rng.uniform(0, dx), rng.uniform(0, dy)],
            [-rng.uniform(0, dx), rng.uniform(0, dy)],
            [-rng.uniform(0, dx), -rng.uniform(0, dy)],
            [rng.uniform(0, dx), -rng.uniform(0, dy)],
        ])
        homography = _homography_from_points(displaced, corners)

    crop = None
    for _ in range(10):
        area = h * w * rng.uniform(*cfg.area_range)
        log_ratio = rng.uniform(math.log(cfg.aspect_range[0]), math.log(cfg.aspect_range[1]))
        cw = math.sqrt(area * math.exp(log_ratio))
        ch = math.sqrt(area / math.exp(log_ratio))
        if cw <= w and ch <= h:
            x0 = rng.uniform(0.0, w - cw)
            y0 = rng.uniform(0.0, h - ch)
            crop = (x0, y0, cw, ch)
            break
    if crop is None:
        side = float(min(h, w))
        crop = ((w - side) / 2.0, (h - side) / 2.0, side, side)
    return homography, crop


def augment(img: Tensor, rng: np.random.Generator, out_size: int,
            cfg: AugmentConfig = AugmentConfig()) -> Tensor:
    """Random perspective warp + random resized crop, differentiable w.r.t.
    pixel values; output is always (out_size, out_size, 3)."""
    homography, crop = sample_augment_params(rng, img.shape[0], img.shape[1], cfg)
    return warp_crop_resize(img, homography, crop, out_size)


def save_png(view_or_image, path_or_buffer) -> None:
    """Write an (H, W, 3) image in [0, 1] (or a RenderedView) as 8-bit PNG."""
    image = view_or_image.image if isinstance(view_or_image, RenderedView) else view_or_image
    data = image.data if isinstance(image, Tensor) else np.asarray(image)
    pil = Image.fromarray(np.clip(np.rint(data * 255.0), 0, 255).astype(np.uint8))
    pil.save(path_or_buffer, format="PNG")
