"""Equirectangular (ERP) projection math.

Convention (fixed project-wide):
  - Continuous pixel coordinates ``u in [0, W)``, ``v in [0, H]``; the center of
    pixel ``(i, j)`` sits at ``(i + 0.5, j + 0.5)``.
  - Longitude ``phi = 2*pi*(u/W - 1/2)`` in ``[-pi, pi)``, increasing to the right.
  - Latitude ``theta = pi*(1/2 - v/H)`` in ``[-pi/2, pi/2]``, increasing upward.
  - Unit vector ``(x, y, z) = (cos(theta) sin(phi), sin(theta), cos(theta) cos(phi))``
    (y-up, z-forward). ``(phi=0, theta=0)`` is the ERP center.

Sampling is bilinear, cyclic in the horizontal direction and clamped at the
poles. ``yaw_rotate(frame, d)`` moves content toward increasing longitude by
``d`` radians (a column shift of ``d*W/(2*pi)``).
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

TWO_PI = 2.0 * math.pi

CROP_FOV_DEG = 120.0
CROP_SIZE = 512
CROP_COUNT = 5


def wrap_angle(phi):
    """Wrap longitude(s) into ``[-pi, pi)``."""
    wrapped = np.mod(np.asarray(phi, dtype=np.float64) + math.pi, TWO_PI) - math.pi
    if np.ndim(wrapped) == 0:
        return float(wrapped)
    return wrapped


@dataclass(frozen=True)
class SphericalDirection:
    phi: float
    theta: float

    def __post_init__(self):
        if not (math.isfinite(self.phi) and math.isfinite(self.theta)):
            raise DomainError(f"non-finite direction ({self.phi}, {self.theta})")
        if not -math.pi / 2 <= self.theta <= math.pi / 2:
            raise DomainError(f"latitude {self.theta} outside [-pi/2, pi/2]")
        object.__setattr__(self, "phi", wrap_angle(self.phi))

    def to_vector(self) -> np.ndarray:
        return angles_to_vectors(self.phi, self.theta)

    @classmethod
    def from_vector(cls, xyz) -> "SphericalDirection":
        phi, theta = vectors_to_angles(np.asarray(xyz, dtype=np.float64))
        return cls(float(phi), float(theta))


@dataclass(frozen=True, eq=False)
class ErpFrame:
    """One equirectangular frame stored as an ``(H, W, C)`` array.

    ``pixels`` is either ``uint8`` or ``float32``; ``W == 2 * H`` is enforced.
    """

    pixels: np.ndarray

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim == 2:
            px = px[:, :, None]
        if px.ndim != 3:
            raise DomainError(f"ERP pixels must be (H, W, C), got shape {px.shape}")
        h, w = px.shape[:2]
        if h < 1 or w != 2 * h:
            raise DomainError(f"ERP frame must satisfy width == 2*height, got {w}x{h}")
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def channels(self) -> int:
        return self.pixels.shape[2]

    def __eq__(self, other):
        if not isinstance(other, ErpFrame):
            return NotImplemented
        return self.pixels.dtype == other.pixels.dtype and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


@dataclass(frozen=True)
class PerspectiveCamera:
    fov_deg: float = CROP_FOV_DEG
    out_width: int = CROP_SIZE
    out_height: int = CROP_SIZE
    yaw: float = 0.0
    pitch: float = 0.0

    def __post_init__(self):
        if not 0.0 < self.fov_deg < 180.0:
            raise DomainError(f"fov_deg must lie in (0, 180), got {self.fov_deg}")
        if self.out_width < 1 or self.out_height < 1:
            raise DomainError("output size must be positive")

    @property
    def focal(self) -> float:
        """Focal length in output pixels (square pixels, horizontal fov)."""
        return 0.5 * self.out_width / math.tan(math.radians(self.fov_deg) / 2.0)

    def rotation(self) -> np.ndarray:
        """World-from-camera rotation: pitch about +x, then yaw about +y."""
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
        r_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
        return r_yaw @ r_pitch


# --- coordinate maps -------------------------------------------------------


def angles_to_vectors(phi, theta) -> np.ndarray:
    phi = np.asarray(phi, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    ct = np.cos(theta)
    return np.stack([ct * np.sin(phi), np.sin(theta), ct * np.cos(phi)], axis=-1)


def vectors_to_angles(xyz: np.ndarray):
    xyz = np.asarray(xyz, dtype=np.float64)
    norm = np.linalg.norm(xyz, axis=-1)
    if np.any(norm == 0):
        raise DomainError("zero vector has no direction")
    phi = wrap_angle(np.arctan2(xyz[..., 0], xyz[..., 2]))
    theta = np.arcsin(np.clip(xyz[..., 1] / norm, -1.0, 1.0))
    return phi, theta


def pixels_to_angles(u, v, width: int, height: int):
    """Vectorized pixel -> (phi, theta). ``u`` wraps; ``v`` must lie in [0, H]."""
    _check_dims(width, height)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if np.any(v < 0) or np.any(v > height) or not np.all(np.isfinite(v)):
        raise DomainError(f"row coordinate outside [0, {height}]")
    u = np.mod(u, width)
    phi = TWO_PI * (u / width - 0.5)
    theta = math.pi * (0.5 - v / height)
    return phi, theta


def angles_to_pixels(phi, theta, width: int, height: int):
    _check_dims(width, height)
    phi = wrap_angle(phi)
    u = (np.asarray(phi) / TWO_PI + 0.5) * width
    v = (0.5 - np.asarray(theta, dtype=np.float64) / math.pi) * height
    # phi just below pi can round u up to exactly W
    u = np.where(u >= width, u - width, u)
    return u, v


def pixel_to_ray(u: float, v: float, width: int, height: int) -> SphericalDirection:
    phi, theta = pixels_to_angles(u, v, width, height)
    return SphericalDirection(float(phi), float(theta))


def ray_to_pixel(direction: SphericalDirection, width: int, height: int) -> tuple[float, float]:
    u, v = angles_to_pixels(direction.phi, direction.theta, width, height)
    return float(u), float(v)


def _check_dims(width: int, height: int) -> None:
    if height < 1 or width != 2 * height:
        raise DomainError(f"ERP dimensions must satisfy width == 2*height, got {width}x{height}")


# --- sampling ---------------------------------------------------------------


def _bilinear_taps(u, v, width: int, height: int, wrap_x: bool):
    """Flat source indices and weights of the four bilinear taps per sample."""
    x = np.asarray(u, dtype=np.float64) - 0.5
    y = np.asarray(v, dtype=np.float64) - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    ax = (x - x0)[..., None]
    ay = (y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    if wrap_x:
        xa = np.mod(x0, width)
        xb = np.mod(x0 + 1, width)
    else:
        xa = np.clip(x0, 0, width - 1)
        xb = np.clip(x0 + 1, 0, width - 1)
    ya = np.clip(y0, 0, height - 1) * width
    yb = np.clip(y0 + 1, 0, height - 1) * width
    index = (ya + xa, ya + xb, yb + xa, yb + xb)
    weight = ((1.0 - ax) * (1.0 - ay), ax * (1.0 - ay), (1.0 - ax) * ay, ax * ay)
    return index, weight


def _apply_taps(img: np.ndarray, taps) -> np.ndarray:
    flat = img.reshape(img.shape[0] * img.shape[1], -1).astype(np.float64, copy=False)
    index, weight = taps
    out = flat[index[0]] * weight[0]
    for k in range(1, 4):
        out += flat[index[k]] * weight[k]
    return out


def _bilinear(img: np.ndarray, u: np.ndarray, v: np.ndarray, wrap_x: bool) -> np.ndarray:
    h, w = img.shape[:2]
    return _apply_taps(img, _bilinear_taps(u, v, w, h, wrap_x))


def sample_bilinear(frame: ErpFrame | np.ndarray, u, v) -> np.ndarray:
    """Sample an ERP image at continuous coordinates (wrap in u, clamp in v)."""
    px = frame.pixels if isinstance(frame, ErpFrame) else np.asarray(frame)
    if px.ndim == 2:
        px = px[:, :, None]
    return _bilinear(px, u, v, wrap_x=True)


def _cast_like(values: np.ndarray, dtype) -> np.ndarray:
    if np.issubdtype(dtype, np.integer):
        info = np.iinfo(dtype)
        return np.clip(np.rint(values), info.min, info.max).astype(dtype)
    return values.astype(dtype)


def yaw_rotate(frame: ErpFrame, delta_phi: float) -> ErpFrame:
    """Rotate the panorama about the vertical axis by ``delta_phi`` radians.

    Content moves toward increasing longitude: column ``i`` of the output
    shows what column ``i - delta_phi*W/(2*pi)`` showed in the input. Integer
    column shifts are exact rolls; fractional shifts interpolate linearly
    between the two neighbouring columns.
    """
    w = frame.width
    shift = math.fmod(delta_phi * w / TWO_PI, w)
    nearest = round(shift)
    if abs(shift - nearest) < 1e-9:
        return ErpFrame(np.roll(frame.pixels, int(nearest) % w, axis=1))
    k0 = math.floor(shift)
    a = shift - k0
    src = frame.pixels.astype(np.float64)
    out = (1.0 - a) * np.roll(src, k0 % w, axis=1) + a * np.roll(src, (k0 + 1) % w, axis=1)
    return ErpFrame(_cast_like(out, frame.pixels.dtype))


# --- perspective views ------------------------------------------------------


def camera_rays(cam: PerspectiveCamera) -> np.ndarray:
    """World-space unit ray per output pixel, shape ``(out_height, out_width, 3)``."""
    f = cam.focal
    xs = (np.arange(cam.out_width) + 0.5 - cam.out_width / 2.0) / f
    ys = (cam.out_height / 2.0 - (np.arange(cam.out_height) + 0.5)) / f
    gx, gy = np.meshgrid(xs, ys)
    local = np.stack([gx, gy, np.ones_like(gx)], axis=-1)
    local /= np.linalg.norm(local, axis=-1, keepdims=True)
    return local @ cam.rotation().T


@functools.lru_cache(maxsize=32)
def _perspective_taps(cam: PerspectiveCamera, width: int, height: int):
    # the sampling pattern depends only on the camera and the panorama size
    phi, theta = vectors_to_angles(camera_rays(cam))
    u, v = angles_to_pixels(phi, theta, width, height)
    return _bilinear_taps(u, v, width, height, wrap_x=True)


def render_perspective(frame: ErpFrame, cam: PerspectiveCamera) -> np.ndarray:
    """Render a pinhole view of ``frame``; output keeps the frame's dtype."""
    out = _apply_taps(frame.pixels, _perspective_taps(cam, frame.width, frame.height))
    return _cast_like(out, frame.pixels.dtype)


def project_to_camera(cam: PerspectiveCamera, directions: np.ndarray):
    """Project world directions into ``cam``.

    Returns ``(x, y, inside)`` where ``(x, y)`` are continuous output-pixel
    coordinates and ``inside`` flags rays that land on the image plane.
    """
    local = np.asarray(directions, dtype=np.float64) @ cam.rotation()
    z = local[..., 2]
    front = z > 1e-12
    safe_z = np.where(front, z, 1.0)
    f = cam.focal
    x = f * local[..., 0] / safe_z + cam.out_width / 2.0
    y = cam.out_height / 2.0 - f * local[..., 1] / safe_z
    inside = front & (x >= 0) & (x <= cam.out_width) & (y >= 0) & (y <= cam.out_height)
    return x, y, inside


def crop_cameras(count: int = CROP_COUNT, fov_deg: float = CROP_FOV_DEG, size: int = CROP_SIZE) -> list[PerspectiveCamera]:
    """Evenly spaced equatorial cameras (yaws 0, 360/count, ...)."""
    return [
        PerspectiveCamera(fov_deg=fov_deg, out_width=size, out_height=size, yaw=TWO_PI * k / count, pitch=0.0)
        for k in range(count)
    ]


def five_crop_set(frame: ErpFrame, size: int = CROP_SIZE, fov_deg: float = CROP_FOV_DEG) -> list[np.ndarray]:
    return [render_perspective(frame, cam) for cam in crop_cameras(CROP_COUNT, fov_deg, size)]


def stitch_crops(crops, cams, width: int, height: int):
    """Resample perspective crops back onto an ERP canvas.

    Each ERP pixel takes its value from the camera whose optical axis is
    closest to the pixel's ray. Returns ``(pixels, covered)``; uncovered
    pixels are zero.
    """
    _check_dims(width, height)
    uu, vv = np.meshgrid(np.arange(width) + 0.5, np.arange(height) + 0.5)
    phi, theta = pixels_to_angles(uu, vv, width, height)
    rays = angles_to_vectors(phi, theta)
    channels = np.asarray(crops[0]).reshape(*np.shape(crops[0])[:2], -1).shape[2]
    out = np.zeros((height, width, channels), dtype=np.float64)
    best = np.full((height, width), -np.inf)
    covered = np.zeros((height, width), dtype=bool)
    for crop, cam in zip(crops, cams):
        img = np.asarray(crop)
        if img.ndim == 2:
            img = img[:, :, None]
        x, y, inside = project_to_camera(cam, rays)
        axis = cam.rotation()[:, 2]
        score = rays @ axis
        take = inside & (score > best)
        if not np.any(take):
            continue
        out[take] = _bilinear(img, x[take], y[take], wrap_x=False)
        best[take] = score[take]
        covered |= take
    return out, covered
