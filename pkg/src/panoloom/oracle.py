"""Procedural panoramic ray caster used as a ground-truth scene.

Scenes are static collections of spheres, axis-aligned boxes and a floor
plane under a latitude-only sky gradient. Rendering casts one ray per ERP
pixel from the camera position along the ERP direction of that pixel; the
camera orientation is fixed to the world axes. Shading is a headlight term
``|n . d|`` so images depend only on geometry relative to the camera.

Checkerboard textures live in world space and are box-filtered analytically
over the pixel footprint, which keeps distant floor tiles from aliasing.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .erp import ErpFrame, TWO_PI, angles_to_vectors, pixels_to_angles
from .errors import DomainError, ParseError
from .trajectory import CameraPath

AMBIENT = 0.35
SKY_ZENITH = (0.25, 0.45, 0.85)
SKY_HORIZON = (0.85, 0.9, 0.95)
GROUND_DEFAULT = (0.4, 0.38, 0.35)


@dataclass
class Sphere:
    center: tuple
    radius: float
    color: tuple
    color2: tuple | None = None
    checker: float = 0.0

    kind = "sphere"


@dataclass
class Box:
    lo: tuple
    hi: tuple
    color: tuple
    color2: tuple | None = None
    checker: float = 0.0

    kind = "box"


@dataclass
class Plane:
    height: float
    color: tuple
    color2: tuple | None = None
    checker: float = 1.0

    kind = "plane"


@dataclass
class ProceduralScene:
    primitives: list = field(default_factory=list)
    zenith: tuple = SKY_ZENITH
    horizon: tuple = SKY_HORIZON
    seed: int = 0

    def to_dict(self) -> dict:
        prims = []
        for p in self.primitives:
            d = {"type": p.kind}
            d.update({k: (list(v) if isinstance(v, tuple) else v) for k, v in vars(p).items()})
            prims.append(d)
        return {
            "primitives": prims,
            "background": {"zenith": list(self.zenith), "horizon": list(self.horizon)},
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ProceduralScene":
        types = {"sphere": Sphere, "box": Box, "plane": Plane}
        prims = []
        for k, raw in enumerate(data.get("primitives", [])):
            raw = dict(raw)
            kind = raw.pop("type", None)
            if kind not in types:
                raise ParseError(f"primitive {k}: unknown type {kind!r}")
            try:
                prims.append(types[kind](**{key: tuple(v) if isinstance(v, list) else v for key, v in raw.items()}))
            except TypeError as exc:
                raise ParseError(f"primitive {k}: {exc}") from None
        bg = data.get("background", {})
        return cls(
            prims,
            tuple(bg.get("zenith", SKY_ZENITH)),
            tuple(bg.get("horizon", SKY_HORIZON)),
            int(data.get("seed", 0)),
        )


def load_scene(path) -> ProceduralScene:
    try:
        return ProceduralScene.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None


def save_scene(path, scene: ProceduralScene) -> None:
    Path(path).write_text(json.dumps(scene.to_dict(), indent=2), encoding="utf-8")


def random_scene(
    seed: int,
    count: int = 10,
    clearance: float = 4.5,
    room: float = 11.0,
    tile: float = 1.5,
) -> ProceduralScene:
    """A seeded room: checkered floor, four walls, spheres and boxes.

    The walls are ``2*room`` apart and centred on the origin. Objects stay at
    least ``clearance`` scene units (horizontally) from the origin so short
    evaluation paths never enter them.
    """
    rng = np.random.default_rng(seed)
    prims: list = [Plane(0.0, (0.75, 0.72, 0.65), (0.25, 0.24, 0.22), checker=tile)]
    wall_colors = rng.uniform(0.2, 0.9, (4, 3))
    t = 0.2
    for k, (lo, hi) in enumerate(
        [
            ((-room - t, 0.0, -room), (-room, 3.0, room)),
            ((room, 0.0, -room), (room + t, 3.0, room)),
            ((-room, 0.0, -room - t), (room, 3.0, -room)),
            ((-room, 0.0, room), (room, 3.0, room + t)),
        ]
    ):
        c = tuple(float(v) for v in wall_colors[k])
        prims.append(Box(lo, hi, c, tuple(0.5 * v for v in c), checker=1.3))
    for _ in range(count):
        ang = rng.uniform(0.0, TWO_PI)
        dist = rng.uniform(clearance + 1.0, room - 1.5)
        cx, cz = dist * math.sin(ang), dist * math.cos(ang)
        color = tuple(float(c) for c in rng.uniform(0.1, 1.0, 3))
        color2 = tuple(float(c) for c in rng.uniform(0.0, 0.6, 3))
        checker = float(rng.choice([0.0, 0.5, 1.0]))
        if rng.random() < 0.5:
            r = float(rng.uniform(0.4, 1.2))
            cy = float(rng.uniform(r, r + 2.0))
            prims.append(Sphere((cx, cy, cz), r, color, color2, checker))
        else:
            hx, hz = rng.uniform(0.3, 1.0, 2)
            top = float(rng.uniform(0.5, 3.0))
            prims.append(Box((cx - hx, 0.0, cz - hz), (cx + hx, top, cz + hz), color, color2, checker))
    return ProceduralScene(prims, seed=seed)


# --- intersection ---------------------------------------------------------------------


def _hit_sphere(o, d, p: Sphere):
    c = np.asarray(p.center, dtype=np.float64)
    oc = o - c
    b = d @ oc
    disc = b * b - (oc @ oc - p.radius**2)
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    t0 = -b - sq
    t = np.where(t0 > 1e-9, t0, -b + sq)
    return np.where(ok & (t > 1e-9), t, np.inf)


def _normal_sphere(pts, d, p: Sphere):
    return (pts - np.asarray(p.center, dtype=np.float64)) / p.radius


def _slabs(o, d, p: Box):
    lo = np.asarray(p.lo, dtype=np.float64)
    hi = np.asarray(p.hi, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = 1.0 / d
        ta = (lo - o) * inv
        tb = (hi - o) * inv
    ta = np.where(np.isnan(ta), -np.inf, ta)
    tb = np.where(np.isnan(tb), np.inf, tb)
    return np.minimum(ta, tb), np.maximum(ta, tb)


def _hit_box(o, d, p: Box):
    tmin, tmax = _slabs(o, d, p)
    near = np.maximum(np.maximum(tmin[:, 0], tmin[:, 1]), tmin[:, 2])
    far = np.minimum(np.minimum(tmax[:, 0], tmax[:, 1]), tmax[:, 2])
    t = np.where(near <= 1e-9, far, near)
    return np.where((far >= near) & (t > 1e-9), t, np.inf)


def _normal_box(pts, d, p: Box):
    lo = np.asarray(p.lo, dtype=np.float64)
    hi = np.asarray(p.hi, dtype=np.float64)
    gap = np.minimum(np.abs(pts - lo), np.abs(pts - hi))
    axis = np.argmin(gap, axis=1)
    rows = np.arange(len(d))
    n = np.zeros_like(d)
    n[rows, axis] = -np.sign(d[rows, axis])
    return n


def _hit_plane(o, d, p: Plane):
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (p.height - o[1]) / d[:, 1]
    return np.where(np.isfinite(t) & (t > 1e-9), t, np.inf)


def _normal_plane(pts, d, p: Plane):
    n = np.zeros_like(d)
    n[:, 1] = -np.sign(d[:, 1])
    return n


_HIT = {"sphere": _hit_sphere, "box": _hit_box, "plane": _hit_plane}
_NORMAL = {"sphere": _normal_sphere, "box": _normal_box, "plane": _normal_plane}


def _filtered_checker(pts: np.ndarray, width: np.ndarray, size: float) -> np.ndarray:
    """Box-filtered checkerboard over 2-D or 3-D coordinates, in [0, 1] (0.5 where fully blurred)."""
    x = pts / size
    w = np.maximum(width / size, 1e-6)[:, None]

    def tri(v):
        # integral of the +-1 square wave of period 2
        h = v * 0.5
        return 2.0 * np.abs(h - np.floor(h) - 0.5)

    s = (tri(x + 0.5 * w) - tri(x - 0.5 * w)) / w
    s = np.clip(s, -1.0, 1.0)
    return 0.5 - 0.5 * np.prod(s, axis=1)


def shade_rays(scene: ProceduralScene, origin, dirs: np.ndarray, pixel_angle: float) -> np.ndarray:
    """Trace ``dirs`` (N, 3 unit vectors) from ``origin``; returns (N, 3) RGB in [0, 1]."""
    o = np.asarray(origin, dtype=np.float64)
    n_rays = len(dirs)
    best_t = np.full(n_rays, np.inf)
    best_k = np.full(n_rays, -1)
    for k, prim in enumerate(scene.primitives):
        t = _HIT[prim.kind](o, dirs, prim)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_k[closer] = k

    sin_lat = np.clip(dirs[:, 1], 0.0, 1.0)[:, None]
    zen = np.asarray(scene.zenith)
    hor = np.asarray(scene.horizon)
    sky = hor + (zen - hor) * np.sqrt(sin_lat)
    below = dirs[:, 1] < 0
    sky[below] = hor * 0.6 + np.asarray(GROUND_DEFAULT) * 0.4
    rgb = sky

    hit_any = best_k >= 0
    if np.any(hit_any):
        idx = np.flatnonzero(hit_any)
        t = best_t[idx]
        pts = o + t[:, None] * dirs[idx]
        normals = np.zeros((len(idx), 3))
        kinds = best_k[idx]
        for k, prim in enumerate(scene.primitives):
            sel = kinds == k
            if np.any(sel):
                normals[sel] = _NORMAL[prim.kind](pts[sel], dirs[idx][sel], prim)
        cos_inc = np.abs(np.sum(normals * dirs[idx], axis=1))
        light = AMBIENT + (1.0 - AMBIENT) * cos_inc
        base = np.zeros((len(idx), 3))
        for k, prim in enumerate(scene.primitives):
            sel = best_k[idx] == k
            if not np.any(sel):
                continue
            c1 = np.asarray(prim.color, dtype=np.float64)
            if prim.checker > 0 and prim.color2 is not None:
                c2 = np.asarray(prim.color2, dtype=np.float64)
                footprint = t[sel] * pixel_angle / np.maximum(cos_inc[sel], 0.05)
                coords = pts[sel][:, [0, 2]] if prim.kind == "plane" else pts[sel] + 0.25 * prim.checker
                mix = _filtered_checker(coords, footprint, prim.checker)[:, None]
                base[sel] = c1 * (1.0 - mix) + c2 * mix
            else:
                base[sel] = c1
        rgb = rgb.copy()
        rgb[idx] = base * light[:, None]
    return rgb


def render_erp(
    scene: ProceduralScene,
    position,
    width: int,
    height: int,
    yaw: float = 0.0,
    supersample: int = 1,
) -> ErpFrame:
    """Render a float32 RGB panorama from ``position``.

    ``yaw`` rotates the world about the camera's vertical axis by ``yaw``
    radians toward increasing longitude, which is equivalent to
    ``yaw_rotate(render_erp(..., yaw=0), yaw)``. ``supersample`` averages
    ``supersample**2`` jittered-grid rays per pixel.
    """
    if height < 1 or width != 2 * height:
        raise DomainError(f"ERP dimensions must satisfy width == 2*height, got {width}x{height}")
    ss = int(supersample)
    if ss < 1:
        raise DomainError("supersample must be >= 1")
    offs = (np.arange(ss) + 0.5) / ss
    acc = np.zeros((height * width, 3))
    cols = np.arange(width, dtype=np.float64)
    rows = np.arange(height, dtype=np.float64)
    pixel_angle = TWO_PI / width / ss
    for oy in offs:
        for ox in offs:
            uu, vv = np.meshgrid(cols + ox, rows + oy)
            phi, theta = pixels_to_angles(uu, vv, width, height)
            dirs = angles_to_vectors(phi - yaw, theta).reshape(-1, 3)
            acc += shade_rays(scene, position, dirs, pixel_angle)
    img = (acc / (ss * ss)).reshape(height, width, 3)
    return ErpFrame(np.clip(img, 0.0, 1.0).astype(np.float32))


def render_sequence(
    scene: ProceduralScene,
    path: CameraPath,
    width: int,
    height: int,
    threads: int = 1,
    supersample: int = 1,
) -> list[ErpFrame]:
    """One panorama per path position. Output does not depend on ``threads``."""

    def one(p):
        return render_erp(scene, p, width, height, supersample=supersample)

    positions = list(path.positions)
    if threads <= 1:
        return [one(p) for p in positions]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, positions))


def to_uint8(frame: ErpFrame) -> np.ndarray:
    """Quantize a float oracle frame in [0, 1] to 8-bit."""
    px = frame.pixels
    if px.dtype == np.uint8:
        return px
    return np.clip(np.rint(px.astype(np.float64) * 255.0), 0, 255).astype(np.uint8)
