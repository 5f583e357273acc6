"""Rotation-free camera paths and their flow/scale decomposition.

A path is a sequence of camera positions in the canonical frame (orientation
is implicit and constant). Under the uniform-velocity assumption it splits
into per-step unit directions (``flow``) and one scalar step multiplier
(``scale``) relative to a ``reference_step`` in scene units.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DegenerateStep, DomainError, ParseError, ValidationError

DEFAULT_UNIFORM_TOL = 0.10
TRAJECTORY_KINDS = ("forward", "backward", "left", "right", "s_curve", "loop")
S_CURVE_AMPLITUDE = 0.25


@dataclass(eq=False)
class CameraPath:
    positions: np.ndarray
    frame_offset: int = 0

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3 or len(pos) == 0:
            raise DomainError(f"positions must be an (f, 3) array, got shape {pos.shape}")
        if not np.all(np.isfinite(pos)):
            raise DomainError("positions contain non-finite values")
        self.positions = pos

    def __len__(self) -> int:
        return len(self.positions)

    @property
    def steps(self) -> np.ndarray:
        return np.diff(self.positions, axis=0)

    @property
    def step_lengths(self) -> np.ndarray:
        return np.linalg.norm(self.steps, axis=1)

    def length(self) -> float:
        return float(self.step_lengths.sum())

    def to_records(self) -> list[dict]:
        return [
            {"frame": self.frame_offset + k, "x": float(p[0]), "y": float(p[1]), "z": float(p[2])}
            for k, p in enumerate(self.positions)
        ]

    @classmethod
    def from_records(cls, records) -> "CameraPath":
        records = list(records)
        if not records:
            raise DomainError("empty trajectory")
        frames = [int(r["frame"]) for r in records]
        if frames != list(range(frames[0], frames[0] + len(frames))):
            raise ValidationError("trajectory frames must be consecutive and increasing")
        pos = [[float(r["x"]), float(r["y"]), float(r["z"])] for r in records]
        return cls(np.array(pos), frame_offset=frames[0])

    def __eq__(self, other):
        if not isinstance(other, CameraPath):
            return NotImplemented
        return self.frame_offset == other.frame_offset and np.array_equal(self.positions, other.positions)

    __hash__ = None


@dataclass(eq=False)
class FlowScale:
    flow: np.ndarray
    scale: float
    reference_step: float = 1.0

    def __post_init__(self):
        flow = np.array(self.flow, dtype=np.float64).reshape(-1, 3)
        norms = np.linalg.norm(flow, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-9):
            raise ValidationError("flow vectors must have unit norm")
        if not (self.scale > 0 and math.isfinite(math.log(self.scale))):
            raise DomainError(f"scale must be positive and finite, got {self.scale}")
        if not self.reference_step > 0:
            raise DomainError(f"reference_step must be positive, got {self.reference_step}")
        self.flow = flow

    @property
    def log_scale(self) -> float:
        return math.log(self.scale)

    def to_dict(self) -> dict:
        return {"reference_step": self.reference_step, "scale": self.scale, "flow": self.flow.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "FlowScale":
        return cls(np.array(data["flow"], dtype=np.float64), float(data["scale"]), float(data["reference_step"]))


@dataclass
class UniformityReport:
    max_deviation: float
    mean_step: float
    tol: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.max_deviation <= self.tol

    def to_dict(self) -> dict:
        return {"max_deviation": self.max_deviation, "mean_step": self.mean_step, "tol": self.tol, "passed": self.passed}


def validate_uniform(path: CameraPath, tol: float = DEFAULT_UNIFORM_TOL) -> UniformityReport:
    if len(path) < 2:
        raise DomainError("uniformity needs at least two positions")
    lengths = path.step_lengths
    mean = float(lengths.mean())
    if mean == 0.0:
        raise DegenerateStep("path has no displacement at all")
    deviation = float(np.max(np.abs(lengths - mean)) / mean)
    return UniformityReport(deviation, mean, tol)


def decompose(path: CameraPath, reference_step: float = 1.0, tol: float = DEFAULT_UNIFORM_TOL) -> FlowScale:
    """Split a uniform-velocity path into unit step directions and a scale.

    Raises:
        DegenerateStep: a step has zero length (directions are never reused).
        ValidationError: step lengths deviate from their mean by more than ``tol``.
    """
    if len(path) < 2:
        raise DomainError("decomposition needs at least two positions")
    if not reference_step > 0:
        raise DomainError(f"reference_step must be positive, got {reference_step}")
    steps = path.steps
    lengths = np.linalg.norm(steps, axis=1)
    zero = np.flatnonzero(lengths == 0.0)
    if zero.size:
        raise DegenerateStep(f"zero-length step between frames {zero[0]} and {zero[0] + 1}")
    report = validate_uniform(path, tol)
    if not report.passed:
        raise ValidationError(f"non-uniform velocity: max relative step deviation {report.max_deviation:.4g} > {tol}")
    flow = steps / lengths[:, None]
    return FlowScale(flow, report.mean_step / reference_step, reference_step)


def recompose(fs: FlowScale, origin=(0.0, 0.0, 0.0)) -> CameraPath:
    step = fs.scale * fs.reference_step
    origin = np.asarray(origin, dtype=np.float64)
    offsets = np.cumsum(step * fs.flow, axis=0)
    return CameraPath(np.vstack([origin, origin + offsets]))


# --- standard evaluation trajectories ---------------------------------------


def standard_trajectory(kind: str, frames: int, step: float) -> CameraPath:
    """Constant-speed evaluation path starting at the origin.

    ``forward`` is +z, ``right`` is +x. ``loop`` is a closed regular polygon
    with ``frames - 1`` sides of length ``step`` that starts heading forward
    and turns right. ``s_curve`` travels forward while sweeping one full sine
    period sideways with amplitude equal to a quarter of its forward extent.
    """
    if frames < 2:
        raise DomainError("a trajectory needs at least two frames")
    if not step > 0:
        raise DomainError(f"step must be positive, got {step}")
    k = np.arange(frames, dtype=np.float64)
    zeros = np.zeros(frames)
    if kind == "forward":
        pos = np.stack([zeros, zeros, k * step], axis=1)
    elif kind == "backward":
        pos = np.stack([zeros, zeros, -k * step], axis=1)
    elif kind == "right":
        pos = np.stack([k * step, zeros, zeros], axis=1)
    elif kind == "left":
        pos = np.stack([-k * step, zeros, zeros], axis=1)
    elif kind == "loop":
        sides = frames - 1
        if sides < 3:
            raise DomainError("a loop needs at least four frames")
        radius = step / (2.0 * math.sin(math.pi / sides))
        angle = 2.0 * math.pi * k / sides
        pos = np.stack([radius * (1.0 - np.cos(angle)), zeros, radius * np.sin(angle)], axis=1)
        pos[-1] = pos[0]
    elif kind == "s_curve":
        pos = _s_curve(frames, step)
    else:
        raise DomainError(f"unknown trajectory kind {kind!r}; expected one of {TRAJECTORY_KINDS}")
    return CameraPath(pos)


def _s_curve(frames: int, step: float, density: int = 64) -> np.ndarray:
    t = np.linspace(0.0, 1.0, density * (frames - 1) + 1)
    dense = np.stack([S_CURVE_AMPLITUDE * np.sin(2.0 * math.pi * t), np.zeros_like(t), t], axis=1)
    chord = fit_chord(dense, frames - 1)
    pts = walk_chords(dense, chord, max_steps=frames - 1)
    return np.asarray(pts) * (step / chord)


# --- equal-chord resampling --------------------------------------------------


def walk_chords(polyline: np.ndarray, chord: float, max_steps: int | None = None) -> list[np.ndarray]:
    """Walk along ``polyline`` emitting points exactly ``chord`` apart.

    Each new point is the first point further along the polyline whose
    straight-line distance from the previous emitted point equals ``chord``.
    Stops when no such point remains (or after ``max_steps`` steps).
    """
    poly = np.asarray(polyline, dtype=np.float64)
    current = poly[0].copy()
    out = [current.copy()]
    seg, t0 = 0, 0.0
    c2 = chord * chord
    # a vertex short of a full chord only by rounding still counts as reached
    reach2 = c2 * (1.0 - 2e-9)
    while max_steps is None or len(out) - 1 < max_steps:
        found = False
        while seg < len(poly) - 1:
            a, b = poly[seg], poly[seg + 1]
            if np.sum((b - current) ** 2) < reach2:
                seg, t0 = seg + 1, 0.0
                continue
            d = b - a
            m = a - current
            qa = float(d @ d)
            if qa == 0.0:
                seg, t0 = seg + 1, 0.0
                continue
            qb = 2.0 * float(d @ m)
            qc = float(m @ m) - c2
            disc = max(qb * qb - 4.0 * qa * qc, 0.0)
            t = (-qb + math.sqrt(disc)) / (2.0 * qa)
            t = min(max(t, t0), 1.0)
            current = a + t * d
            t0 = t
            out.append(current.copy())
            found = True
            break
        if not found:
            break
    return out


def _arc_position(polyline: np.ndarray, chord: float, steps: int) -> float:
    """Arc-length parameter reached after ``steps`` chords (inf if it runs out)."""
    pts = walk_chords(polyline, chord, max_steps=steps)
    if len(pts) - 1 < steps:
        return math.inf
    seg_len = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg_len)])
    # locate the final point on the polyline
    last = pts[-1]
    d = np.linalg.norm(polyline[:-1] - last, axis=1) + np.linalg.norm(polyline[1:] - last, axis=1) - seg_len
    i = int(np.argmin(d))
    return float(cum[i] + np.linalg.norm(last - polyline[i]))


def fit_chord(polyline: np.ndarray, steps: int) -> float:
    """Chord length whose ``steps``-fold walk ends at the end of ``polyline``."""
    seg_len = np.linalg.norm(np.diff(polyline, axis=0), axis=1)
    total = float(seg_len.sum())
    straight = float(np.linalg.norm(polyline[-1] - polyline[0]))
    lo, hi = straight / steps * 0.5, total / steps
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _arc_position(polyline, mid, steps) < total:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    return lo


# --- manifests ---------------------------------------------------------------


def write_manifest(path, camera_path: CameraPath) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in camera_path.to_records():
            fh.write(json.dumps(rec) + "\n")


def read_manifest(path) -> CameraPath:
    records = []
    with open(path, "rb") as fh:
        offset = 0
        for raw in fh:
            line = raw.strip()
            if line:
                try:
                    rec = json.loads(line)
                    records.append({k: rec[k] for k in ("frame", "x", "y", "z")})
                except (ValueError, KeyError, TypeError) as exc:
                    raise ParseError(f"{path}: bad trajectory record ({exc})", offset) from None
            offset += len(raw)
    return CameraPath.from_records(records)


def write_flowscale(path, fs: FlowScale) -> None:
    Path(path).write_text(json.dumps(fs.to_dict()), encoding="utf-8")


def read_flowscale(path) -> FlowScale:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        return FlowScale.from_dict(data)
    except (ValueError, KeyError, TypeError) as exc:
        raise ParseError(f"{path}: bad flow/scale file ({exc})") from None
