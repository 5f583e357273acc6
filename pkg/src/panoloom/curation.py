"""Curation of pose-annotated panoramic clips into training manifests.

Pipeline: gravity alignment -> corpus scale filter -> temporal slicing ->
uniform-velocity check -> flow/scale decomposition -> JSONL manifest.

Pose text format, one pose per line (``#`` starts a comment)::

    frame tx ty tz r00 r01 r02 r10 r11 r12 r20 r21 r22

with ``R`` the world-from-camera rotation in row-major order. The JSON
alternative is a list of ``{"frame", "position", "rotation"}`` objects.
Camera axes follow the ERP convention (x right, y up, z forward).
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, DegenerateStep, DomainError, ParseError, ValidationError
from .trajectory import (
    DEFAULT_UNIFORM_TOL,
    CameraPath,
    FlowScale,
    decompose,
    validate_uniform,
)

log = logging.getLogger(__name__)

SCALE_BAND = (0.5, 2.0)
ORTHONORMAL_TOL = 1e-6
FLAG_NAMES = ("gravity_aligned", "uniform", "scale_ok")


@dataclass(eq=False)
class PoseRecord:
    frame: int
    position: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        self.frame = int(self.frame)
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        err = np.abs(self.rotation.T @ self.rotation - np.eye(3)).max()
        if err > ORTHONORMAL_TOL or np.linalg.det(self.rotation) < 0:
            raise ValidationError(f"frame {self.frame}: rotation is not a proper orthonormal matrix (error {err:.3g})")

    @property
    def up(self) -> np.ndarray:
        """Camera up axis expressed in world coordinates."""
        return self.rotation[:, 1]


def read_poses(path) -> list[PoseRecord]:
    path = Path(path)
    if path.suffix == ".json":
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
            return [PoseRecord(d["frame"], d["position"], d["rotation"]) for d in data]
        except (ValueError, KeyError, TypeError) as exc:
            raise ParseError(f"{path}: bad pose JSON ({exc})") from None
    poses = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            line = raw.split(b"#", 1)[0].strip()
            if line:
                parts = line.split()
                if len(parts) != 13:
                    raise ParseError(f"{path}: expected 13 fields, got {len(parts)}", offset)
                try:
                    vals = [float(p) for p in parts]
                except ValueError as exc:
                    raise ParseError(f"{path}: {exc}", offset) from None
                poses.append(PoseRecord(int(vals[0]), vals[1:4], np.array(vals[4:]).reshape(3, 3)))
            offset += len(raw)
    return poses


def write_poses(path, poses) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in poses:
            fields = [str(p.frame)] + [repr(float(v)) for v in p.position] + [repr(float(v)) for v in p.rotation.ravel()]
            fh.write(" ".join(fields) + "\n")


# --- gravity alignment ------------------------------------------------------------


def rotation_between(a, b) -> np.ndarray:
    """Smallest rotation taking unit vector ``a`` onto unit vector ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    v = np.cross(a, b)
    c = float(a @ b)
    if c < -1.0 + 1e-12:
        helper = np.eye(3)[int(np.argmin(np.abs(a)))]
        axis = np.cross(a, helper)
        axis /= np.linalg.norm(axis)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])
    return np.eye(3) + vx + vx @ vx / (1.0 + c)


def estimate_up(poses) -> np.ndarray:
    mean_up = np.mean([p.up for p in poses], axis=0)
    norm = np.linalg.norm(mean_up)
    if norm < 1e-6:
        raise AlignmentError("camera up vectors cancel out; supply an up hint")
    return mean_up / norm


def alignment_rotation(poses, up_hint=None) -> np.ndarray:
    if up_hint is not None:
        hint = np.asarray(up_hint, dtype=np.float64)
        if np.linalg.norm(hint) < 1e-12:
            raise AlignmentError("up hint is the zero vector")
        up = hint
    else:
        up = estimate_up(poses)
    return rotation_between(up, [0.0, 1.0, 0.0])


def gravity_align(poses, up_hint=None) -> list[PoseRecord]:
    """Rotate the whole sequence so the estimated up direction becomes +y.

    One global rotation is applied to every position and orientation, so
    relative geometry is unchanged. Residual yaw is left as estimated.
    """
    poses = list(poses)
    if len(poses) < 2:
        raise DomainError("gravity alignment needs at least two poses")
    g = alignment_rotation(poses, up_hint)
    return [PoseRecord(p.frame, g @ p.position, g @ p.rotation) for p in poses]


def poses_to_path(poses) -> CameraPath:
    poses = sorted(poses, key=lambda p: p.frame)
    frames = [p.frame for p in poses]
    if frames != list(range(frames[0], frames[0] + len(frames))):
        raise ValidationError("pose frames must be consecutive")
    return CameraPath(np.array([p.position for p in poses]), frame_offset=frames[0])


# --- scale filtering --------------------------------------------------------------


@dataclass
class ScaleFilterResult:
    kept: list
    rejected: list  # (index, measured median step)
    median: float
    medians: list = field(default_factory=list)


def median_step(path: CameraPath) -> float:
    return float(np.median(path.step_lengths))


def filter_scale(clips, band: tuple = SCALE_BAND) -> ScaleFilterResult:
    """Keep clips whose median step lies within ``band`` times the corpus median.

    The corpus median is the median of per-clip median steps. Filtering is
    repeated on the survivors until nothing more is rejected, which makes the
    filter idempotent.
    """
    clips = list(clips)
    if not clips:
        raise DomainError("empty corpus")
    lo, hi = band
    if not 0 < lo <= hi:
        raise DomainError("scale band must satisfy 0 < lo <= hi")
    medians = [median_step(c) for c in clips]
    kept = list(range(len(clips)))
    rejected = []
    while True:
        m = float(np.median([medians[i] for i in kept]))
        out = [i for i in kept if not lo * m <= medians[i] <= hi * m]
        if not out:
            break
        rejected.extend((i, medians[i]) for i in out)
        kept = [i for i in kept if i not in out]
    rejected.sort()
    return ScaleFilterResult(kept, rejected, m, medians)


# --- slicing --------------------------------------------------------------------


def slice_clips(
    path: CameraPath,
    f: int,
    policy: str = "uniform",
    seed: int = 0,
    stride: int | None = None,
    count: int | None = None,
) -> list[CameraPath]:
    """Cut ``f``-frame windows out of a long path.

    ``uniform`` tiles from frame 0 with ``stride`` (default ``f``).
    ``random`` draws ``count`` distinct start indices uniformly from
    ``[0, len - f]`` (default ``len // f`` draws). Windows come back sorted by
    start and keep absolute frame numbers in ``frame_offset``.
    """
    total = len(path)
    if f < 1:
        raise DomainError("window length must be >= 1")
    if total < f:
        raise DomainError(f"path has {total} frames, fewer than the window length {f}")
    last = total - f
    if policy == "uniform":
        stride = f if stride is None else int(stride)
        if stride < 1:
            raise DomainError("stride must be >= 1")
        starts = list(range(0, last + 1, stride))
    elif policy == "random":
        count = max(1, total // f) if count is None else int(count)
        count = min(count, last + 1)
        rng = np.random.default_rng(seed)
        starts = sorted(int(s) for s in rng.choice(last + 1, size=count, replace=False))
    else:
        raise DomainError(f"unknown slicing policy {policy!r}")
    return [CameraPath(path.positions[s : s + f], frame_offset=path.frame_offset + s) for s in starts]


# --- manifests --------------------------------------------------------------------


@dataclass(eq=False)
class ClipManifest:
    clip_id: str
    path: CameraPath
    flow_scale: FlowScale
    flags: dict = field(default_factory=lambda: {k: True for k in FLAG_NAMES})

    @property
    def frame_range(self) -> tuple[int, int]:
        return self.path.frame_offset, self.path.frame_offset + len(self.path) - 1

    def to_dict(self) -> dict:
        start, end = self.frame_range
        return {
            "clip_id": self.clip_id,
            "frame_start": start,
            "frame_end": end,
            "flags": {k: bool(self.flags.get(k, False)) for k in FLAG_NAMES},
            "flow_scale": self.flow_scale.to_dict(),
            "trajectory": self.path.to_records(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ClipManifest":
        return cls(
            data["clip_id"],
            CameraPath.from_records(data["trajectory"]),
            FlowScale.from_dict(data["flow_scale"]),
            dict(data["flags"]),
        )


def emit_manifest(clips, out) -> None:
    """Write clips as JSON Lines; refuses if any clip has a false flag."""
    clips = list(clips)
    problems = []
    for clip in clips:
        bad = [k for k in FLAG_NAMES if not clip.flags.get(k, False)]
        if bad:
            problems.append(f"{clip.clip_id}: {', '.join(bad)} not satisfied")
    if problems:
        raise ValidationError("refusing to emit manifest: " + "; ".join(problems))
    with open(out, "w", encoding="utf-8") as fh:
        for clip in clips:
            fh.write(json.dumps(clip.to_dict()) + "\n")


def read_clip_manifest(path) -> list[ClipManifest]:
    clips = []
    offset = 0
    with open(path, "rb") as fh:
        for raw in fh:
            if raw.strip():
                try:
                    clips.append(ClipManifest.from_dict(json.loads(raw)))
                except (ValueError, KeyError, TypeError) as exc:
                    raise ParseError(f"{path}: bad clip record ({exc})", offset) from None
            offset += len(raw)
    return clips


def write_rejections(path, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["clip_id", "reason", "value"])
        for clip_id, reason, value in rows:
            writer.writerow([clip_id, reason, "" if value is None else repr(float(value))])


@dataclass
class CurationResult:
    manifests: list
    rejections: list
    reference_step: float


def curate(
    sources: dict,
    f: int = 81,
    policy: str = "uniform",
    seed: int = 0,
    stride: int | None = None,
    uniform_tol: float = DEFAULT_UNIFORM_TOL,
    band: tuple = SCALE_BAND,
    reference_step: float | None = None,
    up_hint=None,
) -> CurationResult:
    """Run the full curation pipeline over ``{clip_id: [PoseRecord, ...]}``.

    ``reference_step`` defaults to the corpus median step so that scale 1.0
    means normal playback for this corpus.
    """
    rejections = []
    aligned: dict[str, CameraPath] = {}
    for clip_id in sorted(sources):
        try:
            aligned[clip_id] = poses_to_path(gravity_align(sources[clip_id], up_hint))
        except (AlignmentError, DomainError, ValidationError) as exc:
            log.info("clip %s rejected during alignment: %s", clip_id, exc)
            rejections.append((clip_id, f"alignment: {exc}", None))
    if not aligned:
        return CurationResult([], rejections, float("nan"))

    ids = list(aligned)
    scale = filter_scale([aligned[i] for i in ids], band)
    for idx, value in scale.rejected:
        rejections.append((ids[idx], "scale", value))
    ref = scale.median if reference_step is None else reference_step

    manifests = []
    for idx in scale.kept:
        clip_id = ids[idx]
        path = aligned[clip_id]
        if len(path) < f:
            rejections.append((clip_id, "too_short", len(path)))
            continue
        for window in slice_clips(path, f, policy, seed, stride):
            wid = f"{clip_id}_{window.frame_offset:06d}"
            try:
                report = validate_uniform(window, uniform_tol)
                if not report.passed:
                    rejections.append((wid, "non_uniform", report.max_deviation))
                    continue
                fs = decompose(window, ref, uniform_tol)
            except DegenerateStep:
                rejections.append((wid, "degenerate_step", 0.0))
                continue
            manifests.append(ClipManifest(wid, window, fs))
    return CurationResult(manifests, rejections, ref)
