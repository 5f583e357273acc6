"""Refine-stage scheduling: segment counts, visibility masks, latent pooling.

A preview clip of ``f`` frames generated at scale ``s`` is expanded to target
scale ``s_prime`` by ``n = ceil(s / s_prime)`` refined segments. Segment ``i``
(1-based) is conditioned on the preview frames ``[j0, j0 + w)`` with
``w = ceil((f - 1) / n)`` and ``j0 = (i - 1) * w`` at inference time.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

DEFAULT_TEMPORAL_COMPRESSION = 4
DEFAULT_SPATIAL_COMPRESSION = 8
DEFAULT_OVERLAP = 1


def segment_count(s: float, s_prime: float) -> int:
    # s/s' is rounded to 9 decimals first so that e.g. 1.1/0.1 == 11.000000000000002
    # does not round up to 12 segments.
    return max(1, math.ceil(round(s / s_prime, 9)))


def window_size(f: int, n: int) -> int:
    return -(-(f - 1) // n)


def latent_length(f: int, temporal_compression: int = DEFAULT_TEMPORAL_COMPRESSION) -> int:
    """Latent frames of a causal video autoencoder: first frame kept, then blocks."""
    return 1 + -(-(f - 1) // temporal_compression)


@dataclass
class SegmentPlan:
    s: float
    s_prime: float
    f: int
    n: int
    w: int
    overlap: int
    j0: list[int] = field(default_factory=list)

    @property
    def total_length(self) -> int:
        return self.f + (self.n - 1) * (self.f - self.overlap)

    def window(self, i: int) -> tuple[int, int]:
        """Half-open conditioning window of segment ``i`` (1-based), clamped to f."""
        self._check_index(i)
        start = self.j0[i - 1]
        return start, min(start + self.w, self.f)

    def _check_index(self, i: int) -> None:
        if not 1 <= i <= self.n:
            raise DomainError(f"segment index {i} outside [1, {self.n}]")

    def to_dict(self, temporal_compression: int = DEFAULT_TEMPORAL_COMPRESSION) -> dict:
        segments = []
        for i in range(1, self.n + 1):
            mask = build_mask(self, i, temporal_compression=temporal_compression)
            segments.append(
                {
                    "i": i,
                    "j0": mask.j0,
                    "frame_mask_runlength": run_length(mask.frame_mask),
                    "latent_mask": mask.latent_mask.tolist(),
                }
            )
        return {
            "s": self.s,
            "s_prime": self.s_prime,
            "f": self.f,
            "n": self.n,
            "w": self.w,
            "overlap": self.overlap,
            "total_length": self.total_length,
            "temporal_compression": temporal_compression,
            "latent_length": latent_length(self.f, temporal_compression),
            "segments": segments,
        }


@dataclass
class VisibilityMask:
    j0: int
    frame_mask: np.ndarray
    latent_mask: np.ndarray


def plan_segments(s: float, s_prime: float, f: int, overlap: int = DEFAULT_OVERLAP) -> SegmentPlan:
    if not (s > 0 and s_prime > 0 and math.isfinite(s) and math.isfinite(s_prime)):
        raise DomainError("scales must be positive and finite")
    if s < s_prime:
        raise DomainError(f"preview scale {s} is below target scale {s_prime}; refinement never compresses time")
    if f < 2:
        raise DomainError("a clip needs at least two frames")
    if not 0 <= overlap < f:
        raise DomainError(f"overlap must lie in [0, {f}), got {overlap}")
    n = segment_count(s, s_prime)
    w = window_size(f, n)
    return SegmentPlan(s, s_prime, f, n, w, overlap, [(i - 1) * w for i in range(1, n + 1)])


def frame_mask(f: int, j0: int, w: int) -> np.ndarray:
    mask = np.zeros(f, dtype=np.uint8)
    mask[max(j0, 0) : min(j0 + w, f)] = 1
    return mask


def build_mask(
    plan: SegmentPlan,
    i: int,
    mode: str = "inference",
    rng_seed: int | None = None,
    temporal_compression: int = DEFAULT_TEMPORAL_COMPRESSION,
) -> VisibilityMask:
    """Visibility mask for segment ``i``.

    In ``training`` mode the window start is drawn uniformly from the integers
    ``[0, f - w]`` using ``rng_seed``.
    """
    plan._check_index(i)
    if mode == "inference":
        j0 = plan.j0[i - 1]
    elif mode == "training":
        rng = np.random.default_rng(rng_seed)
        j0 = int(rng.integers(0, plan.f - plan.w, endpoint=True))
    else:
        raise DomainError(f"unknown mask mode {mode!r}")
    fm = frame_mask(plan.f, j0, plan.w)
    return VisibilityMask(j0, fm, pool_mask(fm, temporal_compression))


def pool_mask(frame_mask, temporal_compression: int = DEFAULT_TEMPORAL_COMPRESSION) -> np.ndarray:
    """Average-pool a per-frame mask to latent temporal resolution.

    Slot 0 holds frame 0; slot ``t >= 1`` averages frames
    ``[(t-1)*T_c + 1, t*T_c]`` (the last block may be short). Values stay
    fractional.
    """
    if temporal_compression < 1:
        raise DomainError("temporal compression must be >= 1")
    m = np.asarray(frame_mask, dtype=np.float64).ravel()
    if m.size == 0:
        raise DomainError("empty frame mask")
    tc = temporal_compression
    out = np.empty(latent_length(m.size, tc))
    out[0] = m[0]
    for t in range(1, out.size):
        block = m[(t - 1) * tc + 1 : t * tc + 1]
        out[t] = block.sum() / block.size
    return out


def mask_latent(z_p: np.ndarray, latent_mask) -> np.ndarray:
    """Scale every temporal slice of an ``(f', c, h, w)`` latent by its mask value."""
    z = np.asarray(z_p)
    m = np.asarray(latent_mask, dtype=np.float64).ravel()
    if z.ndim < 1 or z.shape[0] != m.size:
        raise DomainError(f"latent has {z.shape[0] if z.ndim else 0} temporal slices but mask has {m.size}")
    bm = m.reshape((-1,) + (1,) * (z.ndim - 1))
    with np.errstate(invalid="ignore"):
        scaled = z * bm.astype(z.dtype) if np.issubdtype(z.dtype, np.floating) else z * bm
    # exact zeros (no -0.0 / nan leakage) on hidden slices
    return np.where(bm == 0.0, np.zeros((), dtype=scaled.dtype), scaled)


def concat_segments(segments, overlap: int = DEFAULT_OVERLAP) -> np.ndarray:
    """Join refined segments, dropping ``overlap`` leading frames of each successor."""
    if not segments:
        raise DomainError("no segments to concatenate")
    arrays = [np.asarray(s) for s in segments]
    first = arrays[0]
    for k, a in enumerate(arrays):
        if a.shape != first.shape:
            raise DomainError(f"segment {k} has shape {a.shape}, expected {first.shape}")
    if not 0 <= overlap < first.shape[0]:
        raise DomainError(f"overlap must lie in [0, {first.shape[0]})")
    return np.concatenate([first] + [a[overlap:] for a in arrays[1:]], axis=0)


def run_length(mask) -> list[list[int]]:
    """Encode a binary mask as ``[[value, count], ...]``."""
    runs: list[list[int]] = []
    for value in np.asarray(mask).tolist():
        if runs and runs[-1][0] == value:
            runs[-1][1] += 1
        else:
            runs.append([int(value), 1])
    return runs


def run_length_decode(runs) -> np.ndarray:
    return np.concatenate([np.full(count, value, dtype=np.uint8) for value, count in runs]) if runs else np.zeros(0, np.uint8)
