"""Evaluation metrics: loop consistency, PSNR windows, SSIM, Frechet distance.

Feature files (``.fseq``) hold precomputed per-frame embeddings:
``b"FSEQ"``, little-endian ``u32 n, u32 d``, then ``n*d`` little-endian f32
values, row-major. Any external extractor (CLIP, an auto-encoder, ...) can
write them; the loaders never touch an ML runtime.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy import fft as sfft

from .errors import DomainError, NumericError, ParseError

LOOP_BUFFER = 5
LOOP_EPS = 1e-6
PSNR_CAP = 100.0
PSNR_WINDOWS = ((20, 25), (50, 55), (70, 75))
PSNR_WINDOWS_LONG = ((610, 615), (630, 635))

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

FSEQ_MAGIC = b"FSEQ"
_FSEQ_HEADER = struct.Struct("<4sII")

RAW_PIXEL_SIZE = (32, 16)  # (width, height)
DCT_BLOCK = 8


@dataclass(eq=False)
class FeatureSequence:
    vectors: np.ndarray
    provider_id: str = "unknown"

    def __post_init__(self):
        v = np.array(self.vectors, dtype=np.float64)
        if v.ndim == 1:
            v = v[None, :]
        if v.ndim != 2 or v.shape[1] < 1:
            raise DomainError(f"features must be an (f, d) matrix with d >= 1, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise DomainError("features contain non-finite values")
        zero = np.flatnonzero(np.linalg.norm(v, axis=1) == 0.0)
        if zero.size:
            raise DomainError(f"feature row {zero[0]} has zero norm; cosine similarity is undefined")
        self.vectors = v

    def __len__(self) -> int:
        return len(self.vectors)

    def unit_rows(self) -> np.ndarray:
        return self.vectors / np.linalg.norm(self.vectors, axis=1, keepdims=True)


@dataclass
class LoopScores:
    s1: float
    s2: float
    c_loop: float | None
    p: int
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return np.clip(a @ b.T, -1.0, 1.0)


def loop_consistency(feats: FeatureSequence, p: int = LOOP_BUFFER, eps: float = LOOP_EPS) -> LoopScores:
    """Loop closure ratio ``(1 - S2) / (1 - S1)``.

    ``S1`` averages the similarity of the first ``p`` frames against the last
    ``p``; ``S2`` averages the first ``p`` frames against every frame strictly
    between the two buffers. When ``1 - S1 < eps`` the result is flagged
    degenerate and carries no ratio.
    """
    f = len(feats)
    if p < 1:
        raise DomainError("buffer size must be >= 1")
    if f <= 2 * p:
        raise DomainError(f"loop consistency needs more than {2 * p} frames, got {f}")
    unit = feats.unit_rows()
    head = unit[:p]
    s1 = float(np.mean(cosine_matrix(head, unit[f - p :])))
    s2 = float(np.mean(cosine_matrix(head, unit[p : f - p])))
    if 1.0 - s1 < eps:
        return LoopScores(s1, s2, None, p, degenerate=True)
    return LoopScores(s1, s2, (1.0 - s2) / (1.0 - s1), p)


def similarity_curve(feats: FeatureSequence) -> np.ndarray:
    unit = feats.unit_rows()
    curve = np.clip(unit @ unit[0], -1.0, 1.0)
    curve[0] = 1.0
    return curve


# --- PSNR / SSIM ---------------------------------------------------------------


def psnr(gen, ref, max_value: float = 255.0, cap: float = PSNR_CAP) -> float:
    a = np.asarray(gen, dtype=np.float64)
    b = np.asarray(ref, dtype=np.float64)
    if a.shape != b.shape:
        raise DomainError(f"frame shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return cap
    return min(cap, 10.0 * math.log10(max_value * max_value / mse))


def psnr_windows(gen, ref, windows=PSNR_WINDOWS, max_value: float = 255.0, cap: float = PSNR_CAP) -> list[float]:
    """Mean per-frame PSNR over each inclusive frame window ``(lo, hi)``."""
    if len(gen) != len(ref):
        raise DomainError(f"sequence lengths differ: {len(gen)} vs {len(ref)}")
    out = []
    for lo, hi in windows:
        if not 0 <= lo <= hi < len(gen):
            raise DomainError(f"window ({lo}, {hi}) outside a {len(gen)}-frame sequence")
        values = [psnr(gen[k], ref[k], max_value, cap) for k in range(lo, hi + 1)]
        out.append(float(np.mean(values)))
    return out


def to_gray(img) -> np.ndarray:
    """BT.601 luma for RGB input; single-channel input passes through."""
    x = np.asarray(img, dtype=np.float64)
    if x.ndim == 3 and x.shape[2] == 1:
        x = x[:, :, 0]
    if x.ndim == 3:
        x = 0.299 * x[..., 0] + 0.587 * x[..., 1] + 0.114 * x[..., 2]
    if x.ndim != 2:
        raise DomainError(f"cannot convert shape {np.shape(img)} to grayscale")
    return x


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    r = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(r**2) / (2.0 * sigma**2))
    g /= g.sum()
    return np.outer(g, g)


def _local_mean(x: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    pad = kernel.shape[0] // 2
    padded = np.pad(x, pad, mode="symmetric")
    windows = np.lib.stride_tricks.sliding_window_view(padded, kernel.shape)
    return np.einsum("ijkl,kl->ij", windows, kernel)


def ssim(gen, ref, data_range: float = 255.0) -> float:
    """Mean SSIM with an 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03.

    Borders are handled by symmetric padding so every pixel contributes to
    the mean (small images remain well defined).
    """
    a = to_gray(gen)
    b = to_gray(ref)
    if a.shape != b.shape:
        raise DomainError(f"frame shapes differ: {a.shape} vs {b.shape}")
    kernel = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a = _local_mean(a, kernel)
    mu_b = _local_mean(b, kernel)
    var_a = _local_mean(a * a, kernel) - mu_a**2
    var_b = _local_mean(b * b, kernel) - mu_b**2
    cov = _local_mean(a * b, kernel) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


# --- Frechet distance ------------------------------------------------------------


def _sym_sqrt(mat: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(mat)
    return (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def _stats(x: np.ndarray, shrinkage: float):
    mu = x.mean(axis=0)
    cov = np.atleast_2d(np.cov(x, rowvar=False))
    if shrinkage > 0:
        d = cov.shape[0]
        cov = (1.0 - shrinkage) * cov + shrinkage * (np.trace(cov) / d) * np.eye(d)
    return mu, cov


def frechet_distance(feats_a, feats_b, shrinkage: float = 0.0) -> float:
    """Frechet distance between Gaussians fitted to two feature sets.

    ``|mu_a - mu_b|^2 + Tr(S_a + S_b - 2 (S_a S_b)^(1/2))``. The trace of the
    cross term is computed as ``Tr sqrt(S_a^(1/2) S_b S_a^(1/2))`` with
    symmetric eigendecompositions and eigenvalues clamped at zero.
    """
    a = _as_matrix(feats_a)
    b = _as_matrix(feats_b)
    if a.shape[1] != b.shape[1]:
        raise DomainError(f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    d = a.shape[1]
    if not 0.0 <= shrinkage <= 1.0:
        raise DomainError("shrinkage must lie in [0, 1]")
    if shrinkage == 0.0 and min(len(a), len(b)) < d + 1:
        raise DomainError(f"need at least d+1={d + 1} rows per set (or shrinkage > 0)")
    if min(len(a), len(b)) < 2:
        raise DomainError("need at least two rows per set")
    mu_a, cov_a = _stats(a, shrinkage)
    mu_b, cov_b = _stats(b, shrinkage)
    try:
        root_a = _sym_sqrt(cov_a)
        inner = root_a @ cov_b @ root_a
        inner = 0.5 * (inner + inner.T)
        cross = np.sqrt(np.clip(np.linalg.eigvalsh(inner), 0.0, None)).sum()
    except np.linalg.LinAlgError as exc:
        raise NumericError(
            f"eigendecomposition failed ({exc}); d={d}, n_a={len(a)}, n_b={len(b)}, "
            f"trace_a={np.trace(cov_a):.6g}, trace_b={np.trace(cov_b):.6g}"
        ) from None
    diff = mu_a - mu_b
    value = float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * cross)
    return max(value, 0.0)


def _as_matrix(feats) -> np.ndarray:
    x = feats.vectors if isinstance(feats, FeatureSequence) else np.asarray(feats, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise DomainError(f"features must be 2-D, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise DomainError("features contain non-finite values")
    return x.astype(np.float64, copy=False)


# --- embedding providers --------------------------------------------------------------


def _area_resize(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    h, w = img.shape[:2]
    if w < out_w or h < out_h:
        raise DomainError(f"frame {w}x{h} is smaller than the {out_w}x{out_h} embedding grid")
    xe = np.rint(np.linspace(0, w, out_w + 1)).astype(int)
    ye = np.rint(np.linspace(0, h, out_h + 1)).astype(int)
    rows = np.add.reduceat(img, ye[:-1], axis=0) / np.diff(ye).reshape(-1, *([1] * (img.ndim - 1)))
    return np.add.reduceat(rows, xe[:-1], axis=1) / np.diff(xe).reshape(1, -1, *([1] * (img.ndim - 2)))


def raw_pixel_embedding(frame) -> np.ndarray:
    x = np.asarray(frame, dtype=np.float64)
    small = _area_resize(x, *RAW_PIXEL_SIZE).ravel()
    return small - small.mean()


def dct_embedding(frame) -> np.ndarray:
    gray = to_gray(frame)
    coeffs = sfft.dctn(gray, norm="ortho")
    return coeffs[:DCT_BLOCK, :DCT_BLOCK].ravel()


def embedding_provider(kind: str, frames=None, path=None) -> FeatureSequence:
    """Build a ``FeatureSequence`` from frames or a feature file.

    ``raw_pixel``: 32x16 area-downsampled RGB, flattened and mean-subtracted.
    ``dct_lowfreq``: lowest 8x8 orthonormal DCT-II coefficients of the luma.
    ``external_file``: verbatim load of an ``.fseq`` file at ``path``.
    """
    if kind == "external_file":
        if path is None:
            raise DomainError("external_file provider needs a path")
        return read_features(path)
    if frames is None:
        raise DomainError(f"{kind} provider needs frames")
    if kind == "raw_pixel":
        fn = raw_pixel_embedding
    elif kind == "dct_lowfreq":
        fn = dct_embedding
    else:
        raise DomainError(f"unknown embedding provider {kind!r}")
    arrays = [getattr(fr, "pixels", fr) for fr in frames]
    return FeatureSequence(np.stack([fn(a) for a in arrays]), provider_id=kind)


def write_features(path, vectors) -> None:
    v = np.asarray(vectors.vectors if isinstance(vectors, FeatureSequence) else vectors, dtype="<f4")
    if v.ndim != 2:
        raise DomainError("feature matrix must be 2-D")
    with open(path, "wb") as fh:
        fh.write(_FSEQ_HEADER.pack(FSEQ_MAGIC, v.shape[0], v.shape[1]))
        fh.write(np.ascontiguousarray(v).tobytes())


def read_feature_matrix(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _FSEQ_HEADER.size:
        raise ParseError(f"{path}: truncated feature header", len(data))
    magic, n, d = _FSEQ_HEADER.unpack_from(data)
    if magic != FSEQ_MAGIC:
        raise ParseError(f"{path}: bad magic {magic!r}", 0)
    payload = len(data) - _FSEQ_HEADER.size
    if payload != n * d * 4:
        raise ParseError(f"{path}: expected {n * d * 4} payload bytes for n={n}, d={d}, found {payload}",
                         _FSEQ_HEADER.size + min(payload, n * d * 4))
    mat = np.frombuffer(data, dtype="<f4", offset=_FSEQ_HEADER.size).reshape(n, d).astype(np.float64)
    bad = np.argwhere(~np.isfinite(mat))
    if bad.size:
        r, c = bad[0]
        raise ParseError(f"{path}: non-finite value at row {r}, column {c}", _FSEQ_HEADER.size + 4 * (r * d + c))
    return mat


def read_features(path) -> FeatureSequence:
    return FeatureSequence(read_feature_matrix(path), provider_id=f"external_file:{Path(path).name}")


# --- reports --------------------------------------------------------------------------


def write_json_report(path, report: dict) -> None:
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def write_csv_report(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def write_curve_svg(path, curves: dict, title: str = "similarity to first frame") -> None:
    """Line plot of one or more similarity curves (deterministic SVG output)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "panoloom", "svg.fonttype": "none"}):
        fig, ax = plt.subplots(figsize=(6, 3.5))
        for label, values in curves.items():
            ax.plot(np.arange(len(values)), values, label=label)
        ax.set_xlabel("frame")
        ax.set_ylabel("cosine similarity")
        ax.set_title(title)
        ax.grid(alpha=0.3)
        if len(curves) > 1:
            ax.legend()
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)
