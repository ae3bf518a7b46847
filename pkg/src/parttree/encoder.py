"""Point cloud to voxel feature grid.

A per-point MLP lifts each xyz coordinate to a D-dimensional feature;
features are average-pooled into their containing voxel of an R^3 grid and
flattened x-fastest into an (R^3, D) matrix.  Empty voxels hold zeros.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .diffcore import Tensor, accumulate_grad, matmul, tanh

FALLBACK_HALF = 0.5


class InputDomainError(ValueError):
    """Raised when point coordinates leave the normalized unit cube."""


@dataclass(frozen=True)
class EncoderConfig:
    resolution: int = 32
    latent_dim: int = 64

    def __post_init__(self):
        if self.resolution < 2:
            raise ValueError("encoder resolution must be >= 2")
        if self.latent_dim < 1:
            raise ValueError("latent dim must be >= 1")


@dataclass
class PointCloud:
    """Unit-cube normalized points, optionally carrying per-point part labels."""

    points: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ValueError(f"points must be (M, 3), got {self.points.shape}")
        if self.points.shape[0] < 1:
            raise ValueError("point cloud must contain at least one point")
        if not np.isfinite(self.points).all():
            raise InputDomainError("point cloud contains non-finite coordinates")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (self.points.shape[0],):
                raise ValueError("labels must be one integer per point")

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class FeatureGrid:
    """Flattened (R^3, D) per-cell latent features, x-fastest order."""

    features: Tensor
    resolution: int
    latent_dim: int = field(default=0)

    def __post_init__(self):
        cells = self.resolution**3
        if self.features.shape[0] != cells:
            raise ValueError(
                f"feature grid rows {self.features.shape[0]} != resolution^3 {cells}"
            )
        if self.latent_dim == 0:
            self.latent_dim = self.features.shape[1]


def normalize_points(raw: np.ndarray) -> np.ndarray:
    """Center at the bounding-box centroid and divide by the largest extent.

    The result lies in [-0.5, 0.5]^3 (clipped against float rounding on the
    extreme coordinates).  Degenerate single-point clouds map to the origin.
    """
    pts = np.asarray(raw, dtype=np.float64)
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    center = (lo + hi) / 2.0
    extent = float((hi - lo).max())
    if extent <= 0.0:
        return np.zeros_like(pts)
    return np.clip((pts - center) / extent, -0.5, 0.5)


def voxel_index(points: np.ndarray, resolution: int) -> np.ndarray:
    """Flat cell index per point; the boundary coordinate +0.5 maps to the last cell."""
    idx = np.floor((points + 0.5) * resolution).astype(np.int64)
    idx = np.clip(idx, 0, resolution - 1)
    return idx[:, 0] + resolution * (idx[:, 1] + resolution * idx[:, 2])


def subsample(pc: PointCloud, n: int, seed: int) -> PointCloud:
    """Uniform sample of ``n`` points, without replacement when possible."""
    if n < 1:
        raise ValueError("subsample count must be >= 1")
    rng = np.random.default_rng(seed)
    m = len(pc)
    chosen = rng.choice(m, size=n, replace=m < n)
    labels = pc.labels[chosen] if pc.labels is not None else None
    return PointCloud(pc.points[chosen], labels)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    d = cfg.latent_dim
    # nonzero biases keep occupied voxels distinguishable from the empty-cell
    # zero vector even for points at the origin
    return {
        "enc.w1": Tensor(rng.normal(0.0, 1.0 / np.sqrt(3.0), (3, d)), requires_grad=True),
        "enc.b1": Tensor(rng.normal(0.0, 0.1, d), requires_grad=True),
        "enc.w2": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)), requires_grad=True),
        "enc.b2": Tensor(rng.normal(0.0, 0.1, d), requires_grad=True),
    }


def _mean_pool(features: Tensor, flat_idx: np.ndarray, num_cells: int) -> Tensor:
    """Average point features into their voxel; empty voxels stay zero."""
    counts = np.bincount(flat_idx, minlength=num_cells).astype(np.float64)
    denom = np.maximum(counts, 1.0)
    pooled = np.zeros((num_cells, features.shape[1]))
    np.add.at(pooled, flat_idx, features.data)
    pooled /= denom[:, None]

    def _bk(grad):
        accumulate_grad(features, grad[flat_idx] / denom[flat_idx, None])

    return Tensor.from_op(pooled, (features,), _bk)


def encode(pc: PointCloud, cfg: EncoderConfig, params: dict[str, Tensor]) -> FeatureGrid:
    """Per-point MLP followed by voxel average pooling.

    Points are re-ordered canonically (by voxel, then coordinates) before any
    arithmetic, which makes the output bit-identical under input permutation.
    """
    pts = pc.points
    if np.abs(pts).max() > 0.5:
        worst = pts[np.argmax(np.abs(pts).max(axis=1))]
        raise InputDomainError(
            f"point {worst} outside the normalized cube [-0.5, 0.5]^3"
        )
    flat_idx = voxel_index(pts, cfg.resolution)
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], flat_idx))
    pts, flat_idx = pts[order], flat_idx[order]

    x = Tensor(pts)
    hidden = tanh(matmul(x, params["enc.w1"]) + params["enc.b1"])
    feats = matmul(hidden, params["enc.w2"]) + params["enc.b2"]
    pooled = _mean_pool(feats, flat_idx, cfg.resolution**3)
    return FeatureGrid(pooled, cfg.resolution, cfg.latent_dim)


# -- point cloud text files ----------------------------------------------------
# Format: whitespace-separated XYZ, one point per line; optional 4th column
# is an integer ground-truth part label used only by evaluation.


def write_xyz(path, points: np.ndarray, labels: np.ndarray | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, p in enumerate(points):
            line = f"{p[0]:.17g} {p[1]:.17g} {p[2]:.17g}"
            if labels is not None:
                line += f" {int(labels[i])}"
            fh.write(line + "\n")


def read_xyz(path) -> PointCloud:
    points, labels = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            points.append([float(v) for v in parts[:3]])
            if len(parts) >= 4:
                labels.append(int(parts[3]))
    pts = np.asarray(points, dtype=np.float64)
    lab = np.asarray(labels, dtype=np.int64) if len(labels) == len(points) else None
    return PointCloud(pts, lab)
