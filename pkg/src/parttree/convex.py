"""Smooth convex occupancy fields with rigid transforms and containment.

Each part feature is mapped to H half-spaces plus a blend sharpness, Euler
rotation, translation and anisotropic scale.  Occupancy of a query point is
sigmoid(-sigma * Phi) where Phi is the log-sum-exp of the scaled half-space
responses in the part's local frame.  A child's occupancy is modulated by
its straight-through-selected parent so support nests down the tree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor

DEFAULT_SIGMA = 75.0
SCALE_FLOOR = 1e-6
NORMAL_EPS = 1e-8
FALLBACK_AXIS = np.array([1.0, 0.0, 0.0])

# raw-output bias defaults: each convex starts as a ball big enough that its
# live-gradient shell touches the shape from the first step (an untouched
# convex only feels shrink pressure and erodes at one optimizer step per
# update until it dies), while delta stays moderate so that shell is not
# vanishingly thin under the large occupancy sharpness
OFFSET_BIAS = -0.45
DELTA_RAW_BIAS = 12.0
SCALE_RAW_BIAS = 0.5413248546129181  # softplus^-1(1.0)
# extra init variance on the translation columns spreads part centers apart
TRANSLATION_STD_BOOST = 10.0


@dataclass
class ConvexParams:
    """Half-space bundle plus rigid transform for a single part."""

    normals: Tensor  # (H, 3), unit rows
    offsets: Tensor  # (H,)
    blend_sharpness: Tensor  # (1,), > 0
    euler: Tensor  # (3,) radians, intrinsic Z-Y-X
    translation: Tensor  # (3,)
    scale: Tensor  # (3,), > SCALE_FLOOR

    def __post_init__(self):
        if self.normals.shape[0] < 4:
            raise ValueError("a bounded 3-D convex needs at least 4 half-spaces")

    @property
    def num_planes(self) -> int:
        return self.normals.shape[0]


def raw_width(num_planes: int) -> int:
    """Width of the raw feature-to-convex output: H*4 + 1 + 3 + 3 + 3."""
    return num_planes * 4 + 10


def init_gphi_params(
    latent_dim: int,
    num_planes: int,
    rng: np.random.Generator,
    offset_bias: float = OFFSET_BIAS,
    translation_boost: float = TRANSLATION_STD_BOOST,
) -> dict[str, Tensor]:
    d, h = latent_dim, num_planes
    width = raw_width(h)
    # small output weights keep the initial convexes near the biased defaults;
    # translation columns get extra variance so parts start spread out
    w2 = rng.normal(0.0, 0.1 / np.sqrt(d), (d, width))
    w2[:, 4 * h + 4 : 4 * h + 7] *= translation_boost
    b2 = np.zeros(width)
    b2[3 * h : 4 * h] = offset_bias
    b2[4 * h] = DELTA_RAW_BIAS
    b2[4 * h + 7 : 4 * h + 10] = SCALE_RAW_BIAS
    return {
        "w1": Tensor(rng.normal(0.0, 1.0 / np.sqrt(d), (d, d)), requires_grad=True),
        "b1": Tensor(np.zeros(d), requires_grad=True),
        "w2": Tensor(w2, requires_grad=True),
        "b2": Tensor(b2, requires_grad=True),
    }


def features_to_convex(z: Tensor, gphi: dict[str, Tensor], num_planes: int) -> ConvexParams:
    """Map one part feature to convex parameters through the G head.

    Normals are L2-normalized per plane, falling back to a fixed axis when
    the raw norm is below 1e-8; scale and blend sharpness pass through a
    softplus with a small floor so they stay strictly positive.
    """
    h = num_planes
    hidden = dc.tanh(dc.matmul(z.reshape(1, -1), gphi["w1"]) + gphi["b1"])
    raw = (dc.matmul(hidden, gphi["w2"]) + gphi["b2"])[0]

    normals_raw = raw[: 3 * h].reshape(h, 3)
    row_norms = np.linalg.norm(normals_raw.data, axis=1)
    mask = (row_norms >= NORMAL_EPS).astype(np.float64)[:, None]
    fallback = Tensor(np.tile(FALLBACK_AXIS, (h, 1)) * (1.0 - mask))
    safe = normals_raw * Tensor(mask) + fallback
    norms = dc.sqrt(dc.reduce_sum(dc.square(safe), axis=1, keepdims=True))
    normals = safe / norms

    return ConvexParams(
        normals=normals,
        offsets=raw[3 * h : 4 * h],
        blend_sharpness=dc.softplus(raw[4 * h : 4 * h + 1]) + SCALE_FLOOR,
        euler=raw[4 * h + 1 : 4 * h + 4],
        translation=raw[4 * h + 4 : 4 * h + 7],
        scale=dc.softplus(raw[4 * h + 7 : 4 * h + 10]) + SCALE_FLOOR,
    )


def rotation_matrix(euler: Tensor) -> Tensor:
    """Intrinsic Z-Y-X rotation R = Rz(a) @ Ry(b) @ Rx(g) from 3 angles."""
    a, b, g = euler[0:1], euler[1:2], euler[2:3]
    ca, sa = dc.cos(a), dc.sin(a)
    cb, sb = dc.cos(b), dc.sin(b)
    cg, sg = dc.cos(g), dc.sin(g)
    entries = [
        ca * cb,
        ca * sb * sg - sa * cg,
        ca * sb * cg + sa * sg,
        sa * cb,
        sa * sb * sg + ca * cg,
        sa * sb * cg - ca * sg,
        -sb,
        cb * sg,
        cb * cg,
    ]
    return dc.concat(entries, axis=0).reshape(3, 3)


def local_frame(p: ConvexParams, x) -> Tensor:
    """Transform world queries into the convex's frame: R(E)^T((x - t)/s).

    Row-vector form: translate, divide by the anisotropic scale, then right-
    multiply by R (equivalent to R^T applied to column vectors).
    """
    x = dc.as_tensor(x)
    v = (x - p.translation) / p.scale
    return dc.matmul(v, rotation_matrix(p.euler))


def raw_occupancy(p: ConvexParams, x, sigma: float = DEFAULT_SIGMA) -> Tensor:
    """Occupancy in (0, 1) of query points (Q, 3) for a single convex."""
    local = local_frame(p, x)
    responses = dc.matmul(local, p.normals.transpose()) + p.offsets
    phi = dc.logsumexp(p.blend_sharpness * responses, axis=-1)
    return dc.sigmoid(phi * (-sigma))


def contained_occupancy(
    child_raw: Tensor, parent_contained: Tensor, parent_onehot_st: Tensor
) -> Tensor:
    """Child occupancy modulated by its straight-through-selected parent.

    ``parent_contained`` rows are the already-composed occupancies of every
    candidate parent; the one-hot selects a single row in the forward pass
    while gradients flow to the soft attention through the estimator.
    """
    selected = dc.matmul(parent_onehot_st.reshape(1, -1), parent_contained).reshape(-1)
    return selected * child_raw


def level_union(contained: Tensor) -> Tensor:
    """Pointwise max over the level's parts (lowest-index tie subgradient)."""
    if contained.ndim == 1:
        return contained
    return dc.reduce_max(contained, axis=0)


def cube_convex(
    center, half_extents, delta: float = 10.0, num_planes: int = 6
) -> ConvexParams:
    """Axis-aligned box as six half-spaces; handy analytic fixture."""
    if num_planes != 6:
        raise ValueError("cube fixture uses exactly 6 planes")
    normals = np.vstack([np.eye(3), -np.eye(3)])
    half = np.asarray(half_extents, dtype=np.float64)
    offsets = -np.concatenate([half, half])
    return ConvexParams(
        normals=Tensor(normals),
        offsets=Tensor(offsets),
        blend_sharpness=Tensor([float(delta)]),
        euler=Tensor(np.zeros(3)),
        translation=Tensor(np.asarray(center, dtype=np.float64)),
        scale=Tensor(np.ones(3)),
    )
