"""Training objectives: per-level reconstruction, containment penalty,
convex regularizers (decomposition, two-sided Chamfer guidance, locality)
and the tree-balance loss, combined into a weighted total."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .convex import ConvexParams


@dataclass(frozen=True)
class LossWeights:
    lambda_contain: float = 0.01
    lambda_cvxnet: float = 0.01
    lambda_balance: float = 0.01
    tau_overlap: float = 1.05

    def __post_init__(self):
        if min(self.lambda_contain, self.lambda_cvxnet, self.lambda_balance) < 0:
            raise ValueError("loss weights must be nonnegative")


@dataclass
class LossReport:
    """Scalar tape total plus plain-float term breakdown for logging."""

    total: Tensor
    recon: float
    contain: float
    decomp: float
    guide: float
    loc: float
    balance: float
    recon_per_level: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    def terms(self) -> dict[str, float]:
        return {
            "recon": self.recon,
            "contain": self.contain,
            "decomp": self.decomp,
            "guide": self.guide,
            "loc": self.loc,
            "balance": self.balance,
        }


def recon_loss(
    gt_occupancy: np.ndarray, level_unions: list[Tensor], mode: str = "squared"
) -> tuple[Tensor, list[float]]:
    """Sum over levels of the mean per-query reconstruction error.

    ``mode`` selects squared (default) or absolute error; the printed form
    of the per-level objective carries no norm, so this stays configurable.
    """
    gt = Tensor(np.asarray(gt_occupancy, dtype=np.float64))
    total = None
    per_level = []
    for union in level_unions:
        diff = gt - union
        if mode == "squared":
            term = dc.reduce_mean(dc.square(diff))
        elif mode == "absolute":
            term = dc.reduce_mean(dc.relu(diff) + dc.relu(-diff))
        else:
            raise ValueError(f"unknown recon mode {mode!r}")
        per_level.append(term.item())
        total = term if total is None else total + term
    if total is None:
        raise ValueError("recon_loss needs at least one level union")
    return total, per_level


def contain_loss(
    parent_contained_per_child: list[Tensor], child_raw_per_child: list[Tensor]
) -> Tensor:
    """Sum over children of mean_x (1 - parent(x)) * child_raw(x)."""
    if len(parent_contained_per_child) != len(child_raw_per_child):
        raise ValueError("parent/child lists must be parallel")
    total = None
    for parent, child in zip(parent_contained_per_child, child_raw_per_child):
        term = dc.reduce_mean((1.0 - parent) * child)
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def decomp_loss(contained: Tensor, tau: float) -> Tensor:
    """Penalize double coverage: mean_x relu(sum_p occ_p(x) - tau)^2."""
    if tau < 1.0:
        raise ValueError("overlap threshold tau must be >= 1")
    total_occ = dc.reduce_sum(contained, axis=0)
    return dc.reduce_mean(dc.square(dc.relu(total_occ - tau)))


def guide_loss(centers: Tensor, interior_points: np.ndarray) -> Tensor | None:
    """Two-sided Chamfer between convex centers and interior samples.

    Returns None when there are no interior samples; the caller records a
    warning flag instead of a term.
    """
    pts = np.asarray(interior_points, dtype=np.float64)
    if pts.size == 0:
        return None
    n = centers.shape[0]
    s = pts.shape[0]
    diff = centers.reshape(n, 1, 3) - Tensor(pts.reshape(1, s, 3))
    d2 = dc.reduce_sum(dc.square(diff), axis=2)  # (n, s)
    min_over_pts = -dc.reduce_max(-d2, axis=1)
    min_over_centers = -dc.reduce_max(-d2, axis=0)
    return dc.reduce_mean(min_over_pts) + dc.reduce_mean(min_over_centers)


def loc_loss(params: list[ConvexParams]) -> Tensor:
    """Sum over convexes of the mean squared half-space offset.

    Keeps each convex's surface near its own frame origin so position is
    carried by the translation vector."""
    total = None
    for p in params:
        term = dc.reduce_mean(dc.square(p.offsets))
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def balance_loss(attentions: list[Tensor]) -> Tensor:
    """Variance of attention column sums, summed over level boundaries."""
    total = None
    for att in attentions:
        col_sums = dc.reduce_sum(att, axis=0)
        mean = dc.reduce_mean(col_sums)
        term = dc.reduce_sum(dc.square(col_sums - mean))
        total = term if total is None else total + term
    return total if total is not None else Tensor(0.0)


def total_loss(
    recon: Tensor,
    recon_per_level: list[float],
    contain: Tensor,
    decomp: Tensor,
    guide: Tensor | None,
    loc: Tensor,
    balance: Tensor,
    weights: LossWeights,
) -> LossReport:
    """total = recon + l1*contain + l2*(decomp + guide + loc) + l3*balance."""
    warnings = []
    if guide is None:
        guide = Tensor(0.0)
        warnings.append("guide skipped: no interior samples")
    cvxnet = decomp + guide + loc
    total = (
        recon
        + weights.lambda_contain * contain
        + weights.lambda_cvxnet * cvxnet
        + weights.lambda_balance * balance
    )
    return LossReport(
        total=total,
        recon=recon.item(),
        contain=contain.item(),
        decomp=decomp.item(),
        guide=guide.item(),
        loc=loc.item(),
        balance=balance.item(),
        recon_per_level=list(recon_per_level),
        warnings=warnings,
    )
