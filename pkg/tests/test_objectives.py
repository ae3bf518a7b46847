import numpy as np
import pytest

from parttree import diffcore as dc
from parttree.diffcore import Tensor
from parttree.convex import ConvexParams, cube_convex
from parttree.gradcheck import check_gradients
from parttree.objectives import (
    LossWeights,
    balance_loss,
    contain_loss,
    decomp_loss,
    guide_loss,
    loc_loss,
    recon_loss,
    total_loss,
)

RNG = np.random.default_rng(2718)


# ---------------------------------------------------------------- recon


def test_recon_perfect_fit_zero():
    gt = RNG.integers(0, 2, 64).astype(float)
    loss, per_level = recon_loss(gt, [Tensor(gt.copy()), Tensor(gt.copy())])
    assert loss.item() == 0.0
    assert per_level == [0.0, 0.0]


def test_recon_zero_union_half_occupied():
    gt = np.zeros(100)
    gt[:50] = 1.0
    loss, per_level = recon_loss(gt, [Tensor(np.zeros(100))])
    assert loss.item() == pytest.approx(0.5)
    assert per_level[0] == pytest.approx(0.5)


def test_recon_monotone_toward_target():
    gt = np.ones(10)
    base = np.full(10, 0.2)
    better = base.copy()
    better[3] = 0.6
    l0, _ = recon_loss(gt, [Tensor(base)])
    l1, _ = recon_loss(gt, [Tensor(better)])
    assert l1.item() < l0.item()


def test_recon_absolute_mode():
    gt = np.array([1.0, 0.0])
    loss, _ = recon_loss(gt, [Tensor(np.array([0.25, 0.25]))], mode="absolute")
    assert loss.item() == pytest.approx(0.5)


# ---------------------------------------------------------------- contain


def test_contain_zero_child():
    loss = contain_loss([Tensor(RNG.uniform(0, 1, 30))], [Tensor(np.zeros(30))])
    assert loss.item() == 0.0


def test_contain_full_parent():
    loss = contain_loss([Tensor(np.ones(30))], [Tensor(RNG.uniform(0, 1, 30))])
    assert loss.item() == 0.0


def test_contain_half_exposed():
    parent = np.zeros(100)
    parent[:50] = 1.0
    child = np.ones(100)
    loss = contain_loss([Tensor(parent)], [Tensor(child)])
    assert loss.item() == pytest.approx(0.5)


def test_contain_zero_for_nested_cubes():
    outer = cube_convex([0, 0, 0], [0.45, 0.45, 0.45], delta=100.0)
    inner = cube_convex([0, 0, 0], [0.2, 0.2, 0.2], delta=100.0)
    from parttree.convex import raw_occupancy

    pts = RNG.uniform(-0.55, 0.55, (2000, 3))
    parent = raw_occupancy(outer, pts)
    child = raw_occupancy(inner, pts)
    loss = contain_loss([parent], [child])
    assert loss.item() < 1e-6


# ---------------------------------------------------------------- decomp


def test_decomp_disjoint_parts_zero():
    a = np.zeros(50)
    b = np.zeros(50)
    a[:20] = 0.9
    b[30:] = 0.9
    loss = decomp_loss(Tensor(np.stack([a, b])), tau=1.05)
    assert loss.item() == 0.0


def test_decomp_double_coverage_closed_form():
    a = np.ones(1)
    loss = decomp_loss(Tensor(np.stack([a, a])), tau=1.05)
    assert loss.item() == pytest.approx((2.0 - 1.05) ** 2, abs=1e-12)


def test_decomp_huge_tau_zero():
    rows = Tensor(RNG.uniform(0, 1, (4, 50)))
    assert decomp_loss(rows, tau=1e9).item() == 0.0


# ---------------------------------------------------------------- guide


def test_guide_identical_sets_zero():
    pts = RNG.uniform(-0.5, 0.5, (4, 3))
    loss = guide_loss(Tensor(pts.copy()), pts)
    assert loss.item() == 0.0


def test_guide_singletons_two_d_squared():
    d = 0.37
    center = np.array([[0.0, 0.0, 0.0]])
    interior = np.array([[d, 0.0, 0.0]])
    loss = guide_loss(Tensor(center), interior)
    assert loss.item() == pytest.approx(2 * d * d, abs=1e-12)


def test_guide_symmetric_under_swap():
    a = RNG.uniform(-0.5, 0.5, (5, 3))
    b = RNG.uniform(-0.5, 0.5, (7, 3))
    ab = guide_loss(Tensor(a), b).item()
    ba = guide_loss(Tensor(b), a).item()
    assert ab == pytest.approx(ba, abs=1e-12)


def test_guide_empty_interior_returns_none():
    assert guide_loss(Tensor(RNG.uniform(0, 1, (3, 3))), np.zeros((0, 3))) is None


# ---------------------------------------------------------------- loc


def make_convex_with_offsets(offsets):
    h = len(offsets)
    normals = np.tile([1.0, 0.0, 0.0], (h, 1))
    return ConvexParams(
        normals=Tensor(normals),
        offsets=Tensor(np.asarray(offsets, dtype=float)),
        blend_sharpness=Tensor([1.0]),
        euler=Tensor(np.zeros(3)),
        translation=Tensor(np.zeros(3)),
        scale=Tensor(np.ones(3)),
    )


def test_loc_zero_offsets():
    assert loc_loss([make_convex_with_offsets(np.zeros(8))]).item() == 0.0


def test_loc_single_nonzero_offset():
    offsets = np.zeros(32)
    offsets[5] = 0.3
    loss = loc_loss([make_convex_with_offsets(offsets)])
    assert loss.item() == pytest.approx(0.09 / 32, abs=1e-12)


def test_loc_quadratic_homogeneity():
    offsets = RNG.uniform(-0.5, 0.5, 8)
    l1 = loc_loss([make_convex_with_offsets(offsets)]).item()
    l2 = loc_loss([make_convex_with_offsets(2 * offsets)]).item()
    assert l2 == pytest.approx(4 * l1, rel=1e-12)


# ---------------------------------------------------------------- balance


def test_balance_uniform_attention_zero():
    att = Tensor(np.full((6, 3), 1.0 / 3.0))
    assert balance_loss([att]).item() == pytest.approx(0.0, abs=1e-24)


def test_balance_concentrated_closed_form():
    att = np.zeros((4, 2))
    att[:, 0] = 1.0
    assert balance_loss([Tensor(att)]).item() == pytest.approx(8.0, abs=1e-12)


def test_balance_parent_permutation_invariant():
    att = RNG.dirichlet(np.ones(5), size=9)
    base = balance_loss([Tensor(att)]).item()
    perm = att[:, np.random.default_rng(0).permutation(5)]
    assert balance_loss([Tensor(perm)]).item() == pytest.approx(base, rel=1e-12)


# ---------------------------------------------------------------- total


def test_total_weighted_sum_check():
    rng = np.random.default_rng(5)
    gt = rng.integers(0, 2, 32).astype(float)
    unions = [Tensor(rng.uniform(0, 1, 32)) for _ in range(2)]
    recon, per_level = recon_loss(gt, unions)
    contain = contain_loss([Tensor(rng.uniform(0, 1, 32))], [Tensor(rng.uniform(0, 1, 32))])
    decomp = decomp_loss(Tensor(rng.uniform(0.4, 1.0, (3, 32))), tau=1.05)
    guide = guide_loss(Tensor(rng.uniform(-0.5, 0.5, (3, 3))), rng.uniform(-0.5, 0.5, (9, 3)))
    loc = loc_loss([make_convex_with_offsets(rng.uniform(-0.3, 0.3, 6))])
    balance = balance_loss([Tensor(rng.dirichlet(np.ones(3), size=5))])
    w = LossWeights(0.01, 0.01, 0.01, 1.05)
    report = total_loss(recon, per_level, contain, decomp, guide, loc, balance, w)

    recomputed = (
        report.recon
        + 0.01 * report.contain
        + 0.01 * (report.decomp + report.guide + report.loc)
        + 0.01 * report.balance
    )
    assert abs(report.total.item() - recomputed) < 1e-9
    assert not report.warnings


def test_total_all_zero():
    z = Tensor(0.0)
    report = total_loss(z, [0.0], z, z, z, z, z, LossWeights())
    assert report.total.item() == 0.0


def test_total_records_guide_skip_warning():
    z = Tensor(0.0)
    report = total_loss(z, [0.0], z, z, None, z, z, LossWeights())
    assert report.guide == 0.0
    assert any("guide" in w for w in report.warnings)


def test_all_terms_nonnegative_on_random_inputs():
    rng = np.random.default_rng(12)
    for _ in range(10):
        gt = rng.integers(0, 2, 16).astype(float)
        unions = [Tensor(rng.uniform(0, 1, 16))]
        recon, _ = recon_loss(gt, unions)
        assert recon.item() >= 0
        assert contain_loss(
            [Tensor(rng.uniform(0, 1, 16))], [Tensor(rng.uniform(0, 1, 16))]
        ).item() >= 0
        assert decomp_loss(Tensor(rng.uniform(0, 1, (3, 16))), 1.05).item() >= 0
        assert guide_loss(
            Tensor(rng.uniform(-1, 1, (2, 3))), rng.uniform(-1, 1, (4, 3))
        ).item() >= 0
        assert balance_loss([Tensor(rng.dirichlet(np.ones(4), size=6))]).item() >= 0


def test_recon_permutation_of_parts_invariant():
    from parttree.convex import level_union

    rows = RNG.uniform(0, 1, (4, 25))
    gt = RNG.integers(0, 2, 25).astype(float)
    u1 = level_union(Tensor(rows))
    u2 = level_union(Tensor(rows[np.random.default_rng(1).permutation(4)]))
    l1, _ = recon_loss(gt, [u1])
    l2, _ = recon_loss(gt, [u2])
    assert l1.item() == pytest.approx(l2.item(), abs=1e-15)


# ---------------------------------------------------------------- gradients


def test_loss_gradients_match_fd_tiny_model():
    rng = np.random.default_rng(33)
    q = 32
    gt = rng.integers(0, 2, q).astype(float)
    interior = rng.uniform(-0.4, 0.4, (6, 3))

    unions_a = rng.uniform(0.1, 0.9, q)
    unions_b = rng.uniform(0.1, 0.9, q)
    parent = rng.uniform(0.1, 0.9, q)
    child = rng.uniform(0.1, 0.9, q)
    contained_rows = rng.uniform(0.3, 0.9, (3, q))
    centers = rng.uniform(-0.5, 0.5, (3, 3))
    offsets = rng.uniform(-0.4, 0.4, 6)
    logits = rng.normal(0, 1, (3, 2))

    arrays = [unions_a, unions_b, parent, child, contained_rows, centers, offsets, logits]

    def build(ts):
        recon, per = recon_loss(gt, [ts[0], ts[1]])
        contain = contain_loss([ts[2]], [ts[3]])
        decomp = decomp_loss(ts[4], tau=1.05)
        guide = guide_loss(ts[5], interior)
        loc = dc.reduce_mean(dc.square(ts[6]))
        balance = balance_loss([dc.softmax_rows(ts[7])])
        w = LossWeights(0.01, 0.01, 0.01)
        return (
            recon
            + w.lambda_contain * contain
            + w.lambda_cvxnet * (decomp + guide + loc)
            + w.lambda_balance * balance
        )

    assert check_gradients(build, arrays) < 1e-4
