import numpy as np
import pytest

from parttree import diffcore as dc
from parttree.diffcore import Tensor
from parttree.decoder import (
    Codebook,
    DecoderConfig,
    attend_level,
    decode_hierarchy,
    extract_tree,
    init_decoder_params,
    straight_through_parent,
    straight_through_rows,
)
from parttree.encoder import FeatureGrid
from parttree.gradcheck import check_gradients

RNG = np.random.default_rng(99)
D = 16


def make_level_inputs(n_codes, n_prev, rng=None):
    rng = rng or RNG
    cb = Codebook(Tensor(rng.normal(0, 1, (n_codes, D)), requires_grad=True), level=1)
    prev = Tensor(rng.normal(0, 1, (n_prev, D)))
    ws = [Tensor(rng.normal(0, 1 / np.sqrt(D), (D, D)), requires_grad=True) for _ in range(3)]
    return prev, cb, ws


def grid_of(n_tokens, d=D, resolution=None):
    if resolution is None:
        resolution = round(n_tokens ** (1 / 3))
    feats = Tensor(RNG.normal(0, 1, (resolution**3, d)))
    return FeatureGrid(feats, resolution, d)


# ------------------------------------------------------------- attend_level


def test_output_token_count_matches_codebook():
    for n_codes, n_prev in [(4, 512), (8, 4), (16, 8), (32, 16)]:
        prev, cb, ws = make_level_inputs(n_codes, n_prev)
        state = attend_level(prev, cb, *ws)
        assert state.features.shape == (n_codes, D)
        assert state.attention.shape == (n_codes, n_prev)


def test_single_parent_forcing():
    prev, cb, ws = make_level_inputs(5, 1)
    state = attend_level(prev, cb, *ws)
    np.testing.assert_array_equal(state.attention.data, np.ones((5, 1)))
    assert (state.parent_index == 0).all()


def test_identical_prev_rows_give_uniform_attention():
    rng = np.random.default_rng(1)
    row = rng.normal(0, 1, (1, D))
    prev = Tensor(np.repeat(row, 6, axis=0))
    cb = Codebook(Tensor(rng.normal(0, 1, (3, D))), level=1)
    ws = [Tensor(rng.normal(0, 1, (D, D))) for _ in range(3)]
    state = attend_level(prev, cb, *ws)
    np.testing.assert_allclose(state.attention.data, 1.0 / 6.0, atol=1e-12)


def test_attention_rows_stochastic():
    prev, cb, ws = make_level_inputs(7, 13)
    state = attend_level(prev, cb, *ws)
    np.testing.assert_allclose(state.attention.data.sum(axis=1), 1.0, atol=1e-9)


# ------------------------------------------------------- straight-through


def test_straight_through_basic():
    out = straight_through_parent(Tensor([0.2, 0.5, 0.3]))
    np.testing.assert_array_equal(out.data, [0.0, 1.0, 0.0])


def test_straight_through_tie_breaks_low():
    out = straight_through_parent(Tensor([0.5, 0.5]))
    np.testing.assert_array_equal(out.data, [1.0, 0.0])


def test_straight_through_exactly_onehot():
    rows = dc.softmax_rows(Tensor(RNG.normal(0, 1, (10, 6))))
    hard = straight_through_rows(rows)
    assert set(np.unique(hard.data)) <= {0.0, 1.0}
    np.testing.assert_array_equal(hard.data.sum(axis=1), 1.0)
    np.testing.assert_array_equal(
        np.argmax(hard.data, axis=1), np.argmax(rows.data, axis=1)
    )


def test_straight_through_gradient_is_soft_gradient():
    # analytic grad through the hard path == finite differences of the SOFT path
    logits_val = RNG.normal(0, 1, (4,))
    c = RNG.normal(0, 1, (4,))

    logits = Tensor(logits_val, requires_grad=True)
    soft = dc.softmax_rows(logits.reshape(1, -1)).reshape(-1)
    hard = straight_through_parent(soft)
    dc.reduce_sum(hard * Tensor(c)).backward()
    analytic = logits.grad.copy()

    def soft_path(ts):
        s = dc.softmax_rows(ts[0].reshape(1, -1)).reshape(-1)
        return dc.reduce_sum(s * Tensor(c))

    assert check_gradients(lambda ts: soft_path(ts), [logits_val]) < 1e-6
    from parttree.gradcheck import numeric_gradients

    numeric = numeric_gradients(
        lambda arrs: float(
            (np.exp(arrs[0] - arrs[0].max()) / np.exp(arrs[0] - arrs[0].max()).sum() * c).sum()
        ),
        [logits_val],
    )[0]
    np.testing.assert_allclose(analytic, numeric, atol=1e-6)


# --------------------------------------------------------- decode_hierarchy


def test_decode_paper_config_row_counts():
    cfg = DecoderConfig((4, 8, 16, 32), D)
    params = init_decoder_params(cfg, np.random.default_rng(0))
    states = decode_hierarchy(grid_of(512, resolution=8), cfg, params)
    assert [s.num_parts for s in states] == [4, 8, 16, 32]
    # level 2 consumed level 1's 4 parts
    assert states[1].attention.shape == (8, 4)


def test_decode_single_level_degenerates_flat():
    cfg = DecoderConfig((6,), D)
    params = init_decoder_params(cfg, np.random.default_rng(0))
    states = decode_hierarchy(grid_of(8, resolution=2), cfg, params)
    assert len(states) == 1
    assert states[0].features.shape == (6, D)


def test_parameters_shared_across_shapes():
    cfg = DecoderConfig((3, 5), D)
    params = init_decoder_params(cfg, np.random.default_rng(0))
    g1, g2 = grid_of(8, resolution=2), grid_of(8, resolution=2)
    s1 = decode_hierarchy(g1, cfg, params)
    s2 = decode_hierarchy(g2, cfg, params)
    assert not np.array_equal(s1[0].attention.data, s2[0].attention.data)
    # same parameter objects served both shapes
    assert params["lvl1.codebook"].data is params["lvl1.codebook"].data


def test_batch_gradient_accumulates_into_shared_codebook():
    cfg = DecoderConfig((3,), D)

    def run(params, grids):
        total = None
        for g in grids:
            states = decode_hierarchy(g, cfg, params)
            term = dc.reduce_sum(dc.square(states[0].features))
            total = term if total is None else total + term
        total.backward()
        return {k: v.grad.copy() for k, v in params.items()}

    g1, g2 = grid_of(8, resolution=2), grid_of(8, resolution=2)

    params = init_decoder_params(cfg, np.random.default_rng(5))
    batch_grads = run(params, [g1, g2])

    pa = init_decoder_params(cfg, np.random.default_rng(5))
    ga = run(pa, [g1])
    pb = init_decoder_params(cfg, np.random.default_rng(5))
    gb = run(pb, [g2])

    for name in batch_grads:
        np.testing.assert_allclose(batch_grads[name], ga[name] + gb[name], atol=1e-10)


def test_straight_through_consistency_over_random_forwards():
    cfg = DecoderConfig((2, 4, 8), D)
    params = init_decoder_params(cfg, np.random.default_rng(0))
    for trial in range(20):
        states = decode_hierarchy(grid_of(8, resolution=2), cfg, params)
        for s in states:
            np.testing.assert_allclose(s.attention.data.sum(axis=1), 1.0, atol=1e-9)
            hard = s.parent_onehot_st.data
            assert set(np.unique(hard)) <= {0.0, 1.0}
            np.testing.assert_array_equal(
                np.argmax(hard, axis=1), np.argmax(s.attention.data, axis=1)
            )
            np.testing.assert_array_equal(s.parent_index, np.argmax(s.attention.data, axis=1))


# ---------------------------------------------------------------- tree


def test_extract_tree_counts():
    cfg = DecoderConfig((4, 8), D)
    params = init_decoder_params(cfg, np.random.default_rng(0))
    states = decode_hierarchy(grid_of(8, resolution=2), cfg, params)
    edges = extract_tree(states)
    assert len(edges) == 12
    lvl1 = [e for e in edges if e[0] == 1]
    lvl2 = [e for e in edges if e[0] == 2]
    assert len(lvl1) == 4 and all(e[2] == 0 for e in lvl1)
    assert len(lvl2) == 8 and all(0 <= e[2] < 4 for e in lvl2)


def test_uniform_attention_ties_to_parent_zero():
    state_child = type("S", (), {})()
    uniform = Tensor(np.full((4, 2), 0.5))
    from parttree.decoder import LevelState

    lvl1 = LevelState(
        features=Tensor(np.zeros((2, D))),
        attention=Tensor(np.ones((2, 1))),
        parent_index=np.zeros(2, dtype=int),
        parent_onehot_st=Tensor(np.ones((2, 1))),
    )
    lvl2 = LevelState(
        features=Tensor(np.zeros((4, D))),
        attention=uniform,
        parent_index=np.argmax(uniform.data, axis=1),
        parent_onehot_st=straight_through_rows(uniform),
    )
    edges = extract_tree([lvl1, lvl2])
    assert all(parent == 0 for lvl, child, parent in edges if lvl == 2)


def test_childless_parent_is_representable():
    from parttree.decoder import LevelState

    att = Tensor(np.array([[0.9, 0.1], [0.8, 0.2], [0.7, 0.3]]))
    lvl1 = LevelState(Tensor(np.zeros((2, D))), Tensor(np.ones((2, 1))),
                      np.zeros(2, dtype=int), Tensor(np.ones((2, 1))))
    lvl2 = LevelState(Tensor(np.zeros((3, D))), att,
                      np.argmax(att.data, axis=1), straight_through_rows(att))
    edges = extract_tree([lvl1, lvl2])
    parents_used = {p for lvl, c, p in edges if lvl == 2}
    assert parents_used == {0}  # parent 1 has zero children; edges simply omit it


def test_no_cycles_edges_point_down_levels():
    cfg = DecoderConfig((2, 3, 4), D)
    params = init_decoder_params(cfg, np.random.default_rng(0))
    states = decode_hierarchy(grid_of(8, resolution=2), cfg, params)
    for lvl, child, parent in extract_tree(states):
        assert lvl >= 1
        if lvl > 1:
            assert 0 <= parent < states[lvl - 2].num_parts
