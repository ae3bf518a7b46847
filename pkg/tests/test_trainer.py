import numpy as np
import pytest

from parttree.diffcore import Tensor
from parttree.model import HierarchyModel, ModelConfig
from parttree.shapes import generate_dataset, make_shape
from parttree.trainer import (
    Adam,
    CheckpointError,
    TrainConfig,
    load_checkpoint,
    load_into_model,
    parse_config_text,
    restore_model,
    save_checkpoint,
    train,
)

TINY = dict(
    max_steps=6,
    batch_size=2,
    learning_rate=1e-3,
    queries_per_shape=32,
    points_per_shape=64,
    seed=3,
    parts_per_level=(2, 3),
    latent_dim=8,
    num_planes=4,
    grid_resolution=4,
    n_shapes=3,
    families=("dumbbell",),
    data_seed=5,
)


def tiny_cfg(**overrides):
    kw = dict(TINY)
    kw.update(overrides)
    return TrainConfig(**kw)


def tiny_shapes(cfg):
    return generate_dataset(cfg.n_shapes, list(cfg.families), cfg.data_seed)


# ------------------------------------------------------------- config file


def test_parse_config_round_trip():
    text = """
    # desk config
    max_steps = 50
    learning_rate = 0.003
    parts_per_level = 2,4,8
    families = table, dumbbell
    seed = 9
    recon_mode = squared
    """
    cfg = parse_config_text(text)
    assert cfg.max_steps == 50
    assert cfg.learning_rate == pytest.approx(0.003)
    assert cfg.parts_per_level == (2, 4, 8)
    assert cfg.families == ("table", "dumbbell")
    assert cfg.seed == 9


def test_parse_config_unknown_key():
    with pytest.raises(ValueError) as err:
        parse_config_text("momentum = 0.9")
    assert "momentum" in str(err.value)


def test_config_validates_positive():
    with pytest.raises(ValueError):
        tiny_cfg(max_steps=0)
    with pytest.raises(ValueError):
        tiny_cfg(learning_rate=-1.0)


# ------------------------------------------------------------- adam


def test_adam_converges_on_quadratic():
    target = np.array([1.0, -2.0, 3.0])
    p = Tensor(np.zeros(3), requires_grad=True)
    opt = Adam()
    for _ in range(2000):
        p.zero_grad()
        from parttree import diffcore as dc

        loss = dc.reduce_sum(dc.square(p - Tensor(target)))
        loss.backward()
        opt.step({"p": p}, lr=0.01)
    np.testing.assert_allclose(p.data, target, atol=1e-3)


def test_single_step_updates_all_live_parameters():
    cfg = tiny_cfg(max_steps=1, n_shapes=1, batch_size=1)
    shapes = tiny_shapes(cfg)
    model = HierarchyModel(cfg.model_config(), seed=cfg.seed)
    before = {k: v.data.copy() for k, v in model.params.items()}
    result = train(cfg, shapes)
    changed = [
        k for k, v in result.model.params.items() if not np.array_equal(before[k], v.data)
    ]
    # every parameter with a nonzero gradient moved
    assert len(changed) == len(before)


# ------------------------------------------------------------- determinism


def test_identical_seeds_identical_logs():
    cfg = tiny_cfg()
    a = train(cfg, tiny_shapes(cfg))
    b = train(cfg, tiny_shapes(cfg))
    assert a.log_lines == b.log_lines
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k].data, b.model.params[k].data)


def test_different_seeds_differ():
    cfg_a = tiny_cfg(seed=1)
    cfg_b = tiny_cfg(seed=2)
    a = train(cfg_a, tiny_shapes(cfg_a))
    b = train(cfg_b, tiny_shapes(cfg_b))
    assert a.log_lines != b.log_lines


# ------------------------------------------------------------- checkpoints


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg = tiny_cfg()
    result = train(cfg, tiny_shapes(cfg))
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, result.model, result.optimizer, step=6, cfg=cfg)
    ckpt = load_checkpoint(path)
    assert ckpt.step == 6
    model, opt = restore_model(ckpt)
    for k in result.model.params:
        np.testing.assert_array_equal(model.params[k].data, result.model.params[k].data)
    for k in result.optimizer.m:
        np.testing.assert_array_equal(opt.m[k], result.optimizer.m[k])
        np.testing.assert_array_equal(opt.v[k], result.optimizer.v[k])
    assert opt.t == result.optimizer.t


def test_checkpoint_shape_mismatch_names_tensor(tmp_path):
    cfg = tiny_cfg()
    result = train(cfg, tiny_shapes(cfg))
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, result.model, result.optimizer, step=6, cfg=cfg)
    ckpt = load_checkpoint(path)
    other = HierarchyModel(ModelConfig((2, 5), latent_dim=8, num_planes=4, grid_resolution=4))
    with pytest.raises(CheckpointError) as err:
        load_into_model(ckpt, other)
    assert "lvl" in str(err.value)


def test_checkpoint_truncation_detected(tmp_path):
    cfg = tiny_cfg()
    result = train(cfg, tiny_shapes(cfg))
    path = tmp_path / "ckpt.bin"
    save_checkpoint(path, result.model, result.optimizer, step=6, cfg=cfg)
    data = path.read_bytes()
    (tmp_path / "cut.bin").write_bytes(data[: len(data) - 64])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "cut.bin")


def test_checkpoint_version_guard(tmp_path):
    path = tmp_path / "bad.bin"
    path.write_bytes(b"parttree-checkpoint 99\nend-manifest\n")
    with pytest.raises(CheckpointError) as err:
        load_checkpoint(path)
    assert "99" in str(err.value)


def test_resume_matches_uninterrupted(tmp_path):
    cfg = tiny_cfg(max_steps=8)
    full = train(cfg, tiny_shapes(cfg))

    half_cfg = tiny_cfg(max_steps=4)
    half = train(half_cfg, tiny_shapes(half_cfg), out_dir=tmp_path)
    ckpt = load_checkpoint(half.checkpoint_path)
    resumed = train(cfg, tiny_shapes(cfg), resume=ckpt)

    for k in full.model.params:
        np.testing.assert_array_equal(full.model.params[k].data, resumed.model.params[k].data)
    assert full.log_lines[4:] == resumed.log_lines


def test_metrics_log_written(tmp_path):
    cfg = tiny_cfg(max_steps=3)
    train(cfg, tiny_shapes(cfg), out_dir=tmp_path)
    log = (tmp_path / "metrics.log").read_text().strip().splitlines()
    assert len(log) == 3
    assert log[0].startswith("step=1 ")
    for key in ("total=", "recon=", "contain=", "decomp=", "guide=", "loc=", "balance="):
        assert key in log[0]


def test_empty_dataset_rejected():
    with pytest.raises(ValueError):
        train(tiny_cfg(), [])


def test_no_nan_during_short_run():
    cfg = tiny_cfg(max_steps=10)
    result = train(cfg, tiny_shapes(cfg))
    for k, v in result.model.params.items():
        assert np.isfinite(v.data).all(), f"parameter {k} went non-finite"
