"""Desk-scale training loop with deterministic seeding and checkpoints.

All per-step randomness (batch selection, query sampling, guide subsample)
derives from (master seed, step index), so a resumed run replays the exact
stream an uninterrupted run would have seen.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field, fields

import numpy as np

from .diffcore import Tensor
from .model import HierarchyModel, ModelConfig
from .objectives import LossWeights
from .shapes import SyntheticShape, generate_dataset, sample_queries

CHECKPOINT_MAGIC = "parttree-checkpoint"
CHECKPOINT_VERSION = 1


class NanLossError(RuntimeError):
    """Raised when training produces a non-finite loss."""


class CheckpointError(RuntimeError):
    """Raised for malformed, truncated or mismatched checkpoint files."""


@dataclass
class TrainConfig:
    max_steps: int = 2000
    batch_size: int = 4
    learning_rate: float = 1e-4
    queries_per_shape: int = 256
    points_per_shape: int = 512
    seed: int = 0
    parts_per_level: tuple[int, ...] = (2, 4, 8)
    latent_dim: int = 32
    num_planes: int = 8
    grid_resolution: int = 8
    sigma: float = 75.0
    recon_mode: str = "squared"
    lambda_contain: float = 0.01
    lambda_cvxnet: float = 0.01
    lambda_balance: float = 0.01
    tau_overlap: float = 1.05
    n_shapes: int = 100
    families: tuple[str, ...] = ("table", "dumbbell")
    data_seed: int = 1
    checkpoint_every: int = 0  # 0 = final checkpoint only

    def __post_init__(self):
        self.parts_per_level = tuple(int(v) for v in self.parts_per_level)
        self.families = tuple(self.families)
        for name in ("max_steps", "batch_size", "queries_per_shape",
                     "points_per_shape", "n_shapes"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            parts_per_level=self.parts_per_level,
            latent_dim=self.latent_dim,
            num_planes=self.num_planes,
            grid_resolution=self.grid_resolution,
            sigma=self.sigma,
            recon_mode=self.recon_mode,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            lambda_contain=self.lambda_contain,
            lambda_cvxnet=self.lambda_cvxnet,
            lambda_balance=self.lambda_balance,
            tau_overlap=self.tau_overlap,
        )


# ------------------------------------------------------------- config file
# Flat key-value text: one "key = value" per line, '#' comments. Lists are
# comma-separated. Every TrainConfig field is addressable by name.


def parse_config_text(text: str) -> TrainConfig:
    values: dict[str, object] = {}
    spec = {f.name: f for f in fields(TrainConfig)}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"config line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in spec:
            raise ValueError(f"config line {lineno}: unknown key {key!r}")
        values[key] = _parse_value(key, value)
    return TrainConfig(**values)


def _parse_value(key: str, value: str):
    if key in ("parts_per_level",):
        return tuple(int(v) for v in value.split(","))
    if key in ("families",):
        return tuple(v.strip() for v in value.split(",") if v.strip())
    if key in ("recon_mode",):
        return value
    if key in ("learning_rate", "sigma", "lambda_contain", "lambda_cvxnet",
               "lambda_balance", "tau_overlap"):
        return float(value)
    return int(value)


def load_config(path) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read())


def config_lines(cfg: TrainConfig) -> list[str]:
    lines = []
    for f in fields(TrainConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ",".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return lines


# ------------------------------------------------------------- optimizer


class Adam:
    """Adam with bias correction; state is keyed by parameter name."""

    def __init__(self, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t = 0

    def step(self, params: dict[str, Tensor], lr: float) -> None:
        self.t += 1
        for name in sorted(params):
            p = params[name]
            if p.grad is None:
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p.data)
                self.v[name] = np.zeros_like(p.data)
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1**self.t)
            v_hat = self.v[name] / (1 - self.beta2**self.t)
            p.data -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ------------------------------------------------------------- checkpoints
# Single file: plain-text manifest (name, dtype, shape, byte offset) followed
# by raw little-endian float64 blobs.


def save_checkpoint(path, model: HierarchyModel, opt: Adam, step: int, cfg: TrainConfig) -> None:
    tensors: dict[str, np.ndarray] = {n: t.data for n, t in model.params.items()}
    for n in sorted(opt.m):
        tensors[f"adam.m.{n}"] = opt.m[n]
        tensors[f"adam.v.{n}"] = opt.v[n]

    blob = io.BytesIO()
    entries = []
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f8")
        offset = blob.tell()
        blob.write(arr.tobytes())
        shape = ",".join(str(d) for d in arr.shape) or "scalar"
        entries.append(f"tensor {name} float64 {shape} {offset} {arr.nbytes}")

    with open(path, "wb") as fh:
        header = [f"{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}",
                  f"step {step}", f"adam_t {opt.t}"]
        header += [f"cfg.{line}" for line in config_lines(cfg)]
        header += entries
        header.append("end-manifest")
        fh.write(("\n".join(header) + "\n").encode("utf-8"))
        fh.write(blob.getvalue())


@dataclass
class Checkpoint:
    step: int
    adam_t: int
    cfg: TrainConfig
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    def params(self) -> dict[str, np.ndarray]:
        return {n: a for n, a in self.tensors.items() if not n.startswith("adam.")}


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        manifest_end = raw.index(b"end-manifest\n") + len(b"end-manifest\n")
    except ValueError:
        raise CheckpointError(f"{path}: missing manifest terminator") from None
    lines = raw[:manifest_end].decode("utf-8").splitlines()
    blob = raw[manifest_end:]

    head = lines[0].split()
    if head[0] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file")
    if int(head[1]) != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: format version {head[1]} != supported {CHECKPOINT_VERSION}"
        )

    step = adam_t = 0
    cfg_lines = []
    tensors: dict[str, np.ndarray] = {}
    for line in lines[1:]:
        if line == "end-manifest":
            break
        kind, _, rest = line.partition(" ")
        if kind == "step":
            step = int(rest)
        elif kind == "adam_t":
            adam_t = int(rest)
        elif kind.startswith("cfg."):
            cfg_lines.append(f"{kind[4:]} {rest}")
        elif kind == "tensor":
            name, dtype, shape_s, offset_s, nbytes_s = rest.split()
            offset, nbytes = int(offset_s), int(nbytes_s)
            if offset + nbytes > len(blob):
                raise CheckpointError(f"{path}: truncated blob for tensor {name}")
            shape = () if shape_s == "scalar" else tuple(int(d) for d in shape_s.split(","))
            arr = np.frombuffer(blob[offset : offset + nbytes], dtype="<f8").reshape(shape)
            tensors[name] = arr.copy()
        else:
            raise CheckpointError(f"{path}: unknown manifest line {line!r}")
    cfg = parse_config_text("\n".join(cfg_lines))
    return Checkpoint(step=step, adam_t=adam_t, cfg=cfg, tensors=tensors)


def restore_model(ckpt: Checkpoint) -> tuple[HierarchyModel, Adam]:
    model = HierarchyModel(ckpt.cfg.model_config(), seed=ckpt.cfg.seed)
    load_into_model(ckpt, model)
    opt = Adam()
    opt.t = ckpt.adam_t
    for name, arr in ckpt.tensors.items():
        if name.startswith("adam.m."):
            opt.m[name[len("adam.m."):]] = arr.copy()
        elif name.startswith("adam.v."):
            opt.v[name[len("adam.v."):]] = arr.copy()
    return model, opt


def load_into_model(ckpt: Checkpoint, model: HierarchyModel) -> None:
    saved = ckpt.params()
    for name, tensor in model.params.items():
        if name not in saved:
            raise CheckpointError(f"checkpoint is missing parameter {name!r}")
        if saved[name].shape != tensor.data.shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {saved[name].shape} in the checkpoint "
                f"but the model expects {tensor.data.shape}"
            )
        tensor.data = saved[name].copy()


# ------------------------------------------------------------- training


def _step_rng(seed: int, step: int, purpose: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, step, purpose]))


def _step_seed(seed: int, step: int, purpose: int, extra: int = 0) -> int:
    return int(
        np.random.SeedSequence([seed, step, purpose, extra]).generate_state(1)[0]
    )


@dataclass
class TrainResult:
    model: HierarchyModel
    optimizer: Adam
    log_lines: list[str]
    checkpoint_path: str | None


def shape_point_cloud(shape: SyntheticShape, n_points: int, master_seed: int, index: int):
    """Fixed per-shape encoder input, reproducible independent of step order."""
    rng = np.random.default_rng(np.random.SeedSequence([master_seed, 0x9011575, index]))
    pts, labels, _ = shape.sample_surface(n_points, rng)
    return pts, labels


def train(
    cfg: TrainConfig,
    shapes: list[SyntheticShape],
    out_dir=None,
    resume: Checkpoint | None = None,
    log_callback=None,
) -> TrainResult:
    """Adam training of all parameters; metric log has one line per step."""
    if not shapes:
        raise ValueError("training data must be nonempty")
    if resume is not None:
        model, opt = restore_model(resume)
        start_step = resume.step
    else:
        model = HierarchyModel(cfg.model_config(), seed=cfg.seed)
        opt = Adam()
        start_step = 0

    weights = cfg.loss_weights()
    n = len(shapes)
    clouds = [
        shape_point_cloud(s, cfg.points_per_shape, cfg.seed, i)[0]
        for i, s in enumerate(shapes)
    ]

    log_lines: list[str] = []
    ckpt_path = None
    for step in range(start_step, cfg.max_steps):
        batch_rng = _step_rng(cfg.seed, step, 1)
        batch_idx = batch_rng.choice(n, size=min(cfg.batch_size, n), replace=n < cfg.batch_size)

        total = None
        term_sums: dict[str, float] = {}
        for j, si in enumerate(batch_idx):
            shape = shapes[si]
            qb = sample_queries(
                shape, cfg.queries_per_shape, _step_seed(cfg.seed, step, 2, int(si))
            )
            fw = model.forward(clouds[si], qb.points)
            report = model.loss(fw, qb, weights, guide_seed=_step_seed(cfg.seed, step, 3, j))
            total = report.total if total is None else total + report.total
            for k, v in report.terms().items():
                term_sums[k] = term_sums.get(k, 0.0) + v

        batch_loss = total * (1.0 / len(batch_idx))
        loss_val = batch_loss.item()
        if not np.isfinite(loss_val):
            bad = [k for k, v in term_sums.items() if not np.isfinite(v)]
            first = bad[0] if bad else "total"
            raise NanLossError(
                f"non-finite loss at step {step + 1}: first bad term is {first!r}"
            )

        model.zero_grad()
        batch_loss.backward()
        opt.step(model.params, cfg.learning_rate)

        avg = {k: v / len(batch_idx) for k, v in term_sums.items()}
        line = (
            f"step={step + 1} lr={cfg.learning_rate:.6g} total={loss_val:.10g} "
            + " ".join(f"{k}={avg[k]:.10g}" for k in ("recon", "contain", "decomp", "guide", "loc", "balance"))
        )
        log_lines.append(line)
        if log_callback is not None:
            log_callback(line)

        done = step + 1
        if out_dir is not None and (
            done == cfg.max_steps
            or (cfg.checkpoint_every > 0 and done % cfg.checkpoint_every == 0)
        ):
            os.makedirs(out_dir, exist_ok=True)
            ckpt_path = os.path.join(out_dir, f"ckpt_{done:06d}.bin")
            save_checkpoint(ckpt_path, model, opt, done, cfg)

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "metrics.log"), "w", encoding="utf-8") as fh:
            fh.write("\n".join(log_lines) + "\n")

    return TrainResult(model=model, optimizer=opt, log_lines=log_lines, checkpoint_path=ckpt_path)
