"""End-to-end model: parameters, per-shape forward pass and loss assembly.

The forward pass encodes a point cloud into the level-zero grid, decodes the
part hierarchy, grounds every part as a convex occupancy field and composes
containment down the tree.  Level 1 parts are children of a virtual root
whose occupancy is one everywhere.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .diffcore import Tensor
from .convex import (
    ConvexParams,
    features_to_convex,
    init_gphi_params,
    level_union,
    raw_occupancy,
)
from .decoder import DecoderConfig, LevelState, decode_hierarchy, init_decoder_params
from .encoder import EncoderConfig, PointCloud, encode, init_encoder_params
from .objectives import (
    LossReport,
    LossWeights,
    balance_loss,
    contain_loss,
    decomp_loss,
    guide_loss,
    loc_loss,
    recon_loss,
    total_loss,
)
from .shapes import QueryBatch

GUIDE_CAP = 512


@dataclass(frozen=True)
class ModelConfig:
    parts_per_level: tuple[int, ...] = (4, 8, 16, 32)
    latent_dim: int = 64
    num_planes: int = 32
    grid_resolution: int = 32
    sigma: float = 75.0
    recon_mode: str = "squared"

    def __post_init__(self):
        object.__setattr__(self, "parts_per_level", tuple(self.parts_per_level))

    @property
    def levels(self) -> int:
        return len(self.parts_per_level)

    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.grid_resolution, self.latent_dim)

    def decoder_config(self) -> DecoderConfig:
        return DecoderConfig(self.parts_per_level, self.latent_dim)


@dataclass
class ShapeForward:
    """Everything one shape's forward pass produced, still on the tape."""

    states: list[LevelState]
    convexes: list[list[ConvexParams]]  # per level, per part
    raw: list[Tensor]  # per level, (N_l, Q) raw occupancies
    parent_of_child: list[Tensor]  # per level, (N_l, Q) selected-parent occupancy
    contained: list[Tensor]  # per level, (N_l, Q) contained occupancies
    unions: list[Tensor]  # per level, (Q,)
    centers: list[Tensor]  # per level, (N_l, 3) translations


class HierarchyModel:
    """Owns all learnable parameters and runs per-shape forwards."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        self.cfg = cfg
        rng = np.random.default_rng(np.random.SeedSequence([seed, 0xA11CE]))
        self.params: dict[str, Tensor] = {}
        self.params.update(init_encoder_params(cfg.encoder_config(), rng))
        self.params.update(init_decoder_params(cfg.decoder_config(), rng))
        for lvl in range(1, cfg.levels + 1):
            # coarse levels start slightly larger than deep ones so the
            # containment chain is alive from the first step
            frac = 0.0 if cfg.levels == 1 else (lvl - 1) / (cfg.levels - 1)
            gphi = init_gphi_params(
                cfg.latent_dim,
                cfg.num_planes,
                rng,
                offset_bias=-0.55 + 0.10 * frac,
            )
            for k, v in gphi.items():
                self.params[f"lvl{lvl}.gphi.{k}"] = v

    def parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def _gphi_view(self, lvl: int) -> dict[str, Tensor]:
        return {k: self.params[f"lvl{lvl}.gphi.{k}"] for k in ("w1", "b1", "w2", "b2")}

    def decode_parts(
        self, points: np.ndarray
    ) -> tuple[list[LevelState], list[list[ConvexParams]]]:
        """Encode points and map every level's features to convex parameters."""
        grid = encode(PointCloud(points), self.cfg.encoder_config(), self.params)
        states = decode_hierarchy(grid, self.cfg.decoder_config(), self.params)
        convexes = [
            [
                features_to_convex(state.features[s], self._gphi_view(lvl), self.cfg.num_planes)
                for s in range(state.num_parts)
            ]
            for lvl, state in enumerate(states, start=1)
        ]
        return states, convexes

    def snapshot(self, points: np.ndarray) -> "HierarchySnapshot":
        """Freeze the decoded hierarchy for extraction and evaluation."""
        from .geometry import HierarchySnapshot

        states, convexes = self.decode_parts(points)
        frozen = [
            [
                ConvexParams(
                    normals=p.normals.detach(),
                    offsets=p.offsets.detach(),
                    blend_sharpness=p.blend_sharpness.detach(),
                    euler=p.euler.detach(),
                    translation=p.translation.detach(),
                    scale=p.scale.detach(),
                )
                for p in parts
            ]
            for parts in convexes
        ]
        parents = [[0] * states[0].num_parts]
        for state in states[1:]:
            parents.append([int(p) for p in state.parent_index])
        return HierarchySnapshot(
            levels=frozen,
            parents=parents,
            sigma=self.cfg.sigma,
            config={"parts_per_level": list(self.cfg.parts_per_level)},
        )

    def forward(self, points: np.ndarray, queries: np.ndarray) -> ShapeForward:
        q = np.asarray(queries, dtype=np.float64)
        num_q = q.shape[0]
        states, convexes = self.decode_parts(points)

        raw_levels: list[Tensor] = []
        parent_levels: list[Tensor] = []
        contained_levels: list[Tensor] = []
        unions: list[Tensor] = []
        centers: list[Tensor] = []

        prev_contained: Tensor | None = None
        for lvl, state in enumerate(states, start=1):
            parts = convexes[lvl - 1]
            rows = [
                raw_occupancy(p, q, sigma=self.cfg.sigma).reshape(1, num_q) for p in parts
            ]
            raw = dc.concat(rows, axis=0)
            raw_levels.append(raw)
            centers.append(dc.concat([p.translation.reshape(1, 3) for p in parts], axis=0))

            if lvl == 1:
                # virtual root: occupancy one everywhere
                parent_sel = Tensor(np.ones((state.num_parts, num_q)))
            else:
                parent_sel = dc.matmul(state.parent_onehot_st, prev_contained)
            parent_levels.append(parent_sel)
            contained = parent_sel * raw
            contained_levels.append(contained)
            unions.append(level_union(contained))
            prev_contained = contained

        return ShapeForward(
            states=states,
            convexes=convexes,
            raw=raw_levels,
            parent_of_child=parent_levels,
            contained=contained_levels,
            unions=unions,
            centers=centers,
        )

    def loss(
        self,
        fw: ShapeForward,
        batch: QueryBatch,
        weights: LossWeights,
        guide_seed: int = 0,
    ) -> LossReport:
        recon, per_level = recon_loss(batch.gt_occupancy, fw.unions, self.cfg.recon_mode)

        parent_list = [fw.parent_of_child[i][s] for i in range(len(fw.raw))
                       for s in range(fw.raw[i].shape[0])]
        child_list = [fw.raw[i][s] for i in range(len(fw.raw))
                      for s in range(fw.raw[i].shape[0])]
        contain = contain_loss(parent_list, child_list)

        decomp = None
        for contained in fw.contained:
            term = decomp_loss(contained, weights.tau_overlap)
            decomp = term if decomp is None else decomp + term

        interior = batch.interior_points()
        if len(interior) > GUIDE_CAP:
            rng = np.random.default_rng(guide_seed)
            interior = interior[rng.choice(len(interior), GUIDE_CAP, replace=False)]
        guide = None
        for cts in fw.centers:
            term = guide_loss(cts, interior)
            if term is not None:
                guide = term if guide is None else guide + term

        loc = None
        for parts in fw.convexes:
            term = loc_loss(parts)
            loc = term if loc is None else loc + term

        # balance applies where parents are codebook parts (level >= 2)
        balance = balance_loss([s.attention for s in fw.states[1:]])

        return total_loss(recon, per_level, contain, decomp, guide, loc, balance, weights)
