"""Procedural multi-part shapes with exact analytic occupancy and labels.

Shapes are unions of axis-aligned boxes, spheres and cylinders inside
[-0.5, 0.5]^3.  Families randomize part counts (tables get 3-6 legs) so a
learned hierarchy has to adapt its branching per instance.  Occupancy and
per-point part labels come straight from the primitives, so training and
evaluation never touch a mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

FAMILIES = ("table", "dumbbell", "lamp")


class ConfigError(ValueError):
    """Raised for unknown family names or invalid generation settings."""


# --------------------------------------------------------------- primitives


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half: np.ndarray

    def contains(self, pts: np.ndarray, strict: bool = False) -> np.ndarray:
        d = np.abs(pts - self.center) - self.half
        return (d < 0).all(axis=1) if strict else (d <= 0).all(axis=1)

    def sample_surface(self, n: int, rng: np.random.Generator):
        hx, hy, hz = self.half
        areas = np.array([hy * hz, hy * hz, hx * hz, hx * hz, hx * hy, hx * hy])
        face = rng.choice(6, size=n, p=areas / areas.sum())
        u = rng.uniform(-1, 1, (n, 2))
        pts = np.empty((n, 3))
        normals = np.zeros((n, 3))
        for f in range(6):
            sel = face == f
            axis, sign = divmod(f, 2)
            sign = 1.0 if sign == 0 else -1.0
            others = [a for a in range(3) if a != axis]
            pts[sel, axis] = sign * self.half[axis]
            pts[sel, others[0]] = u[sel, 0] * self.half[others[0]]
            pts[sel, others[1]] = u[sel, 1] * self.half[others[1]]
            normals[sel, axis] = sign
        return pts + self.center, normals


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def contains(self, pts: np.ndarray, strict: bool = False) -> np.ndarray:
        d2 = ((pts - self.center) ** 2).sum(axis=1)
        r2 = self.radius**2
        return d2 < r2 if strict else d2 <= r2

    def sample_surface(self, n: int, rng: np.random.Generator):
        v = rng.normal(0, 1, (n, 3))
        v /= np.linalg.norm(v, axis=1, keepdims=True)
        return self.center + self.radius * v, v


@dataclass(frozen=True)
class Cylinder:
    center: np.ndarray
    axis: int  # 0, 1 or 2
    radius: float
    half_height: float

    def contains(self, pts: np.ndarray, strict: bool = False) -> np.ndarray:
        rel = pts - self.center
        radial = [a for a in range(3) if a != self.axis]
        r2 = (rel[:, radial] ** 2).sum(axis=1)
        h = np.abs(rel[:, self.axis])
        if strict:
            return (r2 < self.radius**2) & (h < self.half_height)
        return (r2 <= self.radius**2) & (h <= self.half_height)

    def sample_surface(self, n: int, rng: np.random.Generator):
        side_area = 2 * np.pi * self.radius * 2 * self.half_height
        cap_area = np.pi * self.radius**2
        probs = np.array([side_area, cap_area, cap_area])
        which = rng.choice(3, size=n, p=probs / probs.sum())
        theta = rng.uniform(0, 2 * np.pi, n)
        pts = np.zeros((n, 3))
        normals = np.zeros((n, 3))
        radial = [a for a in range(3) if a != self.axis]

        side = which == 0
        pts[side, radial[0]] = self.radius * np.cos(theta[side])
        pts[side, radial[1]] = self.radius * np.sin(theta[side])
        pts[side, self.axis] = rng.uniform(-self.half_height, self.half_height, side.sum())
        normals[side, radial[0]] = np.cos(theta[side])
        normals[side, radial[1]] = np.sin(theta[side])

        for cap_id, sign in ((1, 1.0), (2, -1.0)):
            cap = which == cap_id
            r = self.radius * np.sqrt(rng.uniform(0, 1, cap.sum()))
            pts[cap, radial[0]] = r * np.cos(theta[cap])
            pts[cap, radial[1]] = r * np.sin(theta[cap])
            pts[cap, self.axis] = sign * self.half_height
            normals[cap, self.axis] = sign
        return pts + self.center, normals


# --------------------------------------------------------------- shapes


@dataclass
class SyntheticShape:
    """Union of labeled primitives with exact occupancy in [-0.5, 0.5]^3."""

    family: str
    seed: int
    primitives: list = field(default_factory=list)

    @property
    def num_parts(self) -> int:
        return len(self.primitives)

    def occupancy(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        occupied = np.zeros(len(pts), dtype=bool)
        for prim in self.primitives:
            occupied |= prim.contains(pts)
        return occupied.astype(np.float64)

    def label_of(self, pts: np.ndarray) -> np.ndarray:
        """Part id of the first containing primitive; -1 outside the shape."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        labels = np.full(len(pts), -1, dtype=np.int64)
        for pid, prim in enumerate(self.primitives):
            inside = prim.contains(pts) & (labels < 0)
            labels[inside] = pid
        return labels

    def sample_surface(self, n: int, rng: np.random.Generator):
        """Points on the union boundary with labels and outward normals.

        Candidates strictly inside another primitive are rejected, so the
        returned points lie on the surface of the union, not of a buried
        primitive."""
        areas = np.array([_surface_area(p) for p in self.primitives])
        probs = areas / areas.sum()
        pts = np.empty((0, 3))
        labels = np.empty(0, dtype=np.int64)
        normals = np.empty((0, 3))
        while len(pts) < n:
            want = max(n - len(pts), 32)
            pick = rng.choice(self.num_parts, size=want, p=probs)
            batch_p, batch_n, batch_l = [], [], []
            for pid in range(self.num_parts):
                count = int((pick == pid).sum())
                if count == 0:
                    continue
                p, nv = self.primitives[pid].sample_surface(count, rng)
                batch_p.append(p)
                batch_n.append(nv)
                batch_l.append(np.full(count, pid, dtype=np.int64))
            p = np.vstack(batch_p)
            nv = np.vstack(batch_n)
            lab = np.concatenate(batch_l)
            buried = np.zeros(len(p), dtype=bool)
            for pid, prim in enumerate(self.primitives):
                others = lab != pid
                buried[others] |= prim.contains(p[others], strict=True)
            keep = ~buried
            pts = np.vstack([pts, p[keep]])
            labels = np.concatenate([labels, lab[keep]])
            normals = np.vstack([normals, nv[keep]])
        return pts[:n], labels[:n], normals[:n]


def _surface_area(prim) -> float:
    if isinstance(prim, Box):
        hx, hy, hz = prim.half
        return 8 * (hx * hy + hy * hz + hx * hz)
    if isinstance(prim, Sphere):
        return 4 * np.pi * prim.radius**2
    if isinstance(prim, Cylinder):
        return 2 * np.pi * prim.radius * (2 * prim.half_height + prim.radius)
    raise TypeError(f"unknown primitive {type(prim)}")


def _make_table(rng: np.random.Generator) -> list:
    n_legs = int(rng.integers(3, 7))
    thickness = rng.uniform(0.06, 0.14)
    top_half = np.array([0.5, rng.uniform(0.35, 0.5), thickness / 2])
    top_center = np.array([0.0, 0.0, 0.5 - thickness / 2])
    top = Box(top_center, top_half)

    leg_half_w = rng.uniform(0.03, 0.06)
    z_top_of_leg = 0.5 - thickness + 0.01  # poke into the slab: no flush faces
    leg_half_h = (z_top_of_leg + 0.5) / 2
    leg_z = z_top_of_leg - leg_half_h
    inset_x = 0.5 - leg_half_w - rng.uniform(0.02, 0.08)
    inset_y = top_half[1] - leg_half_w - rng.uniform(0.02, 0.08)

    if n_legs == 3:
        xy = [(-inset_x, 0.0), (inset_x, -inset_y), (inset_x, inset_y)]
    elif n_legs == 4:
        xy = [(sx * inset_x, sy * inset_y) for sx in (-1, 1) for sy in (-1, 1)]
    elif n_legs == 5:
        xy = [(sx * inset_x, sy * inset_y) for sx in (-1, 1) for sy in (-1, 1)]
        xy.append((0.0, 0.0))
    else:
        xy = [(sx * inset_x, sy * inset_y) for sx in (-1, 0, 1) for sy in (-1, 1)]

    legs = [
        Box(np.array([x, y, leg_z]), np.array([leg_half_w, leg_half_w, leg_half_h]))
        for x, y in xy
    ]
    return [top] + legs


def _make_dumbbell(rng: np.random.Generator) -> list:
    r = rng.uniform(0.12, 0.2)
    bar_r = rng.uniform(0.04, min(0.08, r - 0.02))
    cx = 0.5 - r
    left = Sphere(np.array([-cx, 0.0, 0.0]), r)
    right = Sphere(np.array([cx, 0.0, 0.0]), r)
    bar = Cylinder(np.zeros(3), axis=0, radius=bar_r, half_height=cx)
    return [left, right, bar]


def _make_lamp(rng: np.random.Generator) -> list:
    base_r = rng.uniform(0.2, 0.3)
    base_h = rng.uniform(0.04, 0.08)
    pole_r = rng.uniform(0.02, 0.04)
    shade_r = rng.uniform(0.15, 0.25)
    shade_h = rng.uniform(0.08, 0.16)
    base = Cylinder(np.array([0, 0, -0.5 + base_h]), axis=2, radius=base_r, half_height=base_h)
    pole_lo = -0.5 + 2 * base_h - 0.01
    pole_hi = 0.5 - 2 * shade_h + 0.01
    pole = Cylinder(
        np.array([0, 0, (pole_lo + pole_hi) / 2]),
        axis=2,
        radius=pole_r,
        half_height=(pole_hi - pole_lo) / 2,
    )
    shade = Cylinder(np.array([0, 0, 0.5 - shade_h]), axis=2, radius=shade_r, half_height=shade_h)
    return [base, pole, shade]


_BUILDERS = {"table": _make_table, "dumbbell": _make_dumbbell, "lamp": _make_lamp}


def make_shape(family: str, seed: int) -> SyntheticShape:
    """Build one reproducible shape; the tag records the realized part count."""
    if family not in _BUILDERS:
        raise ConfigError(f"unknown shape family {family!r}; known: {sorted(_BUILDERS)}")
    rng = np.random.default_rng(np.random.SeedSequence([hash_family(family), seed]))
    primitives = _BUILDERS[family](rng)
    shape = SyntheticShape(family=family, seed=seed, primitives=primitives)
    if family == "table":
        shape.family = f"table-{len(primitives) - 1}leg"
    return shape


def hash_family(family: str) -> int:
    return int.from_bytes(family.encode("utf-8"), "little") % (2**31)


def base_family(tag: str) -> str:
    return tag.split("-")[0]


def generate_dataset(n: int, families: list[str], seed: int) -> list[SyntheticShape]:
    """n shapes cycling through the requested families, seeded per shape."""
    if n < 1:
        raise ConfigError("dataset size must be >= 1")
    if not families:
        raise ConfigError("at least one family is required")
    for fam in families:
        if base_family(fam) not in _BUILDERS:
            raise ConfigError(f"unknown shape family {fam!r}; known: {sorted(_BUILDERS)}")
    rng = np.random.default_rng(seed)
    shapes = []
    for i in range(n):
        fam = base_family(families[i % len(families)])
        shapes.append(make_shape(fam, int(rng.integers(0, 2**31))))
    return shapes


# --------------------------------------------------------------- queries


@dataclass
class QueryBatch:
    points: np.ndarray  # (Q, 3)
    gt_occupancy: np.ndarray  # (Q,) in {0, 1}

    def interior_points(self) -> np.ndarray:
        return self.points[self.gt_occupancy > 0.5]


def sample_queries(
    shape,
    q: int,
    seed: int,
    pad: float = 0.05,
    surface_jitter: float = 0.02,
) -> QueryBatch:
    """Half uniform in the padded cube, half near the surface.

    Falls back to all-uniform when the shape offers no surface sampler.
    Ground-truth occupancy comes from the analytic field.
    """
    if q < 2:
        raise ValueError("need at least 2 query points")
    rng = np.random.default_rng(seed)
    bound = 0.5 + pad
    n_uniform = q // 2
    sampler = getattr(shape, "sample_surface", None)
    if sampler is None:
        n_uniform = q
    pts = rng.uniform(-bound, bound, (n_uniform, 3))
    if n_uniform < q:
        n_surf = q - n_uniform
        surf, _, _ = sampler(n_surf, rng)
        surf = surf + rng.normal(0.0, surface_jitter, (n_surf, 3))
        pts = np.vstack([pts, np.clip(surf, -bound, bound)])
    return QueryBatch(points=pts, gt_occupancy=shape.occupancy(pts))
