"""Materialize trained fields: marching-cubes meshes, hierarchy export,
point segmentation and the evaluation metrics (segmentation IoU with
label-code association, volumetric IoU, symmetric Chamfer distance)."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .convex import ConvexParams, raw_occupancy

DEFAULT_BOUND = 0.55  # sampling domain half-width; pads the unit cube
TREE_FORMAT_VERSION = 1


# --------------------------------------------------------------- snapshot


@dataclass
class HierarchySnapshot:
    """Frozen tree of convex parts with contained-occupancy evaluators.

    ``levels[l][i]`` holds the convex of part i at level l+1; ``parents[l][i]``
    is its parent index at the level above (level-1 parts use the virtual
    root, index 0).
    """

    levels: list[list[ConvexParams]]
    parents: list[list[int]]
    sigma: float
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.levels) != len(self.parents):
            raise ValueError("levels and parents must be parallel")
        for lvl in range(1, len(self.levels)):
            n_prev = len(self.levels[lvl - 1])
            for child, parent in enumerate(self.parents[lvl]):
                if not 0 <= parent < n_prev:
                    raise ValueError(
                        f"level {lvl + 1} part {child} has parent {parent} "
                        f"outside the previous level's {n_prev} parts"
                    )

    @property
    def num_levels(self) -> int:
        return len(self.levels)

    def parts_per_level(self) -> list[int]:
        return [len(parts) for parts in self.levels]

    def edges(self) -> list[tuple[int, int, int]]:
        out = []
        for lvl, parents in enumerate(self.parents, start=1):
            for child, parent in enumerate(parents):
                out.append((lvl, child, parent))
        return out

    def raw_occ(self, level: int, index: int, pts: np.ndarray) -> np.ndarray:
        """Raw occupancy of one part (level is 1-based)."""
        return raw_occupancy(self.levels[level - 1][index], pts, self.sigma).data

    def contained_occ(self, level: int, index: int, pts: np.ndarray) -> np.ndarray:
        """Occupancy composed down the parent chain to the virtual root."""
        occ = self.raw_occ(level, index, pts)
        lvl, idx = level, index
        while lvl > 1:
            idx = self.parents[lvl - 1][idx]
            lvl -= 1
            occ = occ * self.raw_occ(lvl, idx, pts)
        return occ

    def level_contained(self, level: int, pts: np.ndarray) -> np.ndarray:
        """(N_level, Q) contained occupancies for every part at a level."""
        return np.stack(
            [self.contained_occ(level, i, pts) for i in range(len(self.levels[level - 1]))]
        )

    def leaf_contained(self, pts: np.ndarray) -> np.ndarray:
        return self.level_contained(self.num_levels, pts)

    def union_field(self, level: int):
        def field_fn(pts: np.ndarray) -> np.ndarray:
            return self.level_contained(level, pts).max(axis=0)

        return field_fn

    def part_field(self, level: int, index: int):
        def field_fn(pts: np.ndarray) -> np.ndarray:
            return self.contained_occ(level, index, pts)

        return field_fn


# --------------------------------------------------------------- marching cubes


def sample_grid(res: int, bound: float = DEFAULT_BOUND) -> np.ndarray:
    axis = np.linspace(-bound, bound, res)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)


def marching_cubes(
    field_fn,
    res: int,
    threshold: float = 0.5,
    bound: float = DEFAULT_BOUND,
    chunk: int = 65536,
) -> tuple[np.ndarray, np.ndarray]:
    """Triangulate the ``threshold`` isosurface of a field over a res^3 grid.

    Returns (vertices, faces); an empty isosurface yields empty arrays.
    """
    if res < 8:
        raise ValueError("marching cubes resolution must be >= 8")
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly inside (0, 1)")
    pts = sample_grid(res, bound)
    values = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        hi = min(lo + chunk, len(pts))
        values[lo:hi] = field_fn(pts[lo:hi])
    volume = values.reshape(res, res, res)
    if volume.max() <= threshold or volume.min() >= threshold:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    spacing = 2 * bound / (res - 1)
    verts, faces, _, _ = measure.marching_cubes(volume, level=threshold)
    verts = verts * spacing - bound
    return verts.astype(np.float64), faces.astype(np.int64)


# --------------------------------------------------------------- segmentation


def segment_points(points: np.ndarray, leaf_contained: np.ndarray) -> np.ndarray:
    """Per-point argmax over leaf occupancies (lowest-index tie-break).

    Every point receives a label, even where all occupancies are near zero.
    """
    if leaf_contained.ndim != 2 or leaf_contained.shape[1] != len(points):
        raise ValueError(
            f"leaf occupancy must be (N_leaf, Q={len(points)}), got {leaf_contained.shape}"
        )
    return np.argmax(leaf_contained, axis=0)


UNASSIGNED = -1


@dataclass
class LabelMap:
    """Leaf code index -> ground-truth label, built on one reference instance."""

    code_to_label: np.ndarray

    def apply(self, segments: np.ndarray) -> np.ndarray:
        return self.code_to_label[segments]


def associate_labels(
    reference_labels: np.ndarray, segments: np.ndarray, num_codes: int
) -> LabelMap:
    """Majority ground-truth label per code; ties pick the lowest label id,
    codes that captured no points stay unassigned."""
    if len(reference_labels) < 1:
        raise ValueError("reference instance must have at least one labeled point")
    mapping = np.full(num_codes, UNASSIGNED, dtype=np.int64)
    for code in range(num_codes):
        mine = reference_labels[segments == code]
        if len(mine) == 0:
            continue
        labels, counts = np.unique(mine, return_counts=True)
        mapping[code] = labels[np.argmax(counts)]  # first max = lowest label id
    return LabelMap(mapping)


def segmentation_iou(
    pred_labels: np.ndarray, gt_labels: np.ndarray
) -> tuple[dict[int, float], float]:
    """Per-label IoU over point sets, averaged over labels present in gt."""
    if len(pred_labels) != len(gt_labels):
        raise ValueError("prediction and ground truth must have the same point count")
    per_label: dict[int, float] = {}
    for label in np.unique(gt_labels):
        pred = pred_labels == label
        gt = gt_labels == label
        union = (pred | gt).sum()
        per_label[int(label)] = float((pred & gt).sum() / union) if union else 1.0
    mean = float(np.mean(list(per_label.values()))) if per_label else 0.0
    return per_label, mean


# --------------------------------------------------------------- field metrics


def volumetric_iou(
    field_a, field_b, res: int, threshold: float = 0.5, bound: float = DEFAULT_BOUND
) -> float:
    """IoU of the two fields thresholded on a res^3 grid of cell centers.

    Two empty fields are identical, hence IoU 1.0.
    """
    if res < 8:
        raise ValueError("volumetric IoU resolution must be >= 8")
    step = 2 * bound / res
    axis = -bound + (np.arange(res) + 0.5) * step
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([gx.ravel(), gy.ravel(), gz.ravel()], axis=1)
    a = _eval_chunked(field_a, pts) >= threshold
    b = _eval_chunked(field_b, pts) >= threshold
    union = (a | b).sum()
    if union == 0:
        return 1.0
    return float((a & b).sum() / union)


def _eval_chunked(field_fn, pts: np.ndarray, chunk: int = 65536) -> np.ndarray:
    values = np.empty(len(pts))
    for lo in range(0, len(pts), chunk):
        hi = min(lo + chunk, len(pts))
        values[lo:hi] = field_fn(pts[lo:hi])
    return values


def chamfer(points_a: np.ndarray, points_b: np.ndarray) -> float:
    """Symmetric Chamfer distance: both directed mean squared nearest-neighbor
    distances, summed."""
    a = np.asarray(points_a, dtype=np.float64)
    b = np.asarray(points_b, dtype=np.float64)
    if len(a) == 0 or len(b) == 0:
        raise ValueError("chamfer distance requires two nonempty point sets")
    d_ab, _ = cKDTree(b).query(a)
    d_ba, _ = cKDTree(a).query(b)
    return float(np.mean(d_ab**2) + np.mean(d_ba**2))


# --------------------------------------------------------------- mesh + tree files


def write_obj(path, verts: np.ndarray, faces: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# parttree mesh: {len(verts)} vertices, {len(faces)} faces\n")
        for v in verts:
            fh.write(f"v {v[0]:.9g} {v[1]:.9g} {v[2]:.9g}\n")
        for f in faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")


def read_obj(path) -> tuple[np.ndarray, np.ndarray]:
    verts, faces = [], []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                faces.append([int(x.split("/")[0]) - 1 for x in parts[1:4]])
    return (
        np.asarray(verts, dtype=np.float64).reshape(-1, 3),
        np.asarray(faces, dtype=np.int64).reshape(-1, 3),
    )


def _node_scalars(p: ConvexParams) -> list[float]:
    offsets = p.offsets.data
    return [
        float(p.blend_sharpness.data[0]),
        *[float(v) for v in p.euler.data],
        *[float(v) for v in p.translation.data],
        *[float(v) for v in p.scale.data],
        float(np.mean(np.abs(offsets))),
        float(np.min(offsets)),
        float(np.max(offsets)),
    ]


def export_hierarchy(
    snap: HierarchySnapshot,
    out_dir,
    res: int = 64,
    threshold: float = 0.5,
) -> list[str]:
    """Write one OBJ per part (contained occupancy isosurface) plus a tree
    file; parts with an empty isosurface become metadata-only tree entries."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as err:
        raise OSError(f"cannot create export directory {out_dir!r}: {err}") from err

    written: list[str] = []
    mesh_names: dict[tuple[int, int], str] = {}
    for lvl in range(1, snap.num_levels + 1):
        for idx in range(len(snap.levels[lvl - 1])):
            verts, faces = marching_cubes(snap.part_field(lvl, idx), res, threshold)
            if len(faces) == 0:
                mesh_names[(lvl, idx)] = "-"
                continue
            name = f"level{lvl}_part{idx}.obj"
            path = os.path.join(out_dir, name)
            try:
                write_obj(path, verts, faces)
            except OSError as err:
                raise OSError(f"cannot write mesh {path!r}: {err}") from err
            mesh_names[(lvl, idx)] = name
            written.append(path)

    tree_path = os.path.join(out_dir, "hierarchy.txt")
    with open(tree_path, "w", encoding="utf-8") as fh:
        fh.write(f"parttree-hierarchy {TREE_FORMAT_VERSION}\n")
        fh.write("levels " + ",".join(str(n) for n in snap.parts_per_level()) + "\n")
        fh.write(f"sigma {snap.sigma:.17g}\n")
        for lvl, child, parent in snap.edges():
            p = snap.levels[lvl - 1][child]
            scalars = " ".join(f"{v:.17g}" for v in _node_scalars(p))
            fh.write(
                f"node {lvl} {child} {parent} {p.num_planes} "
                f"{mesh_names[(lvl, child)]} {scalars}\n"
            )
    written.append(tree_path)
    return written


@dataclass
class TreeFile:
    parts_per_level: list[int]
    sigma: float
    edges: list[tuple[int, int, int]]
    planes: dict[tuple[int, int], int]
    meshes: dict[tuple[int, int], str]
    scalars: dict[tuple[int, int], list[float]]


def parse_tree_file(path) -> TreeFile:
    with open(path, "r", encoding="utf-8") as fh:
        lines = [line.rstrip("\n") for line in fh]
    head = lines[0].split()
    if head[0] != "parttree-hierarchy" or int(head[1]) != TREE_FORMAT_VERSION:
        raise ValueError(f"{path}: not a version-{TREE_FORMAT_VERSION} hierarchy file")
    parts_per_level = [int(v) for v in lines[1].split()[1].split(",")]
    sigma = float(lines[2].split()[1])
    edges, planes, meshes, scalars = [], {}, {}, {}
    for line in lines[3:]:
        if not line.strip():
            continue
        fields_ = line.split()
        if fields_[0] != "node":
            raise ValueError(f"{path}: unexpected line {line!r}")
        lvl, child, parent, nplanes = (int(v) for v in fields_[1:5])
        edges.append((lvl, child, parent))
        planes[(lvl, child)] = nplanes
        meshes[(lvl, child)] = fields_[5]
        scalars[(lvl, child)] = [float(v) for v in fields_[6:]]
    return TreeFile(parts_per_level, sigma, edges, planes, meshes, scalars)


# --------------------------------------------------------------- mesh checks


def mesh_euler_characteristic(verts: np.ndarray, faces: np.ndarray) -> int:
    edges = set()
    for f in faces:
        for a, b in ((f[0], f[1]), (f[1], f[2]), (f[2], f[0])):
            edges.add((min(a, b), max(a, b)))
    return len(verts) - len(edges) + len(faces)
