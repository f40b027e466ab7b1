"""Stochastic view generation for contrastive training.

Two strategies operate on the skeleton structure rather than on intensities:
``cutout`` removes (view 1) or keeps only (view 2) a random 3D block, and
``branch_clip`` deletes whole branches until a voxel-removal quota is met.
Both finish by binarizing and applying a small random rotation.

Randomness contract: every function takes an explicit ``numpy.random.Generator``
and draws in a fixed order — view 1 placement (block corner or branch
permutation), view 1 rotation angles, then the same for view 2. Rotation
angles are drawn even when ``max_rotation_deg`` is 0 so the stream layout does
not depend on parameter values.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .skeleton import BranchKind, DenseVolume, SkeletonCrop, bottom_mask, rasterize


class Strategy(enum.Enum):
    CUTOUT = "cutout"
    BRANCH_CLIP = "branch_clip"


def _default_keep_bottom(strategy: Strategy) -> bool:
    # cutout conserves fold bottoms, branch clipping removes them
    return strategy is Strategy.CUTOUT


@dataclass(frozen=True)
class AugmentSpec:
    """Parameters of one view-generation strategy.

    ``keep_bottom`` defaults per strategy (cutout keeps bottom voxels,
    branch clipping removes them) but may be forced either way.
    """

    strategy: Strategy
    cutout_frac: float = 0.55
    clip_frac: float = 0.40
    max_rotation_deg: float = 6.0
    keep_bottom: bool | None = field(default=None)

    def __post_init__(self):
        if not isinstance(self.strategy, Strategy):
            raise ContractError(f"unknown strategy: {self.strategy!r}")
        if not 0.0 < self.cutout_frac <= 1.0:
            raise ContractError(f"cutout_frac must be in (0, 1], got {self.cutout_frac}")
        if not 0.0 < self.clip_frac < 1.0:
            raise ContractError(f"clip_frac must be in (0, 1), got {self.clip_frac}")
        if self.max_rotation_deg < 0:
            raise ContractError(
                f"max_rotation_deg must be >= 0, got {self.max_rotation_deg}"
            )
        if self.keep_bottom is None:
            object.__setattr__(self, "keep_bottom", _default_keep_bottom(self.strategy))


@dataclass(frozen=True)
class ViewPair:
    """Two augmented binary volumes from one crop; the contrastive unit."""

    view1: DenseVolume
    view2: DenseVolume
    source_subject: str

    def __post_init__(self):
        for v in (self.view1, self.view2):
            if v.values.max(initial=0) > 1:
                raise ContractError("views must be binary")
        if self.view1.dims != self.view2.dims:
            raise ContractError("views must share dims")


def binarize(volume: DenseVolume) -> DenseVolume:
    """Map every positive value (e.g. a branch id) to 1."""
    return DenseVolume((volume.values > 0).astype(np.int32))


def _rotation_matrix(theta_x: float, theta_y: float, theta_z: float) -> np.ndarray:
    cx, sx = np.cos(theta_x), np.sin(theta_x)
    cy, sy = np.cos(theta_y), np.sin(theta_y)
    cz, sz = np.cos(theta_z), np.sin(theta_z)
    rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    # applied to vectors as Rz @ Ry @ Rx: X first, then Y, then Z
    return rz @ ry @ rx


_GRID_CACHE: dict[tuple[int, int, int], np.ndarray] = {}


def _centered_grid(dims: tuple[int, int, int]) -> np.ndarray:
    """(3, V) voxel coordinates with the grid center subtracted; cached."""
    grid = _GRID_CACHE.get(dims)
    if grid is None:
        center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
        grid = np.indices(dims, dtype=np.float64).reshape(3, -1) - center[:, None]
        _GRID_CACHE[dims] = grid
    return grid


def random_rotation(volume: DenseVolume, max_deg: float, rng: np.random.Generator) -> DenseVolume:
    """Rotate by angles drawn uniformly in [-max_deg, +max_deg] per axis.

    The rotation is about the grid center, axes applied in the fixed order
    X, Y, Z. Each output voxel copies its nearest-neighbor preimage; preimages
    outside the grid give 0. ``max_deg = 0`` is the exact identity.
    """
    angles = np.deg2rad(rng.uniform(-max_deg, max_deg, size=3))
    if max_deg == 0:
        return DenseVolume(volume.values.copy())
    rot = _rotation_matrix(*angles)
    dims = volume.dims
    center = (np.asarray(dims, dtype=np.float64) - 1.0) / 2.0
    # output voxel p samples the input at R^-1 (p - c) + c; R^-1 = R^T
    pre = rot.T @ _centered_grid(dims)  # (3, V)
    pre += center[:, None]
    src = np.rint(pre, out=pre).astype(np.int32)
    s0, s1, s2 = src
    inside = (s0 >= 0) & (s0 < dims[0])
    inside &= (s1 >= 0) & (s1 < dims[1])
    inside &= (s2 >= 0) & (s2 < dims[2])
    flat = (s0 * dims[1] + s1) * dims[2] + s2
    np.clip(flat, 0, s0.size - 1, out=flat)  # out-of-grid lanes masked below
    vals = volume.values.reshape(-1)[flat]
    return DenseVolume(np.where(inside, vals, 0).reshape(dims))


def _block_dims(dims: tuple[int, int, int], frac: float) -> tuple[int, ...]:
    # round-half-up edge length per axis, clamped into [1, dim]
    return tuple(int(min(max(np.floor(frac * d + 0.5), 1), d)) for d in dims)


def _cutout_one(
    ids: np.ndarray,
    bottoms: np.ndarray | None,
    block: tuple[int, ...],
    keep_inside: bool,
    max_deg: float,
    rng: np.random.Generator,
) -> DenseVolume:
    corner = [int(rng.integers(0, d - b + 1)) for d, b in zip(ids.shape, block)]
    mask = np.zeros(ids.shape, dtype=bool)
    sl = tuple(slice(c, c + b) for c, b in zip(corner, block))
    mask[sl] = True
    if keep_inside:
        values = np.where(mask, ids, 0)
    else:
        values = np.where(mask, 0, ids)
    view = (values > 0).astype(np.int32)
    if bottoms is not None:
        view |= bottoms
    return random_rotation(DenseVolume(view), max_deg, rng)


def cutout_views(crop: SkeletonCrop, spec: AugmentSpec, rng: np.random.Generator) -> ViewPair:
    """Block cutout: view 1 drops the block's content, view 2 keeps only it.

    Block edges are ``round(cutout_frac * dim)`` per axis, placed uniformly at
    random and independently for each view. With ``keep_bottom`` the source's
    BottomLine voxels are restored in both views before rotation.
    """
    if spec.strategy is not Strategy.CUTOUT:
        raise ContractError(f"cutout_views needs a Cutout spec, got {spec.strategy}")
    ids = rasterize(crop).values
    bottoms = bottom_mask(crop).values if spec.keep_bottom else None
    block = _block_dims(crop.dims, spec.cutout_frac)
    v1 = _cutout_one(ids, bottoms, block, False, spec.max_rotation_deg, rng)
    v2 = _cutout_one(ids, bottoms, block, True, spec.max_rotation_deg, rng)
    return ViewPair(v1, v2, crop.subject_id)


def _clip_one(
    crop: SkeletonCrop,
    ids: np.ndarray,
    total: int,
    spec: AugmentSpec,
    rng: np.random.Generator,
) -> DenseVolume:
    removed_ids: list[int] = []
    removed = 0
    candidates = []
    for b in crop.branches:
        if b.kind is BranchKind.BOTTOM_LINE:
            if not spec.keep_bottom:
                removed_ids.append(b.id)
                removed += len(b.voxels)
        else:
            candidates.append(b)
    order = rng.permutation(len(candidates))
    for i in order:
        if removed / total >= spec.clip_frac:
            break
        removed_ids.append(candidates[i].id)
        removed += len(candidates[i].voxels)
    values = np.where(np.isin(ids, removed_ids), 0, ids)
    view = (values > 0).astype(np.int32)
    return random_rotation(DenseVolume(view), spec.max_rotation_deg, rng)


def branch_clip_views(crop: SkeletonCrop, spec: AugmentSpec, rng: np.random.Generator) -> ViewPair:
    """Remove whole branches until >= clip_frac of the voxels are gone.

    Per view: all BottomLine branches go first (unless ``keep_bottom``), then
    branches drawn uniformly without replacement until the removed fraction
    (bottoms included) reaches the quota. An empty crop yields all-zero views.
    If the quota is unreachable (kept bottoms too large a share) every
    removable branch is removed.
    """
    if spec.strategy is not Strategy.BRANCH_CLIP:
        raise ContractError(f"branch_clip_views needs a BranchClip spec, got {spec.strategy}")
    total = crop.voxel_count()
    ids = rasterize(crop).values
    if total == 0:
        zero = DenseVolume(np.zeros(crop.dims, dtype=np.int32))
        # consume the per-view rotation draws anyway to keep the stream fixed
        v1 = random_rotation(zero, spec.max_rotation_deg, rng)
        v2 = random_rotation(zero, spec.max_rotation_deg, rng)
        return ViewPair(v1, v2, crop.subject_id)
    v1 = _clip_one(crop, ids, total, spec, rng)
    v2 = _clip_one(crop, ids, total, spec, rng)
    return ViewPair(v1, v2, crop.subject_id)


def make_view_pair(crop: SkeletonCrop, spec: AugmentSpec, rng: np.random.Generator) -> ViewPair:
    """Dispatch on ``spec.strategy``."""
    if spec.strategy is Strategy.CUTOUT:
        return cutout_views(crop, spec, rng)
    return branch_clip_views(crop, spec, rng)
