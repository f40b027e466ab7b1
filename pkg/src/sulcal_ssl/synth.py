"""Synthetic labeled skeleton corpora.

Generates crops containing either a single-fold pattern (label 0: one
curved fold sheet with a bottom line plus a few side branches) or a
double-parallel pattern (label 1: a second sheet running parallel to the
first at a 3-6 voxel offset, with its own bottom line).

The two classes are drawn from the same total-voxel budget so raw voxel
mass carries no label information; position, curvature and side-branch
layout are randomized per subject. Bottom lines of distinct sheets are
kept >= 2 voxels apart along x, so counting connected components of
bottom voxels always recovers the label.

Generation is a pure function of (seed, label, cfg); corpus files are
byte-deterministic.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ContractError, GenerationError
from .skeleton import (
    DEFAULT_DIMS,
    DEFAULT_SPACING_MM,
    Branch,
    BranchKind,
    Manifest,
    ManifestRow,
    SkeletonCrop,
    save_crop,
    write_manifest,
)

SITES = ("synthA", "synthB")
GENDERS = ("F", "M")


@dataclass(frozen=True)
class SynthConfig:
    """Knobs of the synthetic generator."""

    n_subjects: int
    prevalence: float
    seed: int
    dims: tuple[int, int, int] = DEFAULT_DIMS
    target_sparsity: float = 0.04
    jitter_mm: float = 1.0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ContractError(f"n_subjects must be >= 1, got {self.n_subjects}")
        if not 0.0 <= self.prevalence <= 1.0:
            raise ContractError(f"prevalence must be in [0, 1], got {self.prevalence}")
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise ContractError(f"dims must be three positive integers, got {self.dims}")
        if self.target_sparsity <= 0 or self.jitter_mm < 0:
            raise ContractError("target_sparsity must be > 0 and jitter_mm >= 0")


def subject_seed(corpus_seed: int, index: int) -> int:
    """Stable per-subject seed, independent of generation order."""
    digest = hashlib.sha256(f"sulcal-ssl:crop:{corpus_seed}:{index}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


class _Builder:
    """Accumulates branches while enforcing voxel disjointness."""

    def __init__(self):
        self.voxel_lists: list[list[tuple[int, int, int]]] = []
        self.kinds: list[BranchKind] = []
        self.occupied: set[tuple[int, int, int]] = set()

    def add(self, kind: BranchKind, voxels: list[tuple[int, int, int]]) -> int | None:
        """Add a branch, silently dropping voxels already taken.
        Returns the branch index, or None if nothing was left."""
        fresh = []
        for v in voxels:
            if v not in self.occupied:
                self.occupied.add(v)
                fresh.append(v)
        if not fresh:
            return None
        self.voxel_lists.append(fresh)
        self.kinds.append(kind)
        return len(self.voxel_lists) - 1


def _sheet_surface(rng: np.random.Generator, ny: int, nz: int, jitter_sd: float):
    """Relative x-offset field of a curved sheet over an (ny, nz) patch,
    plus the callable deterministic part for re-use by a parallel sheet."""
    a1 = rng.uniform(0.4, 1.0)
    phase1 = rng.uniform(0.0, 2.0 * math.pi)
    a2 = rng.uniform(0.0, 0.4)
    phase2 = rng.uniform(0.0, 2.0 * math.pi)
    freq2 = rng.uniform(1.5, 2.5)
    tilt = rng.uniform(-1.0, 1.0)

    def det(yy: np.ndarray, zz: np.ndarray) -> np.ndarray:
        u = yy / max(ny - 1, 1)
        v = zz / max(nz - 1, 1)
        return (
            a1 * np.sin(math.pi * u + phase1)
            + a2 * np.sin(2.0 * math.pi * freq2 * u + phase2)
            + tilt * (v - 0.5)
        )

    yy, zz = np.meshgrid(np.arange(ny), np.arange(nz), indexing="ij")
    noise = np.clip(rng.normal(0.0, jitter_sd, size=(ny, nz)), -1.0, 1.0) if jitter_sd > 0 else 0.0
    return det(yy, zz) + noise, det


def _unit_steps_lower(t: np.ndarray) -> np.ndarray:
    """Clamp |t[y+1]-t[y]| <= 1 by lowering values (keeps upper bounds)."""
    t = t.copy()
    for y in range(1, len(t)):
        t[y] = min(t[y], t[y - 1] + 1)
    for y in range(len(t) - 2, -1, -1):
        t[y] = min(t[y], t[y + 1] + 1)
    return t


def _unit_steps_raise(t: np.ndarray) -> np.ndarray:
    """Clamp |t[y+1]-t[y]| <= 1 by raising values (keeps lower bounds)."""
    t = t.copy()
    for y in range(1, len(t)):
        t[y] = max(t[y], t[y - 1] - 1)
    for y in range(len(t) - 2, -1, -1):
        t[y] = max(t[y], t[y + 1] - 1)
    return t


def _split_segments(rng: np.random.Generator, length: int, lo: int, hi: int) -> list[range]:
    """Partition range(length) into lo..hi contiguous chunks of width >= 5."""
    k = int(rng.integers(lo, hi + 1))
    k = max(1, min(k, length // 5))
    cuts = sorted(rng.choice(np.arange(5, length - 4), size=k - 1, replace=False).tolist()) if k > 1 else []
    bounds = [0] + cuts + [length]
    return [range(bounds[i], bounds[i + 1]) for i in range(k)]


def generate_crop(seed: int, label: int, cfg: SynthConfig) -> SkeletonCrop:
    """Build one synthetic crop. Deterministic in (seed, label, cfg)."""
    if label not in (0, 1):
        raise ContractError(f"label must be 0 or 1, got {label}")
    rng = np.random.default_rng(seed)
    X, Y, Z = cfg.dims
    volume = X * Y * Z
    jitter_sd = cfg.jitter_mm / DEFAULT_SPACING_MM

    total = cfg.target_sparsity * volume * rng.uniform(0.92, 1.08)
    if label == 1:
        w1_budget = total * rng.uniform(0.46, 0.52)
        w2_budget = total * rng.uniform(0.31, 0.37)
    else:
        w1_budget = total * rng.uniform(0.72, 0.80)
        w2_budget = 0.0

    # sheet heights share one distribution across labels so that bounding-box
    # extent alone does not give the label away; length absorbs the budget
    lz_hi = min(int(0.8 * Z), Z - 4)
    lz_lo = min(max(6, int(0.55 * Z)), lz_hi)
    lz1 = int(rng.integers(lz_lo, lz_hi + 1))
    ly1 = max(min(_round_half_up(w1_budget / lz1), Y - 4), 10)
    if ly1 < 10 or lz1 < 6 or Y - 4 < 10:
        raise GenerationError(f"dims {cfg.dims} too small for the fold pattern")

    y0 = int(rng.integers(2, max(3, Y - ly1 - 1)))
    z0 = int(rng.integers(2, max(3, Z - lz1 - 1)))  # sheet rows z0..z0+lz1-1, bottom at z0-1

    field1, det = _sheet_surface(rng, ly1, lz1, jitter_sd)
    xr1 = np.rint(field1).astype(np.int64)  # (ly1, lz1) relative x of sheet 1

    builder = _Builder()
    sheet1_segments = _split_segments(rng, ly1, 2, 4)
    seg1_idx = []
    for seg in sheet1_segments:
        vox = [
            (int(xr1[y, z]), y0 + y, z0 + z)
            for y in seg
            for z in range(lz1)
        ]
        seg1_idx.append(builder.add(BranchKind.SIMPLE_SURFACE, vox))
    # the bottom line follows the sheet's lowest row, smoothed to unit x-steps
    # so it always forms a single 26-connected component
    b1x = _unit_steps_lower(xr1[:, 0])
    bottom1_idx = builder.add(
        BranchKind.BOTTOM_LINE,
        [(int(b1x[y]), y0 + y, z0 - 1) for y in range(ly1)],
    )

    # secondary parallel sheet (label 1 only), offset 3..6 along x; the
    # offset is taken against a 3x3 neighborhood maximum of the first
    # sheet so no voxel of sheet 2 (bottom line included) is ever
    # 26-adjacent to sheet 1 - counting bottom components recovers the label
    seg2_idx: list[int | None] = []
    bottom2_idx = None
    if label == 1:
        offset = int(rng.integers(3, 7))
        ly2 = max(10, ly1 - int(rng.integers(2, 7)))
        lz2 = max(6, min(_round_half_up(w2_budget / ly2), lz1))
        dy = int(rng.integers(0, ly1 - ly2 + 1))
        pad = np.pad(xr1, 1, mode="edge")
        hull = np.max(
            [pad[1 + dy_ : 1 + dy_ + ly1, 1 + dz_ : 1 + dz_ + lz1]
             for dy_ in (-1, 0, 1) for dz_ in (-1, 0, 1)],
            axis=0,
        )
        gap_noise = np.rint(rng.normal(0.0, 0.4, size=(ly2, lz2))).astype(np.int64)
        gap = np.clip(offset + gap_noise, 3, 7)
        xr2 = np.maximum(xr1[dy : dy + ly2, :lz2] + gap, hull[dy : dy + ly2, :lz2] + 2)
        for seg in _split_segments(rng, ly2, 2, 3):
            vox = [
                (int(xr2[y, z]), y0 + dy + y, z0 + z)
                for y in seg
                for z in range(lz2)
            ]
            seg2_idx.append(builder.add(BranchKind.SIMPLE_SURFACE, vox))
        b2x = _unit_steps_raise(xr2[:, 0])
        bottom2_idx = builder.add(
            BranchKind.BOTTOM_LINE,
            [(int(b2x[y]), y0 + dy + y, z0 - 1) for y in range(ly2)],
        )

    # side branches fill whatever the sheets left of the voxel budget, so
    # total mass carries no label information
    placed_mass = sum(len(v) for v in builder.voxel_lists)
    side_budget = max(total - placed_mass, 45.0)
    n_sides = int(np.clip(_round_half_up(side_budget / 70.0), 1, 4))
    side_pairs = []  # (junction_idx, patch_idx)
    per_side = side_budget / n_sides
    for _ in range(n_sides):
        wy = int(rng.integers(4, 11))
        hz = max(2, min(_round_half_up(per_side / wy) - 1, 12))
        ya = int(rng.integers(0, max(1, ly1 - wy + 1)))
        za = int(rng.integers(1, max(2, lz1 - hz)))
        if label == 1:
            dx = -1  # grow away from the secondary sheet
        else:
            dx = int(rng.choice([-1, 1]))
        depth = int(rng.integers(2, 4))  # patch sits 2..3 voxels off the sheet
        junction = [
            (int(xr1[ya + y, za]) + dx, y0 + ya + y, z0 + za) for y in range(wy)
        ]
        patch = [
            (int(xr1[ya + y, za + z]) + dx * depth, y0 + ya + y, z0 + za + z)
            for y in range(wy)
            for z in range(hz)
        ]
        j_idx = builder.add(BranchKind.JUNCTION_LINE, junction)
        p_idx = builder.add(BranchKind.SIMPLE_SURFACE, patch)
        if j_idx is not None and p_idx is not None:
            side_pairs.append((j_idx, p_idx))

    # resolve the relative x coordinates with a random in-bounds shift
    xs = [v[0] for vox in builder.voxel_lists for v in vox]
    width = max(xs) - min(xs) + 1
    if width > X:
        raise GenerationError(
            f"dims {cfg.dims} too small: pattern spans {width} voxels along x"
        )
    shift = -min(xs) + int(rng.integers(0, X - width + 1))

    placed: list[list[tuple[int, int, int]]] = []
    for vox in builder.voxel_lists:
        moved = sorted((x + shift, y, z) for (x, y, z) in vox)
        if any(not (0 <= y < Y and 0 <= z < Z) for (_, y, z) in moved):
            raise GenerationError(f"dims {cfg.dims} too small along y/z")
        placed.append(moved)

    # adjacency: consecutive sheet segments, bottom line <-> its segments,
    # junction <-> host segment(s) and its patch
    neighbors: dict[int, set[int]] = {i: set() for i in range(len(placed))}

    def link(a: int | None, b: int | None):
        if a is not None and b is not None:
            neighbors[a].add(b)
            neighbors[b].add(a)

    for chain, bottom in ((seg1_idx, bottom1_idx), (seg2_idx, bottom2_idx)):
        for a, b in zip(chain, chain[1:]):
            link(a, b)
        for s in chain:
            link(s, bottom)
    for j_idx, p_idx in side_pairs:
        link(j_idx, p_idx)
        # host segment(s): any sheet-1 segment overlapping the junction rows
        j_ys = {y for (_, y, _) in placed[j_idx]}
        for s_idx, seg in zip(seg1_idx, sheet1_segments):
            if s_idx is not None and j_ys & {y0 + y for y in seg}:
                link(j_idx, s_idx)

    branches = tuple(
        Branch(
            id=i + 1,
            kind=builder.kinds[i],
            voxels=tuple(placed[i]),
            neighbors=tuple(sorted(n + 1 for n in neighbors[i])),
        )
        for i in range(len(placed))
    )
    return SkeletonCrop(
        subject_id=f"seed{seed}",
        branches=branches,
        dims=cfg.dims,
        label=label,
    )


def corpus_rows(cfg: SynthConfig) -> list[tuple[str, int, str, str]]:
    """Deterministic (subject_id, label, site, gender) assignment."""
    n = cfg.n_subjects
    n_pos = _round_half_up(cfg.prevalence * n)
    labels = np.array([1] * n_pos + [0] * (n - n_pos), dtype=np.int64)
    rng = np.random.default_rng(subject_seed(cfg.seed, -1))
    rng.shuffle(labels)
    out = []
    for i in range(n):
        out.append(
            (
                f"sub-{i:05d}",
                int(labels[i]),
                SITES[i % 2],
                GENDERS[(i // 2) % 2],
            )
        )
    return out


def generate_corpus(cfg: SynthConfig, out_dir: str | Path) -> Manifest:
    """Write n_subjects crop files plus manifest.csv. The manifest is written
    last, so an interrupted run leaves no manifest behind."""
    root = Path(out_dir)
    root.mkdir(parents=True, exist_ok=True)
    rows = []
    for i, (sid, label, site, gender) in enumerate(corpus_rows(cfg)):
        crop = generate_crop(subject_seed(cfg.seed, i), label, cfg)
        crop = SkeletonCrop(
            subject_id=sid,
            branches=crop.branches,
            dims=crop.dims,
            spacing_mm=crop.spacing_mm,
            label=label,
            site=site,
            gender=gender,
        )
        fname = f"{sid}.json"
        save_crop(crop, root / fname)
        rows.append(ManifestRow(subject_id=sid, path=fname, label=label, site=site, gender=gender))
    write_manifest(rows, root)
    return Manifest(rows=tuple(rows), root=root)
