"""Folding-graph skeleton crops: data model, rasterization and on-disk format.

A crop is a fragment of a cortical folding graph living on a small voxel
grid (default 17x40x38 at 2 mm). Branches are typed (simple surface,
junction line, bottom line), carry explicit voxel lists, and are linked by
a symmetric adjacency relation. All types are immutable after construction
and safe to share across workers.

One crop is stored per file as UTF-8 JSON; a corpus is a directory of crop
files plus a ``manifest.csv`` with columns
``subject_id,path,label,site,gender``.
"""

from __future__ import annotations

import csv
import enum
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError, StructuralError

DEFAULT_DIMS: tuple[int, int, int] = (17, 40, 38)
DEFAULT_SPACING_MM = 2.0

Voxel = tuple[int, int, int]


class BranchKind(enum.Enum):
    """The three branch types of a folding graph."""

    SIMPLE_SURFACE = "simple_surface"
    JUNCTION_LINE = "junction_line"
    BOTTOM_LINE = "bottom_line"


@dataclass(frozen=True)
class Branch:
    """One branch of the folding graph: a typed, duplicate-free voxel set.

    ``neighbors`` lists ids of touching branches; symmetry is enforced by
    the containing :class:`SkeletonCrop`, not here.
    """

    id: int
    kind: BranchKind
    voxels: tuple[Voxel, ...]
    neighbors: tuple[int, ...] = ()

    def __post_init__(self):
        if not isinstance(self.id, int) or self.id <= 0:
            raise StructuralError(f"branch id must be a positive integer, got {self.id!r}")
        if not isinstance(self.kind, BranchKind):
            raise StructuralError(f"branch {self.id}: kind must be a BranchKind")
        if len(self.voxels) == 0:
            raise StructuralError(f"branch {self.id}: voxel list is empty")
        if len(set(self.voxels)) != len(self.voxels):
            raise StructuralError(f"branch {self.id}: duplicate voxels")


@dataclass(frozen=True)
class SkeletonCrop:
    """A folding-graph fragment on a fixed grid, with optional label/strata.

    Invariants checked at construction: every voxel lies within ``dims``,
    no voxel belongs to two branches, branch ids are unique, and the
    neighbor relation is symmetric.
    """

    subject_id: str
    branches: tuple[Branch, ...]
    dims: tuple[int, int, int] = DEFAULT_DIMS
    spacing_mm: float = DEFAULT_SPACING_MM
    label: int | None = None
    site: str | None = None
    gender: str | None = None

    def __post_init__(self):
        if len(self.dims) != 3 or any(int(d) <= 0 for d in self.dims):
            raise StructuralError(f"dims must be three positive integers, got {self.dims!r}")
        if self.label not in (None, 0, 1):
            raise StructuralError(f"label must be None, 0 or 1, got {self.label!r}")
        ids = [b.id for b in self.branches]
        if len(set(ids)) != len(ids):
            raise StructuralError(f"crop {self.subject_id}: duplicate branch ids")
        seen: dict[Voxel, int] = {}
        for b in self.branches:
            for v in b.voxels:
                if not all(0 <= v[a] < self.dims[a] for a in range(3)):
                    raise StructuralError(
                        f"crop {self.subject_id}: voxel {v} of branch {b.id} "
                        f"outside dims {self.dims}"
                    )
                if v in seen:
                    raise StructuralError(
                        f"crop {self.subject_id}: voxel {v} belongs to branches "
                        f"{seen[v]} and {b.id}"
                    )
                seen[v] = b.id
        known = set(ids)
        adj = {b.id: set(b.neighbors) for b in self.branches}
        for bid, nbrs in adj.items():
            for n in nbrs:
                if n not in known:
                    raise StructuralError(
                        f"crop {self.subject_id}: branch {bid} lists unknown neighbor {n}"
                    )
                if bid not in adj[n]:
                    raise StructuralError(
                        f"crop {self.subject_id}: neighbor relation not symmetric "
                        f"({bid} -> {n})"
                    )

    def voxel_count(self) -> int:
        return sum(len(b.voxels) for b in self.branches)


@dataclass(frozen=True, eq=False)
class DenseVolume:
    """Dense integer grid: 0 is background, positive values are branch ids
    (or 1 after binarization). The array is frozen read-only."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values)
        if arr.ndim != 3 or not np.issubdtype(arr.dtype, np.integer):
            raise StructuralError("DenseVolume needs a 3D integer array")
        if arr.min(initial=0) < 0:
            raise StructuralError("DenseVolume values must be non-negative")
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @property
    def dims(self) -> tuple[int, int, int]:
        return tuple(self.values.shape)  # type: ignore[return-value]

    def __eq__(self, other) -> bool:
        return isinstance(other, DenseVolume) and np.array_equal(self.values, other.values)


@dataclass(frozen=True, eq=False)
class PointCloud:
    """All non-zero coordinates of a volume, lexicographically sorted (x,y,z)."""

    points: np.ndarray  # (N, 3) int

    def __post_init__(self):
        pts = np.ascontiguousarray(np.asarray(self.points, dtype=np.int64).reshape(-1, 3))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return self.points.shape[0]

    def __eq__(self, other) -> bool:
        return isinstance(other, PointCloud) and np.array_equal(self.points, other.points)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def rasterize(crop: SkeletonCrop) -> DenseVolume:
    """Scatter branch voxels onto the grid; each voxel takes its branch id."""
    vol = np.zeros(crop.dims, dtype=np.int32)
    total = 0
    for b in crop.branches:
        idx = np.asarray(b.voxels, dtype=np.int64)
        vol[idx[:, 0], idx[:, 1], idx[:, 2]] = b.id
        total += len(b.voxels)
    if int(np.count_nonzero(vol)) != total:
        # unreachable for crops built through SkeletonCrop, kept as a guard
        raise StructuralError(f"crop {crop.subject_id}: overlapping branch voxels")
    return DenseVolume(vol)


def bottom_mask(crop: SkeletonCrop) -> DenseVolume:
    """Binary mask that is 1 exactly at voxels of BottomLine branches."""
    vol = np.zeros(crop.dims, dtype=np.int32)
    for b in crop.branches:
        if b.kind is BranchKind.BOTTOM_LINE:
            idx = np.asarray(b.voxels, dtype=np.int64)
            vol[idx[:, 0], idx[:, 1], idx[:, 2]] = 1
    return DenseVolume(vol)


def to_point_cloud(volume: DenseVolume) -> PointCloud:
    """Non-zero coordinates in lexicographic (x, y, z) order."""
    pts = np.argwhere(volume.values != 0)  # argwhere is already C-order = lexicographic
    return PointCloud(pts)


def scatter(cloud: PointCloud, dims: tuple[int, int, int]) -> DenseVolume:
    """Inverse of :func:`to_point_cloud` up to binarization."""
    vol = np.zeros(dims, dtype=np.int32)
    if len(cloud):
        p = cloud.points
        vol[p[:, 0], p[:, 1], p[:, 2]] = 1
    return DenseVolume(vol)


def sparsity(volume: DenseVolume) -> float:
    """Fraction of non-zero voxels, in [0, 1]."""
    return float(np.count_nonzero(volume.values)) / float(volume.values.size)


# ---------------------------------------------------------------------------
# On-disk format
# ---------------------------------------------------------------------------

def crop_to_dict(crop: SkeletonCrop) -> dict:
    return {
        "subject_id": crop.subject_id,
        "dims": list(crop.dims),
        "spacing_mm": crop.spacing_mm,
        "label": crop.label,
        "site": crop.site,
        "gender": crop.gender,
        "branches": [
            {
                "id": b.id,
                "kind": b.kind.value,
                "voxels": [list(v) for v in b.voxels],
                "neighbors": list(b.neighbors),
            }
            for b in crop.branches
        ],
    }


def crop_from_dict(obj: dict) -> SkeletonCrop:
    try:
        branches = tuple(
            Branch(
                id=int(b["id"]),
                kind=BranchKind(b["kind"]),
                voxels=tuple(tuple(int(c) for c in v) for v in b["voxels"]),
                neighbors=tuple(int(n) for n in b["neighbors"]),
            )
            for b in obj["branches"]
        )
        return SkeletonCrop(
            subject_id=str(obj["subject_id"]),
            dims=tuple(int(d) for d in obj["dims"]),  # type: ignore[arg-type]
            spacing_mm=float(obj["spacing_mm"]),
            label=obj["label"],
            site=obj["site"],
            gender=obj["gender"],
            branches=branches,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"malformed crop object: {e}") from e


def save_crop(crop: SkeletonCrop, path: str | Path) -> None:
    """Write one crop as compact UTF-8 JSON (byte-deterministic)."""
    text = json.dumps(crop_to_dict(crop), separators=(",", ":"), ensure_ascii=False)
    Path(path).write_text(text + "\n", encoding="utf-8")


def load_crop(path: str | Path) -> SkeletonCrop:
    """Read a crop file; malformed JSON raises FormatError with line/offset,
    invariant violations raise StructuralError. Never returns a partial crop."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as e:
        raise FormatError(
            f"{path}: invalid JSON at line {e.lineno}, column {e.colno} (offset {e.pos})"
        ) from e
    if not isinstance(obj, dict):
        raise FormatError(f"{path}: expected a JSON object")
    return crop_from_dict(obj)


# ---------------------------------------------------------------------------
# Corpus manifest
# ---------------------------------------------------------------------------

MANIFEST_NAME = "manifest.csv"
MANIFEST_FIELDS = ("subject_id", "path", "label", "site", "gender")


@dataclass(frozen=True)
class ManifestRow:
    subject_id: str
    path: str
    label: int | None
    site: str
    gender: str


@dataclass(frozen=True)
class Manifest:
    rows: tuple[ManifestRow, ...]
    root: Path = field(default_factory=Path)

    def __len__(self) -> int:
        return len(self.rows)

    def labels(self) -> dict[str, int | None]:
        return {r.subject_id: r.label for r in self.rows}

    def strata(self) -> dict[str, tuple[str, str, int | None]]:
        return {r.subject_id: (r.site, r.gender, r.label) for r in self.rows}


def write_manifest(rows: list[ManifestRow], corpus_dir: str | Path) -> Path:
    path = Path(corpus_dir) / MANIFEST_NAME
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(MANIFEST_FIELDS)
        for r in rows:
            w.writerow([r.subject_id, r.path, "" if r.label is None else r.label, r.site, r.gender])
    return path


def read_manifest(corpus_dir: str | Path) -> Manifest:
    root = Path(corpus_dir)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise FormatError(f"{path}: manifest not found")
    rows = []
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None or tuple(reader.fieldnames) != MANIFEST_FIELDS:
            raise FormatError(f"{path}: expected header {','.join(MANIFEST_FIELDS)}")
        for i, rec in enumerate(reader, start=2):
            try:
                rows.append(
                    ManifestRow(
                        subject_id=rec["subject_id"],
                        path=rec["path"],
                        label=None if rec["label"] == "" else int(rec["label"]),
                        site=rec["site"],
                        gender=rec["gender"],
                    )
                )
            except (TypeError, ValueError) as e:
                raise FormatError(f"{path}: bad row at line {i}: {e}") from e
    return Manifest(rows=tuple(rows), root=root)


def load_corpus(corpus_dir: str | Path) -> tuple[Manifest, list[SkeletonCrop]]:
    """Load every crop referenced by the manifest, in manifest order."""
    manifest = read_manifest(corpus_dir)
    crops = [load_crop(manifest.root / r.path) for r in manifest.rows]
    return manifest, crops
