"""Evaluation protocol: stratified split, linear probe, AUC, PCA baseline.

The probe is an L2-regularized hinge-loss linear classifier fit by
deterministic full-batch subgradient descent on standardized features; AUC
needs only a score ordering, so no probability calibration is applied.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .augment import binarize
from .errors import ContractError, FormatError
from .network import ModelParams
from .skeleton import Manifest, SkeletonCrop, rasterize
from .training import EmbeddingSet, _seed, embed

PROBE_ITERATIONS = 2000


@dataclass(frozen=True)
class Split:
    """Two disjoint subject-id parts covering the manifest."""

    part1: tuple[str, ...]
    part2: tuple[str, ...]
    strata: dict[str, tuple[str, str, int | None]] = field(default_factory=dict)

    def __post_init__(self):
        p1, p2 = set(self.part1), set(self.part2)
        if len(p1) != len(self.part1) or len(p2) != len(self.part2):
            raise ContractError("split parts contain duplicate subject ids")
        if p1 & p2:
            raise ContractError(f"split parts overlap: {sorted(p1 & p2)[:3]}...")
        if self.strata and p1 | p2 != set(self.strata):
            raise ContractError("split parts must cover exactly the known subjects")


def stratified_split(manifest: Manifest, frac: float, seed: int) -> Split:
    """Split subject ids so every (site, gender, label) cell lands ``frac``
    of its members in part1, up to the unavoidable +-1 rounding.

    Rounding remainders carry across cells (processed in sorted key order),
    so the global part1 size is round(frac * n) up to the final half-carry.
    Deterministic per seed.
    """
    if len(manifest) == 0:
        raise ContractError("cannot split an empty manifest")
    if not 0.0 < frac < 1.0:
        raise ContractError(f"frac must be in (0, 1), got {frac}")
    cells: dict[tuple, list[str]] = {}
    for row in manifest.rows:
        cells.setdefault((row.site, row.gender, row.label), []).append(row.subject_id)
    rng = np.random.default_rng(_seed("split", seed))
    part1: list[str] = []
    part2: list[str] = []
    carry = 0.0
    for key in sorted(cells, key=lambda k: (str(k[0]), str(k[1]), str(k[2]))):
        ids = sorted(cells[key])
        order = rng.permutation(len(ids))
        ideal = frac * len(ids) + carry
        take = int(np.floor(ideal + 0.5))  # round half up
        carry = ideal - take
        part1.extend(ids[i] for i in order[:take])
        part2.extend(ids[i] for i in order[take:])
    return Split(
        part1=tuple(sorted(part1)),
        part2=tuple(sorted(part2)),
        strata=manifest.strata(),
    )


def write_split(split: Split, path: str | Path) -> None:
    rows = [(sid, 1) for sid in split.part1] + [(sid, 2) for sid in split.part2]
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subject_id", "part"])
        for sid, part in sorted(rows):
            w.writerow([sid, part])


def read_split(path: str | Path) -> Split:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        if next(reader, None) != ["subject_id", "part"]:
            raise FormatError(f"{path}: expected header subject_id,part")
        part1, part2 = [], []
        for row in reader:
            if len(row) != 2 or row[1] not in ("1", "2"):
                raise FormatError(f"{path}: bad split row {row!r}")
            (part1 if row[1] == "1" else part2).append(row[0])
    return Split(part1=tuple(part1), part2=tuple(part2))


# ---------------------------------------------------------------------------
# Linear probe
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ProbeModel:
    """Linear scorer on standardized features: score = w . (z - mu)/sd + b."""

    w: np.ndarray
    b: float
    C: float
    mu: np.ndarray
    sd: np.ndarray

    def __post_init__(self):
        if not (
            np.all(np.isfinite(self.w))
            and np.isfinite(self.b)
            and np.all(np.isfinite(self.mu))
            and np.all(np.isfinite(self.sd))
        ):
            raise ContractError("probe parameters must be finite")


def _standardizer(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mu = X.mean(axis=0)
    sd = X.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)  # constant dims carry no signal
    return mu, sd


def fit_linear_probe(
    embeddings: EmbeddingSet, labels: Mapping[str, int], C: float = 1.0
) -> ProbeModel:
    """Hinge-loss linear classifier, deterministic subgradient descent.

    Objective (C/2)||w||^2 + mean hinge, minimized with step 1/(C*t) over a
    fixed budget of full-batch iterations from w = 0. C acts as
    regularization strength: larger C shrinks w harder.
    """
    if C <= 0:
        raise ContractError(f"C must be > 0, got {C}")
    ids = list(embeddings.entries)
    missing = [s for s in ids if s not in labels or labels[s] not in (0, 1)]
    if missing:
        raise ContractError(f"missing/invalid labels for {missing[:3]}...")
    X = embeddings.matrix(ids)
    y = np.array([1.0 if labels[s] == 1 else -1.0 for s in ids])
    n_pos = int((y > 0).sum())
    n_neg = int((y < 0).sum())
    if n_pos < 2 or n_neg < 2:
        raise ContractError(
            f"probe needs at least 2 examples per class, got {n_pos} positive / {n_neg} negative"
        )
    mu, sd = _standardizer(X)
    Xs = (X - mu) / sd
    n, d = Xs.shape
    w = np.zeros(d)
    b = 0.0
    for t in range(1, PROBE_ITERATIONS + 1):
        margins = y * (Xs @ w + b)
        active = margins < 1.0
        gw = C * w - (y[active, None] * Xs[active]).sum(axis=0) / n
        gb = -y[active].sum() / n
        step = 1.0 / (C * t)
        w = w - step * gw
        b = b - step * gb
    return ProbeModel(w=w, b=float(b), C=C, mu=mu, sd=sd)


def predict_scores(model: ProbeModel, embeddings: EmbeddingSet) -> dict[str, float]:
    """Monotone decision scores, one per subject."""
    if embeddings.dim != model.w.shape[0]:
        raise ContractError(
            f"embedding dim {embeddings.dim} != probe dim {model.w.shape[0]}"
        )
    out: dict[str, float] = {}
    for sid, z in embeddings.entries.items():
        out[sid] = float(((z - model.mu) / model.sd) @ model.w + model.b)
    return out


def auc(scores, labels) -> float:
    """Mann-Whitney AUC: P(score+ > score-) + 0.5 P(score+ = score-).

    Computed with average ranks; all intermediate quantities are exact
    half-integers in float64, so the result is bitwise equal to the
    pairwise-counting definition.
    """
    s = np.asarray(scores, dtype=np.float64)
    lab = np.asarray(labels)
    if s.shape != lab.shape or s.ndim != 1:
        raise ContractError(f"scores/labels must be equal-length vectors, got {s.shape}, {lab.shape}")
    pos = lab == 1
    neg = lab == 0
    n_pos = int(pos.sum())
    n_neg = int(neg.sum())
    if n_pos == 0 or n_neg == 0:
        raise ContractError(f"auc needs both classes, got {n_pos} positive / {n_neg} negative")
    if n_pos + n_neg != s.size:
        raise ContractError("labels must be 0 or 1")
    _, inverse, counts = np.unique(s, return_inverse=True, return_counts=True)
    starts = np.concatenate(([0], np.cumsum(counts)[:-1]))
    avg_rank = starts + (counts + 1) / 2.0  # 1-based rank, ties averaged
    ranks = avg_rank[inverse]
    u_stat = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_stat / (n_pos * n_neg))


# ---------------------------------------------------------------------------
# PCA baseline
# ---------------------------------------------------------------------------


def pca_baseline(corpus: Sequence[SkeletonCrop], dim: int) -> EmbeddingSet:
    """Project flattened binarized crops onto the top principal components.

    Uses the Gram-matrix (dual) eigendecomposition: n x n instead of the
    voxel-count-squared covariance. Component signs follow one convention:
    the largest-magnitude voxel loading is positive. Rank-deficient
    directions (eigenvalue ~ 0) yield zero columns.
    """
    n = len(corpus)
    if n == 0:
        raise ContractError("pca_baseline needs a non-empty corpus")
    if not 1 <= dim <= n - 1:
        raise ContractError(f"dim must be in [1, n-1] = [1, {n - 1}], got {dim}")
    X = np.stack(
        [binarize(rasterize(c)).values.reshape(-1).astype(np.float64) for c in corpus]
    )
    Xc = X - X.mean(axis=0)
    gram = Xc @ Xc.T
    eigvals, eigvecs = np.linalg.eigh(gram)  # ascending
    order = np.argsort(eigvals)[::-1][:dim]
    Y = np.zeros((n, dim))
    tiny = max(float(eigvals.max(initial=0.0)), 1.0) * 1e-12
    for j, k in enumerate(order):
        lam = float(eigvals[k])
        if lam <= tiny:
            continue  # direction not supported by the data
        u = eigvecs[:, k]
        loading = Xc.T @ u / np.sqrt(lam)
        sign = 1.0 if loading[int(np.argmax(np.abs(loading)))] >= 0 else -1.0
        Y[:, j] = sign * np.sqrt(lam) * u
    return EmbeddingSet(
        entries={c.subject_id: Y[i].copy() for i, c in enumerate(corpus)},
        source=f"pca-{dim}",
    )


# ---------------------------------------------------------------------------
# Multi-checkpoint report
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AucReport:
    aucs: tuple[float, ...]
    mean: float
    sd: float
    n: int

    def __post_init__(self):
        if self.n != len(self.aucs):
            raise ContractError("n must equal the number of AUCs")
        if any(not 0.0 <= a <= 1.0 for a in self.aucs):
            raise ContractError("AUC values must lie in [0, 1]")


def make_report(aucs: Sequence[float]) -> AucReport:
    arr = np.asarray(aucs, dtype=np.float64)
    return AucReport(
        aucs=tuple(float(a) for a in arr),
        mean=float(arr.mean()),
        sd=float(arr.std()),  # population sd: one checkpoint reports 0
        n=len(arr),
    )


def evaluate_report(
    checkpoints: Sequence[ModelParams],
    corpus: Sequence[SkeletonCrop],
    split: Split,
    C: float = 1.0,
    apply_head: bool = False,
) -> AucReport:
    """Fit a probe on part1 and score part2, once per checkpoint."""
    if len(checkpoints) == 0:
        raise ContractError("evaluate_report needs at least one checkpoint")
    by_id = {c.subject_id: c for c in corpus}
    for sid in (*split.part1, *split.part2):
        if sid not in by_id:
            raise ContractError(f"split subject {sid} missing from corpus")
        if by_id[sid].label not in (0, 1):
            raise ContractError(f"subject {sid} has no label; cannot evaluate")
    labels = {sid: by_id[sid].label for sid in (*split.part1, *split.part2)}
    aucs = []
    for params in checkpoints:
        es = embed(params, corpus, apply_head=apply_head)
        fit_set = EmbeddingSet(
            entries={s: es.entries[s] for s in split.part1}, source=es.source
        )
        model = fit_linear_probe(fit_set, labels, C=C)
        test_set = EmbeddingSet(
            entries={s: es.entries[s] for s in split.part2}, source=es.source
        )
        scores = predict_scores(model, test_set)
        aucs.append(
            auc(
                [scores[s] for s in split.part2],
                [labels[s] for s in split.part2],
            )
        )
    return make_report(aucs)


def write_report_json(report: AucReport, path: str | Path) -> None:
    payload = {
        "aucs": list(report.aucs),
        "mean": report.mean,
        "sd": report.sd,
        "n": report.n,
    }
    with open(path, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ": "))
        f.write("\n")


def read_report_json(path: str | Path) -> AucReport:
    try:
        with open(path, encoding="utf-8") as f:
            obj = json.load(f)
        return AucReport(
            aucs=tuple(float(a) for a in obj["aucs"]),
            mean=float(obj["mean"]),
            sd=float(obj["sd"]),
            n=int(obj["n"]),
        )
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise FormatError(f"{path}: bad report: {e}") from e


def write_auc_csv(report: AucReport, path: str | Path, seeds: Sequence[int] | None = None) -> None:
    ids = list(seeds) if seeds is not None else list(range(report.n))
    if len(ids) != report.n:
        raise ContractError(f"got {len(ids)} seeds for {report.n} AUCs")
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["seed", "auc"])
        for seed, value in zip(ids, report.aucs):
            w.writerow([seed, f"{value:.17g}"])
