"""Contrastive training: NT-Xent loss, Adam loop, embeddings, collapse check.

Loss convention: rows 2k and 2k+1 of the (2N, d) embedding matrix are the two
views of sample k. The loss sums the per-anchor terms over all 2N anchors;
the denominator runs over every other row, positives included.

Determinism: augmentation randomness is keyed by (train seed, epoch,
subject id), dropout by (train seed, epoch, batch index), and shuffling by
(train seed, epoch), so the loss curve and final weights depend only on the
corpus and the config, never on scheduling or worker counts.
"""

from __future__ import annotations

import csv
import hashlib
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .augment import AugmentSpec, Strategy, binarize, make_view_pair
from .autodiff import Tensor
from .errors import ContractError, FormatError, TrainingDivergedError
from .network import (
    ConvNetConfig,
    HeadKind,
    ModelParams,
    forward_backbone,
    forward_head,
    init_params,
)
from .skeleton import SkeletonCrop, rasterize


def _seed(tag: str, *parts) -> int:
    """Stable 64-bit stream seed from a tagged tuple."""
    text = "sulcal-ssl:" + tag + ":" + ":".join(str(p) for p in parts)
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "little")


@dataclass(frozen=True)
class TrainConfig:
    """Every knob of one contrastive run."""

    lr: float = 4e-4
    batch_size: int = 16
    tau: float = 0.5
    epochs: int = 100
    latent_dim: int = 10
    head: HeadKind = HeadKind.LINEAR
    augment: AugmentSpec = field(default_factory=lambda: AugmentSpec(Strategy.BRANCH_CLIP))
    dropout_p: float = 0.05
    seed: int = 0
    channels: tuple[int, ...] = (16, 32, 64, 128, 256, 256)
    strides: tuple[int, ...] = (1, 2, 1, 2, 1, 2)

    def __post_init__(self):
        if self.tau <= 0:
            raise ContractError(f"tau must be > 0, got {self.tau}")
        if self.batch_size < 2:
            raise ContractError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr <= 0:
            raise ContractError(f"lr must be > 0, got {self.lr}")
        if self.epochs < 1:
            raise ContractError(f"epochs must be >= 1, got {self.epochs}")

    def backbone_config(self, in_dims: tuple[int, int, int]) -> ConvNetConfig:
        return ConvNetConfig(
            in_dims=in_dims,
            channels=self.channels,
            strides=self.strides,
            latent_dim=self.latent_dim,
            dropout_p=self.dropout_p,
        )


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity in [-1, 1]; zero vectors give 0 with a warning."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ContractError(f"cosine_sim needs equal-length vectors, got {a.shape}, {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        warnings.warn("cosine_sim of a zero vector is defined as 0 (degenerate embedding)")
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def nt_xent_loss(z: Tensor, tau: float) -> Tensor:
    """Normalized-temperature cross entropy over all 2N anchors.

    For each row i with partner j: -log(exp(sim_ij/tau) / sum_{k != i}
    exp(sim_ik/tau)). Self-similarity is excluded by an additive -1e30 mask
    whose exp underflows to exactly 0, so the N=1 loss is exactly 0.0.
    """
    if tau <= 0:
        raise ContractError(f"tau must be > 0, got {tau}")
    if not isinstance(z, Tensor):
        z = Tensor(z)
    if z.ndim != 2 or z.shape[0] < 2 or z.shape[0] % 2 != 0:
        raise ContractError(f"embeddings must be (2N, d) with N >= 1, got {z.shape}")
    rows = z.shape[0]
    y = ad.row_normalize(z)
    logits = ad.matmul(y, ad.transpose(y)) * (1.0 / tau)
    self_mask = np.zeros((rows, rows))
    np.fill_diagonal(self_mask, -1e30)
    masked = logits + Tensor(self_mask)
    pairing = np.zeros((rows, rows))
    idx = np.arange(0, rows, 2)
    pairing[idx, idx + 1] = 1.0
    pairing[idx + 1, idx] = 1.0
    positives = ad.tsum(masked * Tensor(pairing), axis=1)
    return ad.tsum(ad.logsumexp(masked, axis=1) - positives)


class Adam:
    """Adam with the usual bias correction (beta1 0.9, beta2 0.999, eps 1e-8)."""

    def __init__(self, params: ModelParams, lr: float):
        self.lr = lr
        self.beta1, self.beta2, self.eps = 0.9, 0.999, 1e-8
        self.t = 0
        self.named = params.parameters()  # sorted: fixed update order
        self.m = {name: np.zeros_like(t.data) for name, t in self.named}
        self.v = {name: np.zeros_like(t.data) for name, t in self.named}

    def step(self) -> None:
        self.t += 1
        b1c = 1.0 - self.beta1 ** self.t
        b2c = 1.0 - self.beta2 ** self.t
        for name, p in self.named:
            if p.grad is None:
                raise ContractError(f"parameter {name} has no gradient; backward not run?")
            g = p.grad
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / b1c) / (np.sqrt(v / b2c) + self.eps)


def _views_tensor(views: list[np.ndarray]) -> Tensor:
    batch = np.stack(views).astype(np.float64)[:, None]  # (2N, 1, X, Y, Z)
    return Tensor(batch)


def train(
    corpus: Sequence[SkeletonCrop],
    cfg: TrainConfig,
    on_epoch: Callable[[int, float], None] | None = None,
) -> tuple[ModelParams, list[float]]:
    """Run the contrastive loop; returns final weights and per-epoch mean loss.

    Each epoch shuffles subjects, walks batches of ``batch_size`` crops
    (trailing partial batch dropped), builds two views per crop, and applies
    one Adam update per batch on the NT-Xent loss of the (2N, d) projections.
    """
    if len(corpus) < cfg.batch_size:
        raise ContractError(
            f"corpus has {len(corpus)} crops; need at least batch_size = {cfg.batch_size}"
        )
    dims = corpus[0].dims
    for crop in corpus:
        if crop.dims != dims:
            raise ContractError(f"crop {crop.subject_id} dims {crop.dims} != corpus dims {dims}")
    params = init_params(cfg.backbone_config(dims), cfg.head, seed=cfg.seed)
    opt = Adam(params, lr=cfg.lr)
    curve: list[float] = []
    n_batches = len(corpus) // cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        order = np.random.default_rng(_seed("shuffle", cfg.seed, epoch)).permutation(len(corpus))
        epoch_losses = []
        for b in range(n_batches):
            members = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            views: list[np.ndarray] = []
            for i in members:
                crop = corpus[i]
                rng = np.random.default_rng(_seed("augment", cfg.seed, epoch, crop.subject_id))
                pair = make_view_pair(crop, cfg.augment, rng)
                views.append(pair.view1.values)
                views.append(pair.view2.values)
            drop_rng = np.random.default_rng(_seed("dropout", cfg.seed, epoch, b))
            latent = forward_backbone(params, _views_tensor(views), training=True, rng=drop_rng)
            z = forward_head(params, latent)
            loss = nt_xent_loss(z, cfg.tau)
            value = loss.item()
            if not np.isfinite(value):
                raise TrainingDivergedError(
                    f"non-finite loss {value!r} at epoch {epoch}, batch {b}"
                )
            loss.backward()
            opt.step()
            epoch_losses.append(value)
        mean_loss = float(np.mean(epoch_losses))
        curve.append(mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
    return params, curve


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EmbeddingSet:
    """subject_id -> latent vector, tagged with the producing checkpoint."""

    entries: dict[str, np.ndarray]
    source: str = ""

    def __post_init__(self):
        lengths = {v.shape for v in self.entries.values()}
        if len(lengths) > 1:
            raise ContractError(f"embedding vectors disagree on length: {lengths}")
        for sid, v in self.entries.items():
            if v.ndim != 1 or not np.all(np.isfinite(v)):
                raise ContractError(f"embedding for {sid} must be a finite 1D vector")

    @property
    def dim(self) -> int:
        first = next(iter(self.entries.values()), None)
        return 0 if first is None else first.shape[0]

    def matrix(self, subject_ids: Sequence[str] | None = None) -> np.ndarray:
        ids = list(self.entries) if subject_ids is None else list(subject_ids)
        return np.stack([self.entries[s] for s in ids])


def embed(
    params: ModelParams,
    corpus: Sequence[SkeletonCrop],
    source: str = "",
    apply_head: bool = False,
    chunk: int = 32,
) -> EmbeddingSet:
    """Eval-mode latents, one per subject: binarize, forward, no dropout.

    The projection head is skipped by default (probing happens on the
    backbone latent); ``apply_head=True`` switches to the head output.
    """
    dims = params.cfg.in_dims
    for crop in corpus:
        if crop.dims != dims:
            raise ContractError(
                f"crop {crop.subject_id} dims {crop.dims} != checkpoint dims {dims}"
            )
    entries: dict[str, np.ndarray] = {}
    with ad.no_grad():
        for start in range(0, len(corpus), chunk):
            part = corpus[start : start + chunk]
            batch = np.stack([binarize(rasterize(c)).values for c in part]).astype(np.float64)
            out = forward_backbone(params, Tensor(batch[:, None]))
            if apply_head:
                out = forward_head(params, out)
            for crop, vec in zip(part, out.data):
                entries[crop.subject_id] = vec.copy()
    return EmbeddingSet(entries=entries, source=source)


def collapse_metric(embeddings: EmbeddingSet) -> float:
    """Mean per-dimension standard deviation; near zero means collapse."""
    if len(embeddings.entries) < 2:
        raise ContractError("collapse_metric needs at least 2 embeddings")
    return float(np.mean(np.std(embeddings.matrix(), axis=0)))


# ---------------------------------------------------------------------------
# CSV artifacts
# ---------------------------------------------------------------------------


def write_loss_curve(curve: Sequence[float], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "loss"])
        for i, value in enumerate(curve, start=1):
            w.writerow([i, f"{value:.17g}"])


def read_loss_curve(path: str | Path) -> list[float]:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["epoch", "loss"]:
            raise FormatError(f"{path}: expected header epoch,loss")
        try:
            return [float(row[1]) for row in reader]
        except (IndexError, ValueError) as e:
            raise FormatError(f"{path}: bad loss row: {e}") from e


def write_embeddings(embeddings: EmbeddingSet, path: str | Path) -> None:
    d = embeddings.dim
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["subject_id"] + [f"z{i}" for i in range(d)])
        for sid, vec in embeddings.entries.items():
            w.writerow([sid] + [f"{x:.17g}" for x in vec])


def read_embeddings(path: str | Path, source: str = "") -> EmbeddingSet:
    with open(path, encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header or header[0] != "subject_id" or len(header) < 2:
            raise FormatError(f"{path}: expected header subject_id,z0,...")
        d = len(header) - 1
        if header[1:] != [f"z{i}" for i in range(d)]:
            raise FormatError(f"{path}: expected header subject_id,z0,...,z{d - 1}")
        entries: dict[str, np.ndarray] = {}
        for row in reader:
            if len(row) != d + 1:
                raise FormatError(f"{path}: row for {row[:1]} has {len(row) - 1} values, want {d}")
            try:
                entries[row[0]] = np.array([float(x) for x in row[1:]])
            except ValueError as e:
                raise FormatError(f"{path}: bad value in row {row[0]}: {e}") from e
    return EmbeddingSet(entries=entries, source=source)
