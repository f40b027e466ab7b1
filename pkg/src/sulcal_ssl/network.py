"""Six-layer 3D convolutional backbone, projection heads, checkpoint format.

Layer plan: six conv layers (kernel 3, zero padding 1, per-layer stride),
each followed by ReLU and, in training mode, dropout; then a flatten and one
affine map to the latent dimension. Projection heads operate on the latent:
the linear head is one affine map, the nonlinear head is affine, ReLU,
affine, both width d.
"""

from __future__ import annotations

import enum
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, FormatError
from .skeleton import DEFAULT_DIMS

N_LAYERS = 6

DEFAULT_CHANNELS = (16, 32, 64, 128, 256, 256)
DEFAULT_STRIDES = (1, 2, 1, 2, 1, 2)


class HeadKind(enum.Enum):
    LINEAR = "linear"
    NONLINEAR = "nonlinear"


@dataclass(frozen=True)
class ConvNetConfig:
    """Backbone hyperparameters. Exactly six conv layers, kernel fixed at 3."""

    in_dims: tuple[int, int, int] = DEFAULT_DIMS
    channels: tuple[int, ...] = DEFAULT_CHANNELS
    kernel: int = 3
    strides: tuple[int, ...] = DEFAULT_STRIDES
    latent_dim: int = 10
    dropout_p: float = 0.05

    def __post_init__(self):
        object.__setattr__(self, "in_dims", tuple(int(d) for d in self.in_dims))
        object.__setattr__(self, "channels", tuple(int(c) for c in self.channels))
        object.__setattr__(self, "strides", tuple(int(s) for s in self.strides))
        if len(self.in_dims) != 3 or any(d < 1 for d in self.in_dims):
            raise ContractError(f"in_dims must be 3 positive ints, got {self.in_dims}")
        if len(self.channels) != N_LAYERS:
            raise ContractError(
                f"backbone has exactly {N_LAYERS} conv layers; got {len(self.channels)} channel entries"
            )
        if len(self.strides) != N_LAYERS:
            raise ContractError(
                f"backbone has exactly {N_LAYERS} conv layers; got {len(self.strides)} stride entries"
            )
        if any(c < 1 for c in self.channels) or any(s < 1 for s in self.strides):
            raise ContractError("channels and strides must be positive")
        if self.kernel != 3:
            raise ContractError(f"kernel is fixed at 3, got {self.kernel}")
        if self.latent_dim < 1:
            raise ContractError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if not 0.0 <= self.dropout_p < 1.0:
            raise ContractError(f"dropout_p must be in [0, 1), got {self.dropout_p}")

    def spatial_dims(self) -> list[tuple[int, int, int]]:
        """Spatial extent after each conv layer (pad 1, kernel 3, stride s)."""
        dims = self.in_dims
        out = []
        for s in self.strides:
            # (d + 2*pad - k)//s + 1 with pad 1, k 3; never drops below 1
            dims = tuple((d - 1) // s + 1 for d in dims)
            out.append(dims)
        return out

    def flat_dim(self) -> int:
        last = self.spatial_dims()[-1]
        return self.channels[-1] * last[0] * last[1] * last[2]

    def to_dict(self) -> dict:
        return {
            "in_dims": list(self.in_dims),
            "channels": list(self.channels),
            "kernel": self.kernel,
            "strides": list(self.strides),
            "latent_dim": self.latent_dim,
            "dropout_p": self.dropout_p,
        }

    @staticmethod
    def from_dict(obj: dict) -> "ConvNetConfig":
        try:
            return ConvNetConfig(
                in_dims=tuple(obj["in_dims"]),
                channels=tuple(obj["channels"]),
                kernel=int(obj["kernel"]),
                strides=tuple(obj["strides"]),
                latent_dim=int(obj["latent_dim"]),
                dropout_p=float(obj["dropout_p"]),
            )
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad backbone config: {e}") from e


@dataclass
class ModelParams:
    """Named parameter tensors plus the config they were built for."""

    cfg: ConvNetConfig
    head_kind: HeadKind
    tensors: dict[str, Tensor] = field(default_factory=dict)

    def __post_init__(self):
        for name, t in self.tensors.items():
            if not np.all(np.isfinite(t.data)):
                raise ContractError(f"parameter {name} contains non-finite values")

    def parameters(self) -> list[tuple[str, Tensor]]:
        return sorted(self.tensors.items())


def _glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> Tensor:
    a = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-a, a, size=shape), requires_grad=True)


def init_params(cfg: ConvNetConfig, head_kind: HeadKind, seed: int) -> ModelParams:
    """Fan-balanced uniform weights, zero biases; one fixed draw order."""
    rng = np.random.default_rng(seed)
    d = cfg.latent_dim
    t: dict[str, Tensor] = {}
    cin = 1
    k3 = cfg.kernel ** 3
    for i, cout in enumerate(cfg.channels, start=1):
        t[f"conv{i}.weight"] = _glorot(rng, (cout, cin, 3, 3, 3), cin * k3, cout * k3)
        t[f"conv{i}.bias"] = Tensor(np.zeros(cout), requires_grad=True)
        cin = cout
    flat = cfg.flat_dim()
    t["fc.weight"] = _glorot(rng, (flat, d), flat, d)
    t["fc.bias"] = Tensor(np.zeros(d), requires_grad=True)
    t["head.w1"] = _glorot(rng, (d, d), d, d)
    t["head.b1"] = Tensor(np.zeros(d), requires_grad=True)
    if head_kind is HeadKind.NONLINEAR:
        t["head.w2"] = _glorot(rng, (d, d), d, d)
        t["head.b2"] = Tensor(np.zeros(d), requires_grad=True)
    return ModelParams(cfg=cfg, head_kind=head_kind, tensors=t)


def forward_backbone(
    params: ModelParams,
    batch: Tensor,
    training: bool = False,
    rng: np.random.Generator | None = None,
) -> Tensor:
    """Conv stack -> flatten -> affine; returns the (B, d) latent."""
    cfg = params.cfg
    expected = (1, *cfg.in_dims)
    if batch.ndim != 5 or batch.shape[1:] != expected:
        raise ContractError(
            f"batch must be (B, 1, {cfg.in_dims[0]}, {cfg.in_dims[1]}, {cfg.in_dims[2]}), got {batch.shape}"
        )
    if training and cfg.dropout_p > 0 and rng is None:
        raise ContractError("training-mode dropout needs an rng")
    t = params.tensors
    h = batch
    for i, stride in enumerate(cfg.strides, start=1):
        h = ad.conv3d(h, t[f"conv{i}.weight"], t[f"conv{i}.bias"], stride=stride)
        h = ad.relu(h)
        if training:
            h = ad.dropout(h, cfg.dropout_p, rng, training=True)
    h = ad.reshape(h, (batch.shape[0], cfg.flat_dim()))
    return ad.affine(h, t["fc.weight"], t["fc.bias"])


def forward_head(params: ModelParams, latent: Tensor) -> Tensor:
    """Projection head on the latent: affine, or affine-ReLU-affine."""
    t = params.tensors
    z = ad.affine(latent, t["head.w1"], t["head.b1"])
    if params.head_kind is HeadKind.NONLINEAR:
        z = ad.affine(ad.relu(z), t["head.w2"], t["head.b2"])
    return z


# ---------------------------------------------------------------------------
# Checkpoint format: "SSLF", u32 version, u32 tensor count, per tensor
# (u32 name length, name utf-8, u32 rank, u32 shape..., f64 payload),
# then a trailing UTF-8 JSON config blob. All integers little-endian.
# ---------------------------------------------------------------------------

MAGIC = b"SSLF"
FORMAT_VERSION = 1


def save_checkpoint(params: ModelParams, path: str | Path) -> None:
    path = Path(path)
    blobs = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(params.tensors))]
    for name, t in params.parameters():  # sorted: byte-deterministic
        nb = name.encode("utf-8")
        blobs.append(struct.pack("<I", len(nb)))
        blobs.append(nb)
        blobs.append(struct.pack("<I", t.data.ndim))
        blobs.append(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        blobs.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    config = {"backbone": params.cfg.to_dict(), "head": params.head_kind.value}
    blobs.append(json.dumps(config, sort_keys=True, separators=(",", ":")).encode("utf-8"))
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(b"".join(blobs))
    tmp.replace(path)


def load_checkpoint(path: str | Path) -> ModelParams:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise FormatError(f"{path}: not a checkpoint file (bad magic)")
    try:
        version, count = struct.unpack_from("<II", raw, 4)
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        off = 12
        tensors: dict[str, Tensor] = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<I", raw, off)
            off += 4
            name = raw[off : off + nlen].decode("utf-8")
            off += nlen
            (rank,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{rank}I", raw, off)
            off += 4 * rank
            n = int(np.prod(shape, dtype=np.int64)) if rank else 1
            data = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape)
            off += 8 * n
            tensors[name] = Tensor(data.copy(), requires_grad=True)
        config = json.loads(raw[off:].decode("utf-8"))
        cfg = ConvNetConfig.from_dict(config["backbone"])
        head = HeadKind(config["head"])
    except FormatError:
        raise
    except (struct.error, ValueError, KeyError, UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"{path}: truncated or corrupt checkpoint: {e}") from e
    return ModelParams(cfg=cfg, head_kind=head, tensors=tensors)
