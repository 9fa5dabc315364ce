"""The neural style field mapping mesh vertices to color/position offsets.

Pipeline: random Fourier positional encoding -> dynamic attention conditioned
on the target embedding (channel stage then spatial stage, each driven by a
hypernetwork-generated bottleneck MLP) -> two static MLP heads emitting the
per-vertex color offset (0.5 * tanh, so effective colors stay renderable) and
position offset (0.1 * tanh followed by the row-norm rescale).

The hypernetwork generates each dynamic layer's weights from the conditioning
vector through a low-rank factorization: a generated (d_in+1) x K factor times
a static K x d_out factor, which keeps the trainable count at
(text_dim + 1) * (d_in + 1) * K + K * d_out instead of the full
(text_dim + 1) * (d_in + 1) * d_out of a plain linear generator.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .autograd import Tensor, concat, matmul
from .errors import ConfigError, DimensionError
from .meshio import Mesh, rescale_position_offsets

CHECKPOINT_MAGIC = b"MFLD"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class FieldConfig:
    frequencies: int = 256      # positional-encoding frequency count; feature width is 2x this
    frequency_scale: float = 12.0  # std dev of the random frequency matrix
    reduction: int = 8          # bottleneck factor of the attention MLPs
    rank: int = 30              # factorization rank of generated weights
    text_dim: int = 512         # conditioning embedding width
    head_hidden: int = 256
    seed: int = 0

    @property
    def feature_dim(self) -> int:
        return 2 * self.frequencies

    def validate(self) -> "FieldConfig":
        if self.feature_dim % self.reduction != 0:
            raise ConfigError(
                f"feature dim {self.feature_dim} not divisible by reduction {self.reduction}")
        if min(self.frequencies, self.reduction, self.rank, self.text_dim,
               self.head_hidden) < 1:
            raise ConfigError("all field dimensions must be positive")
        return self

    def hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()


def _uniform_fan_in(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class FourierEncoder:
    """Fixed random sinusoidal features of 3-D points."""

    def __init__(self, frequencies: int, scale: float, rng: np.random.Generator):
        self.frequencies = frequencies
        self.basis = rng.normal(0.0, scale, size=(frequencies, 3))

    @property
    def output_dim(self) -> int:
        return 2 * self.frequencies

    def encode(self, points: Tensor) -> Tensor:
        """(N, 3) points -> (N, 2C) features: cos block then sin block."""
        if points.ndim != 2 or points.shape[1] != 3:
            raise DimensionError(f"expected (N, 3) points, got {points.shape}")
        proj = matmul(points, Tensor(2.0 * np.pi * self.basis.T))
        return concat([proj.cos(), proj.sin()], axis=1)


class DynamicLinear:
    """Affine layer whose weights are generated from a conditioning vector."""

    def __init__(self, name: str, text_dim: int, d_in: int, d_out: int, rank: int,
                 rng: np.random.Generator):
        self.name = name
        self.text_dim = text_dim
        self.d_in = d_in
        self.d_out = d_out
        self.rank = rank
        self.w_gen = Tensor(_uniform_fan_in(rng, text_dim, (text_dim, (d_in + 1) * rank)),
                            requires_grad=True)
        self.b_gen = Tensor(np.zeros((1, (d_in + 1) * rank)), requires_grad=True)
        self.static_factor = Tensor(_uniform_fan_in(rng, rank, (rank, d_out)),
                                    requires_grad=True)

    def parameters(self):
        return [(f"{self.name}.w_gen", self.w_gen),
                (f"{self.name}.b_gen", self.b_gen),
                (f"{self.name}.static_factor", self.static_factor)]

    def parameter_count(self) -> int:
        return self.w_gen.size + self.b_gen.size + self.static_factor.size

    def generate(self, conditioning: Tensor) -> tuple[Tensor, Tensor]:
        """Conditioning vector -> (weight (d_in, d_out), bias (1, d_out))."""
        cond = _as_row(conditioning, self.text_dim)
        u = (matmul(cond, self.w_gen) + self.b_gen).reshape(self.d_in + 1, self.rank)
        m = matmul(u, self.static_factor)
        weight = m.narrow(0, 0, self.d_in)
        bias = m.narrow(0, self.d_in, 1)
        return weight, bias

    def forward(self, conditioning: Tensor, x: Tensor) -> Tensor:
        if x.ndim != 2 or x.shape[1] != self.d_in:
            raise DimensionError(f"{self.name}: expected (N, {self.d_in}) input, got {x.shape}")
        weight, bias = self.generate(conditioning)
        return matmul(x, weight) + bias


def _as_row(v: Tensor, dim: int) -> Tensor:
    if v.ndim == 1:
        v = v.reshape(1, v.shape[0])
    if v.shape != (1, dim):
        raise DimensionError(f"conditioning vector must have length {dim}, got {v.shape}")
    return v


def decomposed_parameter_count(text_dim: int, d_in: int, d_out: int, rank: int) -> int:
    """Trainables of one factorized dynamic layer."""
    return (text_dim + 1) * (d_in + 1) * rank + rank * d_out


def naive_generator_parameter_count(text_dim: int, d_in: int, d_out: int) -> int:
    """Trainables a plain linear weight generator would need (reference only)."""
    return (text_dim + 1) * (d_in + 1) * d_out


class DynamicMLP:
    """Two dynamic linear layers with a ReLU bottleneck; in/out widths equal."""

    def __init__(self, name: str, text_dim: int, width: int, reduction: int, rank: int,
                 rng: np.random.Generator):
        if width % reduction != 0:
            raise ConfigError(f"width {width} not divisible by reduction {reduction}")
        hidden = width // reduction
        self.layer1 = DynamicLinear(f"{name}.layer1", text_dim, width, hidden, rank, rng)
        self.layer2 = DynamicLinear(f"{name}.layer2", text_dim, hidden, width, rank, rng)

    def parameters(self):
        return self.layer1.parameters() + self.layer2.parameters()

    def forward(self, conditioning: Tensor, x: Tensor) -> Tensor:
        return self.layer2.forward(conditioning, self.layer1.forward(conditioning, x).relu())


class AttentionModule:
    """Channel then spatial attention over vertex features, both generated
    from the conditioning embedding by non-shared dynamic MLPs."""

    def __init__(self, text_dim: int, width: int, reduction: int, rank: int,
                 rng: np.random.Generator):
        self.width = width
        self.channel_mlp = DynamicMLP("attention.channel", text_dim, width, reduction, rank, rng)
        self.spatial_mlp = DynamicMLP("attention.spatial", text_dim, width, reduction, rank, rng)

    def parameters(self):
        return self.channel_mlp.parameters() + self.spatial_mlp.parameters()

    def channel_attention(self, features: Tensor, conditioning: Tensor) -> tuple[Tensor, Tensor]:
        """(1, D) attention map from the vertex-mean of the MLP output, and
        the channel-weighted features."""
        if features.ndim != 2 or features.shape[1] != self.width:
            raise DimensionError(f"expected (N, {self.width}) features, got {features.shape}")
        attn = self.channel_mlp.forward(conditioning, features).mean(axis=0).sigmoid()
        return attn, features * attn

    def spatial_attention(self, features: Tensor, conditioning: Tensor) -> tuple[Tensor, Tensor]:
        """(N, 1) attention map from the channel-mean of the MLP output, and
        the vertex-weighted features."""
        if features.ndim != 2 or features.shape[1] != self.width:
            raise DimensionError(f"expected (N, {self.width}) features, got {features.shape}")
        attn = self.spatial_mlp.forward(conditioning, features).mean(axis=1).sigmoid()
        return attn, features * attn

    def forward(self, features: Tensor, conditioning: Tensor) -> Tensor:
        _, channel_weighted = self.channel_attention(features, conditioning)
        _, out = self.spatial_attention(channel_weighted, conditioning)
        return out


class StaticLinear:
    def __init__(self, name: str, d_in: int, d_out: int, rng: np.random.Generator):
        self.name = name
        self.weight = Tensor(_uniform_fan_in(rng, d_in, (d_in, d_out)), requires_grad=True)
        self.bias = Tensor(np.zeros((1, d_out)), requires_grad=True)

    def parameters(self):
        return [(f"{self.name}.weight", self.weight), (f"{self.name}.bias", self.bias)]

    def forward(self, x: Tensor) -> Tensor:
        return matmul(x, self.weight) + self.bias


class HeadMLP:
    def __init__(self, name: str, d_in: int, hidden: int, rng: np.random.Generator):
        self.layers = [StaticLinear(f"{name}.0", d_in, hidden, rng),
                       StaticLinear(f"{name}.1", hidden, hidden, rng),
                       StaticLinear(f"{name}.2", hidden, 3, rng)]

    def parameters(self):
        return [p for layer in self.layers for p in layer.parameters()]

    def forward(self, x: Tensor) -> Tensor:
        h = self.layers[0].forward(x).relu()
        h = self.layers[1].forward(h).relu()
        return self.layers[2].forward(h)


class StyleField:
    """Positional encoder + attention module + color/position heads."""

    COLOR_RANGE = 0.5
    POSITION_RANGE = 0.1

    def __init__(self, config: FieldConfig = FieldConfig()):
        self.config = config.validate()
        rng = np.random.default_rng(config.seed)
        self.encoder = FourierEncoder(config.frequencies, config.frequency_scale, rng)
        width = config.feature_dim
        self.attention = AttentionModule(config.text_dim, width, config.reduction,
                                         config.rank, rng)
        self.color_head = HeadMLP("head.color", width, config.head_hidden, rng)
        self.position_head = HeadMLP("head.position", width, config.head_hidden, rng)

    def parameters(self) -> list[tuple[str, Tensor]]:
        return (self.attention.parameters() + self.color_head.parameters()
                + self.position_head.parameters())

    def parameter_count(self) -> int:
        return sum(t.size for _, t in self.parameters())

    def vertex_features(self, mesh: Mesh, conditioning: Tensor,
                        use_attention: bool = True) -> Tensor:
        features = self.encoder.encode(Tensor(mesh.vertices))
        if use_attention:
            features = self.attention.forward(features, conditioning)
        return features

    def predict_offsets(self, mesh: Mesh, conditioning: Tensor,
                        use_attention: bool = True,
                        geometry: bool = True) -> tuple[Tensor, Tensor]:
        """Per-vertex (color offset, position offset), both (N, 3).

        ``use_attention=False`` bypasses the attention module (the static-MLP
        baseline); ``geometry=False`` pins position offsets at zero.
        """
        features = self.vertex_features(mesh, conditioning, use_attention)
        dc = self.color_head.forward(features).tanh() * self.COLOR_RANGE
        if geometry:
            dp_raw = self.position_head.forward(features).tanh() * self.POSITION_RANGE
            dp = rescale_position_offsets(dp_raw)
        else:
            dp = Tensor(np.zeros((mesh.num_vertices, 3)))
        return dc, dp

    # -- checkpointing ------------------------------------------------------

    def save(self, path) -> None:
        """Binary checkpoint: magic, version, length-prefixed JSON header
        (config, seed, config hash, tensor directory), then the raw float64
        little-endian buffers in directory order."""
        entries = []
        buffers = []
        offset = 0
        for name, tensor in self.parameters():
            raw = np.ascontiguousarray(tensor.data, dtype="<f8").tobytes()
            entries.append({"name": name, "shape": list(tensor.shape),
                            "offset": offset, "nbytes": len(raw)})
            buffers.append(raw)
            offset += len(raw)
        header = json.dumps({
            "version": CHECKPOINT_VERSION,
            "seed": self.config.seed,
            "config": asdict(self.config),
            "config_hash": self.config.hash(),
            "tensors": entries,
        }).encode()
        with open(path, "wb") as fh:
            fh.write(CHECKPOINT_MAGIC)
            fh.write(struct.pack("<IQ", CHECKPOINT_VERSION, len(header)))
            fh.write(header)
            for raw in buffers:
                fh.write(raw)

    @classmethod
    def load(cls, path) -> "StyleField":
        with open(Path(path), "rb") as fh:
            blob = fh.read()
        if blob[:4] != CHECKPOINT_MAGIC:
            raise ConfigError(f"{path}: not a style-field checkpoint")
        version, header_len = struct.unpack_from("<IQ", blob, 4)
        if version != CHECKPOINT_VERSION:
            raise ConfigError(f"{path}: unsupported checkpoint version {version}")
        header = json.loads(blob[16:16 + header_len].decode())
        field = cls(FieldConfig(**header["config"]))
        if header["config_hash"] != field.config.hash():
            raise ConfigError(f"{path}: config hash mismatch")
        params = dict(field.parameters())
        base = 16 + header_len
        for entry in header["tensors"]:
            target = params[entry["name"]]
            raw = blob[base + entry["offset"]: base + entry["offset"] + entry["nbytes"]]
            target.data = np.frombuffer(raw, dtype="<f8").reshape(entry["shape"]).copy()
        return field
