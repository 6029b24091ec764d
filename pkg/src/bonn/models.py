"""Autoencoder architectures over cubic voxel blocks.

Four variants share one I/O contract, (B, E, E, E) in and out:

* fnn     dense autoencoder: E^3 -> 128 -> 64 -> 128 -> E^3
* qfnn    same shape, with the two inner layers replaced by orthogonal
          circuit layers on a 128-qubit register
* cnn3d   two-stage strided conv encoder to a 64-dim latent, mirrored
          decoder with nearest-neighbour upsampling, final tanh
* qcnn3d  cnn3d with the first (single-channel) convolution replaced by an
          orthogonal circuit convolution

Dropout layers sit between encoder and decoder and just before the final
output layer; they are strict no-ops unless the model was configured with a
positive rate and the pass is stochastic, so point-estimate and Monte-Carlo
dropout variants share one graph.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

from . import layers as ly

VARIANTS = ("fnn", "qfnn", "cnn3d", "qcnn3d")


@dataclass(frozen=True)
class AutoencoderSpec:
    """Architecture descriptor; serialized verbatim into checkpoints."""

    variant: str
    block_edge: int = 16
    hidden_dim: int = 128
    latent_dim: int = 64
    conv_channels: tuple[int, int] = (8, 16)
    conv1_stride: int = 2
    dropout_rate: float = 0.0
    layout_kind: str = "butterfly"

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}; expected one of {VARIANTS}")
        if self.block_edge < 4:
            raise ValueError(f"block_edge must be >= 4, got {self.block_edge}")
        if self.conv1_stride not in (1, 2):
            raise ValueError(f"conv1_stride must be 1 or 2, got {self.conv1_stride}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        object.__setattr__(self, "conv_channels", tuple(self.conv_channels))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AutoencoderSpec":
        return cls(**{**d, "conv_channels": tuple(d.get("conv_channels", (8, 16)))})


def _dense_stack(spec: AutoencoderSpec, orthogonal: bool) -> list[ly.Layer]:
    e3 = spec.block_edge**3
    h, z = spec.hidden_dim, spec.latent_dim
    n = max(h, z)
    if orthogonal:
        encode_inner: ly.Layer = ly.OrthoLinear(h, z, n=n, layout_kind=spec.layout_kind)
        decode_inner: ly.Layer = ly.OrthoLinear(z, h, n=n, layout_kind=spec.layout_kind)
    else:
        encode_inner = ly.Dense(h, z)
        decode_inner = ly.Dense(z, h)
    return [
        ly.Flatten(),
        ly.Dense(e3, h),
        ly.ReLU(),
        encode_inner,
        ly.Dropout(spec.dropout_rate),
        ly.ReLU(),
        decode_inner,
        ly.Tanh(),
        ly.Dropout(spec.dropout_rate),
        ly.Dense(h, e3),
        ly.Reshape((spec.block_edge,) * 3),
    ]


def _conv_stack(spec: AutoencoderSpec, orthogonal: bool) -> list[ly.Layer]:
    e = spec.block_edge
    c1, c2 = spec.conv_channels
    s1 = spec.conv1_stride
    e1 = ly.conv_output_edge(e, 2, s1, "same")
    e2 = ly.conv_output_edge(e1, 2, 2, "same")
    flat = c2 * e2**3
    if orthogonal:
        conv1: ly.Layer = ly.OrthoConv3D(c1, kernel=2, stride=s1, padding="same", layout_kind=spec.layout_kind)
    else:
        conv1 = ly.Conv3D(1, c1, kernel=2, stride=s1, padding="same")
    decoder: list[ly.Layer] = [
        ly.ReLU(),
        ly.Dense(spec.latent_dim, flat),
        ly.Reshape((c2, e2, e2, e2)),
        ly.UpsampleNearest(2),
        ly.Conv3D(c2, c1, kernel=2, stride=1, padding="same"),
        ly.ReLU(),
    ]
    if s1 == 2:
        decoder.append(ly.UpsampleNearest(2))
    decoder += [
        ly.Dropout(spec.dropout_rate),
        ly.Conv3D(c1, 1, kernel=2, stride=1, padding="same"),
        ly.Tanh(),
        ly.Reshape((e,) * 3),
    ]
    return [
        ly.Reshape((1, e, e, e)),
        conv1,
        ly.ReLU(),
        ly.Conv3D(c1, c2, kernel=2, stride=2, padding="same"),
        ly.Flatten(),
        ly.Dense(flat, spec.latent_dim),
        ly.Dropout(spec.dropout_rate),
        *decoder,
    ]


def build_autoencoder(spec: AutoencoderSpec) -> ly.Sequential:
    """Construct the (uninitialized) network for an architecture descriptor."""
    if spec.variant == "fnn":
        stack = _dense_stack(spec, orthogonal=False)
    elif spec.variant == "qfnn":
        stack = _dense_stack(spec, orthogonal=True)
    elif spec.variant == "cnn3d":
        stack = _conv_stack(spec, orthogonal=False)
    else:
        stack = _conv_stack(spec, orthogonal=True)
    return ly.Sequential(stack)


def first_ortho_conv_index(model: ly.Sequential) -> int:
    """Index of the orthogonal convolution layer (for per-patch experiments)."""
    for idx, layer in enumerate(model.layers):
        if isinstance(layer, ly.OrthoConv3D):
            return idx
    raise ValueError("model has no orthogonal convolution layer")
