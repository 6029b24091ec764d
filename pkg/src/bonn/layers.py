"""Network layers with hand-written forward/backward passes.

Two families: dense layers with Kaiming-initialized weights, and orthogonal
layers whose weights are rotation angles of a Hamming-weight-preserving
circuit.  Orthogonal layers are exactly norm-preserving on their full n-dim
register; rectangular shapes come from zero-padding the input to n qubits
and truncating the output, so the effective in->out matrix is a submatrix of
an orthogonal matrix (all singular values <= 1).

Every layer stores its forward cache on itself; ``backward`` consumes the
cache and leaves parameter gradients in ``self.grads``.  Arrays are float64
throughout; dense batches are (B, features), voxel batches (B, C, D, D, D).
"""

from __future__ import annotations

import math

import numpy as np

from . import subspace as ss

ANGLE_INIT_HALF_RANGE = math.pi / 8


class Layer:
    """Base class: parameterless identity-ish layer."""

    def param_arrays(self) -> dict[str, np.ndarray]:
        return {}

    def init(self, rng: np.random.Generator) -> None:
        pass

    @property
    def num_params(self) -> int:
        return sum(a.size for a in self.param_arrays().values())

    def forward(self, x: np.ndarray, ctx: dict) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Dense(Layer):
    """Affine map y = x W^T + b."""

    def __init__(self, in_dim: int, out_dim: int):
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.weight = np.zeros((out_dim, in_dim))
        self.bias = np.zeros(out_dim)
        self.grads: dict[str, np.ndarray] = {}
        self._x: np.ndarray | None = None

    def param_arrays(self):
        return {"weight": self.weight, "bias": self.bias}

    def init(self, rng):
        # Kaiming: std = sqrt(2 / fan_in), bias zero
        self.weight = rng.normal(0.0, math.sqrt(2.0 / self.in_dim), size=self.weight.shape)
        self.bias = np.zeros(self.out_dim)

    def forward(self, x, ctx):
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, grad):
        x = self._x
        self.grads = {"weight": grad.T @ x, "bias": grad.sum(axis=0)}
        return grad @ self.weight


class OrthoLinear(Layer):
    """Linear layer whose weight matrix is a slice of a circuit's orthogonal matrix.

    in_dim <= n and out_dim <= n; no bias.  The circuit is linear in its
    amplitude vector, so applying it to an unnormalized row equals loading
    the normalized row and rescaling by its norm; a zero row maps to zeros.
    """

    def __init__(self, in_dim: int, out_dim: int, n: int | None = None, layout_kind: str = "butterfly"):
        n = n if n is not None else max(in_dim, out_dim)
        if in_dim > n or out_dim > n:
            raise ValueError(f"in_dim={in_dim}, out_dim={out_dim} must not exceed n={n}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.layout = ss.build_layout(layout_kind, n)
        self.angles = np.zeros(self.layout.num_params)
        self.grads: dict[str, np.ndarray] = {}
        self._tape = None

    def param_arrays(self):
        return {"angles": self.angles}

    def init(self, rng):
        self.angles = rng.uniform(-ANGLE_INIT_HALF_RANGE, ANGLE_INIT_HALF_RANGE, self.angles.shape)

    def effective_matrix(self) -> np.ndarray:
        return ss.layer_matrix(self.layout, self.angles)[: self.out_dim, : self.in_dim]

    def orthogonality_defect(self) -> float:
        mat = ss.layer_matrix(self.layout, self.angles)
        return float(np.max(np.abs(mat.T @ mat - np.eye(self.layout.n))))

    def forward(self, x, ctx):
        n = self.layout.n
        padded = np.zeros((x.shape[0], n))
        padded[:, : self.in_dim] = x
        out, self._tape = ss.sweep_with_tape(padded, self.layout, self.angles)
        return out[:, : self.out_dim]

    def backward(self, grad):
        n = self.layout.n
        padded = np.zeros((grad.shape[0], n))
        padded[:, : self.out_dim] = grad
        grad_x, grad_angles = ss.sweep_backward(padded, self.layout, self._tape)
        self.grads = {"angles": grad_angles}
        return grad_x[:, : self.in_dim]


def conv_output_edge(edge: int, kernel: int, stride: int, padding: str) -> int:
    if padding == "same":
        return -(-edge // stride)
    if padding == "valid":
        return (edge - kernel) // stride + 1
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _pad_amounts(edge: int, kernel: int, stride: int, padding: str) -> tuple[int, int]:
    if padding == "valid":
        return 0, 0
    out = conv_output_edge(edge, kernel, stride, padding)
    total = max((out - 1) * stride + kernel - edge, 0)
    return total // 2, total - total // 2


def extract_patches(x: np.ndarray, kernel: int, stride: int, padding: str) -> np.ndarray:
    """im2col for cubic volumes: (B, C, D, D, D) -> (B, P, C * kernel^3).

    Patches run in C-order over output positions; each patch flattens
    channel-major then (dz, dy, dx).
    """
    edge = x.shape[2]
    lo, hi = _pad_amounts(edge, kernel, stride, padding)
    if lo or hi:
        x = np.pad(x, ((0, 0), (0, 0), (lo, hi), (lo, hi), (lo, hi)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kernel, kernel, kernel), axis=(2, 3, 4))
    win = win[:, :, ::stride, ::stride, ::stride]
    b, c, o1, o2, o3 = win.shape[:5]
    patches = win.transpose(0, 2, 3, 4, 1, 5, 6, 7).reshape(b, o1 * o2 * o3, c * kernel**3)
    return np.ascontiguousarray(patches)


def scatter_patches(
    grad_patches: np.ndarray, in_shape: tuple, kernel: int, stride: int, padding: str
) -> np.ndarray:
    """Adjoint of :func:`extract_patches` (col2im with overlap accumulation)."""
    b, c, edge = in_shape[0], in_shape[1], in_shape[2]
    lo, hi = _pad_amounts(edge, kernel, stride, padding)
    out = conv_output_edge(edge, kernel, stride, padding)
    padded = np.zeros((b, c, edge + lo + hi, edge + lo + hi, edge + lo + hi))
    g = grad_patches.reshape(b, out, out, out, c, kernel, kernel, kernel)
    g = g.transpose(0, 4, 1, 2, 3, 5, 6, 7)
    for a in range(kernel):
        for bb in range(kernel):
            for cc in range(kernel):
                padded[
                    :,
                    :,
                    a : a + out * stride : stride,
                    bb : bb + out * stride : stride,
                    cc : cc + out * stride : stride,
                ] += g[..., a, bb, cc]
    if lo or hi:
        padded = padded[:, :, lo : lo + edge, lo : lo + edge, lo : lo + edge]
    return padded


class Conv3D(Layer):
    """Dense 3D convolution over cubic volumes, implemented as im2col + matmul."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 2, stride: int = 2, padding: str = "same"):
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel**3
        self.weight = np.zeros((out_channels, fan_in))
        self.bias = np.zeros(out_channels)
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def param_arrays(self):
        return {"weight": self.weight, "bias": self.bias}

    def init(self, rng):
        fan_in = self.weight.shape[1]
        self.weight = rng.normal(0.0, math.sqrt(2.0 / fan_in), size=self.weight.shape)
        self.bias = np.zeros(self.out_channels)

    def forward(self, x, ctx):
        patches = extract_patches(x, self.kernel, self.stride, self.padding)
        out_edge = conv_output_edge(x.shape[2], self.kernel, self.stride, self.padding)
        self._cache = (patches, x.shape)
        out = patches @ self.weight.T + self.bias
        b = x.shape[0]
        return out.transpose(0, 2, 1).reshape(b, self.out_channels, out_edge, out_edge, out_edge)

    def backward(self, grad):
        patches, in_shape = self._cache
        b = grad.shape[0]
        g = grad.reshape(b, self.out_channels, -1).transpose(0, 2, 1)  # (B, P, c_out)
        self.grads = {
            "weight": np.einsum("bpo,bpf->of", g, patches),
            "bias": g.sum(axis=(0, 1)),
        }
        grad_patches = g @ self.weight
        return scatter_patches(grad_patches, in_shape, self.kernel, self.stride, self.padding)


class OrthoConv3D(Layer):
    """3D convolution whose k filters are the first k rows of a circuit matrix.

    Single input channel; the circuit acts on n = max(k, kernel^3) qubits,
    each voxel patch entering as a zero-padded amplitude vector.
    """

    def __init__(self, out_channels: int, kernel: int = 2, stride: int = 2, padding: str = "same", layout_kind: str = "butterfly"):
        self.out_channels = out_channels
        self.kernel = kernel
        self.stride = stride
        self.padding = padding
        n = max(out_channels, kernel**3)
        self.layout = ss.build_layout(layout_kind, n)
        self.angles = np.zeros(self.layout.num_params)
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def param_arrays(self):
        return {"angles": self.angles}

    def init(self, rng):
        self.angles = rng.uniform(-ANGLE_INIT_HALF_RANGE, ANGLE_INIT_HALF_RANGE, self.angles.shape)

    def filter_matrix(self) -> np.ndarray:
        """Effective (k, kernel^3) filter bank F."""
        return ss.layer_matrix(self.layout, self.angles)[: self.out_channels, : self.kernel**3]

    def orthogonality_defect(self) -> float:
        mat = ss.layer_matrix(self.layout, self.angles)
        return float(np.max(np.abs(mat.T @ mat - np.eye(self.layout.n))))

    def forward(self, x, ctx):
        if x.shape[1] != 1:
            raise ValueError(f"orthogonal conv takes a single input channel, got {x.shape[1]}")
        n = self.layout.n
        d3 = self.kernel**3
        patches = extract_patches(x, self.kernel, self.stride, self.padding)
        b, p = patches.shape[:2]
        flat = np.zeros((b * p, n))
        flat[:, :d3] = patches.reshape(b * p, d3)
        out, tape = ss.sweep_with_tape(flat, self.layout, self.angles)
        self._cache = (tape, x.shape, b, p)
        out_edge = conv_output_edge(x.shape[2], self.kernel, self.stride, self.padding)
        k = self.out_channels
        return out[:, :k].reshape(b, p, k).transpose(0, 2, 1).reshape(b, k, out_edge, out_edge, out_edge)

    def backward(self, grad):
        tape, in_shape, b, p = self._cache
        n = self.layout.n
        k = self.out_channels
        g = grad.reshape(b, k, p).transpose(0, 2, 1).reshape(b * p, k)
        padded = np.zeros((b * p, n))
        padded[:, :k] = g
        grad_flat, grad_angles = ss.sweep_backward(padded, self.layout, tape)
        self.grads = {"angles": grad_angles}
        grad_patches = grad_flat[:, : self.kernel**3].reshape(b, p, -1)
        return scatter_patches(grad_patches, in_shape, self.kernel, self.stride, self.padding)


class ReLU(Layer):
    def __init__(self):
        self._mask = None
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, ctx):
        self._mask = x > 0
        return np.where(self._mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._mask, grad, 0.0)


class Tanh(Layer):
    def __init__(self):
        self._out = None
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, ctx):
        self._out = np.tanh(x)
        return self._out

    def backward(self, grad):
        return grad * (1.0 - self._out**2)


class Flatten(Layer):
    def __init__(self):
        self._shape = None
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, ctx):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._shape)


class Reshape(Layer):
    def __init__(self, shape: tuple):
        self.shape = shape
        self._in_shape = None
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, ctx):
        self._in_shape = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, grad):
        return grad.reshape(self._in_shape)


class UpsampleNearest(Layer):
    """Nearest-neighbour upsampling by an integer factor on all spatial axes."""

    def __init__(self, factor: int = 2):
        self.factor = factor
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, ctx):
        f = self.factor
        return x.repeat(f, axis=2).repeat(f, axis=3).repeat(f, axis=4)

    def backward(self, grad):
        f = self.factor
        b, c, d1, d2, d3 = grad.shape
        g = grad.reshape(b, c, d1 // f, f, d2 // f, f, d3 // f, f)
        return g.sum(axis=(3, 5, 7))


class Dropout(Layer):
    """Inverted dropout, active only when the pass is marked stochastic.

    A rate of zero is a strict no-op that consumes no randomness, so a model
    trained with rate 0 is bit-identical to one without dropout layers.
    """

    def __init__(self, rate: float):
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self._mask = None
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x, ctx):
        if self.rate == 0.0 or not ctx.get("stochastic", False):
            self._mask = None
            return x
        rng = ctx["rng"]
        self._mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        return x * self._mask

    def backward(self, grad):
        if self._mask is None:
            return grad
        return grad * self._mask


class Sequential:
    """A layer stack with flat-parameter views for the variational machinery."""

    def __init__(self, layers: list[Layer]):
        self.layers = layers

    @property
    def num_params(self) -> int:
        return sum(l.num_params for l in self.layers)

    def init(self, rng: np.random.Generator) -> None:
        for layer in self.layers:
            layer.init(rng)

    def named_params(self) -> dict[str, np.ndarray]:
        out = {}
        for idx, layer in enumerate(self.layers):
            for name, arr in layer.param_arrays().items():
                out[f"layer{idx:02d}.{name}"] = arr
        return out

    def param_slices(self) -> list[tuple[str, int, int]]:
        """(name, start, stop) of each parameter array in the flat vector."""
        out = []
        off = 0
        for name, arr in self.named_params().items():
            out.append((name, off, off + arr.size))
            off += arr.size
        return out

    def get_flat(self) -> np.ndarray:
        parts = [arr.ravel() for arr in self.named_params().values()]
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def set_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        if vec.shape != (self.num_params,):
            raise ValueError(f"expected {self.num_params} parameters, got {vec.shape}")
        off = 0
        for layer in self.layers:
            for name, arr in layer.param_arrays().items():
                chunk = vec[off : off + arr.size].reshape(arr.shape)
                setattr(layer, name, chunk.copy())
                off += arr.size

    def forward(self, x: np.ndarray, stochastic: bool = False, rng: np.random.Generator | None = None) -> np.ndarray:
        ctx = {"stochastic": stochastic, "rng": rng}
        for layer in self.layers:
            x = layer.forward(x, ctx)
        return x

    def backward(self, grad: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def grad_flat(self) -> np.ndarray:
        parts = []
        for layer in self.layers:
            for name, arr in layer.param_arrays().items():
                g = layer.grads.get(name)
                parts.append(np.zeros(arr.size) if g is None else g.ravel())
        if not parts:
            return np.zeros(0)
        return np.concatenate(parts)

    def max_orthogonality_defect(self) -> float:
        """Largest ||O^T O - I||_max over the orthogonal layers (0 if none)."""
        worst = 0.0
        for layer in self.layers:
            if isinstance(layer, (OrthoLinear, OrthoConv3D)):
                worst = max(worst, layer.orthogonality_defect())
        return worst
