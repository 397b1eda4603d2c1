"""Quaternion neural layers: dense, convolution, transposed convolution,
split activations, pooling, and the polar-form weight initializer.

All forwards are pure functions of (input, weight); the differentiable
versions live in :mod:`quatgan.autodiff` and call back into the helpers here.

Weight sharing follows the four-submatrix structure of the quaternion
product: each output component is a signed sum of the four real submatrix
products. The signed 4x4 block layout is encoded once in ``HAMILTON_TABLE``
and reused by dense, conv and transposed conv paths; the full block matrix is
only materialized explicitly for spectral-norm estimation (see
:func:`quatgan.qnorm.real_block_matrix`).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeMismatchError
from .qtensor import QTensor

__all__ = [
    "QWeight",
    "ConvConfig",
    "HAMILTON_TABLE",
    "qdense_forward",
    "qconv2d_forward",
    "qtransposed_conv2d_forward",
    "split_activation",
    "split_pool",
    "guided_max_pool",
    "global_sum_pool",
    "upsample_nearest2x",
    "quaternion_init",
    "conv_out_size",
    "tconv_out_size",
    "im2col",
    "col2im",
]

# HAMILTON_TABLE[c][d] = (m, s): output component c receives s * (W_m ? x_d),
# i.e. the expanded quaternion product with the weight on the left.
HAMILTON_TABLE = (
    ((0, 1.0), (1, -1.0), (2, -1.0), (3, -1.0)),
    ((1, 1.0), (0, 1.0), (3, -1.0), (2, 1.0)),
    ((2, 1.0), (3, 1.0), (0, 1.0), (1, -1.0)),
    ((3, 1.0), (2, -1.0), (1, 1.0), (0, 1.0)),
)


@dataclass
class QWeight:
    """Shared submatrices of a quaternion layer plus an optional bias.

    ``kernel`` holds the four submatrices as the components of one QTensor of
    shape (out_q, in_q) for dense layers or (out_q, in_q, k, k) for convs
    (transposed convs use (in_q, out_q, k, k)). ``bias`` is one quaternion per
    output channel, added component-wise.
    """

    kernel: QTensor
    bias: QTensor | None = None

    @property
    def w0(self) -> np.ndarray:
        return self.kernel.data[0]

    @property
    def w1(self) -> np.ndarray:
        return self.kernel.data[1]

    @property
    def w2(self) -> np.ndarray:
        return self.kernel.data[2]

    @property
    def w3(self) -> np.ndarray:
        return self.kernel.data[3]

    def real_parameter_count(self) -> int:
        n = 4 * self.kernel.size
        if self.bias is not None:
            n += 4 * self.bias.size
        return n


@dataclass
class ConvConfig:
    kernel: int
    stride: int = 1
    padding: int = 0
    in_q: int = 1
    out_q: int = 1

    def __post_init__(self):
        if self.kernel < 1 or self.stride < 1 or self.padding < 0:
            raise ConfigError(
                f"invalid conv config: kernel={self.kernel} stride={self.stride} "
                f"padding={self.padding}"
            )
        if self.in_q < 1 or self.out_q < 1:
            raise ConfigError(f"channel counts must be positive: {self.in_q}, {self.out_q}")


def conv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size + 2 * padding - kernel) // stride + 1
    if size + 2 * padding < kernel:
        raise ShapeMismatchError(
            f"kernel {kernel} larger than padded input {size + 2 * padding}"
        )
    return out


def tconv_out_size(size: int, kernel: int, stride: int, padding: int) -> int:
    out = (size - 1) * stride - 2 * padding + kernel
    if out < 1:
        raise ShapeMismatchError(
            f"transposed conv output collapses: size={size} kernel={kernel} "
            f"stride={stride} padding={padding}"
        )
    return out


# -- real spatial primitives -------------------------------------------------


def im2col(x: np.ndarray, kernel: int, stride: int, padding: int) -> np.ndarray:
    """(B, C, H, W) -> (B, P, C*k*k) patch matrix, P = Ho*Wo."""
    b, c, h, w = x.shape
    ho = conv_out_size(h, kernel, stride, padding)
    wo = conv_out_size(w, kernel, stride, padding)
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    cols = np.empty((b, c, kernel, kernel, ho, wo), dtype=x.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            cols[:, :, ki, kj] = x[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride]
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b, ho * wo, c * kernel * kernel)


def col2im(cols: np.ndarray, x_shape, kernel: int, stride: int, padding: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back to (B, C, H, W)."""
    b, c, h, w = x_shape
    ho = conv_out_size(h, kernel, stride, padding)
    wo = conv_out_size(w, kernel, stride, padding)
    c6 = cols.reshape(b, ho, wo, c, kernel, kernel).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((b, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for ki in range(kernel):
        for kj in range(kernel):
            xp[:, :, ki : ki + stride * ho : stride, kj : kj + stride * wo : stride] += c6[:, :, ki, kj]
    if padding:
        return xp[:, :, padding : padding + h, padding : padding + w].copy()
    return xp


def _combine(products) -> np.ndarray:
    """Combine per-(weight component, input component) real products into the
    four output components; products[m][d] must be ``W_m applied to x_d``."""
    out = []
    for c in range(4):
        acc = None
        for d, (m, s) in enumerate(HAMILTON_TABLE[c]):
            term = products[m][d] if s > 0 else -products[m][d]
            acc = term if acc is None else acc + term
        out.append(acc)
    return np.stack(out)


# -- forwards ----------------------------------------------------------------


def qdense_forward(x: QTensor, w: QWeight) -> QTensor:
    """Quaternion fully connected layer: (B, in_q) -> (B, out_q)."""
    if len(x.shape) != 2:
        raise ShapeMismatchError(f"qdense expects (batch, in_q), got {x.shape}")
    out_q, in_q = w.kernel.shape
    if x.shape[1] != in_q:
        raise ShapeMismatchError(
            f"qdense input has {x.shape[1]} quaternion features, weight expects {in_q}",
            left=x.shape,
            right=w.kernel.shape,
        )
    # products[m] = x_all @ W_m^T, shape (4, B, out_q): index [m][d]
    products = [np.matmul(x.data, w.kernel.data[m].T) for m in range(4)]
    y = QTensor(_combine(products))
    if w.bias is not None:
        y = QTensor(y.data + w.bias.data[:, None, :])
    return y


def qconv2d_forward(x: QTensor, w: QWeight, cfg: ConvConfig) -> QTensor:
    """Quaternion 2-D convolution (cross-correlation convention)."""
    y, _ = _qconv2d_with_cache(x, w, cfg)
    return y


def _qconv2d_with_cache(x: QTensor, w: QWeight, cfg: ConvConfig):
    b, c_in, h, wdt = _check_conv_input(x, cfg)
    ho = conv_out_size(h, cfg.kernel, cfg.stride, cfg.padding)
    wo = conv_out_size(wdt, cfg.kernel, cfg.stride, cfg.padding)
    if w.kernel.shape != (cfg.out_q, cfg.in_q, cfg.kernel, cfg.kernel):
        raise ShapeMismatchError(
            f"conv weight shape {w.kernel.shape} does not match config "
            f"({cfg.out_q}, {cfg.in_q}, {cfg.kernel}, {cfg.kernel})"
        )
    cols = np.stack(
        [im2col(x.data[d], cfg.kernel, cfg.stride, cfg.padding) for d in range(4)]
    )  # (4, B, P, I*k*k)
    wflat = w.kernel.data.reshape(4, cfg.out_q, -1)
    products = [np.matmul(cols, wflat[m].T) for m in range(4)]  # each (4, B, P, O)
    y = _combine(products)  # (4, B, P, O)
    y = y.transpose(0, 1, 3, 2).reshape(4, b, cfg.out_q, ho, wo)
    if w.bias is not None:
        y = y + w.bias.data[:, None, :, None, None]
    return QTensor(y), cols


def qtransposed_conv2d_forward(x: QTensor, w: QWeight, cfg: ConvConfig) -> QTensor:
    """Quaternion transposed convolution; weight kernel is (in_q, out_q, k, k)."""
    y, _ = _qtconv2d_with_cache(x, w, cfg)
    return y


def _qtconv2d_with_cache(x: QTensor, w: QWeight, cfg: ConvConfig):
    b, c_in, h, wdt = _check_conv_input(x, cfg)
    if w.kernel.shape != (cfg.in_q, cfg.out_q, cfg.kernel, cfg.kernel):
        raise ShapeMismatchError(
            f"transposed conv weight shape {w.kernel.shape} does not match config "
            f"({cfg.in_q}, {cfg.out_q}, {cfg.kernel}, {cfg.kernel})"
        )
    ho = tconv_out_size(h, cfg.kernel, cfg.stride, cfg.padding)
    wo = tconv_out_size(wdt, cfg.kernel, cfg.stride, cfg.padding)
    out_shape = (b, cfg.out_q, ho, wo)
    # x as (4, B, P, in_q) with P the *input* positions
    x2 = x.data.reshape(4, b, cfg.in_q, h * wdt).transpose(0, 1, 3, 2)
    wflat = w.kernel.data.reshape(4, cfg.in_q, -1)  # (4, in_q, out_q*k*k)
    products = [np.matmul(x2, wflat[m]) for m in range(4)]  # (4, B, P, O*k*k)
    dcols = _combine(products)  # (4, B, P, O*k*k)
    y = np.stack(
        [col2im(dcols[c], out_shape, cfg.kernel, cfg.stride, cfg.padding) for c in range(4)]
    )
    if w.bias is not None:
        y = y + w.bias.data[:, None, :, None, None]
    return QTensor(y), x2


def _check_conv_input(x: QTensor, cfg: ConvConfig):
    if len(x.shape) != 4:
        raise ShapeMismatchError(f"conv expects (batch, channels, H, W), got {x.shape}")
    b, c_in, h, w = x.shape
    if c_in != cfg.in_q:
        raise ShapeMismatchError(
            f"input has {c_in} quaternion channels, config expects {cfg.in_q}"
        )
    return b, c_in, h, w


# -- activations and pooling --------------------------------------------------

ACTIVATIONS = ("relu", "leaky_relu", "tanh", "sigmoid")


def split_activation(x: QTensor, kind: str, alpha: float = 0.2) -> QTensor:
    """Apply a real scalar nonlinearity independently to each component."""
    if kind == "relu":
        return QTensor(np.maximum(x.data, 0.0))
    if kind == "leaky_relu":
        return QTensor(np.where(x.data > 0.0, x.data, alpha * x.data))
    if kind == "tanh":
        return QTensor(np.tanh(x.data))
    if kind == "sigmoid":
        return QTensor(_sigmoid(x.data))
    raise ConfigError(f"unknown activation {kind!r}, expected one of {ACTIVATIONS}")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    ev = np.exp(v[~pos])
    out[~pos] = ev / (1.0 + ev)
    return out


def _pool_view(x: QTensor, window: int) -> np.ndarray:
    if window <= 0:
        raise ConfigError(f"pooling window must be positive, got {window}")
    h, w = x.shape[-2:]
    if h % window or w % window:
        raise ShapeMismatchError(
            f"pooling window {window} must divide spatial dims {(h, w)}"
        )
    b4 = x.data.shape[:-2]
    return x.data.reshape(*b4, h // window, window, w // window, window)


def split_pool(x: QTensor, kind: str, window: int) -> QTensor:
    """Average or sum pooling applied per component (non-overlapping windows)."""
    v = _pool_view(x, window)
    if kind == "avg":
        return QTensor(v.mean(axis=(-3, -1)))
    if kind == "sum":
        return QTensor(v.sum(axis=(-3, -1)))
    raise ConfigError(f"unknown pooling kind {kind!r}, expected 'avg' or 'sum'")


def global_sum_pool(x: QTensor) -> QTensor:
    """Sum over all spatial positions; spatial dims collapse to 1x1."""
    return QTensor(x.data.sum(axis=(-2, -1), keepdims=True))


def guided_max_pool(x: QTensor, window: int) -> QTensor:
    """Max pooling guided by the quaternion amplitude.

    Within each window the position with the largest amplitude wins and the
    whole quaternion at that position is emitted, so no components from
    different positions are ever mixed.
    """
    y, _ = _guided_max_pool_with_idx(x, window)
    return y


def _guided_max_pool_with_idx(x: QTensor, window: int):
    v = _pool_view(x, window)  # (4, B, C, Ho, w, Wo, w)
    flat = v.transpose(0, 1, 2, 3, 5, 4, 6)  # (4, B, C, Ho, Wo, w, w)
    s = flat.shape
    flat = flat.reshape(*s[:-2], window * window)
    amp = np.sqrt((flat * flat).sum(axis=0))
    idx = amp.argmax(axis=-1)
    out = np.take_along_axis(flat, idx[None, ..., None], axis=-1)[..., 0]
    return QTensor(out), idx


def upsample_nearest2x(x: QTensor) -> QTensor:
    return QTensor(np.repeat(np.repeat(x.data, 2, axis=-2), 2, axis=-1))


# -- initialization ------------------------------------------------------------


def init_sigma(fan_in: int, fan_out: int, criterion: str) -> float:
    if fan_in <= 0 or fan_out <= 0:
        raise DomainError(f"fans must be positive, got {fan_in}, {fan_out}")
    if criterion == "glorot":
        return 1.0 / np.sqrt(2.0 * (fan_in + fan_out))
    if criterion == "he":
        return 1.0 / np.sqrt(2.0 * fan_in)
    raise ConfigError(f"unknown init criterion {criterion!r}, expected 'glorot' or 'he'")


def quaternion_init(shape, fan_in: int, fan_out: int, criterion: str = "glorot",
                    rng: np.random.Generator | int | None = None,
                    bias_channels: int | None = None) -> QWeight:
    """Polar-form weight initializer.

    Per entry: a random pure unit quaternion u (componentwise uniform [0,1],
    normalized; the measure-zero all-zero draw is resampled), an angle theta
    uniform on [-pi, pi], and a modulus phi drawn chi(4)-distributed with
    scale sigma so that the summed component variance is exactly 4 sigma^2
    with sigma = 1/sqrt(2(n_in+n_out)) (glorot) or 1/sqrt(2 n_in) (he).
    The components are W0 = phi cos(theta), W_i = phi u_i sin(theta).
    """
    sigma = init_sigma(fan_in, fan_out, criterion)
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    shape = tuple(shape)
    u = rng.uniform(0.0, 1.0, size=(3, *shape))
    bad = (u == 0.0).all(axis=0)
    while bad.any():
        u[:, bad] = rng.uniform(0.0, 1.0, size=(3, int(bad.sum())))
        bad = (u == 0.0).all(axis=0)
    u /= np.sqrt((u * u).sum(axis=0, keepdims=True))
    theta = rng.uniform(-np.pi, np.pi, size=shape)
    phi = sigma * np.sqrt((rng.standard_normal(size=(4, *shape)) ** 2).sum(axis=0))
    kernel = np.stack(
        [
            phi * np.cos(theta),
            phi * u[0] * np.sin(theta),
            phi * u[1] * np.sin(theta),
            phi * u[2] * np.sin(theta),
        ]
    )
    # biases start at zero; shape[0] is out_q except for transposed convs,
    # whose kernels are (in_q, out_q, k, k) and pass bias_channels explicitly
    out_q = shape[0] if bias_channels is None else bias_channels
    return QWeight(kernel=QTensor(kernel), bias=QTensor.zeros((out_q,)))
