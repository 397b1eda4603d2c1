"""Quaternion batch normalization, the augmented-covariance diagnostic, and
quaternion spectral normalization driven by power iteration.

QBN here is the proper-signal approximation: the four component variances are
pooled into a single per-channel scale (the 4-sigma^2 aggregate), the
quaternion mean is subtracted component-wise, and the affine stage uses one
real gain per channel plus a quaternion shift. Full whitening by the inverse
square root of the augmented covariance is deliberately not implemented; the
augmented covariance itself is available as a diagnostic only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ShapeMismatchError
from .layers import HAMILTON_TABLE, QWeight
from .qtensor import QTensor

__all__ = [
    "QBNState",
    "quaternion_mean",
    "qproper_variance",
    "qbn_forward",
    "qbn",
    "augmented_covariance",
    "SNState",
    "power_iteration_sigma",
    "real_block_matrix",
    "qsn_split",
    "qsn_full",
    "SplitSNState",
]


# -- statistics ---------------------------------------------------------------


def _reduce_axes(data: np.ndarray):
    """Axes of a (4, B, C, ...) array pooled by per-channel statistics."""
    if data.ndim < 3:
        raise ShapeMismatchError(f"expected (batch, channels, ...) input, got {data.shape[1:]}")
    return (1,) + tuple(range(3, data.ndim))


def quaternion_mean(x: QTensor) -> QTensor:
    """Arithmetic mean per component over batch and spatial dims: one
    quaternion per channel."""
    if len(x.shape) < 2 or x.shape[0] < 1:
        raise DomainError(f"mean needs a non-empty (batch, channels, ...) input, got {x.shape}")
    return QTensor(x.data.mean(axis=_reduce_axes(x.data)))


def qproper_variance(x: QTensor) -> np.ndarray:
    """Per-channel 4-sigma^2 aggregate: the sum of the four per-component
    biased variances about the quaternion mean."""
    if len(x.shape) < 2 or x.shape[0] < 2:
        raise DomainError(f"variance needs batch >= 2, got shape {x.shape}")
    axes = _reduce_axes(x.data)
    mu = x.data.mean(axis=axes, keepdims=True)
    var_c = ((x.data - mu) ** 2).mean(axis=axes)
    return var_c.sum(axis=0)


@dataclass
class QBNState:
    """Per-channel QBN parameters and running statistics.

    ``gamma`` is a real scalar per quaternion channel (carried in q0),
    ``beta`` a quaternion per channel. ``running_var`` stores the 4-sigma^2
    aggregate. Running stats are unset until the first train-mode batch.
    """

    channels: int
    momentum: float = 0.9
    epsilon: float = 1e-5
    dtype: np.dtype = np.float64
    gamma: QTensor = None
    beta: QTensor = None
    running_mean: QTensor = None
    running_var: np.ndarray = None
    initialized: bool = False

    def __post_init__(self):
        if self.epsilon <= 0:
            raise DomainError("epsilon must be positive")
        if self.gamma is None:
            self.gamma = QTensor.from_real(np.ones(self.channels, dtype=self.dtype))
        if self.beta is None:
            self.beta = QTensor.zeros((self.channels,), dtype=self.dtype)
        if self.running_mean is None:
            self.running_mean = QTensor.zeros((self.channels,), dtype=self.dtype)
        if self.running_var is None:
            self.running_var = np.ones(self.channels, dtype=self.dtype)


def _chan(arr: np.ndarray, ndim: int) -> np.ndarray:
    """Broadcast a (4, C) or (C,) per-channel array across (4, B, C, ...)."""
    if arr.ndim == 2:
        return arr.reshape(4, 1, -1, *([1] * (ndim - 3)))
    return arr.reshape(1, 1, -1, *([1] * (ndim - 3)))


def _batch_stats(data: np.ndarray, eps: float):
    axes = _reduce_axes(data)
    n = 1
    for a in axes:
        n *= data.shape[a]
    if n < 2:
        raise DomainError("QBN needs at least two samples per channel for variance")
    mu = data.mean(axis=axes, keepdims=True)
    xc = data - mu
    var_c = (xc * xc).mean(axis=axes, keepdims=True)
    v = var_c.sum(axis=0, keepdims=True)
    s = np.sqrt(v + eps)
    return mu, xc, v, s, n


def qbn_forward(x: QTensor, state: QBNState, mode: str = "train") -> QTensor:
    """Normalize to zero quaternion mean and unit summed component variance,
    then apply gamma (real gain) and beta (quaternion shift).

    Train mode uses batch statistics and updates the running stats by
    exponential moving average; eval mode uses the running stats and mutates
    nothing.
    """
    data = x.data
    if mode == "train":
        mu, xc, v, s, _ = _batch_stats(data, state.epsilon)
        _update_running(state, mu, v)
        xhat = xc / s
    elif mode == "eval":
        if not state.initialized:
            raise DomainError("QBN eval requested before any train-mode batch")
        mu = _chan(state.running_mean.data, data.ndim)
        s = np.sqrt(_chan(state.running_var, data.ndim) + state.epsilon)
        xhat = (data - mu) / s
    else:
        raise DomainError(f"unknown QBN mode {mode!r}")
    gamma = _chan(state.gamma.q0, data.ndim)
    beta = _chan(state.beta.data, data.ndim)
    return QTensor(gamma * xhat + beta)


def _update_running(state: QBNState, mu, v):
    mu_c = mu.reshape(4, -1)
    v_c = v.reshape(-1)
    if not state.initialized:
        state.running_mean.data[...] = mu_c
        state.running_var[...] = v_c
        state.initialized = True
    else:
        m = state.momentum
        state.running_mean.data[...] = m * state.running_mean.data + (1.0 - m) * mu_c
        state.running_var[...] = m * state.running_var + (1.0 - m) * v_c


def qbn(x, gamma, beta, state: QBNState, training: bool, update_running: bool = True):
    """Differentiable QBN over tape nodes; the batch-statistics path is part
    of the recorded gradient. ``gamma``/``beta`` leaf values must alias the
    state's own tensors."""
    saved = {}

    def fwd(xv: QTensor, gv: QTensor, bv: QTensor) -> QTensor:
        data = xv.data
        if training:
            mu, xc, v, s, n = _batch_stats(data, state.epsilon)
            if update_running:
                _update_running(state, mu, v)
            xhat = xc / s
            saved.update(xc=xc, s=s, n=n, train=True)
        else:
            if not state.initialized:
                raise DomainError("QBN eval requested before any train-mode batch")
            mu = _chan(state.running_mean.data, data.ndim)
            s = np.sqrt(_chan(state.running_var, data.ndim) + state.epsilon)
            xhat = (data - mu) / s
            saved.update(s=s, train=False)
        g0 = _chan(gv.q0, data.ndim)
        saved.update(xhat=xhat, gamma=g0)
        return QTensor(g0 * xhat + _chan(bv.data, data.ndim))

    def bwd(g):
        xhat, gamma, s = saved["xhat"], saved["gamma"], saved["s"]
        axes = _reduce_axes(g)
        dgamma = np.zeros((4, gamma.shape[2]), dtype=g.dtype)
        dgamma[0] = (g * xhat).sum(axis=(0,) + axes)
        dbeta = g.sum(axis=axes)
        dxhat = g * gamma
        if not saved["train"]:
            return dxhat / s, dgamma, dbeta
        xc, n = saved["xc"], saved["n"]
        dv = (dxhat * xc).sum(axis=(0,) + axes, keepdims=True) * (-0.5) / (s ** 3)
        dmu = dxhat.sum(axis=axes, keepdims=True) * (-1.0 / s)
        dx = dxhat / s + dv * (2.0 / n) * xc + dmu / n
        return dx, dgamma, dbeta

    return x.tape.record("qbn", (x, gamma, beta), fwd, bwd)


# -- augmented covariance -------------------------------------------------------

_INVOLUTION_SIGNS = np.array(
    [
        [1.0, 1.0, 1.0, 1.0],       # identity
        [1.0, 1.0, -1.0, -1.0],     # about i
        [1.0, -1.0, 1.0, -1.0],     # about j
        [1.0, -1.0, -1.0, 1.0],     # about k
    ]
)


def augmented_covariance(x: QTensor) -> np.ndarray:
    """Real-inner-product covariance of the augmented vector [q, q^i, q^j, q^k].

    Input shape (batch, d). The result is a symmetric (4d, 4d) real matrix of
    sixteen d x d blocks: block (a, b) at (m, n) is the covariance
    E{ <q^a_m - mean, q^b_n - mean> } with <p, r> = sum_c p_c r_c. For a
    proper signal the off-diagonal blocks vanish and the diagonal approaches
    4 sigma^2 I. Diagnostic only; no whitening is derived from it.
    """
    if len(x.shape) != 2:
        raise ShapeMismatchError(f"augmented covariance expects (batch, d), got {x.shape}")
    b, d = x.shape
    if b < 2:
        raise DomainError(f"augmented covariance needs batch >= 2, got {b}")
    reps = []
    for signs in _INVOLUTION_SIGNS:
        r = x.data * signs[:, None, None]
        reps.append(r - r.mean(axis=1, keepdims=True))
    out = np.empty((4 * d, 4 * d))
    for a in range(4):
        for bb in range(a, 4):
            block = np.einsum("cbm,cbn->mn", reps[a], reps[bb]) / b
            out[a * d : (a + 1) * d, bb * d : (bb + 1) * d] = block
            if bb != a:
                out[bb * d : (bb + 1) * d, a * d : (a + 1) * d] = block.T
    return out


# -- spectral normalization ------------------------------------------------------


@dataclass
class SNState:
    """Persisted left singular-vector estimate for one normalized matrix."""

    u: np.ndarray | None = None
    power_iters: int = 1
    zero_warning: bool = False

    def __post_init__(self):
        if self.power_iters < 1:
            raise DomainError("power_iters must be >= 1")


def power_iteration_sigma(m: np.ndarray, state: SNState) -> tuple[float, SNState]:
    """Estimate the largest singular value with persisted power iteration.

    Runs ``state.power_iters`` rounds of v <- M^T u / |.|, u <- M v / |.| and
    returns u^T M v. A zero matrix yields sigma 0 with ``zero_warning`` set.
    """
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeMismatchError(f"power iteration expects a matrix, got shape {m.shape}")
    if not m.any():
        state.zero_warning = True
        return 0.0, state
    rows = m.shape[0]
    u = state.u
    if u is None or u.shape != (rows,):
        u = np.full(rows, 1.0 / np.sqrt(rows), dtype=m.dtype)
    v = None
    for _ in range(state.power_iters):
        v = m.T @ u
        nv = np.linalg.norm(v)
        if nv == 0.0:
            # u landed orthogonal to the range; restart from a ramp
            u = np.arange(1, rows + 1, dtype=m.dtype)
            u /= np.linalg.norm(u)
            v = m.T @ u
            nv = np.linalg.norm(v)
            if nv == 0.0:
                state.zero_warning = True
                return 0.0, state
        v /= nv
        u = m @ v
        u /= np.linalg.norm(u)
    state.u = u
    return float(u @ m @ v), state


def real_block_matrix(kernel: QTensor) -> np.ndarray:
    """Materialize the signed 4x4 block structure of a quaternion weight as a
    single real matrix (4*rows, 4*cols); conv kernels are flattened to
    (out, in*k*k) first. Used for spectral estimation and diagnostics only."""
    comps = kernel.data.reshape(4, kernel.shape[0], -1)
    rows, cols = comps.shape[1], comps.shape[2]
    out = np.empty((4 * rows, 4 * cols), dtype=comps.dtype)
    for c in range(4):
        for d in range(4):
            m, s = HAMILTON_TABLE[c][d]
            out[c * rows : (c + 1) * rows, d * cols : (d + 1) * cols] = s * comps[m]
    return out


@dataclass
class SplitSNState:
    """Four independent power-iteration states, one per submatrix."""

    states: list[SNState] = field(default_factory=lambda: [SNState() for _ in range(4)])
    power_iters: int = 1

    def __post_init__(self):
        for s in self.states:
            s.power_iters = self.power_iters


def qsn_split(w: QWeight, state: SplitSNState) -> QWeight:
    """Normalize each submatrix W_c by its own spectral norm estimate."""
    flat = w.kernel.data.reshape(4, w.kernel.shape[0], -1)
    out = np.empty_like(w.kernel.data)
    for c in range(4):
        sigma, _ = power_iteration_sigma(flat[c], state.states[c])
        out[c] = w.kernel.data[c] / sigma if sigma > 0.0 else w.kernel.data[c]
    return QWeight(kernel=QTensor(out), bias=w.bias)


def qsn_full(w: QWeight, state: SNState) -> QWeight:
    """Normalize all four submatrices by the spectral norm of the constructed
    real block matrix, so the constructed matrix of the result has sigma 1."""
    sigma, _ = power_iteration_sigma(real_block_matrix(w.kernel), state)
    if sigma <= 0.0:
        return QWeight(kernel=w.kernel.copy(), bias=w.bias)
    return QWeight(kernel=QTensor(w.kernel.data / sigma), bias=w.bias)
