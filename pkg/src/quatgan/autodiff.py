"""Minimal reverse-mode automatic differentiation over QTensor operations.

A :class:`Tape` records each operation eagerly (op kind, input node ids, the
forward value, and a backward closure). ``backward`` walks the record once in
reverse order and returns the per-component gradient of every registered
parameter: component c of a parameter gradient is the derivative of the loss
with respect to submatrix c, i.e. plain real-valued reverse mode applied to
the four component arrays.

Losses are real scalars carried in the q0 slot of a scalar-shaped QTensor;
q1..q3 of a loss must be zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import layers as L
from .errors import DomainError, ShapeMismatchError
from .qtensor import QTensor

__all__ = ["Tape", "Node", "grad_check", "GradCheckReport"]


class Node:
    """One recorded operation; ``value`` is its eagerly evaluated result."""

    __slots__ = ("tape", "nid", "op", "inputs", "value", "bwd", "param_name", "param_kind")

    def __init__(self, tape, nid, op, inputs, value, bwd=None, param_name=None, param_kind=None):
        self.tape = tape
        self.nid = nid
        self.op = op
        self.inputs = inputs
        self.value = value
        self.bwd = bwd
        self.param_name = param_name
        self.param_kind = param_kind

    def __repr__(self):
        return f"Node({self.nid}, {self.op}, shape={self.value.shape})"


class Tape:
    """Single-writer operation record; recording and backward must not be
    interleaved from multiple threads. Distinct tapes are independent."""

    def __init__(self, needs_grad: bool = True):
        self.nodes: list[Node] = []
        self.params: dict[str, int] = {}
        self.needs_grad = needs_grad
        self.last_visit_order: list[int] = []

    # -- recording ---------------------------------------------------------

    def record(self, op: str, inputs, forward, backward=None) -> Node:
        """Append a node: validates input ids, evaluates ``forward`` eagerly.

        ``forward`` receives the input values; ``backward`` (kept only when
        the tape needs gradients) maps the upstream gradient array to a tuple
        of gradient arrays aligned with ``inputs``.
        """
        ids = []
        for node in inputs:
            if not isinstance(node, Node) or node.tape is not self or node.nid >= len(self.nodes):
                raise DomainError(f"input {node!r} does not belong to this tape")
            ids.append(node.nid)
        value = forward(*(self.nodes[i].value for i in ids))
        node = Node(self, len(self.nodes), op, tuple(ids), value,
                    bwd=backward if self.needs_grad else None)
        self.nodes.append(node)
        return node

    def constant(self, value: QTensor) -> Node:
        return self.record("const", (), lambda: value)

    def param(self, name: str, value: QTensor, kind: str = "quat") -> Node:
        """Register a leaf parameter. ``kind`` is 'quat' for full quaternion
        parameters or 'real' for real-valued ones carried in q0."""
        if name in self.params:
            raise DomainError(f"parameter {name!r} already registered on this tape")
        node = self.record("param", (), lambda: value)
        node.param_name = name
        node.param_kind = kind
        self.params[name] = node.nid
        return node

    # -- backward ----------------------------------------------------------

    def backward(self, loss: Node) -> dict[str, QTensor]:
        """Gradients of a scalar loss for every registered parameter.

        Parameters not on any path to the loss get all-zero gradients.
        """
        if loss.tape is not self:
            raise DomainError("loss node belongs to a different tape")
        lv = loss.value
        if lv.shape not in ((), (1,)):
            raise DomainError(f"loss must be scalar-shaped, got {lv.shape}")
        if np.any(lv.data.reshape(4, -1)[1:] != 0.0):
            raise DomainError("loss must be real: q1..q3 components must be zero")

        grads: list[np.ndarray | None] = [None] * len(self.nodes)
        seed = np.zeros_like(lv.data)
        seed.reshape(4, -1)[0] = 1.0
        grads[loss.nid] = seed

        self.last_visit_order = []
        for nid in range(loss.nid, -1, -1):
            g = grads[nid]
            if g is None:
                continue
            node = self.nodes[nid]
            self.last_visit_order.append(nid)
            if node.bwd is None or not node.inputs:
                continue
            contribs = node.bwd(g)
            for inp, contrib in zip(node.inputs, contribs):
                if contrib is None:
                    continue
                if grads[inp] is None:
                    grads[inp] = contrib.copy() if contrib.base is not None else contrib
                else:
                    grads[inp] = grads[inp] + contrib

        out = {}
        for name, nid in self.params.items():
            g = grads[nid]
            if g is None:
                g = np.zeros_like(self.nodes[nid].value.data)
            out[name] = QTensor(g)
        return out


# -- elementwise / structural ops ---------------------------------------------


def add(a: Node, b: Node) -> Node:
    def fwd(av: QTensor, bv: QTensor) -> QTensor:
        if av.shape != bv.shape:
            raise ShapeMismatchError(f"add shapes differ: {av.shape} vs {bv.shape}")
        return QTensor(av.data + bv.data)

    return a.tape.record("add", (a, b), fwd, lambda g: (g, g))


def sub(a: Node, b: Node) -> Node:
    return a.tape.record("sub", (a, b), lambda av, bv: QTensor(av.data - bv.data),
                         lambda g: (g, -g))


def neg(a: Node) -> Node:
    return a.tape.record("neg", (a,), lambda av: QTensor(-av.data), lambda g: (-g,))


def scale(a: Node, c: float) -> Node:
    c = float(c)
    return a.tape.record("scale", (a,), lambda av: QTensor(av.data * c),
                         lambda g: (g * c,))


def scale_components(a: Node, factors) -> Node:
    """Multiply each quaternion component by its own scalar factor."""
    f = np.asarray(factors, dtype=float).reshape(4, *([1] * 0))

    def fwd(av):
        return QTensor(av.data * f.reshape(4, *([1] * len(av.shape))))

    def bwd(g):
        return (g * f.reshape(4, *([1] * (g.ndim - 1))),)

    return a.tape.record("scale_components", (a,), fwd, bwd)


def mul_elem(a: Node, b: Node) -> Node:
    saved = {}

    def fwd(av, bv):
        if av.shape != bv.shape:
            raise ShapeMismatchError(f"mul shapes differ: {av.shape} vs {bv.shape}")
        saved["a"], saved["b"] = av.data, bv.data
        return QTensor(av.data * bv.data)

    return a.tape.record("mul", (a, b), fwd,
                         lambda g: (g * saved["b"], g * saved["a"]))


def hamilton_mul(a: Node, b: Node) -> Node:
    """Elementwise quaternion product; gradients are g*conj(b) and conj(a)*g."""
    from . import qtensor as qt

    saved = {}

    def fwd(av, bv):
        saved["a"], saved["b"] = av, bv
        return qt.hamilton_product(av, bv)

    def bwd(g):
        gq = QTensor(g)
        ga = qt.hamilton_product(gq, qt.conjugate(saved["b"]))
        gb = qt.hamilton_product(qt.conjugate(saved["a"]), gq)
        return ga.data, gb.data

    return a.tape.record("hamilton", (a, b), fwd, bwd)


def reshape(a: Node, shape) -> Node:
    shape = tuple(shape)
    saved = {}

    def fwd(av):
        saved["shape"] = av.shape
        return av.reshape(shape)

    return a.tape.record("reshape", (a,), fwd,
                         lambda g: (g.reshape((4, *saved["shape"])),))


def sum_components_total(a: Node) -> Node:
    """Sum over all components and elements -> real scalar loss node."""
    saved = {}

    def fwd(av):
        saved["shape"] = av.data.shape
        out = np.zeros(4, dtype=av.dtype)
        out[0] = av.data.sum()
        return QTensor(out)

    def bwd(g):
        return (np.broadcast_to(g.reshape(4, -1)[0, 0], saved["shape"]).copy(),)

    return a.tape.record("sum_components_total", (a,), fwd, bwd)


def inner_const(a: Node, k: QTensor) -> Node:
    """Inner product <a, k> = sum_c sum a_c k_c against a constant."""

    def fwd(av):
        if av.shape != k.shape:
            raise ShapeMismatchError(f"inner shapes differ: {av.shape} vs {k.shape}")
        out = np.zeros(4, dtype=av.dtype)
        out[0] = float((av.data * k.data).sum())
        return QTensor(out)

    return a.tape.record("inner_const", (a,), fwd,
                         lambda g: (g.reshape(4, -1)[0, 0] * k.data,))


# -- layers --------------------------------------------------------------------


def _apply_table_transposed(g_parts, w_parts, matmul):
    """dx_d = sum_c sign(c,d) * (g_c applied-through W_{m(c,d)})."""
    out = []
    for d in range(4):
        acc = None
        for c in range(4):
            m, s = L.HAMILTON_TABLE[c][d]
            term = matmul(g_parts[c], w_parts[m])
            term = term if s > 0 else -term
            acc = term if acc is None else acc + term
        out.append(acc)
    return out


def _weight_grads(g_parts, x_parts, correlate, like):
    dw = [np.zeros_like(like) for _ in range(4)]
    for c in range(4):
        for d in range(4):
            m, s = L.HAMILTON_TABLE[c][d]
            term = correlate(g_parts[c], x_parts[d])
            dw[m] += term if s > 0 else -term
    return np.stack(dw)


def qdense(x: Node, kernel: Node, bias: Node | None = None) -> Node:
    saved = {}
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def fwd(xv, kv, *rest):
        from .layers import QWeight

        saved["x"], saved["k"] = xv.data, kv.data
        w = QWeight(kernel=kv, bias=rest[0] if rest else None)
        return L.qdense_forward(xv, w)

    def bwd(g):
        xd, kd = saved["x"], saved["k"]
        dx = np.stack(_apply_table_transposed(g, kd, lambda gc, wm: np.matmul(gc, wm)))
        dk = _weight_grads(g, xd, lambda gc, xdv: np.einsum("bo,bi->oi", gc, xdv), kd[0])
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=1)

    return x.tape.record("qdense", inputs, fwd, bwd)


def qconv2d(x: Node, kernel: Node, bias: Node | None, cfg: L.ConvConfig) -> Node:
    saved = {}
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def fwd(xv, kv, *rest):
        from .layers import QWeight

        w = QWeight(kernel=kv, bias=rest[0] if rest else None)
        y, cols = L._qconv2d_with_cache(xv, w, cfg)
        if x.tape.needs_grad:
            saved["cols"] = cols
            saved["wflat"] = kv.data.reshape(4, cfg.out_q, -1)
            saved["x_shape"] = xv.data[0].shape
        return y

    def bwd(g):
        b, o = g.shape[1], cfg.out_q
        gflat = g.reshape(4, b, o, -1).transpose(0, 1, 3, 2)  # (4, B, P, O)
        wflat, cols = saved["wflat"], saved["cols"]
        dcols = _apply_table_transposed(gflat, wflat, lambda gc, wm: np.matmul(gc, wm))
        dx = np.stack(
            [L.col2im(dcols[d], saved["x_shape"], cfg.kernel, cfg.stride, cfg.padding)
             for d in range(4)]
        )
        dwflat = _weight_grads(
            gflat, cols, lambda gc, xd: np.einsum("bpo,bpi->oi", gc, xd), wflat[0]
        )
        dk = dwflat.reshape(4, cfg.out_q, cfg.in_q, cfg.kernel, cfg.kernel)
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=(1, 3, 4))

    return x.tape.record("qconv2d", inputs, fwd, bwd)


def qtconv2d(x: Node, kernel: Node, bias: Node | None, cfg: L.ConvConfig) -> Node:
    saved = {}
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def fwd(xv, kv, *rest):
        from .layers import QWeight

        w = QWeight(kernel=kv, bias=rest[0] if rest else None)
        y, x2 = L._qtconv2d_with_cache(xv, w, cfg)
        if x.tape.needs_grad:
            saved["x2"] = x2
            saved["wflat"] = kv.data.reshape(4, cfg.in_q, -1)
            saved["in_spatial"] = xv.shape[-2:]
        return y

    def bwd(g):
        gcols = np.stack(
            [L.im2col(g[c], cfg.kernel, cfg.stride, cfg.padding) for c in range(4)]
        )  # (4, B, P_in, O*k*k)
        wflat = saved["wflat"]
        dx2 = _apply_table_transposed(gcols, wflat,
                                      lambda gc, wm: np.matmul(gc, wm.T))
        b = g.shape[1]
        h, w2 = saved["in_spatial"]
        dx = np.stack(
            [dx2[d].transpose(0, 2, 1).reshape(b, cfg.in_q, h, w2) for d in range(4)]
        )
        dwflat = _weight_grads(
            gcols, saved["x2"],
            lambda gc, xd: np.einsum("bpi,bpj->ij", xd, gc), wflat[0]
        )
        dk = dwflat.reshape(4, cfg.in_q, cfg.out_q, cfg.kernel, cfg.kernel)
        if bias is None:
            return dx, dk
        return dx, dk, g.sum(axis=(1, 3, 4))

    return x.tape.record("qtconv2d", inputs, fwd, bwd)


def split_act(x: Node, kind: str, alpha: float = 0.2) -> Node:
    saved = {}

    def fwd(xv):
        y = L.split_activation(xv, kind, alpha)
        saved["x"], saved["y"] = xv.data, y.data
        return y

    def bwd(g):
        xd, yd = saved["x"], saved["y"]
        if kind == "relu":
            return (g * (xd > 0.0),)
        if kind == "leaky_relu":
            return (g * np.where(xd > 0.0, 1.0, alpha),)
        if kind == "tanh":
            return (g * (1.0 - yd * yd),)
        if kind == "sigmoid":
            return (g * yd * (1.0 - yd),)
        raise DomainError(f"no gradient for activation {kind!r}")

    return x.tape.record(f"split_{kind}", (x,), fwd, bwd)


def avg_pool(x: Node, window: int) -> Node:
    saved = {}

    def fwd(xv):
        saved["shape"] = xv.data.shape
        return L.split_pool(xv, "avg", window)

    def bwd(g):
        g4 = np.repeat(np.repeat(g, window, axis=-2), window, axis=-1)
        return (g4 / (window * window),)

    return x.tape.record("avg_pool", (x,), fwd, bwd)


def sum_pool(x: Node, window: int) -> Node:
    def bwd(g):
        return (np.repeat(np.repeat(g, window, axis=-2), window, axis=-1),)

    return x.tape.record("sum_pool", (x,), lambda xv: L.split_pool(xv, "sum", window), bwd)


def global_sum_pool(x: Node) -> Node:
    saved = {}

    def fwd(xv):
        saved["shape"] = xv.data.shape
        return L.global_sum_pool(xv)

    def bwd(g):
        return (np.broadcast_to(g, saved["shape"]).copy(),)

    return x.tape.record("global_sum_pool", (x,), fwd, bwd)


def guided_max_pool(x: Node, window: int) -> Node:
    saved = {}

    def fwd(xv):
        y, idx = L._guided_max_pool_with_idx(xv, window)
        saved["idx"] = idx
        saved["shape"] = xv.data.shape
        return y

    def bwd(g):
        # route each output quaternion's gradient to the winning position
        b4, bb, cc, ho, wo = g.shape
        flat = np.zeros((4, bb, cc, ho, wo, window * window), dtype=g.dtype)
        np.put_along_axis(flat, saved["idx"][None, ..., None], g[..., None], axis=-1)
        v = flat.reshape(4, bb, cc, ho, wo, window, window).transpose(0, 1, 2, 3, 5, 4, 6)
        return (v.reshape(saved["shape"]),)

    return x.tape.record("guided_max_pool", (x,), fwd, bwd)


def upsample2x(x: Node) -> Node:
    def bwd(g):
        s = g.shape
        v = g.reshape(*s[:-2], s[-2] // 2, 2, s[-1] // 2, 2)
        return (v.sum(axis=(-3, -1)),)

    return x.tape.record("upsample2x", (x,), lambda xv: L.upsample_nearest2x(xv), bwd)


# -- real-valued bridges (values carried in q0) ---------------------------------


def real_dense(x: Node, kernel: Node, bias: Node | None = None) -> Node:
    """Real fully connected layer on q0-carried data: y0 = x0 W^T + b0."""
    saved = {}
    inputs = (x, kernel) if bias is None else (x, kernel, bias)

    def fwd(xv, kv, *rest):
        saved["x0"], saved["k0"] = xv.q0, kv.q0
        y0 = np.matmul(xv.q0, kv.q0.T)
        if rest:
            y0 = y0 + rest[0].q0[None, :]
        out = np.zeros((4, *y0.shape), dtype=y0.dtype)
        out[0] = y0
        return QTensor(out)

    def bwd(g):
        g0 = g[0]
        dx = np.zeros((4, *saved["x0"].shape), dtype=g.dtype)
        dx[0] = np.matmul(g0, saved["k0"])
        dk = np.zeros((4, *saved["k0"].shape), dtype=g.dtype)
        dk[0] = np.einsum("bo,bi->oi", g0, saved["x0"])
        if bias is None:
            return dx, dk
        db = np.zeros((4, saved["k0"].shape[0]), dtype=g.dtype)
        db[0] = g0.sum(axis=0)
        return dx, dk, db

    return x.tape.record("real_dense", inputs, fwd, bwd)


def real_to_quat(x: Node, channels: int, h: int, w: int) -> Node:
    """Reinterpret a q0-carried real vector (B, 4*channels*h*w) as a quaternion
    map (B, channels, h, w): real channel 4c+r becomes component r of
    quaternion channel c."""
    saved = {}

    def fwd(xv):
        b = xv.shape[0]
        saved["b"] = b
        v = xv.q0.reshape(b, channels, 4, h, w)
        return QTensor(np.ascontiguousarray(v.transpose(2, 0, 1, 3, 4)))

    def bwd(g):
        b = saved["b"]
        g0 = g.transpose(1, 2, 0, 3, 4).reshape(b, 4 * channels * h * w)
        dx = np.zeros((4, b, 4 * channels * h * w), dtype=g.dtype)
        dx[0] = g0
        return (dx,)

    return x.tape.record("real_to_quat", (x,), fwd, bwd)


def flatten_spatial(x: Node) -> Node:
    """(B, C, H, W) -> (B, C*H*W), keeping quaternion components."""
    saved = {}

    def fwd(xv):
        saved["shape"] = xv.data.shape
        s = xv.shape
        return xv.reshape((s[0], s[1] * s[2] * s[3]))

    return x.tape.record("flatten_spatial", (x,), fwd,
                         lambda g: (g.reshape(saved["shape"]),))


def component_sum(x: Node) -> Node:
    """(B, 1) quaternion decisions -> (B,) real scalars q0+q1+q2+q3."""
    saved = {}

    def fwd(xv):
        if len(xv.shape) != 2 or xv.shape[1] != 1:
            raise ShapeMismatchError(f"component_sum expects (batch, 1), got {xv.shape}")
        saved["b"] = xv.shape[0]
        out = np.zeros((4, xv.shape[0]), dtype=xv.dtype)
        out[0] = xv.data.sum(axis=0)[:, 0]
        return QTensor(out)

    def bwd(g):
        return (np.broadcast_to(g[0][None, :, None], (4, saved["b"], 1)).copy(),)

    return x.tape.record("component_sum", (x,), fwd, bwd)


def real_sigmoid(x: Node) -> Node:
    """Logistic function on the q0 channel (other components must be unused)."""
    saved = {}

    def fwd(xv):
        out = np.zeros_like(xv.data)
        out[0] = L._sigmoid(xv.q0)
        saved["y0"] = out[0]
        return QTensor(out)

    def bwd(g):
        dg = np.zeros_like(g)
        dg[0] = g[0] * saved["y0"] * (1.0 - saved["y0"])
        return (dg,)

    return x.tape.record("real_sigmoid", (x,), fwd, bwd)


# -- gradient checking ----------------------------------------------------------


@dataclass
class GradCheckReport:
    tolerance: float
    step: float
    per_param: dict[str, float] = field(default_factory=dict)

    @property
    def max_error(self) -> float:
        return max(self.per_param.values()) if self.per_param else 0.0

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self):
        status = "PASS" if self.passed else "FAIL"
        worst = ", ".join(f"{k}={v:.3e}" for k, v in sorted(self.per_param.items()))
        return f"grad_check {status} (tol {self.tolerance:g}): {worst}"


def grad_check(build, params: dict[str, QTensor], tolerance: float = 1e-4,
               step: float = 1e-6, max_entries: int | None = None) -> GradCheckReport:
    """Compare tape gradients against central finite differences.

    ``build(tape, leaves)`` must construct a scalar loss node from the dict of
    parameter leaf nodes; it is re-invoked for every perturbed evaluation, so
    it has to be deterministic. Parameters are perturbed one real component
    entry at a time; ``max_entries`` caps the perturbed entries per parameter
    (an evenly spaced deterministic subset) to keep large checks affordable.
    64-bit inputs are required for the comparison to mean anything.
    """

    def loss_value(values: dict[str, QTensor]) -> float:
        tape = Tape(needs_grad=False)
        leaves = {name: tape.param(name, v) for name, v in values.items()}
        node = build(tape, leaves)
        return float(node.value.data.reshape(4, -1)[0, 0])

    tape = Tape()
    leaves = {name: tape.param(name, v) for name, v in params.items()}
    loss = build(tape, leaves)
    analytic = tape.backward(loss)

    report = GradCheckReport(tolerance=tolerance, step=step)
    for name, value in params.items():
        base = value.data
        worst = 0.0
        flat_an = analytic[name].data.reshape(-1)
        if max_entries is None or base.size <= max_entries:
            indices = range(base.size)
        else:
            indices = np.unique(np.linspace(0, base.size - 1, max_entries).astype(int))
        for idx in indices:
            perturbed = {k: (v.copy() if k == name else v) for k, v in params.items()}
            pdata = perturbed[name].data.reshape(-1)
            pdata[idx] = base.reshape(-1)[idx] + step
            up = loss_value(perturbed)
            pdata[idx] = base.reshape(-1)[idx] - step
            down = loss_value(perturbed)
            numeric = (up - down) / (2.0 * step)
            a = flat_an[idx]
            # the 1e-3 floor turns near-zero entries into an absolute
            # comparison at tolerance*1e-3, below central-difference noise
            denom = max(abs(a), abs(numeric), 1e-3)
            worst = max(worst, abs(a - numeric) / denom)
        report.per_param[name] = worst
    return report
