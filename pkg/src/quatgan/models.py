"""GAN architectures in the quaternion framework: declarative specs, the
module/Model machinery, residual blocks, parameter accounting, and real-valued
twin networks for comparison.

Block channel conventions follow the spectral-norm GAN lineage: generator
residual blocks use conv1 in->out / conv2 out->out with a learnable 1x1
shortcut, discriminator blocks use conv1 in->in / conv2 in->out with a
learnable shortcut only when the block changes width or downsamples (the
dimension-preserving refiner keeps an identity shortcut).
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import layers as L
from . import qnorm
from .errors import ConfigError, ShapeMismatchError
from .qtensor import QTensor

__all__ = [
    "ModelSpec",
    "Model",
    "RealModel",
    "build_qdcgan",
    "build_qsngan",
    "build_real_twin",
    "build_gan",
    "count_parameters",
    "apply_spectral_norm",
    "sn_warmup",
    "measure_sigmas",
    "PRESETS",
    "preset_spec",
]

Mode = namedtuple("Mode", ["training", "update_stats"])


@dataclass
class Param:
    value: QTensor
    kind: str = "quat"  # 'quat' or 'real' (real values carried in q0)


# -- module machinery -----------------------------------------------------------


class Module:
    def __init__(self, name: str):
        self.name = name

    def params(self):
        return []

    def states(self):
        """(name, array) pairs of non-trainable state for checkpointing."""
        return []

    def load_state(self, name: str, arr: np.ndarray):
        raise KeyError(name)

    def init_params(self, rng: np.random.Generator, criterion: str):
        pass

    def forward(self, leaves, x, mode: Mode):
        raise NotImplementedError


class _WeightedModule(Module):
    """Base for modules with a quaternion kernel that may be spectrally normalized."""

    def __init__(self, name):
        super().__init__(name)
        self.sn_mode = None
        self.sn_full_state = None
        self.sn_split_state = None
        self.sn_scale = None  # per-component 1/sigma factors for the current step

    def enable_sn(self, mode: str):
        self.sn_mode = mode
        if mode == "full":
            self.sn_full_state = qnorm.SNState()
        elif mode == "split":
            self.sn_split_state = qnorm.SplitSNState()
        else:
            raise ConfigError(f"unknown spectral norm mode {mode!r}")

    def update_sn_scale(self):
        if self.sn_mode is None:
            return
        if self.sn_mode == "full":
            sigma, _ = qnorm.power_iteration_sigma(
                qnorm.real_block_matrix(self.kernel.value), self.sn_full_state
            )
            self.sn_scale = np.full(4, 1.0 / sigma if sigma > 0 else 1.0)
        else:
            flat = self.kernel.value.data.reshape(4, self.kernel.value.shape[0], -1)
            scale = np.ones(4)
            for c in range(4):
                sigma, _ = qnorm.power_iteration_sigma(flat[c], self.sn_split_state.states[c])
                if sigma > 0:
                    scale[c] = 1.0 / sigma
            self.sn_scale = scale

    def effective_kernel(self) -> QTensor:
        if self.sn_scale is None:
            return self.kernel.value
        s = self.sn_scale.reshape(4, *([1] * len(self.kernel.value.shape)))
        return QTensor(self.kernel.value.data * s)

    def _kernel_node(self, leaves):
        node = leaves[f"{self.name}.kernel"]
        if self.sn_scale is not None:
            node = ad.scale_components(node, self.sn_scale)
        return node

    def states(self):
        out = []
        if self.sn_mode == "full" and self.sn_full_state.u is not None:
            out.append((f"{self.name}.sn_u", self.sn_full_state.u))
        if self.sn_mode == "split":
            for c, st in enumerate(self.sn_split_state.states):
                if st.u is not None:
                    out.append((f"{self.name}.sn_u{c}", st.u))
        return out

    def load_state(self, name, arr):
        if self.sn_mode == "full" and name == f"{self.name}.sn_u":
            self.sn_full_state.u = arr.astype(self.kernel.value.dtype)
            return
        if self.sn_mode == "split" and name.startswith(f"{self.name}.sn_u"):
            c = int(name[-1])
            self.sn_split_state.states[c].u = arr.astype(self.kernel.value.dtype)
            return
        raise KeyError(name)


class QDense(_WeightedModule):
    def __init__(self, name, in_q, out_q, bias=True, dtype=np.float64):
        super().__init__(name)
        self.in_q, self.out_q = in_q, out_q
        self.kernel = Param(QTensor.zeros((out_q, in_q), dtype=dtype))
        self.bias = Param(QTensor.zeros((out_q,), dtype=dtype)) if bias else None

    def params(self):
        out = [(f"{self.name}.kernel", self.kernel)]
        if self.bias is not None:
            out.append((f"{self.name}.bias", self.bias))
        return out

    def init_params(self, rng, criterion):
        w = L.quaternion_init((self.out_q, self.in_q), self.in_q, self.out_q, criterion, rng)
        self.kernel.value.data[...] = w.kernel.data

    def forward(self, leaves, x, mode):
        b = leaves.get(f"{self.name}.bias") if self.bias is not None else None
        return ad.qdense(x, self._kernel_node(leaves), b)


class QConv(_WeightedModule):
    def __init__(self, name, cfg: L.ConvConfig, bias=True, dtype=np.float64):
        super().__init__(name)
        self.cfg = cfg
        k = cfg.kernel
        self.kernel = Param(QTensor.zeros((cfg.out_q, cfg.in_q, k, k), dtype=dtype))
        self.bias = Param(QTensor.zeros((cfg.out_q,), dtype=dtype)) if bias else None

    def params(self):
        out = [(f"{self.name}.kernel", self.kernel)]
        if self.bias is not None:
            out.append((f"{self.name}.bias", self.bias))
        return out

    def init_params(self, rng, criterion):
        k = self.cfg.kernel
        rf = k * k
        w = L.quaternion_init(
            (self.cfg.out_q, self.cfg.in_q, k, k),
            self.cfg.in_q * rf, self.cfg.out_q * rf, criterion, rng,
        )
        self.kernel.value.data[...] = w.kernel.data

    def forward(self, leaves, x, mode):
        b = leaves.get(f"{self.name}.bias") if self.bias is not None else None
        return ad.qconv2d(x, self._kernel_node(leaves), b, self.cfg)


class QTConv(_WeightedModule):
    def __init__(self, name, cfg: L.ConvConfig, bias=True, dtype=np.float64):
        super().__init__(name)
        self.cfg = cfg
        k = cfg.kernel
        self.kernel = Param(QTensor.zeros((cfg.in_q, cfg.out_q, k, k), dtype=dtype))
        self.bias = Param(QTensor.zeros((cfg.out_q,), dtype=dtype)) if bias else None

    def params(self):
        out = [(f"{self.name}.kernel", self.kernel)]
        if self.bias is not None:
            out.append((f"{self.name}.bias", self.bias))
        return out

    def init_params(self, rng, criterion):
        k = self.cfg.kernel
        rf = k * k
        w = L.quaternion_init(
            (self.cfg.in_q, self.cfg.out_q, k, k),
            self.cfg.in_q * rf, self.cfg.out_q * rf, criterion, rng,
            bias_channels=self.cfg.out_q,
        )
        self.kernel.value.data[...] = w.kernel.data

    def forward(self, leaves, x, mode):
        b = leaves.get(f"{self.name}.bias") if self.bias is not None else None
        return ad.qtconv2d(x, self._kernel_node(leaves), b, self.cfg)


class RealDense(Module):
    """Real-valued fully connected layer carried in the q0 slot."""

    def __init__(self, name, in_f, out_f, dtype=np.float64):
        super().__init__(name)
        self.in_f, self.out_f = in_f, out_f
        self.kernel = Param(QTensor.zeros((out_f, in_f), dtype=dtype), kind="real")
        self.bias = Param(QTensor.zeros((out_f,), dtype=dtype), kind="real")

    def params(self):
        return [(f"{self.name}.kernel", self.kernel), (f"{self.name}.bias", self.bias)]

    def init_params(self, rng, criterion):
        a = np.sqrt(6.0 / (self.in_f + self.out_f))
        self.kernel.value.data[0] = rng.uniform(-a, a, size=(self.out_f, self.in_f))

    def forward(self, leaves, x, mode):
        return ad.real_dense(x, leaves[f"{self.name}.kernel"], leaves[f"{self.name}.bias"])


class QBN(Module):
    def __init__(self, name, channels, momentum=0.9, epsilon=1e-5, dtype=np.float64):
        super().__init__(name)
        self.state = qnorm.QBNState(channels, momentum=momentum, epsilon=epsilon, dtype=dtype)

    def params(self):
        return [
            (f"{self.name}.gamma", Param(self.state.gamma, kind="real")),
            (f"{self.name}.beta", Param(self.state.beta, kind="quat")),
        ]

    def states(self):
        return [
            (f"{self.name}.running_mean", self.state.running_mean.data),
            (f"{self.name}.running_var", self.state.running_var),
            (f"{self.name}.bn_init", np.array([1.0 if self.state.initialized else 0.0])),
        ]

    def load_state(self, name, arr):
        if name == f"{self.name}.running_mean":
            self.state.running_mean.data[...] = arr
        elif name == f"{self.name}.running_var":
            self.state.running_var[...] = arr
        elif name == f"{self.name}.bn_init":
            self.state.initialized = bool(arr.reshape(-1)[0])
        else:
            raise KeyError(name)

    def forward(self, leaves, x, mode):
        return qnorm.qbn(
            x,
            leaves[f"{self.name}.gamma"],
            leaves[f"{self.name}.beta"],
            self.state,
            training=mode.training,
            update_running=mode.update_stats,
        )


class SplitAct(Module):
    def __init__(self, name, kind, alpha=0.2):
        super().__init__(name)
        self.kind, self.alpha = kind, alpha

    def forward(self, leaves, x, mode):
        return ad.split_act(x, self.kind, self.alpha)


class AvgPool(Module):
    def __init__(self, name, window=2):
        super().__init__(name)
        self.window = window

    def forward(self, leaves, x, mode):
        return ad.avg_pool(x, self.window)


class GlobalSumPool(Module):
    def forward(self, leaves, x, mode):
        return ad.global_sum_pool(x)


class Upsample2x(Module):
    def forward(self, leaves, x, mode):
        return ad.upsample2x(x)


class FlattenSpatial(Module):
    def forward(self, leaves, x, mode):
        return ad.flatten_spatial(x)


class ReshapeToMap(Module):
    def __init__(self, name, channels, h, w):
        super().__init__(name)
        self.channels, self.h, self.w = channels, h, w

    def forward(self, leaves, x, mode):
        return ad.reshape(x, (x.value.shape[0], self.channels, self.h, self.w))


class RealToQuat(Module):
    def __init__(self, name, channels, h, w):
        super().__init__(name)
        self.channels, self.h, self.w = channels, h, w

    def forward(self, leaves, x, mode):
        return ad.real_to_quat(x, self.channels, self.h, self.w)


class ComponentSum(Module):
    def forward(self, leaves, x, mode):
        return ad.component_sum(x)


class Composite(Module):
    """A module made of named children run by a ``wire`` function."""

    def __init__(self, name, children: dict[str, Module]):
        super().__init__(name)
        self.children = children

    def params(self):
        out = []
        for child in self.children.values():
            out.extend(child.params())
        return out

    def states(self):
        out = []
        for child in self.children.values():
            out.extend(child.states())
        return out

    def load_state(self, name, arr):
        for child in self.children.values():
            try:
                child.load_state(name, arr)
                return
            except KeyError:
                continue
        raise KeyError(name)

    def init_params(self, rng, criterion):
        for child in self.children.values():
            child.init_params(rng, criterion)


class GenResBlock(Composite):
    """Upsampling generator residual block: [QBN + split ReLU + conv3x3] x 2 on
    the residual path, nearest upsample x2 before the first conv, and an
    upsample + 1x1 conv shortcut."""

    def __init__(self, name, in_f, out_f, dtype=np.float64):
        _require_quat_width(in_f, out_f)
        i, o = in_f // 4, out_f // 4
        children = {
            "bn1": QBN(f"{name}.bn1", i, dtype=dtype),
            "conv1": QConv(f"{name}.conv1", L.ConvConfig(3, 1, 1, i, o), dtype=dtype),
            "bn2": QBN(f"{name}.bn2", o, dtype=dtype),
            "conv2": QConv(f"{name}.conv2", L.ConvConfig(3, 1, 1, o, o), dtype=dtype),
            "sc": QConv(f"{name}.sc", L.ConvConfig(1, 1, 0, i, o), dtype=dtype),
        }
        super().__init__(name, children)

    def forward(self, leaves, x, mode):
        c = self.children
        h = c["bn1"].forward(leaves, x, mode)
        h = ad.split_act(h, "relu")
        h = ad.upsample2x(h)
        h = c["conv1"].forward(leaves, h, mode)
        h = c["bn2"].forward(leaves, h, mode)
        h = ad.split_act(h, "relu")
        h = c["conv2"].forward(leaves, h, mode)
        sc = ad.upsample2x(x)
        sc = c["sc"].forward(leaves, sc, mode)
        return ad.add(h, sc)


class DiscResBlock(Composite):
    """Discriminator residual block: [split ReLU + conv3x3] x 2 (QBN replaced
    by spectral normalization), average pooling when downsampling; the
    shortcut is pool + 1x1 conv, or identity when the block keeps both width
    and resolution (the refiner)."""

    def __init__(self, name, in_f, out_f, downsample, dtype=np.float64):
        _require_quat_width(in_f, out_f)
        i, o = in_f // 4, out_f // 4
        self.downsample = downsample
        self.learn_sc = downsample or (in_f != out_f)
        children = {
            "conv1": QConv(f"{name}.conv1", L.ConvConfig(3, 1, 1, i, i), dtype=dtype),
            "conv2": QConv(f"{name}.conv2", L.ConvConfig(3, 1, 1, i, o), dtype=dtype),
        }
        if self.learn_sc:
            children["sc"] = QConv(f"{name}.sc", L.ConvConfig(1, 1, 0, i, o), dtype=dtype)
        super().__init__(name, children)

    def forward(self, leaves, x, mode):
        c = self.children
        h = ad.split_act(x, "relu")
        h = c["conv1"].forward(leaves, h, mode)
        h = ad.split_act(h, "relu")
        h = c["conv2"].forward(leaves, h, mode)
        if self.downsample:
            h = ad.avg_pool(h, 2)
        sc = x
        if self.downsample:
            sc = ad.avg_pool(sc, 2)
        if self.learn_sc:
            sc = c["sc"].forward(leaves, sc, mode)
        return ad.add(h, sc)


class FirstDiscBlock(Composite):
    """Input block of the discriminator: conv -> split ReLU -> conv -> avg
    pool on the residual path, 1x1 conv -> avg pool on the shortcut, no QBN."""

    def __init__(self, name, out_f, dtype=np.float64):
        _require_quat_width(out_f)
        o = out_f // 4
        children = {
            "conv1": QConv(f"{name}.conv1", L.ConvConfig(3, 1, 1, 1, o), dtype=dtype),
            "conv2": QConv(f"{name}.conv2", L.ConvConfig(3, 1, 1, o, o), dtype=dtype),
            "sc": QConv(f"{name}.sc", L.ConvConfig(1, 1, 0, 1, o), dtype=dtype),
        }
        super().__init__(name, children)

    def forward(self, leaves, x, mode):
        c = self.children
        h = c["conv1"].forward(leaves, x, mode)
        h = ad.split_act(h, "relu")
        h = c["conv2"].forward(leaves, h, mode)
        h = ad.avg_pool(h, 2)
        sc = c["sc"].forward(leaves, x, mode)
        sc = ad.avg_pool(sc, 2)
        return ad.add(h, sc)


def _require_quat_width(*widths):
    for w in widths:
        if w % 4:
            raise ConfigError(f"real-channel width {w} not divisible by 4")


# -- model ------------------------------------------------------------------------


class Model:
    """Ordered module list with a tape-forward entry point."""

    def __init__(self, name: str, modules: list[Module]):
        self.name = name
        self.modules = modules

    def parameters(self) -> dict[str, Param]:
        out = {}
        for m in self.modules:
            for pname, p in m.params():
                if pname in out:
                    raise ConfigError(f"duplicate parameter name {pname!r}")
                out[pname] = p
        return out

    def param_tensors(self) -> dict[str, QTensor]:
        return {k: p.value for k, p in self.parameters().items()}

    def states(self) -> dict[str, np.ndarray]:
        out = {}
        for m in self.modules:
            for sname, arr in m.states():
                out[sname] = arr
        return out

    def load_state(self, name, arr):
        for m in self.modules:
            try:
                m.load_state(name, arr)
                return
            except KeyError:
                continue
        raise KeyError(name)

    def init_params(self, rng: np.random.Generator, criterion: str = "glorot"):
        for m in self.modules:
            m.init_params(rng, criterion)

    def bind(self, tape: ad.Tape) -> dict[str, ad.Node]:
        return {name: tape.param(name, p.value, p.kind)
                for name, p in self.parameters().items()}

    def forward(self, tape: ad.Tape, x: ad.Node, training: bool = False,
                update_stats: bool | None = None, leaves=None) -> ad.Node:
        if leaves is None:
            leaves = self.bind(tape)
        mode = Mode(training=training,
                    update_stats=training if update_stats is None else update_stats)
        h = x
        for m in self.modules:
            h = m.forward(leaves, h, mode)
        return h

    def forward_array(self, x: QTensor, training: bool = False,
                      update_stats: bool = False) -> QTensor:
        """Pure forward (no gradients recorded)."""
        tape = ad.Tape(needs_grad=False)
        node = tape.constant(x)
        return self.forward(tape, node, training=training, update_stats=update_stats).value

    def weighted_modules(self):
        for m in self.modules:
            stack = [m]
            while stack:
                cur = stack.pop()
                if isinstance(cur, Composite):
                    stack.extend(reversed(list(cur.children.values())))
                elif isinstance(cur, _WeightedModule):
                    yield cur

    def astype(self, dtype):
        for _, p in self.parameters().items():
            p.value.data = p.value.data.astype(dtype)
        for m in self.modules:
            stack = [m]
            while stack:
                cur = stack.pop()
                if isinstance(cur, Composite):
                    stack.extend(cur.children.values())
                elif isinstance(cur, QBN):
                    cur.state.running_mean.data = cur.state.running_mean.data.astype(dtype)
                    cur.state.running_var = cur.state.running_var.astype(dtype)
        return self


def count_parameters(model) -> int:
    """Exact count of trainable real scalars (quaternion parameters count all
    four components; real-kind parameters count the q0 payload only)."""
    if isinstance(model, RealModel):
        return model.count_parameters()
    total = 0
    for _, p in model.parameters().items():
        total += p.value.data.size if p.kind == "quat" else p.value.q0.size
    return total


def apply_spectral_norm(model: Model):
    """Refresh every normalized weight's 1/sigma scale (one persisted power
    iteration per weight); called before each discriminator forward."""
    for m in model.weighted_modules():
        m.update_sn_scale()


def sn_warmup(model: Model, iters: int = 20):
    for _ in range(iters):
        apply_spectral_norm(model)


def measure_sigmas(model: Model) -> dict[str, float]:
    """True spectral norms (SVD) of the effective weights, per weighted module.

    Full/no normalization measures the constructed real block matrix; split
    normalization measures the worst per-submatrix norm, matching what that
    mode claims to control.
    """
    out = {}
    for m in model.weighted_modules():
        k = m.effective_kernel()
        if m.sn_mode == "split":
            flat = k.data.reshape(4, k.shape[0], -1)
            out[m.name] = max(float(np.linalg.svd(flat[c], compute_uv=False)[0])
                              for c in range(4))
        else:
            out[m.name] = float(
                np.linalg.svd(qnorm.real_block_matrix(k), compute_uv=False)[0]
            )
    return out


# -- specs & builders ----------------------------------------------------------------


@dataclass
class ModelSpec:
    """Declarative architecture description shared by builders and twins.

    ``g_widths`` lists real-channel widths: the initial feature width followed
    by each generator block's output width. ``d_widths`` lists the first
    block's width followed by each discriminator block's output width;
    ``d_downsample`` flags downsampling per post-first block (defaults to all
    but the last).
    """

    family: str
    image_size: int
    g_widths: list[int]
    d_widths: list[int]
    noise_dim: int = 128
    base_spatial: int = 4
    d_downsample: list[bool] | None = None
    norm: str = "qbn"
    sn: str = "full"

    def __post_init__(self):
        if self.family not in ("qsngan", "qdcgan"):
            raise ConfigError(f"unknown model family {self.family!r}")
        if self.norm not in ("qbn", "none"):
            raise ConfigError(f"unknown norm {self.norm!r}")
        if self.sn not in ("none", "split", "full"):
            raise ConfigError(f"unknown sn mode {self.sn!r}")
        for w in self.g_widths + self.d_widths:
            if w % 4:
                raise ConfigError(f"filter width {w} not divisible by 4")
        if self.family == "qsngan":
            ups = len(self.g_widths) - 1
            if self.d_downsample is None:
                self.d_downsample = [True] * (len(self.d_widths) - 2) + [False]
            if len(self.d_downsample) != len(self.d_widths) - 1:
                raise ConfigError("d_downsample must cover every post-first block")
        else:
            ups = len(self.g_widths)
            if self.noise_dim % 4:
                raise ConfigError("qdcgan noise_dim must be divisible by 4")
        if self.base_spatial * 2 ** ups != self.image_size:
            raise ConfigError(
                f"image size {self.image_size} not reachable from base {self.base_spatial} "
                f"with {ups} doubling blocks"
            )


def build_qsngan(spec: ModelSpec, dtype=np.float64) -> tuple[Model, Model]:
    if spec.family != "qsngan":
        raise ConfigError(f"build_qsngan got family {spec.family!r}")
    if spec.norm != "qbn":
        raise ConfigError("qsngan generator blocks are built around qbn; set norm='qbn'")
    s = spec.base_spatial
    base = spec.g_widths[0]
    g_modules: list[Module] = [
        RealDense("g.fc", spec.noise_dim, s * s * base, dtype=dtype),
        RealToQuat("g.enc", base // 4, s, s),
    ]
    prev = base
    for i, w in enumerate(spec.g_widths[1:], start=1):
        g_modules.append(GenResBlock(f"g.b{i}", prev, w, dtype=dtype))
        prev = w
    g_modules += [
        QBN("g.out_bn", prev // 4, dtype=dtype),
        SplitAct("g.out_act", "relu"),
        QConv("g.out_conv", L.ConvConfig(3, 1, 1, prev // 4, 1), dtype=dtype),
        SplitAct("g.out_tanh", "tanh"),
    ]
    g = Model("g", g_modules)

    d_modules: list[Module] = [FirstDiscBlock("d.b0", spec.d_widths[0], dtype=dtype)]
    prev = spec.d_widths[0]
    for i, (w, down) in enumerate(zip(spec.d_widths[1:], spec.d_downsample), start=1):
        d_modules.append(DiscResBlock(f"d.b{i}", prev, w, downsample=down, dtype=dtype))
        prev = w
    d_modules += [
        SplitAct("d.out_act", "relu"),
        GlobalSumPool("d.pool"),
        FlattenSpatial("d.flat"),
        QDense("d.fc", prev // 4, 1, dtype=dtype),
        ComponentSum("d.proj"),
    ]
    d = Model("d", d_modules)
    if spec.sn != "none":
        for m in d.weighted_modules():
            m.enable_sn(spec.sn)
    return g, d


def build_qdcgan(spec: ModelSpec, dtype=np.float64) -> tuple[Model, Model]:
    if spec.family != "qdcgan":
        raise ConfigError(f"build_qdcgan got family {spec.family!r}")
    s = spec.base_spatial
    widths = spec.g_widths
    g_modules: list[Module] = [
        QDense("g.fc", spec.noise_dim // 4, widths[0] // 4 * s * s, dtype=dtype),
        ReshapeToMap("g.reshape", widths[0] // 4, s, s),
    ]
    chain = widths + [4]
    for i in range(len(chain) - 1):
        cfg = L.ConvConfig(4, 2, 1, chain[i] // 4, chain[i + 1] // 4)
        g_modules.append(QTConv(f"g.t{i}", cfg, dtype=dtype))
        if i < len(chain) - 2:
            if spec.norm == "qbn":
                g_modules.append(QBN(f"g.bn{i}", chain[i + 1] // 4, dtype=dtype))
            g_modules.append(SplitAct(f"g.act{i}", "relu"))
        else:
            g_modules.append(SplitAct("g.tanh", "tanh"))
    g = Model("g", g_modules)

    d_chain = [4] + widths[::-1]
    d_modules: list[Module] = []
    size = spec.image_size
    for i in range(len(d_chain) - 1):
        cfg = L.ConvConfig(4, 2, 1, d_chain[i] // 4, d_chain[i + 1] // 4)
        d_modules.append(QConv(f"d.c{i}", cfg, dtype=dtype))
        if i > 0 and spec.norm == "qbn":
            d_modules.append(QBN(f"d.bn{i}", d_chain[i + 1] // 4, dtype=dtype))
        d_modules.append(SplitAct(f"d.act{i}", "relu"))
        size //= 2
    d_modules += [
        FlattenSpatial("d.flat"),
        QDense("d.fc", d_chain[-1] // 4 * size * size, 1, dtype=dtype),
        SplitAct("d.sigmoid", "sigmoid"),
    ]
    d = Model("d", d_modules)
    if spec.sn != "none":
        for m in d.weighted_modules():
            m.enable_sn(spec.sn)
    return g, d


def build_gan(spec: ModelSpec, dtype=np.float64) -> tuple[Model, Model]:
    if spec.family == "qsngan":
        return build_qsngan(spec, dtype=dtype)
    return build_qdcgan(spec, dtype=dtype)


# -- real twins -----------------------------------------------------------------------


class _RLayer:
    def count(self) -> int:
        return 0

    def init_params(self, rng):
        pass

    def forward(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class RDense(_RLayer):
    def __init__(self, in_f, out_f):
        self.w = np.zeros((out_f, in_f))
        self.b = np.zeros(out_f)

    def count(self):
        return self.w.size + self.b.size

    def init_params(self, rng):
        a = np.sqrt(6.0 / sum(self.w.shape))
        self.w = rng.uniform(-a, a, size=self.w.shape)

    def forward(self, x):
        return x @ self.w.T + self.b


class RConv(_RLayer):
    def __init__(self, in_f, out_f, kernel, stride=1, padding=0):
        self.w = np.zeros((out_f, in_f, kernel, kernel))
        self.b = np.zeros(out_f)
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def count(self):
        return self.w.size + self.b.size

    def init_params(self, rng):
        fan = self.w.shape[1] * self.kernel ** 2 + self.w.shape[0] * self.kernel ** 2
        a = np.sqrt(6.0 / fan)
        self.w = rng.uniform(-a, a, size=self.w.shape)

    def forward(self, x):
        b = x.shape[0]
        ho = L.conv_out_size(x.shape[2], self.kernel, self.stride, self.padding)
        wo = L.conv_out_size(x.shape[3], self.kernel, self.stride, self.padding)
        cols = L.im2col(x, self.kernel, self.stride, self.padding)
        y = cols @ self.w.reshape(self.w.shape[0], -1).T + self.b
        return y.transpose(0, 2, 1).reshape(b, -1, ho, wo)


class RTConv(_RLayer):
    def __init__(self, in_f, out_f, kernel, stride=2, padding=1):
        self.w = np.zeros((in_f, out_f, kernel, kernel))
        self.b = np.zeros(out_f)
        self.kernel, self.stride, self.padding = kernel, stride, padding

    def count(self):
        return self.w.size + self.b.size

    def init_params(self, rng):
        fan = (self.w.shape[0] + self.w.shape[1]) * self.kernel ** 2
        self.w = rng.uniform(-np.sqrt(6.0 / fan), np.sqrt(6.0 / fan), size=self.w.shape)

    def forward(self, x):
        b, c, h, w = x.shape
        ho = L.tconv_out_size(h, self.kernel, self.stride, self.padding)
        wo = L.tconv_out_size(w, self.kernel, self.stride, self.padding)
        x2 = x.reshape(b, c, h * w).transpose(0, 2, 1)
        dcols = x2 @ self.w.reshape(c, -1)
        out = L.col2im(dcols, (b, self.w.shape[1], ho, wo), self.kernel, self.stride, self.padding)
        return out + self.b[None, :, None, None]


class RBN(_RLayer):
    def __init__(self, channels):
        self.gamma = np.ones(channels)
        self.beta = np.zeros(channels)

    def count(self):
        return self.gamma.size + self.beta.size

    def forward(self, x):
        axes = (0,) + tuple(range(2, x.ndim))
        mu = x.mean(axis=axes, keepdims=True)
        var = x.var(axis=axes, keepdims=True)
        shape = (1, -1) + (1,) * (x.ndim - 2)
        return self.gamma.reshape(shape) * (x - mu) / np.sqrt(var + 1e-5) + self.beta.reshape(shape)


class RAct(_RLayer):
    def __init__(self, kind, alpha=0.2):
        self.kind, self.alpha = kind, alpha

    def forward(self, x):
        if self.kind == "relu":
            return np.maximum(x, 0.0)
        if self.kind == "leaky_relu":
            return np.where(x > 0, x, self.alpha * x)
        if self.kind == "tanh":
            return np.tanh(x)
        return L._sigmoid(x)


class RPool(_RLayer):
    def __init__(self, window=2):
        self.window = window

    def forward(self, x):
        b, c, h, w = x.shape
        v = x.reshape(b, c, h // self.window, self.window, w // self.window, self.window)
        return v.mean(axis=(3, 5))


class RGlobalSum(_RLayer):
    def forward(self, x):
        return x.sum(axis=(2, 3))


class RUp2(_RLayer):
    def forward(self, x):
        return np.repeat(np.repeat(x, 2, axis=2), 2, axis=3)


class RFlatten(_RLayer):
    def forward(self, x):
        return x.reshape(x.shape[0], -1)


class RReshape(_RLayer):
    def __init__(self, channels, h, w):
        self.channels, self.h, self.w = channels, h, w

    def forward(self, x):
        return x.reshape(x.shape[0], self.channels, self.h, self.w)


class RGenBlock(_RLayer):
    def __init__(self, in_f, out_f):
        self.bn1, self.conv1 = RBN(in_f), RConv(in_f, out_f, 3, 1, 1)
        self.bn2, self.conv2 = RBN(out_f), RConv(out_f, out_f, 3, 1, 1)
        self.sc = RConv(in_f, out_f, 1)
        self.up, self.act = RUp2(), RAct("relu")

    def count(self):
        return sum(l.count() for l in (self.bn1, self.conv1, self.bn2, self.conv2, self.sc))

    def init_params(self, rng):
        for l in (self.conv1, self.conv2, self.sc):
            l.init_params(rng)

    def forward(self, x):
        h = self.act.forward(self.bn1.forward(x))
        h = self.conv1.forward(self.up.forward(h))
        h = self.conv2.forward(self.act.forward(self.bn2.forward(h)))
        return h + self.sc.forward(self.up.forward(x))


class RDiscBlock(_RLayer):
    def __init__(self, in_f, out_f, downsample):
        self.conv1 = RConv(in_f, in_f, 3, 1, 1)
        self.conv2 = RConv(in_f, out_f, 3, 1, 1)
        self.downsample = downsample
        self.learn_sc = downsample or in_f != out_f
        self.sc = RConv(in_f, out_f, 1) if self.learn_sc else None
        self.pool, self.act = RPool(), RAct("relu")

    def count(self):
        n = self.conv1.count() + self.conv2.count()
        return n + (self.sc.count() if self.sc else 0)

    def init_params(self, rng):
        for l in (self.conv1, self.conv2) + ((self.sc,) if self.sc else ()):
            l.init_params(rng)

    def forward(self, x):
        h = self.conv2.forward(self.act.forward(self.conv1.forward(self.act.forward(x))))
        if self.downsample:
            h = self.pool.forward(h)
        sc = self.pool.forward(x) if self.downsample else x
        if self.sc is not None:
            sc = self.sc.forward(sc)
        return h + sc


class RFirstBlock(_RLayer):
    def __init__(self, in_ch, out_f):
        self.conv1 = RConv(in_ch, out_f, 3, 1, 1)
        self.conv2 = RConv(out_f, out_f, 3, 1, 1)
        self.sc = RConv(in_ch, out_f, 1)
        self.pool, self.act = RPool(), RAct("relu")

    def count(self):
        return self.conv1.count() + self.conv2.count() + self.sc.count()

    def init_params(self, rng):
        for l in (self.conv1, self.conv2, self.sc):
            l.init_params(rng)

    def forward(self, x):
        h = self.pool.forward(self.conv2.forward(self.act.forward(self.conv1.forward(x))))
        return h + self.pool.forward(self.sc.forward(x))


class RealModel:
    """Real-valued baseline with identical topology; forward and parameter
    counting only (tape training is not wired up for twins)."""

    def __init__(self, name, layers):
        self.name = name
        self.layers = layers

    def count_parameters(self):
        return sum(l.count() for l in self.layers)

    def init_params(self, rng):
        for l in self.layers:
            l.init_params(rng)

    def forward(self, x):
        for l in self.layers:
            x = l.forward(x)
        return x


def build_real_twin(spec: ModelSpec) -> tuple[RealModel, RealModel]:
    """Same topology with full-width real layers. The quaternion-vs-real image
    boundary differs by family: the qsngan twin models 3-channel RGB images
    (its final conv emits 3 channels and its first block consumes 3), the
    qdcgan twin keeps the exact 4-real-channel correspondence."""
    img_ch = 3 if spec.family == "qsngan" else 4
    if spec.family == "qsngan":
        s = spec.base_spatial
        base = spec.g_widths[0]
        gl: list[_RLayer] = [RDense(spec.noise_dim, s * s * base), RReshape(base, s, s)]
        prev = base
        for w in spec.g_widths[1:]:
            gl.append(RGenBlock(prev, w))
            prev = w
        gl += [RBN(prev), RAct("relu"), RConv(prev, img_ch, 3, 1, 1), RAct("tanh")]
        dl: list[_RLayer] = [RFirstBlock(img_ch, spec.d_widths[0])]
        prev = spec.d_widths[0]
        for w, down in zip(spec.d_widths[1:], spec.d_downsample):
            dl.append(RDiscBlock(prev, w, down))
            prev = w
        dl += [RAct("relu"), RGlobalSum(), RDense(prev, 1)]
        return RealModel("g_twin", gl), RealModel("d_twin", dl)

    s = spec.base_spatial
    widths = spec.g_widths
    gl = [RDense(spec.noise_dim, widths[0] * s * s), RReshape(widths[0], s, s)]
    chain = widths + [img_ch]
    for i in range(len(chain) - 1):
        gl.append(RTConv(chain[i], chain[i + 1], 4, 2, 1))
        if i < len(chain) - 2:
            if spec.norm == "qbn":
                gl.append(RBN(chain[i + 1]))
            gl.append(RAct("relu"))
        else:
            gl.append(RAct("tanh"))
    d_chain = [img_ch] + widths[::-1]
    dl = []
    size = spec.image_size
    for i in range(len(d_chain) - 1):
        dl.append(RConv(d_chain[i], d_chain[i + 1], 4, 2, 1))
        if i > 0 and spec.norm == "qbn":
            dl.append(RBN(d_chain[i + 1]))
        dl.append(RAct("relu"))
        size //= 2
    dl += [RFlatten(), RDense(d_chain[-1] * size * size, 1), RAct("sigmoid")]
    return RealModel("g_twin", gl), RealModel("d_twin", dl)


# -- presets ------------------------------------------------------------------------


def preset_spec(name: str) -> ModelSpec:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ConfigError(f"unknown model preset {name!r}; known: {sorted(PRESETS)}") from None


PRESETS = {
    "qsngan_celeba128": lambda: ModelSpec(
        family="qsngan", image_size=128, base_spatial=4,
        g_widths=[1024, 1024, 512, 256, 128, 64],
        d_widths=[64, 128, 256, 512, 1024, 1024],
        d_downsample=[True, True, True, True, False],
    ),
    "qsngan_cifar32": lambda: ModelSpec(
        family="qsngan", image_size=32, base_spatial=4,
        g_widths=[256, 256, 256, 256],
        d_widths=[128, 128, 128, 128],
        d_downsample=[True, False, False],
    ),
    "qsngan_stl48": lambda: ModelSpec(
        family="qsngan", image_size=48, base_spatial=6,
        g_widths=[512, 256, 128, 64],
        d_widths=[64, 128, 256, 512, 1024],
        d_downsample=[True, True, True, False],
    ),
    "qsngan_toy16": lambda: ModelSpec(
        family="qsngan", image_size=16, base_spatial=4,
        g_widths=[64, 64, 32],
        d_widths=[32, 64, 64],
        d_downsample=[True, False],
    ),
    "qsngan_toy8": lambda: ModelSpec(
        family="qsngan", image_size=8, base_spatial=4,
        g_widths=[32, 32],
        d_widths=[32, 32],
        d_downsample=[False],
    ),
    "qdcgan_toy16": lambda: ModelSpec(
        family="qdcgan", image_size=16, base_spatial=4,
        g_widths=[64, 32], d_widths=[32, 64], sn="none",
    ),
    "qdcgan_toy8": lambda: ModelSpec(
        family="qdcgan", image_size=8, base_spatial=4,
        g_widths=[32], d_widths=[32], sn="none",
    ),
}
