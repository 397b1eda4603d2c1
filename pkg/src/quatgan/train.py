"""Training harness: experiment configuration, the alternating GAN loop with
critic iterations, deterministic checkpoint/resume, sample emission, and the
built-in Frechet-distance evaluation.

Training runs in float32 (checkpoints store f32 payloads bitwise); fixed seed
plus config reproduce losses, checkpoints and emitted bytes exactly on one
platform. Gradient checks and algebra tests live elsewhere and use float64.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from . import data as D
from . import losses as LS
from . import metrics as M
from . import models as MD
from .errors import ConfigError, NumericError
from .optim import AdamState, adam_step
from .qtensor import QTensor

__all__ = ["TrainConfig", "train", "save_checkpoint", "load_checkpoint",
           "emit_samples", "make_noise", "generate_images"]

LOSS_FAMILIES = {"qce": "qdcgan", "hinge": "qsngan", "wgan_gp": "qsngan"}


@dataclass
class TrainConfig:
    model: str
    batch_size: int = 32
    iterations: int = 200
    critic_iters: int = 1
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.9
    seed: int = 0
    sn_mode: str = "full"
    loss: str = "hinge"
    checkpoint_every: int = 0
    eval_every: int = 0
    dataset: str | None = None
    synth: dict | None = None
    out_dir: str = "runs/out"
    lambda_gp: float = 10.0
    eval_samples: int = 128
    sample_count: int = 16
    init_criterion: str = "glorot"

    def __post_init__(self):
        if self.critic_iters < 1:
            raise ConfigError(f"critic_iters must be >= 1, got {self.critic_iters}")
        if self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 (QBN needs batch variance)")
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        if self.loss not in LOSS_FAMILIES:
            raise ConfigError(f"unknown loss {self.loss!r}; choose from {sorted(LOSS_FAMILIES)}")
        if self.sn_mode not in ("none", "split", "full"):
            raise ConfigError(f"unknown sn_mode {self.sn_mode!r}")
        if (self.dataset is None) == (self.synth is None):
            raise ConfigError("exactly one of dataset path or synth spec is required")
        spec = MD.preset_spec(self.model)
        if LOSS_FAMILIES[self.loss] != spec.family:
            raise ConfigError(
                f"loss {self.loss!r} pairs with {LOSS_FAMILIES[self.loss]} models, "
                f"but {self.model!r} is a {spec.family} preset"
            )

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "TrainConfig":
        raw = json.loads(text)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**raw)


def make_noise(spec: MD.ModelSpec, n: int, rng: np.random.Generator, dtype=np.float32) -> QTensor:
    """Standard normal noise: real-valued for qsngan (q0-carried), a full
    quaternion tensor for qdcgan."""
    if spec.family == "qsngan":
        return QTensor.from_real(rng.standard_normal((n, spec.noise_dim)).astype(dtype))
    return QTensor(rng.standard_normal((4, n, spec.noise_dim // 4)).astype(dtype))


def _load_images(config: TrainConfig) -> np.ndarray:
    if config.synth is not None:
        images = D.synth_dataset(
            n=int(config.synth["n"]),
            size=int(config.synth["size"]),
            seed=int(config.synth.get("seed", 0)),
        )
    else:
        images = D.load_dataset(config.dataset)
    return images


def _param_norms(model: MD.Model) -> dict[str, float]:
    return {k: float(np.linalg.norm(p.value.data)) for k, p in model.parameters().items()}


def _check_finite(label: str, value: float, iteration: int, g, d):
    if math.isfinite(value):
        return
    diag = {
        "iteration": iteration,
        "loss": label,
        "value": value,
        "g_param_norms": _param_norms(g),
        "d_param_norms": _param_norms(d),
    }
    raise NumericError(f"{label} became non-finite at iteration {iteration}", diagnostic=diag)


def generate_images(g: MD.Model, spec: MD.ModelSpec, n: int, rng: np.random.Generator,
                    batch: int = 64, dtype=np.float32) -> np.ndarray:
    """Sample n images as (n, 3, H, W) floats; uses batch statistics without
    touching the running averages, so sampling never mutates the model."""
    out = []
    remaining = n
    while remaining > 0:
        take = min(batch, remaining)
        z = make_noise(spec, take, rng, dtype)
        imgs = g.forward_array(z, training=True, update_stats=False)
        out.append(D.decapsulate_batch(imgs))
        remaining -= take
    return np.concatenate(out, axis=0)


def emit_samples(g: MD.Model, spec: MD.ModelSpec, n: int, out_dir,
                 rng: np.random.Generator, dtype=np.float32) -> list[str]:
    """Write n PPM samples plus an n-up grid image; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    images = generate_images(g, spec, n, rng, dtype=dtype)
    paths = []
    for i, img in enumerate(images):
        p = os.path.join(out_dir, f"sample_{i:03d}.ppm")
        D.write_ppm(p, img)
        paths.append(p)
    cols = math.ceil(math.sqrt(n))
    rows = math.ceil(n / cols)
    h, w = images.shape[2], images.shape[3]
    grid = -np.ones((3, rows * h, cols * w))
    for i, img in enumerate(images):
        r, c = divmod(i, cols)
        grid[:, r * h : (r + 1) * h, c * w : (c + 1) * w] = img
    gp = os.path.join(out_dir, "grid.ppm")
    D.write_ppm(gp, grid)
    paths.append(gp)
    return paths


# -- checkpointing -------------------------------------------------------------------


def save_checkpoint(path, config: TrainConfig, g: MD.Model, d: MD.Model,
                    g_adam: AdamState, d_adam: AdamState,
                    rngs: dict[str, np.random.Generator], iteration: int):
    tensors: dict[str, np.ndarray] = {}
    for net_name, net in (("g", g), ("d", d)):
        for pname, p in net.parameters().items():
            tensors[f"param.{net_name}.{pname}"] = p.value.data
        for sname, arr in net.states().items():
            tensors[f"state.{net_name}.{sname}"] = arr
    for opt_name, opt in (("g", g_adam), ("d", d_adam)):
        tensors[f"adam.{opt_name}.step"] = np.array([float(opt.step)], dtype=np.float32)
        for pname, arr in opt.m.items():
            tensors[f"adam.{opt_name}.m.{pname}"] = arr
        for pname, arr in opt.v.items():
            tensors[f"adam.{opt_name}.v.{pname}"] = arr
    for stream, gen in rngs.items():
        tensors[f"rng.{stream}"] = ckpt.pack_rng_state(gen)
    tensors["meta.iteration"] = np.array([float(iteration)], dtype=np.float32)
    tensors["meta.config"] = ckpt.pack_text(config.to_json())
    ckpt.save_tensors(path, tensors)


def load_checkpoint(path):
    """Rebuild (config, g, d, g_adam, d_adam, rngs, iteration) from a file."""
    tensors = ckpt.load_tensors(path)
    config = TrainConfig.from_json(ckpt.unpack_text(tensors["meta.config"]))
    spec = MD.preset_spec(config.model)
    spec.sn = config.sn_mode
    g, d = MD.build_gan(spec, dtype=np.float32)
    adams = {"g": AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2),
             "d": AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)}
    nets = {"g": g, "d": d}
    rngs: dict[str, np.random.Generator] = {}
    for name, arr in tensors.items():
        parts = name.split(".")
        if parts[0] == "param":
            nets[parts[1]].parameters()[".".join(parts[2:])].value.data[...] = arr
        elif parts[0] == "state":
            nets[parts[1]].load_state(".".join(parts[2:]), np.asarray(arr))
        elif parts[0] == "adam":
            opt = adams[parts[1]]
            if parts[2] == "step":
                opt.step = int(round(float(arr[0])))
            elif parts[2] == "m":
                opt.m[".".join(parts[3:])] = np.array(arr)
            else:
                opt.v[".".join(parts[3:])] = np.array(arr)
        elif parts[0] == "rng":
            rngs[parts[1]] = ckpt.unpack_rng_state(arr)
    iteration = int(round(float(tensors["meta.iteration"][0])))
    return config, g, d, adams["g"], adams["d"], rngs, iteration


# -- the loop ------------------------------------------------------------------------


def _d_loss_node(config, tape, d, d_leaves, real_node, fake_node, aux):
    if config.loss == "hinge":
        d_real = d.forward(tape, real_node, training=True, leaves=d_leaves)
        d_fake = d.forward(tape, fake_node, training=True, leaves=d_leaves)
        return LS.hinge_discriminator_op(d_real, d_fake)
    if config.loss == "qce":
        d_real = d.forward(tape, real_node, training=True, leaves=d_leaves)
        d_fake = d.forward(tape, fake_node, training=True, leaves=d_leaves)
        b = d_real.value.shape[0]
        ones = QTensor(np.ones((4, b, 1), dtype=np.float32))
        zeros = QTensor.zeros((b, 1), dtype=np.float32)
        return ad.add(LS.qce_op(ones, d_real), LS.qce_op(zeros, d_fake))
    # wgan_gp: directional finite-difference estimate of the interpolate
    # gradient norm (double-backward-free)
    d_real = d.forward(tape, real_node, training=True, leaves=d_leaves)
    d_fake = d.forward(tape, fake_node, training=True, leaves=d_leaves)
    real, fake = real_node.value.data, fake_node.value.data
    b = real.shape[1]
    eps = aux["noise_rng"].uniform(size=b).astype(real.dtype)
    e = eps.reshape(1, b, 1, 1, 1)
    interp = e * real + (1.0 - e) * fake
    direction = real - fake
    dnorm = np.sqrt((direction.reshape(4, b, -1) ** 2).sum(axis=(0, 2)))
    dnorm = np.maximum(dnorm, 1e-8).reshape(1, b, 1, 1, 1)
    direction = direction / dnorm
    delta = 1e-2
    up = tape.constant(QTensor(interp + delta * direction))
    dn = tape.constant(QTensor(interp - delta * direction))
    d_up = d.forward(tape, up, training=True, leaves=d_leaves)
    d_dn = d.forward(tape, dn, training=True, leaves=d_leaves)
    diff = ad.scale(ad.sub(d_up, d_dn), 1.0 / (2.0 * delta))
    norms = _abs_q0(diff)
    return LS.wgan_discriminator_op(d_real, d_fake, norms, config.lambda_gp)


def _abs_q0(x: ad.Node) -> ad.Node:
    saved = {}

    def fwd(xv):
        saved["sign"] = np.sign(xv.q0)
        out = np.zeros_like(xv.data)
        out[0] = np.abs(xv.q0)
        return QTensor(out)

    def bwd(g):
        dg = np.zeros_like(g)
        dg[0] = g[0] * saved["sign"]
        return (dg,)

    return x.tape.record("abs_q0", (x,), fwd, bwd)


def _g_loss_node(config, d_fake):
    if config.loss == "hinge":
        return LS.hinge_generator_op(d_fake)
    if config.loss == "qce":
        b = d_fake.value.shape[0]
        ones = QTensor(np.ones((4, b, 1), dtype=np.float32))
        return LS.qce_op(ones, d_fake)
    return LS.wgan_generator_op(d_fake)


def train(config: TrainConfig, resume_from: str | None = None) -> dict:
    """Run the alternating optimization and return the run report.

    The report carries loss curves, spectral-norm traces, Frechet-distance
    evaluations, and checkpoint/sample paths. Raises :class:`NumericError`
    with a diagnostic dump if any loss goes non-finite.
    """
    images = _load_images(config)
    spec = MD.preset_spec(config.model)
    spec.sn = config.sn_mode
    if images.shape[2] != spec.image_size or images.shape[3] != spec.image_size:
        raise ConfigError(
            f"dataset images are {images.shape[2]}x{images.shape[3]} but model "
            f"{config.model!r} generates {spec.image_size}x{spec.image_size}"
        )
    images = images.astype(np.float32)
    n_images = images.shape[0]

    if resume_from is not None:
        saved_config, g, d, g_adam, d_adam, rngs, start_iter = load_checkpoint(resume_from)
        if saved_config.to_json() != config.to_json():
            raise ConfigError("checkpoint config differs from the requested config")
    else:
        ss = np.random.SeedSequence(config.seed)
        init_ss, noise_ss, data_ss, aux_ss = ss.spawn(4)
        init_rng = np.random.default_rng(init_ss)
        g, d = MD.build_gan(spec, dtype=np.float32)
        g.init_params(init_rng, config.init_criterion)
        d.init_params(init_rng, config.init_criterion)
        g_adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        d_adam = AdamState(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        rngs = {
            "noise": np.random.default_rng(noise_ss),
            "data": np.random.default_rng(data_ss),
            "aux": np.random.default_rng(aux_ss),
        }
        start_iter = 0
        if config.sn_mode != "none":
            MD.sn_warmup(d, iters=20)

    extractor = M.PixelFeatures()
    real_feats = extractor(images[: max(config.eval_samples, 2)])
    mu_r, cov_r = M.fit_gaussian(real_feats)

    report = {
        "config": json.loads(config.to_json()),
        "d_losses": [],
        "g_losses": [],
        "fd_trace": [],
        "sigma_trace": [],
        "checkpoints": [],
        "samples": [],
        "start_iteration": start_iter,
    }

    def evaluate(iteration):
        if config.sn_mode != "none":
            MD.apply_spectral_norm(d)
        sigmas = MD.measure_sigmas(d)
        fakes = generate_images(g, spec, config.eval_samples, rngs["aux"])
        mu_g, cov_g = M.fit_gaussian(extractor(fakes))
        fd = M.frechet_distance(mu_g, cov_g, mu_r, cov_r)
        report["fd_trace"].append([iteration, fd])
        report["sigma_trace"].append([iteration, sigmas])
        return fd

    os.makedirs(config.out_dir, exist_ok=True)
    if start_iter == 0:
        evaluate(0)

    g_params = g.param_tensors()
    d_params = d.param_tensors()

    for iteration in range(start_iter + 1, config.iterations + 1):
        d_losses = []
        for _ in range(config.critic_iters):
            idx = rngs["data"].integers(0, n_images, size=config.batch_size)
            real = D.encapsulate_batch(images[idx])
            z = make_noise(spec, config.batch_size, rngs["noise"])
            fake = g.forward_array(z, training=True, update_stats=True)
            if config.sn_mode != "none":
                MD.apply_spectral_norm(d)
            tape = ad.Tape()
            d_leaves = d.bind(tape)
            loss_node = _d_loss_node(
                config, tape, d, d_leaves,
                tape.constant(real), tape.constant(fake),
                {"noise_rng": rngs["noise"]},
            )
            loss_val = float(loss_node.value.q0.reshape(-1)[0])
            _check_finite("d_loss", loss_val, iteration, g, d)
            grads = tape.backward(loss_node)
            adam_step(d_params, grads, d_adam)
            d_losses.append(loss_val)

        z = make_noise(spec, config.batch_size, rngs["noise"])
        if config.sn_mode != "none":
            MD.apply_spectral_norm(d)
        tape = ad.Tape()
        g_leaves = g.bind(tape)
        d_leaves = d.bind(tape)
        fake_node = g.forward(tape, tape.constant(z), training=True, leaves=g_leaves)
        d_fake = d.forward(tape, fake_node, training=True, leaves=d_leaves)
        g_loss_node = _g_loss_node(config, d_fake)
        g_loss = float(g_loss_node.value.q0.reshape(-1)[0])
        _check_finite("g_loss", g_loss, iteration, g, d)
        grads = tape.backward(g_loss_node)
        adam_step(g_params, {k: grads[k] for k in g_params}, g_adam)

        report["d_losses"].append(d_losses if config.critic_iters > 1 else d_losses[0])
        report["g_losses"].append(g_loss)

        if config.eval_every and iteration % config.eval_every == 0:
            evaluate(iteration)
        if config.checkpoint_every and iteration % config.checkpoint_every == 0:
            path = os.path.join(config.out_dir, f"checkpoint_{iteration:06d}.qgn")
            save_checkpoint(path, config, g, d, g_adam, d_adam, rngs, iteration)
            report["checkpoints"].append(path)

    if not report["fd_trace"] or report["fd_trace"][-1][0] != config.iterations:
        evaluate(config.iterations)
    final_path = os.path.join(config.out_dir, "checkpoint_final.qgn")
    save_checkpoint(final_path, config, g, d, g_adam, d_adam, rngs, config.iterations)
    report["checkpoints"].append(final_path)
    report["samples"] = emit_samples(
        g, spec, config.sample_count, os.path.join(config.out_dir, "samples"), rngs["aux"]
    )
    fds = report["fd_trace"]
    report["fd_init"] = fds[0][1] if fds else None
    report["fd_best"] = min(fd for _, fd in fds) if fds else None
    report["fd_final"] = fds[-1][1] if fds else None
    with open(os.path.join(config.out_dir, "report.json"), "w") as fh:
        json.dump(report, fh, indent=2)
    return report
