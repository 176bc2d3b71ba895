"""Generators, critics, adversarial / cycle objectives and training."""
import enum
import math
from dataclasses import dataclass, field as dc_field, fields

import numpy as np

from . import spd
from .errors import ConfigError, DomainError, NonFiniteLoss, ShapeError
from .field import (Domain, PatchSet, TensorField, crop, extract_patches, foreground_mask, pad_to,
                    stitch_patches)
from .nn import functional as F
from .nn.autograd import Tape, Tensor
from .nn.layers import Conv3d, Linear, Module
from .nn.optim import Adam, PlateauSchedule, clip_weights, plateau_step


class Mode(str, enum.Enum):
    MA_CYCLEGAN = "MA_CYCLEGAN"
    MA_GAN = "MA_GAN"
    PLAIN_CYCLEGAN = "PLAIN_CYCLEGAN"

    @property
    def manifold(self):
        return self is not Mode.PLAIN_CYCLEGAN

    @property
    def cycle(self):
        return self is not Mode.MA_GAN


@dataclass
class TrainConfig:
    mode: Mode = Mode.MA_CYCLEGAN
    lambda_cyc_x: float = 3.0
    lambda_cyc_y: float = 1.0
    lambda_gan_x: float = 1.0
    lambda_gan_y: float = 1.0
    clip: float = 0.01
    n_critic: int = 5
    batch: int = 4
    steps: int = 200
    steps_per_epoch: int = 50
    lr: float = 1e-4
    patch: int = 16
    factor: int = 2
    depth: int = 3
    base_channels: int = 8
    critic_width: int = 8
    critic_stages: int = 3
    critic_blocks: int = 2
    pretrain_steps: int = 0
    pretrain_lr: float = 1e-3
    plateau_patience: int = 3
    plateau_factor: float = 0.5
    plateau_min_delta: float = 1e-4
    normalize: str = "default"
    foreground_threshold: float = 0.1
    seed: int = 7

    def __post_init__(self):
        self.mode = Mode(self.mode)
        self.validate()

    def validate(self):
        for name in ("lambda_cyc_x", "lambda_cyc_y", "lambda_gan_x", "lambda_gan_y"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0", key=name)
        if self.clip <= 0:
            raise ConfigError("clip must be > 0", key="clip")
        if self.patch % (2 ** self.depth) or (self.patch // self.factor) % (2 ** self.critic_stages):
            raise ConfigError(f"patch {self.patch} must be divisible by 2^depth and leave an LR patch "
                              f"divisible by 2^critic_stages", key="patch")
        if self.factor < 1 or self.patch % self.factor:
            raise ConfigError("factor must be a positive divisor of patch", key="factor")
        if self.normalize not in ("default", "identity", "auto"):
            raise ConfigError("normalize must be default, identity or auto", key="normalize")
        if self.n_critic < 0 or self.batch < 1 or self.steps < 0:
            raise ConfigError("n_critic, batch and steps must be non-negative (batch >= 1)")

    @property
    def lr_patch(self):
        return self.patch // self.factor

    def resolved_normalize(self):
        if self.normalize != "default":
            return self.normalize
        return "identity" if self.mode.manifold else "auto"

    def to_dict(self):
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = v.value if isinstance(v, Mode) else v
        return out


@dataclass
class LossBreakdown:
    gan_x: float = 0.0
    gan_y: float = 0.0
    cyc_forward: float = 0.0
    cyc_backward: float = 0.0
    critic_x: float = 0.0
    critic_y: float = 0.0
    total: float = 0.0

    FIELDS = ("gan_x", "gan_y", "cyc_forward", "cyc_backward", "critic_x", "critic_y")


# ---------------------------------------------------------------------------
# networks


class ConvBlock(Module):
    def __init__(self, cin, cout, rng):
        super().__init__()
        self.c1 = self.add_child("c1", Conv3d(cin, cout, 3, rng=rng))
        self.c2 = self.add_child("c2", Conv3d(cout, cout, 3, rng=rng))

    def forward(self, x):
        return F.leaky_relu(self.c2(F.leaky_relu(self.c1(x))))


class UNet3D(Module):
    """Encoder-decoder with concatenated skips; ``depth`` downsamplings."""

    def __init__(self, cin, cout, depth=3, base=8, rng=None, zero_head=False):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.depth = depth
        widths = [base * 2 ** i for i in range(depth + 1)]
        self.enc = []
        c = cin
        for i in range(depth):
            self.enc.append(self.add_child(f"enc{i}", ConvBlock(c, widths[i], rng)))
            c = widths[i]
        self.mid = self.add_child("mid", ConvBlock(c, widths[depth], rng))
        self.dec = []
        for i in reversed(range(depth)):
            self.dec.append(self.add_child(f"dec{i}", ConvBlock(widths[i + 1] + widths[i], widths[i], rng)))
        self.head = self.add_child("head", Conv3d(widths[0], cout, 1, rng=rng, zero=zero_head))

    def forward(self, x):
        skips = []
        h = x
        for block in self.enc:
            h = block(h)
            skips.append(h)
            h = F.downsample_avg2(h)
        h = self.mid(h)
        for block, skip in zip(self.dec, reversed(skips)):
            h = block(F.concat([F.upsample_nearest2(h), skip], axis=1))
        return self.head(h)


class ResBlock(Module):
    def __init__(self, cin, cout, rng):
        super().__init__()
        self.c1 = self.add_child("c1", Conv3d(cin, cout, 3, rng=rng))
        self.c2 = self.add_child("c2", Conv3d(cout, cout, 3, rng=rng))
        self.proj = self.add_child("proj", Conv3d(cin, cout, 1, rng=rng)) if cin != cout else None

    def forward(self, x):
        h = self.c2(F.leaky_relu(self.c1(F.leaky_relu(x))))
        short = self.proj(x) if self.proj is not None else x
        return F.add(short, h)


class Critic(Module):
    """Residual critic: stride-2 stem, ``stages`` x ``blocks`` residual blocks
    with 2x average-pool between stages, global mean pool and a linear score."""

    def __init__(self, cin, width=8, stages=3, blocks=2, rng=None):
        super().__init__()
        rng = np.random.default_rng(0) if rng is None else rng
        self.stem = self.add_child("stem", Conv3d(cin, width, 3, stride=2, rng=rng))
        self.stages = []
        c = width
        for s in range(stages):
            stage = []
            for b in range(blocks):
                cout = width * 2 ** s
                stage.append(self.add_child(f"s{s}b{b}", ResBlock(c, cout, rng)))
                c = cout
            self.stages.append(stage)
        self.out = self.add_child("out", Linear(c, 1, rng=rng))

    def forward(self, x):
        h = self.stem(x)
        for s, stage in enumerate(self.stages):
            if s > 0:
                h = F.downsample_avg2(h)
            for block in stage:
                h = block(h)
        h = F.mean(F.leaky_relu(h), axis=(2, 3, 4))
        return F.reshape(self.out(h), (-1,))


class Normalizer:
    """Affine map between network units [-1, 1] and tangent (or raw) tensor
    components: ``value = unit * scale + offset`` per component."""

    def __init__(self, offset=None, scale=None):
        self.offset = np.zeros(6) if offset is None else np.asarray(offset, dtype=np.float64)
        self.scale = np.ones(6) if scale is None else np.asarray(scale, dtype=np.float64)

    @classmethod
    def fit(cls, values):
        values = np.asarray(values).reshape(-1, 6)
        lo, hi = values.min(axis=0), values.max(axis=0)
        half = 0.5 * (hi - lo)
        return cls(0.5 * (hi + lo), np.where(half > 1e-12, half, 1.0))

    def is_identity(self):
        return bool(np.all(self.offset == 0.0) and np.all(self.scale == 1.0))

    def _shape(self, a):
        return a.reshape((1, 6) + (1,) * 3)

    def denormalize(self, t):
        if self.is_identity():
            return t
        return F.add(F.mul(t, self._shape(self.scale)), self._shape(self.offset))

    def normalize(self, t):
        if self.is_identity():
            return t
        return F.mul(F.sub(t, self._shape(self.offset)), self._shape(1.0 / self.scale))


class GeneratorY(Module):
    """Structural (1 channel) -> tangent tensor (6 channels): 9-channel
    hard-tanh head, per-voxel symmetrization, then de-normalization."""

    def __init__(self, depth=3, base=8, rng=None, zero_head=False, normalizer=None):
        super().__init__()
        self.net = self.add_child("net", UNet3D(1, 9, depth, base, rng, zero_head))
        self.normalizer = normalizer or Normalizer()

    def raw9(self, x):
        return F.hard_tanh(self.net(x))

    def forward(self, x):
        return self.normalizer.denormalize(F.symmetrize9(self.raw9(x)))


class GeneratorX(Module):
    """Tangent tensor (6 channels) -> structural intensity in [0, 1]."""

    def __init__(self, depth=3, base=8, rng=None, zero_head=False, normalizer=None):
        super().__init__()
        self.net = self.add_child("net", UNet3D(6, 1, depth, base, rng, zero_head))
        self.normalizer = normalizer or Normalizer()

    def forward(self, s):
        return F.sigmoid(self.net(self.normalizer.normalize(s)))


@dataclass
class Models:
    gy: GeneratorY
    gx: GeneratorX
    dx: Critic
    dy: Critic
    cfg: TrainConfig
    normalizer: Normalizer = dc_field(default_factory=Normalizer)

    def critics(self):
        return self.dx.parameters() + self.dy.parameters()

    def generators(self):
        return self.gy.parameters() + self.gx.parameters()

    def state_arrays(self):
        out = {}
        for prefix, net in (("gy", self.gy), ("gx", self.gx), ("dx", self.dx), ("dy", self.dy)):
            for name, p in net.named_parameters():
                out[f"{prefix}.{name}"] = p.data
        out["norm.offset"] = self.normalizer.offset
        out["norm.scale"] = self.normalizer.scale
        return out

    def load_arrays(self, arrays):
        for prefix, net in (("gy", self.gy), ("gx", self.gx), ("dx", self.dx), ("dy", self.dy)):
            sub = {k[len(prefix) + 1:]: v for k, v in arrays.items() if k.startswith(prefix + ".")}
            net.load_state_dict(sub)
        if "norm.offset" in arrays:
            self.set_normalizer(Normalizer(arrays["norm.offset"], arrays["norm.scale"]))

    def set_normalizer(self, norm):
        self.normalizer = norm
        self.gy.normalizer = norm
        self.gx.normalizer = norm


def build_models(cfg, seed=None, zero_heads=False):
    """Deterministically initialize all four networks; critics start clipped."""
    seed = cfg.seed if seed is None else seed
    rngs = [np.random.default_rng([seed, k]) for k in range(4)]
    norm = Normalizer()
    gy = GeneratorY(cfg.depth, cfg.base_channels, rngs[0], zero_heads, norm)
    gx = GeneratorX(cfg.depth, cfg.base_channels, rngs[1], zero_heads, norm)
    dx = Critic(1, cfg.critic_width, cfg.critic_stages, cfg.critic_blocks, rngs[2])
    dy = Critic(6, cfg.critic_width, cfg.critic_stages, cfg.critic_blocks, rngs[3])
    models = Models(gy, gx, dx, dy, cfg, norm)
    clip_weights(models.critics(), cfg.clip)
    return models


# ---------------------------------------------------------------------------
# tensors between fields and network batches


def tangent_batch(y, mode):
    """Channels-first tangent representation of manifold tensors ``(B, 6, ...)``.

    Manifold modes apply ``log_id`` per voxel; the plain ablation uses the raw
    tensor components as if they were Euclidean.
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape[1] != 6:
        raise ShapeError(f"tensor batch must have 6 channels, got {y.shape}")
    if not Mode(mode).manifold:
        return y
    last = np.moveaxis(y, 1, -1)
    return np.moveaxis(spd.log_id(last), -1, 1)


def upsample_tangent(t, factor):
    """Trilinear upsampling of a tangent batch (no gradient)."""
    return F.resample_linear(Tensor(t), factor).data


def gy_forward(gy, x):
    x = x if isinstance(x, Tensor) else Tensor(x)
    if x.ndim != 5 or x.shape[1] != 1:
        raise ShapeError(f"G_Y expects (B, 1, X, Y, Z), got {x.shape}")
    return gy(x)


def gx_forward(gx, s, domain=Domain.TANGENT):
    if Domain(domain) is not Domain.TANGENT:
        raise DomainError("G_X consumes tangent-domain tensors; apply log_id first")
    s = s if isinstance(s, Tensor) else Tensor(s)
    if s.ndim != 5 or s.shape[1] != 6:
        raise ShapeError(f"G_X expects (B, 6, X, Y, Z), got {s.shape}")
    return gx(s)


def _score(critic, x):
    return F.mean(critic(x))


def loss_gan_x(gx, dx, batch_y_lr, batch_x_hr, cfg):
    """``E[D_X(x)] - E[D_X(G_X(up(log y)))]``."""
    up = upsample_tangent(tangent_batch(batch_y_lr, cfg.mode), cfg.factor)
    fake = gx_forward(gx, up)
    return F.sub(_score(dx, Tensor(batch_x_hr)), _score(dx, fake))


def loss_gan_y(gy, dy, batch_x_hr, batch_y_lr, cfg):
    """``E[D_Y(log y)] - E[D_Y(down(G_Y(x)))]``."""
    real = tangent_batch(batch_y_lr, cfg.mode)
    fake = F.resample_linear(gy_forward(gy, batch_x_hr), 1.0 / cfg.factor)
    return F.sub(_score(dy, Tensor(real)), _score(dy, fake))


def loss_cycle(gy, gx, batch_x, batch_y, cfg):
    """Forward and backward cycle l1 terms (element-mean absolute error)."""
    x = Tensor(batch_x)
    up = upsample_tangent(tangent_batch(batch_y, cfg.mode), cfg.factor)
    if up.shape[2:] != x.shape[2:]:
        raise ShapeError(f"upsampled tensor patch {up.shape[2:]} != structural patch {x.shape[2:]}")
    fwd = F.l1_mean(gx_forward(gx, gy_forward(gy, x)), x)
    bwd = F.l1_mean(gy_forward(gy, gx_forward(gx, up)), Tensor(up))
    return fwd, bwd


class Trainer:
    """Owns the models, optimizers and schedule of one training context."""

    def __init__(self, models, cfg=None, log=None):
        self.models = models
        self.cfg = cfg or models.cfg
        lr = self.cfg.lr
        self.opt_g = Adam(models.generators(), lr=lr)
        self.opt_d = Adam(models.critics(), lr=lr)
        self.schedule = PlateauSchedule(lr, self.cfg.plateau_patience, self.cfg.plateau_factor,
                                        self.cfg.plateau_min_delta)
        self.step_count = 0
        self.history = []
        self.log = log
        self._epoch_losses = []

    def _check(self, name, value):
        if not math.isfinite(value):
            raise NonFiniteLoss(name, self.step_count + 1, value)
        return value

    def train_step(self, batch_x, batch_y):
        m, cfg = self.models, self.cfg
        mode = cfg.mode
        x = np.asarray(batch_x, dtype=np.float64)
        real_y = tangent_batch(batch_y, mode)
        up = upsample_tangent(real_y, cfg.factor)
        lx, ly = cfg.lambda_gan_x, cfg.lambda_gan_y
        lcx, lcy = (cfg.lambda_cyc_x, cfg.lambda_cyc_y) if mode.cycle else (0.0, 0.0)
        use_x = mode.cycle

        # generators are frozen during the critic updates: fakes are constants
        fake_y_lr = F.resample_linear(m.gy(Tensor(x)), 1.0 / cfg.factor).data
        fake_x = m.gx(Tensor(up)).data if use_x else None
        crit_x = crit_y = 0.0
        for _ in range(cfg.n_critic):
            self.opt_d.zero_grad()
            with Tape() as tape:
                wy = F.sub(_score(m.dy, Tensor(real_y)), _score(m.dy, Tensor(fake_y_lr)))
                obj = F.mul(wy, -ly)
                if use_x:
                    wx = F.sub(_score(m.dx, Tensor(x)), _score(m.dx, Tensor(fake_x)))
                    obj = F.add(obj, F.mul(wx, -lx))
            crit_y = self._check("critic_y", wy.item())
            if use_x:
                crit_x = self._check("critic_x", wx.item())
            if obj.requires_grad:
                tape.backward(obj)
            self.opt_d.step()
            clip_weights(m.critics(), cfg.clip)
        if cfg.n_critic == 0:
            clip_weights(m.critics(), cfg.clip)

        self.opt_g.zero_grad()
        with Tape() as tape:
            xt = Tensor(x)
            fy = m.gy(xt)
            gan_y = F.mul(_score(m.dy, F.resample_linear(fy, 1.0 / cfg.factor)), -1.0)
            total = F.mul(gan_y, ly)
            gan_x = cyc_f = cyc_b = None
            if use_x:
                fx = m.gx(Tensor(up))
                gan_x = F.mul(_score(m.dx, fx), -1.0)
                cyc_f = F.l1_mean(m.gx(fy), xt)
                cyc_b = F.l1_mean(m.gy(fx), Tensor(up))
                total = F.add(total, F.mul(gan_x, lx))
                total = F.add(total, F.mul(cyc_f, lcx))
                total = F.add(total, F.mul(cyc_b, lcy))
        parts = LossBreakdown(
            gan_x=self._check("gan_x", gan_x.item()) if gan_x is not None else 0.0,
            gan_y=self._check("gan_y", gan_y.item()),
            cyc_forward=self._check("cyc_forward", cyc_f.item()) if cyc_f is not None else 0.0,
            cyc_backward=self._check("cyc_backward", cyc_b.item()) if cyc_b is not None else 0.0,
            critic_x=crit_x,
            critic_y=crit_y,
        )
        parts.total = self._check("total", total.item())
        if total.requires_grad:
            tape.backward(total)
        # critic grads from the generator pass are discarded
        self.opt_d.zero_grad()
        self.opt_g.step()

        self.step_count += 1
        self.history.append(parts)
        self._epoch_losses.append(parts.total)
        if self.step_count % cfg.steps_per_epoch == 0:
            lr = plateau_step(self.schedule, float(np.mean(self._epoch_losses)))
            self._epoch_losses = []
            self.opt_g.lr = lr
            self.opt_d.lr = lr
        if self.log is not None:
            self.log.write(format_log_line(self.step_count, mode, cfg.seed, parts, self.opt_g.lr))
        return parts

    def optimizer_arrays(self):
        out = {"opt.step": np.array([float(self.step_count), float(self.opt_g.state.step),
                                     float(self.opt_d.state.step), self.opt_g.lr, self.opt_d.lr,
                                     self.schedule.best_loss, float(self.schedule.epochs_since_improvement)])}
        for tag, opt in (("g", self.opt_g), ("d", self.opt_d)):
            for i in sorted(opt.state.m):
                out[f"opt.{tag}.m.{i}"] = opt.state.m[i]
                out[f"opt.{tag}.v.{i}"] = opt.state.v[i]
        if self._epoch_losses:
            out["opt.epoch_losses"] = np.array(self._epoch_losses)
        return out

    def load_optimizer_arrays(self, arrays):
        if "opt.step" not in arrays:
            return
        s = arrays["opt.step"]
        self.step_count = int(s[0])
        self.opt_g.state.step = int(s[1])
        self.opt_d.state.step = int(s[2])
        self.opt_g.lr = float(s[3])
        self.opt_d.lr = float(s[4])
        self.schedule.lr = float(s[3])
        self.schedule.best_loss = float(s[5])
        self.schedule.epochs_since_improvement = int(s[6])
        for tag, opt in (("g", self.opt_g), ("d", self.opt_d)):
            for key, arr in arrays.items():
                parts = key.split(".")
                if len(parts) == 4 and parts[0] == "opt" and parts[1] == tag:
                    target = opt.state.m if parts[2] == "m" else opt.state.v
                    target[int(parts[3])] = arr.copy()
        self._epoch_losses = list(arrays.get("opt.epoch_losses", []))


def train_step(models, batch_x, batch_y, cfg=None, trainer=None):
    """One WGAN iteration: ``n_critic`` clipped critic updates, then one
    generator update on the weighted objective."""
    trainer = trainer or Trainer(models, cfg)
    return trainer.train_step(batch_x, batch_y)


LOG_HEADER = "step mode seed gan_x gan_y cyc_forward cyc_backward critic_x critic_y lr\n"


def format_log_line(step, mode, seed, parts, lr):
    vals = " ".join(f"{getattr(parts, k):.17g}" for k in LossBreakdown.FIELDS)
    return f"{step} {Mode(mode).value} {seed} {vals} {lr:.17g}\n"


def pretrain_paired(gy, gx, paired_batches, epochs=1, lr=1e-3, mode=Mode.MA_CYCLEGAN, factor=2,
                    train_gx=True):
    """Supervised l1 regression of each generator on aligned pairs.

    ``paired_batches`` is a sequence of ``(x_hr, y_lr)`` numpy batches; G_Y
    regresses onto the upsampled tangent of ``y`` and G_X onto ``x``. Returns
    the list of per-step ``(loss_gy, loss_gx)``.
    """
    opt_y = Adam(gy.parameters(), lr=lr)
    opt_x = Adam(gx.parameters(), lr=lr)
    losses = []
    for _ in range(epochs):
        for bx, by in paired_batches:
            up = upsample_tangent(tangent_batch(by, mode), factor)
            if up.shape[2:] != np.shape(bx)[2:]:
                raise ShapeError(f"paired shapes disagree: {np.shape(bx)} vs upsampled {up.shape}")
            opt_y.zero_grad()
            with Tape() as tape:
                ly = F.l1_mean(gy(Tensor(bx)), Tensor(up))
            tape.backward(ly)
            opt_y.step()
            lx_val = 0.0
            if train_gx:
                opt_x.zero_grad()
                with Tape() as tape:
                    lx = F.l1_mean(gx(Tensor(up)), Tensor(bx))
                tape.backward(lx)
                opt_x.step()
                lx_val = lx.item()
            losses.append((ly.item(), lx_val))
    return losses


# ---------------------------------------------------------------------------
# data sampling


class PatchSampler:
    """Random patch batches from an HR structural and an LR tensor volume.

    Unpaired batches draw the two domains at independent locations; paired
    batches use the same physical region.
    """

    def __init__(self, x_hr, y_lr, patch, factor, threshold=0.1):
        self.x = np.asarray(x_hr.data)
        self.y = np.asarray(y_lr.data)
        self.patch = patch
        self.factor = factor
        self.lp = patch // factor
        mask = foreground_mask(x_hr, threshold)
        h = patch // 2
        dims = self.x.shape
        # HR origins aligned to the resolution factor so paired LR crops exist
        cand = np.stack(np.meshgrid(*[np.arange(0, d - patch + 1, factor) for d in dims], indexing="ij"), -1)
        cand = cand.reshape(-1, 3)
        keep = mask[cand[:, 0] + h, cand[:, 1] + h, cand[:, 2] + h]
        self.origins = cand[keep]
        if len(self.origins) == 0:
            raise ShapeError("no foreground-centered patch positions")

    def _x(self, o):
        p = self.patch
        return self.x[o[0]:o[0] + p, o[1]:o[1] + p, o[2]:o[2] + p]

    def _y(self, o):
        q, lp = o // self.factor, self.lp
        return np.moveaxis(self.y[q[0]:q[0] + lp, q[1]:q[1] + lp, q[2]:q[2] + lp], -1, 0)

    def unpaired(self, rng, batch):
        ix = rng.integers(len(self.origins), size=batch)
        iy = rng.integers(len(self.origins), size=batch)
        bx = np.stack([self._x(self.origins[i])[None] for i in ix])
        by = np.stack([self._y(self.origins[i]) for i in iy])
        return bx, by

    def paired(self, rng, batch):
        idx = rng.integers(len(self.origins), size=batch)
        bx = np.stack([self._x(self.origins[i])[None] for i in idx])
        by = np.stack([self._y(self.origins[i]) for i in idx])
        return bx, by


def fit_normalizer(cfg, y_lr):
    kind = cfg.resolved_normalize()
    if kind == "identity":
        return Normalizer()
    data = y_lr.data
    vals = spd.log_id(data) if cfg.mode.manifold else data
    return Normalizer.fit(vals)


def run_training(models, sampler, cfg, log=None, trainer=None, progress=None):
    """Optional paired pretraining followed by ``cfg.steps`` adversarial steps.

    Batches for step ``n`` come from ``default_rng([seed, n])`` so a resumed
    run sees the same data as an uninterrupted one.
    """
    trainer = trainer or Trainer(models, cfg, log)
    if trainer.step_count == 0 and cfg.pretrain_steps > 0:
        batches = (sampler.paired(np.random.default_rng([cfg.seed, 10 ** 6 + n]), cfg.batch)
                   for n in range(cfg.pretrain_steps))
        pretrain_paired(models.gy, models.gx, batches, 1, cfg.pretrain_lr, cfg.mode, cfg.factor,
                        train_gx=cfg.mode.cycle)
    while trainer.step_count < cfg.steps:
        rng = np.random.default_rng([cfg.seed, trainer.step_count])
        bx, by = sampler.unpaired(rng, cfg.batch)
        trainer.train_step(bx, by)
        if progress is not None:
            progress(trainer)
    return trainer


# ---------------------------------------------------------------------------
# synthesis


def padded_dims(dims, size, stride):
    out = []
    for d in dims:
        d = max(d, size)
        rem = (d - size) % stride
        out.append(d + (stride - rem) % stride)
    return tuple(out)


def synthesize_hr(gy, x, cfg=None, mode=None, stride=None, batch=4, threshold=None):
    """Patch-wise G_Y over the foreground, mean-stitched in the tangent domain.

    Manifold modes return ``exp_id`` of the stitched field (MANIFOLD domain;
    uncovered voxels become identity tensors). The plain ablation returns
    the raw stitched values tagged TANGENT since they need not be SPD.
    """
    cfg = cfg or TrainConfig()
    mode = Mode(mode or cfg.mode)
    size = cfg.patch
    stride = stride or max(1, size // 2)
    thr = cfg.foreground_threshold if threshold is None else threshold
    dims = tuple(x.dims)
    pdims = padded_dims(dims, size, stride)
    xp = pad_to(x, pdims) if pdims != dims else x
    mask = foreground_mask(xp, thr)
    ps = extract_patches(xp, size, stride, mask)
    outs = np.empty((len(ps), size, size, size, 6))
    for s in range(0, len(ps), batch):
        chunk = ps.patches[s:s + batch][:, None]
        outs[s:s + batch] = np.moveaxis(gy(Tensor(chunk)).data, 1, -1)
    tps = PatchSet(size, stride, ps.origins, outs, "tensor", x.spacing, Domain.TANGENT)
    stitched = stitch_patches(tps, pdims, allow_gaps=True)
    covered = stitched.metadata["covered"]
    tan = crop(stitched, dims)
    meta = {"uncovered_voxels": int((~covered[:dims[0], :dims[1], :dims[2]]).sum()), "mode": mode.value}
    if not mode.manifold:
        return TensorField(tan.data, x.spacing, Domain.TANGENT, meta)
    return TensorField(spd.exp_id(tan.data), x.spacing, Domain.MANIFOLD, meta)


__all__ = [
    "Mode", "TrainConfig", "LossBreakdown", "UNet3D", "Critic", "GeneratorX", "GeneratorY",
    "Normalizer", "Models", "build_models", "gy_forward", "gx_forward", "loss_gan_x", "loss_gan_y",
    "loss_cycle", "train_step", "Trainer", "pretrain_paired", "PatchSampler", "run_training",
    "synthesize_hr", "tangent_batch", "fit_normalizer",
]
