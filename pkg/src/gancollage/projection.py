"""Recovering latents for images: discriminator-feature cosine loss,
encoder-initialized gradient search in z, and the faster search in an
expanded latent space produced by a pair of auxiliary perceptrons.

The auxiliary pair (an embedding map into the wide space and a projection
map back) is trained with a first-order unrolled objective: the inner
update trajectory is computed with AdaGrad and then treated as constants,
while the outer loss still scores the decoded point at every unrolled step.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, DivergenceError, ParameterError
from .module import Module
from .nets import Discriminator, Encoder, EncoderConfig, Generator, Linear, PReLU
from .optim import Adam, clip_global_norm, make_optimizer
from .tensor import Tensor, add, mul, reduce_mean, reduce_sum, reshape, sub


# ---------------------------------------------------------------------- #
# dissimilarity
# ---------------------------------------------------------------------- #

def cosine_losses(x: Tensor, psi_target: np.ndarray, disc: Discriminator) -> Tensor:
    """Per-sample ``1 - psi(x) . psi_target`` against fixed target features."""
    psi = disc.psi(x)
    target = Tensor(psi_target)
    return sub(1.0, reduce_sum(mul(psi, target), axis=1))


def loss_cosine(x1, x2, disc: Discriminator) -> Tensor:
    """Cosine distance between two images in the discriminator feature space.

    Differentiable w.r.t. ``x1``; symmetric; bounded by [0, 2] from the unit
    feature norms (and by [0, 1] here since pooled ReLU features are
    non-negative).
    """
    x1 = x1 if isinstance(x1, Tensor) else Tensor(x1)
    x2 = x2 if isinstance(x2, Tensor) else Tensor(x2)
    single = x1.ndim == 3
    if single:
        x1 = reshape(x1, (1, *x1.shape))
    if x2.ndim == 3:
        x2 = reshape(x2, (1, *x2.shape))
    if x1.shape != x2.shape:
        raise DimensionError(f"image shapes differ: {x1.shape} vs {x2.shape}")
    out = cosine_losses(x1, disc.psi(x2).data, disc)
    return reshape(out, ()) if single else out


# ---------------------------------------------------------------------- #
# latent search
# ---------------------------------------------------------------------- #

@dataclass
class ProjectionConfig:
    optimizer: str = "adam"        # adam | adagrad
    lr: float = 0.05
    steps: int = 200
    loss_floor: float = 0.0        # stop early once every sample is below
    init: str = "encoder"          # encoder | random
    init_seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ParameterError("learning rate must be positive")
        if self.steps < 0:
            raise ParameterError("steps must be >= 0")
        if self.init not in ("encoder", "random"):
            raise ParameterError("init must be 'encoder' or 'random'")


@dataclass
class ProjectionResult:
    z: np.ndarray              # best-loss latent, (latent,) or (N, latent)
    losses: np.ndarray         # loss at each iterate, (steps+1,) or (steps+1, N)
    best_losses: np.ndarray    # running minimum, same shape as losses
    step_seconds: float = 0.0  # mean wall-clock per optimization step

    def curve_rows(self):
        """(iteration, loss, best_loss) rows, averaged over the batch."""
        losses = self.losses if self.losses.ndim == 2 else self.losses[:, None]
        best = self.best_losses if self.best_losses.ndim == 2 else self.best_losses[:, None]
        return [(i, float(losses[i].mean()), float(best[i].mean()))
                for i in range(losses.shape[0])]


def _promote_images(x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 3
    if single:
        x = x[None]
    if x.ndim != 4:
        raise DimensionError("expected one image (3,H,W) or a batch (N,3,H,W)")
    return x, single


def _optimize_latent(x, gen, disc, cfg, class_id, decode, leaf_data):
    """Shared best-iterate gradient descent loop for z-space and wide-space."""
    x, single = _promote_images(x)
    n = x.shape[0]
    labels = np.asarray(class_id, dtype=np.int64).reshape(-1)
    if labels.size == 1:
        labels = np.full(n, int(labels[0]), dtype=np.int64)
    psi_t = disc.psi(Tensor(x)).data

    leaf = Tensor(leaf_data, requires_grad=True)
    opt = make_optimizer(cfg.optimizer, [leaf], cfg.lr)

    def evaluate():
        decoded = decode(leaf)
        img, _ = gen.forward(decoded, labels, mode="edit")
        return cosine_losses(img, psi_t, disc), decoded

    losses = np.zeros((cfg.steps + 1, n))
    lvec, decoded = evaluate()
    losses[0] = lvec.data
    best = lvec.data.copy()
    best_z = decoded.data.copy()
    initial = lvec.data.copy()

    t_start = time.perf_counter()
    for step in range(1, cfg.steps + 1):
        leaf.grad = None
        reduce_sum(lvec).backward()
        opt.step()
        lvec, decoded = evaluate()
        cur = lvec.data
        losses[step] = cur
        improved = cur < best
        if improved.any():
            best = np.where(improved, cur, best)
            best_z[improved] = decoded.data[improved]
        # the absolute floor keeps optimizer noise near a tiny initial loss
        # from counting as divergence
        limit = np.maximum(10.0 * initial, initial + 0.05)
        if (cur > limit).any():
            bad = int(np.argmax(cur - limit))
            raise DivergenceError(
                f"latent search diverged at step {step}: sample {bad} loss "
                f"{cur[bad]:.4f} exceeds 10x initial {initial[bad]:.4f}")
        if cfg.loss_floor > 0 and (best <= cfg.loss_floor).all():
            losses = losses[:step + 1]
            break
    total = time.perf_counter() - t_start
    steps_run = losses.shape[0] - 1
    best_curve = np.minimum.accumulate(losses, axis=0)

    if single:
        return ProjectionResult(best_z[0], losses[:, 0], best_curve[:, 0],
                                total / max(steps_run, 1))
    return ProjectionResult(best_z, losses, best_curve, total / max(steps_run, 1))


def project_z(x, gen: Generator, disc: Discriminator, enc: Encoder,
              cfg: ProjectionConfig, class_id) -> ProjectionResult:
    """Gradient search for ``z`` with ``G(z) ~ x``, starting from the encoder.

    Returns the best-loss iterate, not the last. Accepts one image or a
    batch; batched searches are independent per sample.
    """
    x_arr, _ = _promote_images(x)
    if cfg.init == "encoder":
        z0 = enc.forward(Tensor(x_arr)).data.copy()
    else:
        rng = np.random.default_rng(cfg.init_seed)
        z0 = rng.standard_normal((x_arr.shape[0], gen.config.latent_dim))
    return _optimize_latent(x, gen, disc, cfg, class_id, lambda leaf: leaf, z0)


def project_zeta(x, gen: Generator, disc: Discriminator, enc: Encoder,
                 aux: "AuxNets", cfg: ProjectionConfig, class_id) -> ProjectionResult:
    """Latent search in the expanded space: optimize the wide vector and
    decode through the projection map each step."""
    x_arr, _ = _promote_images(x)
    if cfg.init == "encoder":
        z0 = enc.forward(Tensor(x_arr)).data
    else:
        rng = np.random.default_rng(cfg.init_seed)
        z0 = rng.standard_normal((x_arr.shape[0], gen.config.latent_dim))
    zeta0 = aux.embed(Tensor(z0)).data.copy()
    return _optimize_latent(x, gen, disc, cfg, class_id,
                            lambda leaf: aux.project(leaf), zeta0)


# ---------------------------------------------------------------------- #
# encoder training
# ---------------------------------------------------------------------- #

@dataclass
class EncoderTrainConfig:
    iters: int = 5000
    batch_size: int = 16
    lr: float = 2e-4
    seed: int = 0
    eval_batch: int = 64

    def __post_init__(self):
        if self.iters < 0 or self.batch_size < 1:
            raise ParameterError("bad encoder training budget")


def sample_generated(gen: Generator, rng, n: int):
    """(images, latents, labels) drawn from the frozen generator."""
    z = rng.standard_normal((n, gen.config.latent_dim))
    labels = rng.integers(0, gen.config.num_classes, size=n)
    img, _ = gen.forward(z, labels, mode="edit")
    return img.data, z, labels


def train_encoder(gen: Generator, disc: Discriminator, cfg: EncoderTrainConfig):
    """Fit the encoder so its latents reconstruct generator samples under the
    discriminator-feature cosine loss. Returns (encoder, log rows); row 0 is
    the untrained baseline on a held-out batch.
    """
    gen.set_trainable(False)
    disc.set_trainable(False)
    rng = np.random.default_rng([cfg.seed, 1])
    enc = Encoder(EncoderConfig(
        in_resolution=disc.config.in_resolution,
        widths=tuple(disc.config.widths),
        feature_dim=disc.config.feature_dim,
        latent_dim=gen.config.latent_dim), rng)
    opt = Adam(enc.parameters(), lr=cfg.lr, beta1=0.5, beta2=0.999)

    eval_imgs, _, eval_labels = sample_generated(gen, np.random.default_rng([cfg.seed, 2]),
                                                 cfg.eval_batch)
    eval_psi = disc.psi(Tensor(eval_imgs)).data

    def held_out_loss():
        zh = enc.forward(Tensor(eval_imgs))
        img, _ = gen.forward(zh, eval_labels, mode="edit")
        return float(cosine_losses(img, eval_psi, disc).data.mean())

    log = [(0, held_out_loss())]
    for it in range(1, cfg.iters + 1):
        imgs, _, labels = sample_generated(gen, rng, cfg.batch_size)
        psi_t = disc.psi(Tensor(imgs)).data
        zh = enc.forward(Tensor(imgs))
        rec, _ = gen.forward(zh, labels, mode="edit")
        loss = reduce_mean(cosine_losses(rec, psi_t, disc))
        enc.zero_grad()
        loss.backward()
        opt.step()
        if it % 50 == 0 or it == cfg.iters:
            log.append((it, held_out_loss()))
    return enc, log


# ---------------------------------------------------------------------- #
# auxiliary latent-expansion networks
# ---------------------------------------------------------------------- #

@dataclass
class AuxNetsConfig:
    latent_dim: int = 128
    hidden: tuple = (64, 512, 64)   # widths; the middle one is the wide space

    def __post_init__(self):
        if len(self.hidden) != 3 or min(self.hidden) < 1:
            raise ParameterError("hidden must be three positive widths")

    @property
    def zeta_dim(self) -> int:
        return self.hidden[1]


class AuxNets(Module):
    """Embedding map into the wide latent space and projection map back.

    Together they form one five-layer perceptron with trainable PReLU
    activations; the widest activation vector is the search space.
    """

    def __init__(self, config: AuxNetsConfig, rng):
        super().__init__()
        self.config = config
        h1, zdim, h3 = config.hidden
        d = config.latent_dim
        self.a1 = Linear(d, h1, rng)
        self.a_act1 = PReLU()
        self.a2 = Linear(h1, zdim, rng)
        self.a_act2 = PReLU()
        self.b1 = Linear(zdim, h3, rng)
        self.b_act1 = PReLU()
        self.b2 = Linear(h3, d, rng)

    @property
    def zeta_dim(self):
        return self.config.zeta_dim

    def embed(self, z: Tensor) -> Tensor:
        h = self.a_act1.forward(self.a1.forward(z))
        return self.a_act2.forward(self.a2.forward(h))

    def project(self, zeta: Tensor) -> Tensor:
        h = self.b_act1.forward(self.b1.forward(zeta))
        return self.b2.forward(h)

    def round_trip(self, z: Tensor) -> Tensor:
        return self.project(self.embed(z))

    @classmethod
    def identity_init(cls, config: AuxNetsConfig) -> "AuxNets":
        """Exact identity round trip; needs every hidden width >= latent_dim."""
        if min(config.hidden) < config.latent_dim:
            raise ParameterError(
                "identity_init needs hidden widths >= latent_dim")
        aux = cls(config, np.random.default_rng(0))
        d = config.latent_dim
        for lin in (aux.a1, aux.a2, aux.b1, aux.b2):
            lin.weight.data[:] = 0.0
            lin.bias.data[:] = 0.0
            lin.weight.data[:d, :d] = np.eye(d)
        for act in (aux.a_act1, aux.a_act2, aux.b_act1):
            act.slope.data[...] = 1.0
        return aux


def pretrain_identity(aux: AuxNets, iters: int, lr: float = 1e-3, seed: int = 0,
                      batch_size: int = 64):
    """Fit the round trip toward the identity on the latent prior."""
    opt = Adam(aux.parameters(), lr=lr)
    rng = np.random.default_rng(seed)
    log = []
    for it in range(iters):
        z = Tensor(rng.standard_normal((batch_size, aux.config.latent_dim)))
        err = sub(aux.round_trip(z), z)
        loss = reduce_mean(reduce_sum(mul(err, err), axis=1))
        aux.zero_grad()
        loss.backward()
        opt.step()
        log.append((it, loss.item()))
    return log


@dataclass
class AuxTrainConfig:
    inner_steps: int = 2
    step_weights: tuple = (20.0, 2.0, 1.0)
    recon_weight: float = 100.0
    grad_clip: float = 100.0
    weight_decay: float = 1e-4
    inner_optimizer: str = "adagrad"
    inner_lr: float = 0.1
    outer_lr: float = 1e-3
    batch_size: int = 8
    seed: int = 0
    hidden: tuple = (64, 512, 64)
    identity_pretrain_iters: int = 300

    def __post_init__(self):
        if len(self.step_weights) != self.inner_steps + 1:
            raise ParameterError("need one step weight per unrolled point")
        if min(self.step_weights) < 0 or self.recon_weight < 0:
            raise ParameterError("weights must be non-negative")


def train_aux(gen: Generator, disc: Discriminator, enc: Encoder,
              cfg: AuxTrainConfig, iters: int):
    """Meta-train the auxiliary pair on generated images.

    Inner loop: AdaGrad steps on the wide vector under the cosine loss,
    recorded as constants. Outer loss: the weighted cosine losses of the
    decoded points at every unrolled step plus the latent reconstruction
    penalty, backpropagated into both maps (the embedding map receives
    signal through the step-0 point and the penalty).
    """
    gen.set_trainable(False)
    disc.set_trainable(False)
    enc.set_trainable(False)
    rng = np.random.default_rng([cfg.seed, 3])
    aux = AuxNets(AuxNetsConfig(gen.config.latent_dim, tuple(cfg.hidden)),
                  np.random.default_rng([cfg.seed, 4]))
    if cfg.identity_pretrain_iters:
        pretrain_identity(aux, cfg.identity_pretrain_iters, seed=cfg.seed + 17)
    opt = Adam(aux.parameters(), lr=cfg.outer_lr)
    log = []

    for it in range(iters):
        imgs, z_true, labels = sample_generated(gen, rng, cfg.batch_size)
        psi_t = disc.psi(Tensor(imgs)).data
        z0 = enc.forward(Tensor(imgs)).data

        def decoded_losses(zeta_t: Tensor) -> Tensor:
            img, _ = gen.forward(aux.project(zeta_t), labels, mode="edit")
            return cosine_losses(img, psi_t, disc)

        # inner trajectory, recorded as constants
        aux.set_trainable(False)
        zeta0_vals = aux.embed(Tensor(z0)).data
        trajectory = [zeta0_vals]
        zeta_curr = zeta0_vals.copy()
        acc = np.zeros_like(zeta_curr)
        for _ in range(cfg.inner_steps):
            leaf = Tensor(zeta_curr, requires_grad=True)
            reduce_sum(decoded_losses(leaf)).backward()
            g = leaf.grad
            acc += g * g
            zeta_curr = zeta_curr - cfg.inner_lr * g / (np.sqrt(acc) + 1e-8)
            trajectory.append(zeta_curr.copy())
        aux.set_trainable(True)

        # outer objective across the unrolled points
        zeta0_live = aux.embed(Tensor(z0))
        total = mul(reduce_mean(decoded_losses(zeta0_live)), cfg.step_weights[0])
        for j in range(1, cfg.inner_steps + 1):
            term = reduce_mean(decoded_losses(Tensor(trajectory[j])))
            total = add(total, mul(term, cfg.step_weights[j]))
        zt = Tensor(z_true)
        err = sub(aux.round_trip(zt), zt)
        recon = reduce_mean(reduce_sum(mul(err, err), axis=1))
        total = add(total, mul(recon, cfg.recon_weight))

        aux.zero_grad()
        total.backward()
        clip_global_norm(aux.parameters(), cfg.grad_clip)
        if cfg.weight_decay:
            for p in aux.parameters():
                if p.grad is not None:
                    p.grad += cfg.weight_decay * p.data
        opt.step()
        log.append((it, total.item(), recon.item()))
    return aux, log
