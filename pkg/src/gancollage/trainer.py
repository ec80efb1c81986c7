"""Desk-scale training: a procedural shapes dataset, hinge-loss GAN
training with spectral normalization, then the encoder and auxiliary-net
stages in order. Everything is deterministic under a fixed seed.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass, field

import numpy as np

from .errors import ParameterError
from .nets import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
)
from .optim import Adam
from .projection import (
    AuxTrainConfig,
    EncoderTrainConfig,
    train_aux,
    train_encoder,
)
from .tensor import Tensor, mul, neg, reduce_mean, relu, sub


# ---------------------------------------------------------------------- #
# synthetic dataset
# ---------------------------------------------------------------------- #

@dataclass
class SyntheticDatasetSpec:
    resolution: int = 32
    num_classes: int = 8
    num_samples: int = 8192
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2 or self.resolution < 8:
            raise ParameterError("dataset needs >= 2 classes and >= 8 px")


class ShapesDataset:
    """Colored discs and squares on textured backgrounds.

    Class k renders hue k/num_classes (a disc for the first half of the
    classes, a square for the rest), so every class owns a distinct hue and
    a distinct hue-shape pair. Samples are pure functions of (seed, index).
    """

    def __init__(self, spec: SyntheticDatasetSpec):
        self.spec = spec

    def __len__(self):
        return self.spec.num_samples

    def class_hue(self, label: int) -> float:
        return label / self.spec.num_classes

    def sample(self, index: int):
        spec = self.spec
        rng = np.random.default_rng([spec.seed, int(index)])
        label = int(index) % spec.num_classes
        res = spec.resolution

        # textured background: dim tinted base plus blocky value noise
        base = 0.25 + rng.uniform(-0.05, 0.05)
        tint = rng.uniform(-0.04, 0.04, size=3)
        grid = rng.uniform(-0.06, 0.06, size=(res // 8, res // 8))
        noise = np.repeat(np.repeat(grid, 8, axis=0), 8, axis=1)
        img = np.clip(base + tint[:, None, None] + noise[None], 0.0, 1.0)

        hue = (self.class_hue(label) + rng.uniform(-0.01, 0.01)) % 1.0
        sat = rng.uniform(0.8, 0.95)
        val = rng.uniform(0.85, 1.0)
        color = np.array(colorsys.hsv_to_rgb(hue, sat, val))

        radius = rng.uniform(0.22, 0.34) * res
        cy = rng.uniform(radius + 1, res - radius - 1)
        cx = rng.uniform(radius + 1, res - radius - 1)
        yy, xx = np.meshgrid(np.arange(res) + 0.5, np.arange(res) + 0.5, indexing="ij")
        if label < spec.num_classes // 2:
            dist = np.sqrt((yy - cy) ** 2 + (xx - cx) ** 2)
        else:
            dist = np.maximum(np.abs(yy - cy), np.abs(xx - cx))
        alpha = np.clip(radius + 0.5 - dist, 0.0, 1.0)
        img = img * (1.0 - alpha[None]) + color[:, None, None] * alpha[None]
        return img, label

    def batch(self, indices):
        imgs, labels = zip(*(self.sample(i) for i in indices))
        return np.stack(imgs), np.asarray(labels, dtype=np.int64)

    def class_mean_color(self, label: int, n: int = 500) -> np.ndarray:
        """Oracle statistic: mean RGB of n samples of one class."""
        idxs = [label + k * self.spec.num_classes for k in range(n)]
        imgs, _ = self.batch(idxs)
        return imgs.mean(axis=(0, 2, 3))

    def class_mean_hue(self, label: int, n: int = 200) -> float:
        """Circular mean hue of the shape pixels over n samples."""
        sines = coses = 0.0
        for k in range(n):
            img, _ = self.sample(label + k * self.spec.num_classes)
            # shape pixels are the saturated ones
            maxc, minc = img.max(axis=0), img.min(axis=0)
            sat_mask = (maxc - minc) > 0.25
            if not sat_mask.any():
                continue
            r, g, b = (img[c][sat_mask].mean() for c in range(3))
            h, _, _ = colorsys.rgb_to_hsv(r, g, b)
            sines += np.sin(2 * np.pi * h)
            coses += np.cos(2 * np.pi * h)
        return float((np.arctan2(sines, coses) / (2 * np.pi)) % 1.0)


def make_dataset(spec: SyntheticDatasetSpec) -> ShapesDataset:
    return ShapesDataset(spec)


# ---------------------------------------------------------------------- #
# GAN training
# ---------------------------------------------------------------------- #

@dataclass
class TrainConfig:
    seed: int = 0
    gan_iters: int = 20000
    batch_size: int = 16
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    checkpoint_every: int = 0          # 0: only the final checkpoint
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    discriminator: DiscriminatorConfig = field(default_factory=DiscriminatorConfig)
    encoder: EncoderTrainConfig = field(default_factory=EncoderTrainConfig)
    aux: AuxTrainConfig = field(default_factory=AuxTrainConfig)
    aux_iters: int = 2000

    def __post_init__(self):
        if self.gan_iters < 0 or self.batch_size < 1:
            raise ParameterError("bad GAN training budget")


def train_gan(dataset: ShapesDataset, cfg: TrainConfig, on_checkpoint=None):
    """Alternating hinge-loss updates; returns (gen, disc, log rows).

    Log rows are (iteration, d_loss, g_loss). ``on_checkpoint`` is called
    with (iteration, gen, disc) at the configured cadence.
    """
    gen = Generator(cfg.generator, np.random.default_rng([cfg.seed, 10]))
    disc = Discriminator(cfg.discriminator, np.random.default_rng([cfg.seed, 11]))
    opt_g = Adam(gen.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    opt_d = Adam(disc.parameters(), lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2)
    rng = np.random.default_rng([cfg.seed, 12])
    n_class = cfg.generator.num_classes
    log = []

    # hinge losses for real and fake halves of one batched forward:
    # relu(1 - l) for real, relu(1 + l) = relu(1 - (-l)) for fake
    sign = np.concatenate([np.ones(cfg.batch_size), -np.ones(cfg.batch_size)])

    for it in range(1, cfg.gan_iters + 1):
        # discriminator step
        idx = rng.integers(0, len(dataset), size=cfg.batch_size)
        real, labels = dataset.batch(idx)
        z = rng.standard_normal((cfg.batch_size, cfg.generator.latent_dim))
        fake_labels = rng.integers(0, n_class, size=cfg.batch_size)
        fake, _ = gen.forward(z, fake_labels, mode="train")
        both = np.concatenate([real, fake.data])
        logits = disc.logit(Tensor(both), np.concatenate([labels, fake_labels]),
                            update_sn=True)
        d_loss = mul(reduce_mean(relu(sub(1.0, mul(logits, sign)))), 2.0)
        disc.zero_grad()
        d_loss.backward()
        opt_d.step()

        # generator step
        z = rng.standard_normal((cfg.batch_size, cfg.generator.latent_dim))
        fake_labels = rng.integers(0, n_class, size=cfg.batch_size)
        fake, _ = gen.forward(z, fake_labels, mode="train")
        g_loss = neg(reduce_mean(disc.logit(fake, fake_labels, update_sn=True)))
        gen.zero_grad()
        disc.zero_grad()
        g_loss.backward()
        opt_g.step()

        if it % 50 == 0 or it == cfg.gan_iters:
            log.append((it, d_loss.item(), g_loss.item()))
        if on_checkpoint and cfg.checkpoint_every and it % cfg.checkpoint_every == 0:
            on_checkpoint(it, gen, disc)
    return gen, disc, log


STAGES = ("gan", "encoder", "aux")


def train_all(dataset: ShapesDataset, cfg: TrainConfig, bundle_path=None, resume=False):
    """Sequential pipeline: GAN, then encoder, then auxiliary nets, each
    stage freezing its predecessors. Returns (bundle, stages_run).

    With ``resume`` and an existing bundle file, completed stages are
    loaded instead of retrained.
    """
    from .bundle import Bundle

    bundle = None
    stages_run = []
    if resume and bundle_path is not None:
        try:
            bundle = Bundle.load(bundle_path)
        except Exception:
            bundle = None

    done = set(bundle.stages_done) if bundle is not None else set()

    if "gan" in done:
        gen, disc = bundle.gen, bundle.disc
        logs = {"gan": []}
    else:
        gen, disc, gan_log = train_gan(dataset, cfg)
        logs = {"gan": gan_log}
        stages_run.append("gan")
        done.add("gan")

    gen.set_trainable(False)
    disc.set_trainable(False)

    if "encoder" in done and bundle is not None and bundle.enc is not None:
        enc = bundle.enc
        logs["encoder"] = []
    else:
        enc_cfg = cfg.encoder
        enc_cfg.seed = cfg.seed
        enc, enc_log = train_encoder(gen, disc, enc_cfg)
        logs["encoder"] = enc_log
        stages_run.append("encoder")
        done.add("encoder")

    enc.set_trainable(False)

    if "aux" in done and bundle is not None and bundle.aux is not None:
        aux = bundle.aux
        logs["aux"] = []
    else:
        aux_cfg = cfg.aux
        aux_cfg.seed = cfg.seed
        aux, aux_log = train_aux(gen, disc, enc, aux_cfg, cfg.aux_iters)
        logs["aux"] = aux_log
        stages_run.append("aux")
        done.add("aux")

    out = Bundle(gen=gen, disc=disc, enc=enc, aux=aux,
                 seed=cfg.seed, stages_done=[s for s in STAGES if s in done])
    if bundle_path is not None:
        out.save(bundle_path)
    return out, stages_run, logs
