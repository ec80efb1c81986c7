"""Toy conditional GAN: CBN ResNet generator, spectrally normalized
projection discriminator, and the latent encoder that mirrors it.

The generator grows a 4x4 seed map by doubling resolution per ResBlock.
Every normalization layer can be driven either by integer class labels or
by a per-position class mixture map, which is what the collage module
exploits for local label edits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .module import Module
from .tensor import (
    Tensor,
    add,
    batch_stats,
    conv2d,
    div,
    gather_rows,
    global_avg_pool,
    linear,
    matmul,
    mul,
    power,
    prelu,
    reduce_sum,
    relu,
    reshape,
    sub,
    tanh,
    transpose,
    upsample_nearest,
)


# ---------------------------------------------------------------------- #
# plain layers
# ---------------------------------------------------------------------- #

class Linear(Module):
    def __init__(self, in_features, out_features, rng, bias=True):
        super().__init__()
        scale = 1.0 / np.sqrt(in_features)
        self.weight = Tensor(rng.standard_normal((out_features, in_features)) * scale,
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def forward(self, x):
        return linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, pad=0, bias=True):
        super().__init__()
        scale = np.sqrt(2.0 / (in_ch * k * k))
        self.kernel = Tensor(rng.standard_normal((out_ch, in_ch, k, k)) * scale,
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None
        self.stride, self.pad = stride, pad

    def forward(self, x):
        return conv2d(x, self.kernel, self.bias, stride=self.stride, pad=self.pad)


class PReLU(Module):
    """Parametric ReLU with one trainable slope."""

    def __init__(self, init_slope=0.25):
        super().__init__()
        self.slope = Tensor(np.asarray(init_slope), requires_grad=True)

    def forward(self, x):
        return prelu(x, self.slope)


# ---------------------------------------------------------------------- #
# spectral normalization
# ---------------------------------------------------------------------- #

SIGMA_FLOOR = 1e-12


class SpectralState:
    """Power-iteration vectors persisted across calls (one pair per weight)."""

    def __init__(self, u: np.ndarray, v: np.ndarray):
        self.u = np.asarray(u, dtype=np.float64)
        self.v = np.asarray(v, dtype=np.float64)

    @classmethod
    def for_shape(cls, rows: int, cols: int, rng) -> "SpectralState":
        u = rng.standard_normal(rows)
        v = rng.standard_normal(cols)
        return cls(u / np.linalg.norm(u), v / np.linalg.norm(v))


def _power_iterate(w2: np.ndarray, state: SpectralState, iters: int) -> float:
    u, v = state.u, state.v
    for _ in range(iters):
        vn = w2.T @ u
        nv = np.linalg.norm(vn)
        if nv > 0:
            v = vn / nv
        un = w2 @ v
        nu = np.linalg.norm(un)
        if nu > 0:
            u = un / nu
    state.u, state.v = u, v
    return float(u @ w2 @ v)


def spectral_normalize(w: Tensor, state: SpectralState, iters: int = 1) -> Tensor:
    """Divide a 2-D weight by its power-iteration largest singular value.

    The state vectors are updated in place (outside the gradient tape); the
    division itself is differentiable, so training sees d(W/sigma)/dW with u
    and v treated as constants. A zero matrix is returned unchanged.
    """
    if w.ndim != 2:
        raise DimensionError("spectral_normalize expects a 2-D weight")
    if iters < 1:
        raise ParameterError("iters must be >= 1")
    sigma = _power_iterate(w.data, state, iters)
    return _apply_sigma(w, state, sigma)


def _apply_sigma(w: Tensor, state: SpectralState, sigma: float) -> Tensor:
    if sigma < SIGMA_FLOOR:
        return w
    # sigma rebuilt in-graph as u^T W v so gradients include the -W/sigma^2 term
    uv = Tensor(np.outer(state.u, state.v))
    sigma_t = reduce_sum(mul(w, uv))
    return div(w, sigma_t)


class _SNMixin:
    def _init_sn(self, rows, cols, rng, iters):
        self.sn_iters = iters
        self.register_buffer("sn_u", _unit(rng.standard_normal(rows)))
        self.register_buffer("sn_v", _unit(rng.standard_normal(cols)))

    def _normalized_weight(self, w2: Tensor, update: bool) -> Tensor:
        state = SpectralState(self.sn_u, self.sn_v)
        if update:
            sigma = _power_iterate(w2.data, state, self.sn_iters)
            self.sn_u[...] = state.u
            self.sn_v[...] = state.v
        else:
            sigma = float(state.u @ w2.data @ state.v)
        return _apply_sigma(w2, state, sigma)


def _unit(x):
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


class SNConv2d(Module, _SNMixin):
    def __init__(self, in_ch, out_ch, k, rng, stride=1, pad=0, iters=1):
        super().__init__()
        scale = np.sqrt(2.0 / (in_ch * k * k))
        self.kernel = Tensor(rng.standard_normal((out_ch, in_ch, k, k)) * scale,
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True)
        self.stride, self.pad = stride, pad
        self._init_sn(out_ch, in_ch * k * k, rng, iters)

    def forward(self, x, update_sn=False):
        o = self.kernel.shape[0]
        w2 = reshape(self.kernel, (o, -1))
        wn = reshape(self._normalized_weight(w2, update_sn), self.kernel.shape)
        return conv2d(x, wn, self.bias, stride=self.stride, pad=self.pad)


class SNLinear(Module, _SNMixin):
    def __init__(self, in_features, out_features, rng, iters=1):
        super().__init__()
        scale = 1.0 / np.sqrt(in_features)
        self.weight = Tensor(rng.standard_normal((out_features, in_features)) * scale,
                             requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True)
        self._init_sn(out_features, in_features, rng, iters)

    def forward(self, x, update_sn=False):
        wn = self._normalized_weight(self.weight, update_sn)
        return linear(x, wn, self.bias)


class SNEmbedding(Module, _SNMixin):
    def __init__(self, num_rows, dim, rng, iters=1):
        super().__init__()
        self.table = Tensor(rng.standard_normal((num_rows, dim)) * 0.05, requires_grad=True)
        self._init_sn(num_rows, dim, rng, iters)

    def forward(self, labels, update_sn=False):
        tn = self._normalized_weight(self.table, update_sn)
        return gather_rows(tn, labels)


# ---------------------------------------------------------------------- #
# normalization layers
# ---------------------------------------------------------------------- #

def _norm_core(f: Tensor, mode: str, eps: float, momentum: float,
               running_mean: np.ndarray, running_var: np.ndarray) -> Tensor:
    """Shared normalization: batch statistics in train mode, running in edit."""
    if mode not in ("train", "edit"):
        raise ParameterError(f"mode must be 'train' or 'edit', got '{mode}'")
    n, c, h, w = f.shape
    if mode == "train":
        if n * h * w < 2:
            raise DimensionError("train-mode normalization needs N*H*W >= 2")
        m, v = batch_stats(f)
        running_mean *= 1.0 - momentum
        running_mean += momentum * m.data
        running_var *= 1.0 - momentum
        running_var += momentum * v.data
    else:
        m, v = Tensor(running_mean), Tensor(running_var)
    denom = power(add(reshape(v, (1, c, 1, 1)), eps), 0.5)
    return div(sub(f, reshape(m, (1, c, 1, 1))), denom)


class ConditionalBatchNorm(Module):
    """Batch normalization with per-class scale/bias lookup tables.

    Both the integer-label path and the class-map path share the same
    normalization core, so a spatially uniform one-hot map reproduces the
    per-class output bit for bit.
    """

    def __init__(self, num_classes, channels, eps=1e-5, momentum=0.1, rng=None):
        super().__init__()
        if eps <= 0:
            raise ParameterError("eps must be positive")
        self.num_classes, self.channels = num_classes, channels
        self.eps, self.momentum = float(eps), float(momentum)
        # small per-class jitter keeps conditioning live from step zero
        jitter = (lambda: rng.standard_normal((num_classes, channels)) * 0.1) if rng is not None \
            else (lambda: np.zeros((num_classes, channels)))
        self.gamma = Tensor(np.ones((num_classes, channels)) + jitter(), requires_grad=True)
        self.beta = Tensor(jitter(), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, f, labels=None, class_map=None, mode="edit"):
        if f.ndim != 4:
            raise DimensionError("CBN expects NCHW input")
        n, c, h, w = f.shape
        if c != self.channels:
            raise DimensionError(f"CBN built for {self.channels} channels, got {c}")
        xhat = _norm_core(f, mode, self.eps, self.momentum,
                          self.running_mean, self.running_var)
        if class_map is not None:
            cmap = class_map.data if isinstance(class_map, Tensor) else np.asarray(class_map, dtype=np.float64)
            if cmap.shape[:2] != (h, w):
                raise DimensionError(
                    f"class map resolution {cmap.shape[:2]} does not match features {(h, w)}")
            if cmap.shape[2] != self.num_classes:
                raise DimensionError(
                    f"class map has {cmap.shape[2]} classes, CBN has {self.num_classes}")
            flat = Tensor(cmap.reshape(h * w, self.num_classes))
            gam = reshape(transpose(reshape(matmul(flat, self.gamma), (h, w, c)), (2, 0, 1)), (1, c, h, w))
            bet = reshape(transpose(reshape(matmul(flat, self.beta), (h, w, c)), (2, 0, 1)), (1, c, h, w))
        else:
            idx = _label_vector(labels, n, self.num_classes)
            gam = reshape(gather_rows(self.gamma, idx), (n, c, 1, 1))
            bet = reshape(gather_rows(self.beta, idx), (n, c, 1, 1))
        return add(mul(gam, xhat), bet)


class BatchNorm(Module):
    """Unconditional batch normalization (single scale/bias pair)."""

    def __init__(self, channels, eps=1e-5, momentum=0.1):
        super().__init__()
        self.channels = channels
        self.eps, self.momentum = float(eps), float(momentum)
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", np.zeros(channels))
        self.register_buffer("running_var", np.ones(channels))

    def forward(self, f, mode="edit"):
        c = f.shape[1]
        xhat = _norm_core(f, mode, self.eps, self.momentum,
                          self.running_mean, self.running_var)
        gam = reshape(self.gamma, (1, c, 1, 1))
        bet = reshape(self.beta, (1, c, 1, 1))
        return add(mul(gam, xhat), bet)


def _label_vector(labels, n, num_classes):
    if labels is None:
        raise ParameterError("class labels required when no class map is given")
    idx = np.asarray(labels, dtype=np.int64).reshape(-1)
    if idx.size == 1 and n > 1:
        idx = np.full(n, int(idx[0]), dtype=np.int64)
    if idx.size != n:
        raise DimensionError(f"got {idx.size} labels for batch of {n}")
    if idx.min() < 0 or idx.max() >= num_classes:
        raise ParameterError(f"class id out of range [0, {num_classes})")
    return idx


def cbn_forward(f, class_id, cbn: ConditionalBatchNorm, mode="edit") -> Tensor:
    """Class-conditional batch normalization of an NCHW feature map."""
    return cbn.forward(f, labels=class_id, mode=mode)


# ---------------------------------------------------------------------- #
# generator
# ---------------------------------------------------------------------- #

@dataclass
class GeneratorConfig:
    latent_dim: int = 128
    num_classes: int = 8
    base_channels: int = 32
    num_resblocks: int = 3
    output_channels: int = 3

    def __post_init__(self):
        if self.num_resblocks < 1:
            raise ParameterError("need at least one ResBlock")
        if self.num_classes < 2:
            raise ParameterError("need at least two classes")

    @property
    def resolution(self) -> int:
        return 4 * 2 ** self.num_resblocks

    @property
    def widths(self) -> tuple:
        """Channel width at the seed and after each block: halving as the
        resolution doubles keeps the wide maps cheap, floored so the last
        blocks keep enough capacity."""
        floor = min(16, self.base_channels)
        return tuple(max(self.base_channels // 2 ** i, floor)
                     for i in range(self.num_resblocks + 1))

    @property
    def num_layers(self) -> int:
        """Interception points: the 4x4 seed map plus each block output."""
        return self.num_resblocks + 1

    def layer_resolution(self, layer: int) -> int:
        if not 1 <= layer <= self.num_layers:
            raise ParameterError(f"layer {layer} out of range [1, {self.num_layers}]")
        return 4 * 2 ** (layer - 1)


class GenResBlock(Module):
    def __init__(self, ch_in, ch_out, num_classes, rng):
        super().__init__()
        self.conv1 = Conv2d(ch_in, ch_out, 3, rng, pad=1)
        self.cbn1 = ConditionalBatchNorm(num_classes, ch_out, rng=rng)
        self.conv2 = Conv2d(ch_out, ch_out, 3, rng, pad=1)
        self.cbn2 = ConditionalBatchNorm(num_classes, ch_out, rng=rng)
        self.skip = Conv2d(ch_in, ch_out, 1, rng)

    def forward(self, x, labels=None, class_map=None, mode="edit"):
        u = upsample_nearest(x, 2)
        h = self.conv1.forward(u)
        h = self.cbn1.forward(h, labels, class_map, mode)
        h = relu(h)
        h = self.conv2.forward(h)
        h = self.cbn2.forward(h, labels, class_map, mode)
        return add(h, self.skip.forward(u))


class Generator(Module):
    def __init__(self, config: GeneratorConfig, rng):
        super().__init__()
        self.config = config
        widths = config.widths
        self.seed_fc = Linear(config.latent_dim, widths[0] * 16, rng)
        self.seed_cbn = ConditionalBatchNorm(config.num_classes, widths[0], rng=rng)
        self.blocks = _ModuleList([
            GenResBlock(widths[i], widths[i + 1], config.num_classes, rng)
            for i in range(config.num_resblocks)
        ])
        self.final_bn = BatchNorm(widths[-1])
        self.to_rgb = Conv2d(widths[-1], config.output_channels, 3, rng, pad=1)

    def forward(self, z, labels, mode="edit", label_maps=None, interceptors=None):
        """Run the generator, returning the image and every interception map.

        ``label_maps`` optionally replaces the CBN class lookup at chosen
        layers with a spatial class map; ``interceptors`` lets a caller swap
        the feature tensor at chosen layers before the network continues.
        Layers are indexed 1 (the 4x4 seed map) through num_resblocks + 1.
        """
        z = z if isinstance(z, Tensor) else Tensor(z)
        if z.ndim == 1:
            z = reshape(z, (1, -1))
        if z.shape[1] != self.config.latent_dim:
            raise DimensionError(
                f"latent length {z.shape[1]} != latent_dim {self.config.latent_dim}")
        label_maps = label_maps or {}
        interceptors = interceptors or {}
        n = z.shape[0]

        h = reshape(self.seed_fc.forward(z), (n, self.config.widths[0], 4, 4))
        x = self.seed_cbn.forward(h, labels, label_maps.get(1), mode)
        if 1 in interceptors:
            x = interceptors[1](x)
        feats = [x]
        for i, block in enumerate(self.blocks.items):
            layer = i + 2
            x = block.forward(x, labels, label_maps.get(layer), mode)
            if layer in interceptors:
                x = interceptors[layer](x)
            feats.append(x)
        y = relu(self.final_bn.forward(x, mode))
        img = mul(add(tanh(self.to_rgb.forward(y)), 1.0), 0.5)
        return img, feats


class _ModuleList(Module):
    def __init__(self, items):
        super().__init__()
        self.items = list(items)
        for i, m in enumerate(items):
            setattr(self, str(i), m)


def generator_forward(gen: Generator, z, class_id, mode="edit"):
    """Plain conditional generation: image in [0,1] plus intermediate maps."""
    return gen.forward(z, class_id, mode=mode)


# ---------------------------------------------------------------------- #
# discriminator and encoder
# ---------------------------------------------------------------------- #

@dataclass
class DiscriminatorConfig:
    in_resolution: int = 32
    num_classes: int = 8
    widths: tuple = (64, 128, 256)
    feature_dim: int = 512
    sn_iters: int = 1

    def __post_init__(self):
        if self.feature_dim <= 0:
            raise ParameterError("feature_dim must be positive")
        stages = int(np.log2(self.in_resolution // 4))
        if 4 * 2 ** stages != self.in_resolution:
            raise ParameterError("in_resolution must be 4 * 2^k")
        if len(self.widths) != stages:
            raise ParameterError(
                f"need {stages} widths to reach 4x4 from {self.in_resolution}")


class Discriminator(Module):
    """Stride-2 conv stack with spectral normalization and projection
    conditioning; exposes the pre-pooling feature vector used for image
    similarity."""

    def __init__(self, config: DiscriminatorConfig, rng):
        super().__init__()
        self.config = config
        chans = [3, *config.widths]
        self.downs = _ModuleList([
            SNConv2d(chans[i], chans[i + 1], 4, rng, stride=2, pad=1, iters=config.sn_iters)
            for i in range(len(config.widths))
        ])
        self.feat_conv = SNConv2d(config.widths[-1], config.feature_dim, 3, rng,
                                  pad=1, iters=config.sn_iters)
        self.embed = SNEmbedding(config.num_classes, config.feature_dim, rng,
                                 iters=config.sn_iters)
        self.head = SNLinear(config.feature_dim, 1, rng, iters=config.sn_iters)

    def _check_resolution(self, x):
        r = self.config.in_resolution
        if x.ndim != 4 or x.shape[2] != r or x.shape[3] != r:
            raise DimensionError(f"discriminator expects Nx3x{r}x{r} input")

    def feature_vector(self, x, update_sn=False) -> Tensor:
        """Globally pooled post-activation features of the last conv stage."""
        self._check_resolution(x)
        h = x if isinstance(x, Tensor) else Tensor(x)
        for conv in self.downs.items:
            h = relu(conv.forward(h, update_sn))
        h = relu(self.feat_conv.forward(h, update_sn))
        return global_avg_pool(h)

    def psi(self, x, update_sn=False) -> Tensor:
        """Unit-norm feature vector, one row per image."""
        phi = self.feature_vector(x, update_sn)
        sq = reduce_sum(mul(phi, phi), axis=1, keepdims=True)
        return div(phi, power(add(sq, 1e-24), 0.5))

    def logit(self, x, labels=None, update_sn=False) -> Tensor:
        """Hinge-loss logit; adds the class-projection term when labels given."""
        phi = self.feature_vector(x, update_sn)
        out = self.head.forward(phi, update_sn)
        if labels is not None:
            idx = _label_vector(labels, phi.shape[0], self.config.num_classes)
            emb = self.embed.forward(idx, update_sn)
            out = add(out, reduce_sum(mul(emb, phi), axis=1, keepdims=True))
        return reshape(out, (-1,))


def discriminator_features(disc: Discriminator, x):
    """(unit-norm feature vector, unconditional logit) for one image or a batch."""
    x = x if isinstance(x, Tensor) else Tensor(x)
    single = x.ndim == 3
    if single:
        x = reshape(x, (1, *x.shape))
    psi = disc.psi(x)
    logit = disc.logit(x)
    if single:
        psi = reshape(psi, (-1,))
        logit = reshape(logit, ())
    return psi, logit


@dataclass
class EncoderConfig:
    in_resolution: int = 32
    widths: tuple = (64, 128, 256)
    feature_dim: int = 512
    latent_dim: int = 128


class Encoder(Module):
    """Discriminator-shaped trunk with a latent head instead of a logit."""

    def __init__(self, config: EncoderConfig, rng):
        super().__init__()
        self.config = config
        chans = [3, *config.widths]
        self.downs = _ModuleList([
            Conv2d(chans[i], chans[i + 1], 4, rng, stride=2, pad=1)
            for i in range(len(config.widths))
        ])
        self.feat_conv = Conv2d(config.widths[-1], config.feature_dim, 3, rng, pad=1)
        self.head = Linear(config.feature_dim, config.latent_dim, rng)

    def forward(self, x) -> Tensor:
        r = self.config.in_resolution
        x = x if isinstance(x, Tensor) else Tensor(x)
        if x.ndim != 4 or x.shape[2] != r or x.shape[3] != r:
            raise DimensionError(f"encoder expects Nx3x{r}x{r} input")
        h = x
        for conv in self.downs.items:
            h = relu(conv.forward(h))
        h = relu(self.feat_conv.forward(h))
        return self.head.forward(global_avg_pool(h))


def encoder_forward(enc: Encoder, x) -> Tensor:
    x = x if isinstance(x, Tensor) else Tensor(x)
    single = x.ndim == 3
    if single:
        x = reshape(x, (1, *x.shape))
    z = enc.forward(x)
    return reshape(z, (-1,)) if single else z
