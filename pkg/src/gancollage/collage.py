"""Editing inside the generator: spatial class maps and feature blending.

A ClassMap reweights the conditional normalization tables per position, so
painted regions of an image take on the statistics of other classes at a
chosen intensity. Feature blending mixes intermediate feature maps coming
from several latents under masks that sum to one, optionally translating a
donor map first. Both are driven by a declarative EditRecipe and applied by
intercepting the generator's forward pass layer by layer.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import DimensionError, ParameterError, UsageError, ValidationError
from .nets import ConditionalBatchNorm, Generator
from .tensor import Tensor, add, mul, shift2d

SIMPLEX_TOL = 1e-6


# ---------------------------------------------------------------------- #
# class maps
# ---------------------------------------------------------------------- #

class ClassMap:
    """Per-position mixture weights over classes, one simplex per pixel."""

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=np.float64)
        if weights.ndim != 3:
            raise DimensionError("class map must be (H, W, num_classes)")
        if weights.min() < -SIMPLEX_TOL:
            raise ValidationError("class map has negative weights")
        sums = weights.sum(axis=2)
        if np.abs(sums - 1.0).max() > SIMPLEX_TOL:
            raise ValidationError("class map rows must sum to 1")
        self.weights = weights

    @property
    def resolution(self) -> int:
        return self.weights.shape[0]

    @property
    def num_classes(self) -> int:
        return self.weights.shape[2]

    @classmethod
    def one_hot(cls, class_id: int, resolution: int, num_classes: int) -> "ClassMap":
        if not 0 <= class_id < num_classes:
            raise ParameterError(f"class id {class_id} out of range [0, {num_classes})")
        w = np.zeros((resolution, resolution, num_classes))
        w[:, :, class_id] = 1.0
        return cls(w)


def make_class_map(regions, base_class: int, resolution: int, num_classes: int) -> ClassMap:
    """Accumulate painted regions into a class map on the simplex.

    Each region contributes ``mask * intensity`` to its class; leftover
    weight goes to ``base_class``. Where regions overlap past a total of 1
    the contributions are rescaled proportionally.
    """
    if not 0 <= base_class < num_classes:
        raise ParameterError(f"base class {base_class} out of range [0, {num_classes})")
    acc = np.zeros((resolution, resolution, num_classes))
    for region in regions:
        mask = np.asarray(region.mask, dtype=np.float64)
        if mask.shape != (resolution, resolution):
            raise DimensionError(
                f"region mask shape {mask.shape} != map resolution {resolution}")
        if not 0.0 <= region.intensity <= 1.0:
            raise ParameterError(f"intensity {region.intensity} outside [0, 1]")
        if not 0 <= region.class_id < num_classes:
            raise ParameterError(f"class id {region.class_id} out of range")
        acc[:, :, region.class_id] += np.clip(mask, 0.0, 1.0) * region.intensity
    total = acc.sum(axis=2)
    over = total > 1.0
    if over.any():
        acc[over] /= total[over][:, None]
    remainder = np.where(over, 0.0, 1.0 - total)
    acc[:, :, base_class] += remainder
    return ClassMap(acc)


def resample_map(m, target_resolution: int):
    """Area-average a class map or mask down to a feature resolution.

    The target must divide the source; block means keep class maps on the
    simplex and masks inside [0, 1].
    """
    weights = m.weights if isinstance(m, ClassMap) else np.asarray(m, dtype=np.float64)
    src = weights.shape[0]
    if weights.shape[1] != src:
        raise DimensionError("resample_map expects square maps")
    if target_resolution < 1 or src % target_resolution != 0:
        raise ParameterError(
            f"target resolution {target_resolution} does not divide source {src}")
    f = src // target_resolution
    if f == 1:
        out = weights.copy()
    elif weights.ndim == 3:
        out = weights.reshape(target_resolution, f, target_resolution, f, -1).mean(axis=(1, 3))
    else:
        out = weights.reshape(target_resolution, f, target_resolution, f).mean(axis=(1, 3))
    return ClassMap(out) if isinstance(m, ClassMap) else out


def scbn_forward(f, class_map, cbn: ConditionalBatchNorm, mode: str = "edit") -> Tensor:
    """Conditional batch normalization with spatially mixed class parameters.

    With a spatially uniform one-hot map this reproduces the plain per-class
    path exactly, because both share the same normalization core and the
    mixed scale/bias reduce to the single class row bit for bit.
    """
    weights = class_map.weights if isinstance(class_map, ClassMap) else np.asarray(class_map)
    return cbn.forward(f, class_map=weights, mode=mode)


# ---------------------------------------------------------------------- #
# feature blending
# ---------------------------------------------------------------------- #

def blend_features(features: list[Tensor], blends) -> Tensor:
    """Mask-weighted sum of feature maps: the base map ``features[0]`` keeps
    whatever weight the listed blends leave behind.

    ``blends`` is a sequence of ``(source_index, mask, (dy, dx))`` with masks
    at the feature resolution, either (H, W) or (C, H, W); shifts translate
    the donor map with zero fill before masking.
    """
    base = features[0]
    if base.ndim != 4:
        raise DimensionError("blend_features expects NCHW feature maps")
    n, c, h, w = base.shape
    for t in features:
        if t.shape != base.shape:
            raise DimensionError("all blended feature maps must share one shape")

    summed = np.zeros((c, h, w))
    prepared = []
    for idx, mask, shift in blends:
        if not 1 <= idx < len(features):
            raise ValidationError(f"blend source index {idx} out of range")
        mask = np.asarray(mask, dtype=np.float64)
        if mask.ndim == 2:
            if mask.shape != (h, w):
                raise DimensionError(f"mask shape {mask.shape} != feature {(h, w)}")
            mask = np.broadcast_to(mask, (c, h, w))
        elif mask.shape != (c, h, w):
            raise DimensionError(f"per-channel mask shape {mask.shape} != {(c, h, w)}")
        if mask.min() < -SIMPLEX_TOL:
            raise ValidationError("blend masks must be non-negative")
        summed = summed + mask
        prepared.append((idx, mask, shift))

    base_mask = 1.0 - summed
    if base_mask.min() < -SIMPLEX_TOL:
        raise ValidationError("blend masks sum past 1 somewhere (beyond 1e-6)")

    out = mul(base, Tensor(base_mask[None]))
    for idx, mask, (dy, dx) in prepared:
        donor = features[idx]
        if dy or dx:
            donor = shift2d(donor, dy, dx)
        out = add(out, mul(donor, Tensor(mask[None])))
    return out


# ---------------------------------------------------------------------- #
# recipes
# ---------------------------------------------------------------------- #

@dataclass
class Region:
    mask: np.ndarray
    class_id: int
    intensity: float = 1.0


@dataclass
class LabelEdit:
    layers: list[int]
    regions: list[Region]
    base_class: Optional[int] = None


@dataclass
class BlendEntry:
    ref: int
    mask: np.ndarray
    shift: tuple[int, int] = (0, 0)


@dataclass
class FeatureEdit:
    layers: list[int]
    blends: list[BlendEntry]


@dataclass
class Reference:
    z: np.ndarray
    class_id: Optional[int] = None


@dataclass
class PostProcess:
    poisson: bool = False
    mask: Optional[np.ndarray] = None


@dataclass
class EditRecipe:
    """Declarative description of one collaging operation."""

    base_class: int
    base_z: Optional[np.ndarray] = None
    base_image: Optional[np.ndarray] = None       # (3, H, W) in [0, 1]
    base_image_ref: Optional[str] = None
    references: list[Reference] = field(default_factory=list)
    label_edits: list[LabelEdit] = field(default_factory=list)
    feature_edits: list[FeatureEdit] = field(default_factory=list)
    postprocess: PostProcess = field(default_factory=PostProcess)

    @property
    def is_real_base(self) -> bool:
        return self.base_image is not None or self.base_image_ref is not None


@dataclass
class RenderResult:
    image: np.ndarray                      # (3, H, W) in [0, 1]
    features: dict[int, np.ndarray]        # layer -> intercepted map (C, h, w)
    diagnostics: dict
    timing: dict[str, float]


def _check_layers(layers, num_layers, what):
    seen = set()
    for layer in layers:
        if not 1 <= layer <= num_layers:
            raise ValidationError(
                f"{what} layer {layer} out of range [1, {num_layers}]")
        if layer in seen:
            raise ValidationError(f"{what} lists layer {layer} twice")
        seen.add(layer)


def apply_recipe(gen: Generator, recipe: EditRecipe) -> RenderResult:
    """Render a recipe: one edited forward pass of the base latent, with
    clean reference passes supplying donor features for blending.

    Label edits swap the class lookup for a resampled class map at each
    selected layer; feature edits replace the layer's output map with a
    masked blend. When both hit one layer the label edit acts first (it
    shapes the features that the blend then mixes).
    """
    cfg = gen.config
    t0 = time.perf_counter()

    if recipe.base_z is None:
        raise UsageError(
            "recipe base has no latent; project the real image first")
    base_z = np.asarray(recipe.base_z, dtype=np.float64)
    pixel_res = cfg.resolution

    # label edits -> per-layer class maps at each layer's own resolution
    label_maps: dict[int, np.ndarray] = {}
    label_diag = []
    for edit in recipe.label_edits:
        _check_layers(edit.layers, cfg.num_layers, "label edit")
        base_class = recipe.base_class if edit.base_class is None else edit.base_class
        pixel_map = make_class_map(edit.regions, base_class, pixel_res, cfg.num_classes)
        for layer in edit.layers:
            if layer in label_maps:
                raise ValidationError(f"two label edits target layer {layer}")
            res = cfg.layer_resolution(layer)
            label_maps[layer] = resample_map(pixel_map, res).weights
        label_diag.append({"layers": sorted(edit.layers),
                           "resolutions": [cfg.layer_resolution(l) for l in sorted(edit.layers)]})

    # feature edits -> interceptors over clean reference features
    ref_feats: dict[int, list] = {}
    feature_plan: dict[int, list] = {}
    feature_diag = []
    for edit in recipe.feature_edits:
        _check_layers(edit.layers, cfg.num_layers, "feature edit")
        for entry in edit.blends:
            if not 0 <= entry.ref < len(recipe.references):
                raise ValidationError(
                    f"blend references latent {entry.ref}, recipe has {len(recipe.references)}")
        for layer in edit.layers:
            if layer in feature_plan:
                raise ValidationError(f"two feature edits target layer {layer}")
            feature_plan[layer] = list(edit.blends)
        feature_diag.append({"layers": sorted(edit.layers),
                             "resolutions": [cfg.layer_resolution(l) for l in sorted(edit.layers)]})

    t_setup = time.perf_counter()

    for layer, blends in feature_plan.items():
        for entry in blends:
            if entry.ref not in ref_feats:
                ref = recipe.references[entry.ref]
                ref_class = recipe.base_class if ref.class_id is None else ref.class_id
                _, feats = gen.forward(np.asarray(ref.z, dtype=np.float64), ref_class, mode="edit")
                ref_feats[entry.ref] = feats

    intercepted: dict[int, np.ndarray] = {}

    def make_interceptor(layer: int, blends):
        res = cfg.layer_resolution(layer)
        scale = res / pixel_res
        resolved = []
        for entry in blends:
            mask = np.asarray(entry.mask, dtype=np.float64)
            if mask.shape != (pixel_res, pixel_res):
                raise DimensionError(
                    f"blend mask shape {mask.shape} != pixel resolution {pixel_res}")
            fm = resample_map(mask, res)
            dy = int(np.rint(entry.shift[0] * scale))
            dx = int(np.rint(entry.shift[1] * scale))
            resolved.append((entry.ref, fm, (dy, dx)))

        def interceptor(f):
            feats = [f] + [ref_feats[r][layer - 1] for r, _, _ in resolved]
            spec = [(i + 1, m, s) for i, (_, m, s) in enumerate(resolved)]
            blended = blend_features(feats, spec)
            intercepted[layer] = blended.data[0].copy()
            return blended

        return interceptor

    interceptors = {layer: make_interceptor(layer, blends)
                    for layer, blends in feature_plan.items()}

    t_refs = time.perf_counter()
    img_t, feats = gen.forward(base_z, recipe.base_class, mode="edit",
                               label_maps=label_maps, interceptors=interceptors)
    for layer in label_maps:
        intercepted.setdefault(layer, feats[layer - 1].data[0].copy())
    image = img_t.data[0] if img_t.data.shape[0] == 1 else img_t.data
    t_render = time.perf_counter()

    poisson_applied = False
    if recipe.postprocess.poisson:
        from .compositor import BlendProblem, SolverConfig, poisson_blend

        if recipe.postprocess.mask is None:
            raise ValidationError("poisson post-process requested without a mask")
        if recipe.is_real_base and recipe.base_image is not None:
            destination = recipe.base_image
        else:
            clean_img, _ = gen.forward(base_z, recipe.base_class, mode="edit")
            destination = clean_img.data[0]
        interior = np.asarray(recipe.postprocess.mask, dtype=np.float64) > 0.5
        problem = BlendProblem(source=image, destination=destination, mask=interior)
        image = poisson_blend(problem, SolverConfig())
        poisson_applied = True
    t_post = time.perf_counter()

    diagnostics = {
        "label_edits": label_diag,
        "feature_edits": feature_diag,
        "poisson": poisson_applied,
    }
    timing = {
        "setup_s": t_setup - t0,
        "references_s": t_refs - t_setup,
        "render_s": t_render - t_refs,
        "postprocess_s": t_post - t_render,
        "total_s": t_post - t0,
    }
    return RenderResult(image=image, features=intercepted,
                        diagnostics=diagnostics, timing=timing)
