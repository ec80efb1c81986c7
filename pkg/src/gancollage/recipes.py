"""Edit recipe JSON: schema, validation with JSON-pointer diagnostics,
normalization, and resolution into the in-memory EditRecipe.

The same schema is consumed by the CLI (mask refs are file paths), the HTTP
service (mask refs are base64 PNGs, base image refs are projection digests),
and the browser studio.
"""

from __future__ import annotations

import json
from typing import Callable, Optional

import numpy as np
from jsonschema import Draft202012Validator

from .bundle import Bundle
from .collage import (
    BlendEntry,
    EditRecipe,
    FeatureEdit,
    LabelEdit,
    PostProcess,
    Reference,
    Region,
    apply_recipe,
)
from .errors import ValidationError
from .imutil import image_to_png_bytes

_NUM = {"type": "number"}
_LAYERS = {"type": "array", "items": {"type": "integer"}, "minItems": 1}

RECIPE_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["base"],
    "additionalProperties": False,
    "properties": {
        "base": {
            "type": "object",
            "required": ["class"],
            "additionalProperties": False,
            "properties": {
                "z": {"type": "array", "items": _NUM},
                "image_ref": {"type": "string"},
                "class": {"type": "integer", "minimum": 0},
            },
        },
        "references": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["z"],
                "additionalProperties": False,
                "properties": {
                    "z": {"type": "array", "items": _NUM},
                    "class": {"type": "integer", "minimum": 0},
                },
            },
        },
        "label_edits": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["layers", "regions"],
                "additionalProperties": False,
                "properties": {
                    "layers": _LAYERS,
                    "base_class": {"type": "integer", "minimum": 0},
                    "regions": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["mask", "class"],
                            "additionalProperties": False,
                            "properties": {
                                "mask": {"type": "string"},
                                "class": {"type": "integer", "minimum": 0},
                                "intensity": {"type": "number"},
                            },
                        },
                    },
                },
            },
        },
        "feature_edits": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["layers", "blends"],
                "additionalProperties": False,
                "properties": {
                    "layers": _LAYERS,
                    "blends": {
                        "type": "array",
                        "items": {
                            "type": "object",
                            "required": ["ref", "mask"],
                            "additionalProperties": False,
                            "properties": {
                                "ref": {"type": "integer", "minimum": 0},
                                "mask": {"type": "string"},
                                "shift": {
                                    "type": "array",
                                    "items": {"type": "integer"},
                                    "minItems": 2,
                                    "maxItems": 2,
                                },
                            },
                        },
                    },
                },
            },
        },
        "postprocess": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "poisson": {"type": "boolean"},
                "mask": {"type": "string"},
            },
        },
    },
}

_validator = Draft202012Validator(RECIPE_SCHEMA)


def _pointer(path) -> str:
    return "/" + "/".join(str(p) for p in path) if path else ""


def validate_recipe(obj, model_info: Optional[dict] = None) -> list[dict]:
    """Structural plus semantic validation; returns [{pointer, message}]."""
    errors = [{"pointer": _pointer(e.absolute_path), "message": e.message}
              for e in _validator.iter_errors(obj)]
    if errors:
        return sorted(errors, key=lambda e: e["pointer"])

    base = obj["base"]
    if ("z" in base) == ("image_ref" in base):
        errors.append({"pointer": "/base",
                       "message": "base needs exactly one of 'z' or 'image_ref'"})

    if model_info is not None:
        n_class = model_info["num_classes"]
        n_layers = model_info["layers"]
        latent = model_info["latent_dim"]

        def check_class(value, pointer):
            if value >= n_class:
                errors.append({"pointer": pointer,
                               "message": f"class {value} out of range [0, {n_class})"})

        def check_layers(layers, pointer):
            for i, layer in enumerate(layers):
                if not 1 <= layer <= n_layers:
                    errors.append({"pointer": f"{pointer}/{i}",
                                   "message": f"layer {layer} out of range [1, {n_layers}]"})

        check_class(base["class"], "/base/class")
        if "z" in base and len(base["z"]) != latent:
            errors.append({"pointer": "/base/z",
                           "message": f"latent length {len(base['z'])} != {latent}"})
        for i, ref in enumerate(obj.get("references", [])):
            if len(ref["z"]) != latent:
                errors.append({"pointer": f"/references/{i}/z",
                               "message": f"latent length {len(ref['z'])} != {latent}"})
            if "class" in ref:
                check_class(ref["class"], f"/references/{i}/class")
        for i, edit in enumerate(obj.get("label_edits", [])):
            check_layers(edit["layers"], f"/label_edits/{i}/layers")
            if "base_class" in edit:
                check_class(edit["base_class"], f"/label_edits/{i}/base_class")
            for j, region in enumerate(edit["regions"]):
                check_class(region["class"], f"/label_edits/{i}/regions/{j}/class")
                intensity = region.get("intensity", 1.0)
                if not 0.0 <= intensity <= 1.0:
                    errors.append({"pointer": f"/label_edits/{i}/regions/{j}/intensity",
                                   "message": f"intensity {intensity} outside [0, 1]"})
        n_refs = len(obj.get("references", []))
        for i, edit in enumerate(obj.get("feature_edits", [])):
            check_layers(edit["layers"], f"/feature_edits/{i}/layers")
            for j, blend in enumerate(edit["blends"]):
                if blend["ref"] >= n_refs:
                    errors.append({"pointer": f"/feature_edits/{i}/blends/{j}/ref",
                                   "message": f"reference {blend['ref']} not in recipe "
                                              f"({n_refs} given)"})
        post = obj.get("postprocess", {})
        if post.get("poisson") and "mask" not in post:
            errors.append({"pointer": "/postprocess",
                           "message": "poisson post-process needs a mask"})
    return sorted(errors, key=lambda e: e["pointer"])


def require_valid(obj, model_info: Optional[dict] = None) -> None:
    errors = validate_recipe(obj, model_info)
    if errors:
        first = errors[0]
        exc = ValidationError(f"invalid recipe at {first['pointer'] or '/'}: "
                              f"{first['message']}", pointer=first["pointer"])
        exc.all_errors = errors
        raise exc


def normalize_recipe(obj) -> dict:
    """Canonical form with defaults filled; a fixed point of itself."""
    out = {"base": dict(obj["base"])}
    out["references"] = [
        {"z": [float(v) for v in r["z"]], **({"class": r["class"]} if "class" in r else {})}
        for r in obj.get("references", [])]
    out["label_edits"] = [
        {
            "layers": sorted(e["layers"]),
            **({"base_class": e["base_class"]} if "base_class" in e else {}),
            "regions": [
                {"mask": r["mask"], "class": r["class"],
                 "intensity": float(r.get("intensity", 1.0))}
                for r in e["regions"]],
        }
        for e in obj.get("label_edits", [])]
    out["feature_edits"] = [
        {
            "layers": sorted(e["layers"]),
            "blends": [
                {"ref": b["ref"], "mask": b["mask"],
                 "shift": [int(s) for s in b.get("shift", (0, 0))]}
                for b in e["blends"]],
        }
        for e in obj.get("feature_edits", [])]
    post = obj.get("postprocess", {})
    out["postprocess"] = {"poisson": bool(post.get("poisson", False))}
    if "mask" in post:
        out["postprocess"]["mask"] = post["mask"]
    if "z" in out["base"]:
        out["base"]["z"] = [float(v) for v in out["base"]["z"]]
    return out


MaskLoader = Callable[[str], np.ndarray]
ZLookup = Callable[[str], Optional[np.ndarray]]
ImageLookup = Callable[[str], Optional[np.ndarray]]


def resolve_recipe(obj, model_info: dict, mask_loader: MaskLoader,
                   z_lookup: Optional[ZLookup] = None,
                   image_lookup: Optional[ImageLookup] = None) -> EditRecipe:
    """Validate and turn recipe JSON into arrays.

    ``mask_loader`` maps a mask ref to an (H, W) array in [0, 1];
    ``z_lookup``/``image_lookup`` resolve a base image_ref to its projected
    latent and pixels. A real-image base with no projected latent raises
    UsageError downstream (HTTP 409 at the service).
    """
    require_valid(obj, model_info)
    res = model_info["resolution"]

    def load_mask(ref, pointer):
        mask = mask_loader(ref)
        if mask is None:
            raise ValidationError(f"mask '{ref}' could not be loaded", pointer=pointer)
        mask = np.asarray(mask, dtype=np.float64)
        if mask.shape != (res, res):
            raise ValidationError(
                f"mask '{ref}' is {mask.shape}, recipe resolution is {res}x{res}",
                pointer=pointer)
        return mask

    base = obj["base"]
    base_z = None
    base_image = None
    base_ref = base.get("image_ref")
    if "z" in base:
        base_z = np.asarray(base["z"], dtype=np.float64)
    else:
        if z_lookup is not None:
            z = z_lookup(base_ref)
            base_z = None if z is None else np.asarray(z, dtype=np.float64)
        if image_lookup is not None:
            base_image = image_lookup(base_ref)

    references = [Reference(z=np.asarray(r["z"], dtype=np.float64),
                            class_id=r.get("class"))
                  for r in obj.get("references", [])]
    label_edits = [
        LabelEdit(
            layers=list(e["layers"]),
            base_class=e.get("base_class"),
            regions=[Region(mask=load_mask(r["mask"], f"/label_edits/{i}/regions/{j}/mask"),
                            class_id=r["class"], intensity=float(r.get("intensity", 1.0)))
                     for j, r in enumerate(e["regions"])])
        for i, e in enumerate(obj.get("label_edits", []))]
    feature_edits = [
        FeatureEdit(
            layers=list(e["layers"]),
            blends=[BlendEntry(ref=b["ref"],
                               mask=load_mask(b["mask"], f"/feature_edits/{i}/blends/{j}/mask"),
                               shift=tuple(b.get("shift", (0, 0))))
                    for j, b in enumerate(e["blends"])])
        for i, e in enumerate(obj.get("feature_edits", []))]
    post = obj.get("postprocess", {})
    postprocess = PostProcess(
        poisson=bool(post.get("poisson", False)),
        mask=load_mask(post["mask"], "/postprocess/mask") if "mask" in post else None)

    return EditRecipe(base_class=int(base["class"]), base_z=base_z,
                      base_image=base_image, base_image_ref=base_ref,
                      references=references, label_edits=label_edits,
                      feature_edits=feature_edits, postprocess=postprocess)


def render_from_json(bundle: Bundle, obj, mask_loader: MaskLoader,
                     z_lookup: Optional[ZLookup] = None,
                     image_lookup: Optional[ImageLookup] = None):
    """One code path for CLI and HTTP renders: resolve, apply, encode.

    Returns (png_bytes, RenderResult).
    """
    recipe = resolve_recipe(obj, bundle.model_info(), mask_loader,
                            z_lookup=z_lookup, image_lookup=image_lookup)
    result = apply_recipe(bundle.gen, recipe)
    return image_to_png_bytes(result.image), result


def dumps_canonical(obj) -> str:
    return json.dumps(normalize_recipe(obj), sort_keys=True, indent=2)
