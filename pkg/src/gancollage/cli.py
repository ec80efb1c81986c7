"""Command line surface: train, project, edit, layer ablations, and the
pixel-paste vs internal-collage demo.

Exit codes: 0 success, 2 missing/unreadable checkpoint bundle, 3 invalid
recipe (diagnostics name the offending JSON pointer).
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .bundle import Bundle
from .collage import BlendEntry, EditRecipe, FeatureEdit, LabelEdit, Reference, Region, apply_recipe
from .compositor import BlendProblem, SolverConfig, poisson_blend
from .errors import CheckpointError, CollageError, ValidationError
from .imutil import image_digest, image_to_png_bytes, png_bytes_to_image, png_bytes_to_mask
from .nets import DiscriminatorConfig, GeneratorConfig
from .projection import ProjectionConfig, project_z, project_zeta
from .recipes import render_from_json
from .trainer import SyntheticDatasetSpec, TrainConfig, make_dataset, train_all

EXIT_OK = 0
EXIT_NO_BUNDLE = 2
EXIT_BAD_RECIPE = 3


def _bundle_path(args) -> Path:
    path = args.bundle or os.environ.get("COLLAGE_BUNDLE")
    if not path:
        raise CheckpointError("no bundle given (use --bundle or COLLAGE_BUNDLE)")
    return Path(path)


def _load_bundle(args) -> Bundle:
    return Bundle.load(_bundle_path(args))


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


# ---------------------------------------------------------------------- #
# commands
# ---------------------------------------------------------------------- #

def cmd_train(args) -> int:
    spec = SyntheticDatasetSpec(num_samples=args.samples, seed=args.dataset_seed)
    dataset = make_dataset(spec)
    cfg = TrainConfig(
        seed=args.seed,
        gan_iters=args.gan_iters,
        batch_size=args.batch_size,
        generator=GeneratorConfig(base_channels=args.base_channels),
        discriminator=DiscriminatorConfig(widths=tuple(args.disc_widths),
                                          feature_dim=args.feature_dim),
        aux_iters=args.aux_iters,
    )
    cfg.encoder.iters = args.encoder_iters
    bundle_path = _bundle_path(args)
    bundle_path.parent.mkdir(parents=True, exist_ok=True)
    bundle, stages_run, logs = train_all(dataset, cfg, bundle_path, resume=args.resume)
    print(f"stages run: {stages_run}; stages done: {bundle.stages_done}")
    if args.logs_dir:
        logs_dir = Path(args.logs_dir)
        logs_dir.mkdir(parents=True, exist_ok=True)
        _write_csv(logs_dir / "gan.csv", ["iteration", "d_loss", "g_loss"], logs["gan"])
        _write_csv(logs_dir / "encoder.csv", ["iteration", "held_out_loss"], logs["encoder"])
        _write_csv(logs_dir / "aux.csv", ["iteration", "meta_loss", "recon"], logs["aux"])
    print(f"bundle written to {bundle_path}")
    return EXIT_OK


def cmd_project(args) -> int:
    bundle = _load_bundle(args)
    png = Path(args.image).read_bytes()
    image = png_bytes_to_image(png)
    cfg = ProjectionConfig(steps=args.steps, lr=args.lr)
    if args.space == "zeta":
        result = project_zeta(image, bundle.gen, bundle.disc, bundle.enc, bundle.aux,
                              cfg, args.class_id)
    else:
        result = project_z(image, bundle.gen, bundle.disc, bundle.enc, cfg, args.class_id)
    ref = image_digest(png)
    out = {
        "image_ref": ref,
        "class": args.class_id,
        "space": args.space,
        "z": [float(v) for v in result.z],
        "initial_loss": float(result.losses[0]),
        "best_loss": float(result.best_losses[-1]),
    }
    Path(args.out).write_text(json.dumps(out, indent=2))
    curve_path = args.curve or str(Path(args.out).with_suffix(".curve.csv"))
    _write_csv(curve_path, ["iteration", "loss", "best_loss"], result.curve_rows())
    print(f"projected {args.image}: initial {out['initial_loss']:.4f} -> "
          f"best {out['best_loss']:.4f}; z and curve written")
    return EXIT_OK


def _cli_mask_loader(recipe_dir: Path):
    def load(ref: str):
        path = (recipe_dir / ref) if not os.path.isabs(ref) else Path(ref)
        if not path.is_file():
            raise ValidationError(f"mask file not found: {ref}")
        return png_bytes_to_mask(path.read_bytes())
    return load


def _projection_lookup(args):
    table = {}
    images = {}
    for spec in args.projections or []:
        data = json.loads(Path(spec).read_text())
        table[data["image_ref"]] = np.asarray(data["z"], dtype=np.float64)
        src = data.get("image_path")
        if src and Path(src).is_file():
            images[data["image_ref"]] = png_bytes_to_image(Path(src).read_bytes())
    return (lambda ref: table.get(ref)), (lambda ref: images.get(ref))


def cmd_edit(args) -> int:
    bundle = _load_bundle(args)
    recipe_path = Path(args.recipe)
    obj = json.loads(recipe_path.read_text())
    z_lookup, image_lookup = _projection_lookup(args)
    png, result = render_from_json(bundle, obj, _cli_mask_loader(recipe_path.parent),
                                   z_lookup=z_lookup, image_lookup=image_lookup)
    Path(args.out).write_bytes(png)
    print(f"rendered {args.out}; intercepted layers: "
          f"{sorted(result.features.keys()) or 'none'}; "
          f"render {result.timing['total_s'] * 1000:.0f} ms")
    return EXIT_OK


def cmd_ablate_layers(args) -> int:
    bundle = _load_bundle(args)
    recipe_path = Path(args.recipe)
    obj = json.loads(recipe_path.read_text())
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    num_layers = bundle.model_info()["layers"]
    written = []
    for upto in range(1, num_layers + 1):
        subset = list(range(1, upto + 1))
        variant = json.loads(json.dumps(obj))
        for edit in variant.get("label_edits", []):
            edit["layers"] = subset
        for edit in variant.get("feature_edits", []):
            edit["layers"] = subset
        png, _ = render_from_json(bundle, variant, _cli_mask_loader(recipe_path.parent))
        name = out_dir / f"layers_1-{upto}.png"
        name.write_bytes(png)
        written.append(str(name))
    print("ablation renders: " + ", ".join(written))
    return EXIT_OK


def cmd_demo_pixel_vs_internal(args) -> int:
    bundle = _load_bundle(args)
    gen = bundle.gen
    cfg = gen.config
    rng = np.random.default_rng(args.seed)
    res = cfg.resolution
    z_base, z_ref = rng.standard_normal((2, cfg.latent_dim))
    class_base = args.class_base % cfg.num_classes
    class_ref = args.class_ref % cfg.num_classes

    # region: centered box covering the middle of the frame
    mask = np.zeros((res, res))
    q = res // 4
    mask[q:res - q, q:res - q] = 1.0

    base_img, _ = gen.forward(z_base, class_base, mode="edit")
    ref_img, _ = gen.forward(z_ref, class_ref, mode="edit")
    base_np, ref_np = base_img.data[0], ref_img.data[0]

    # internal collage: blend the reference features inside the region
    recipe = EditRecipe(
        base_class=class_base, base_z=z_base,
        references=[Reference(z=z_ref, class_id=class_ref)],
        feature_edits=[FeatureEdit(layers=list(range(1, cfg.num_layers + 1)),
                                   blends=[BlendEntry(ref=0, mask=mask)])])
    internal = apply_recipe(gen, recipe).image

    # pixel collage: naive paste, then the same paste cleaned up by the
    # gradient-domain solver
    naive = base_np * (1 - mask[None]) + ref_np * mask[None]
    interior = mask > 0.5
    interior[0, :] = interior[-1, :] = False
    interior[:, 0] = interior[:, -1] = False
    poisson = poisson_blend(BlendProblem(source=ref_np, destination=base_np,
                                         mask=interior), SolverConfig())

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    panels = {
        "base": base_np, "reference": ref_np, "pixel_paste": naive,
        "pixel_paste_poisson": poisson, "internal_collage": internal,
    }
    for name, img in panels.items():
        (out_dir / f"{name}.png").write_bytes(image_to_png_bytes(img))
    strip = np.concatenate(list(panels.values()), axis=2)
    (out_dir / "side_by_side.png").write_bytes(image_to_png_bytes(strip))
    print(f"demo written to {out_dir} (side_by_side.png compares "
          "pixel paste, poisson paste, and internal collage)")
    return EXIT_OK


def cmd_serve(args) -> int:
    from .service import serve

    serve(_bundle_path(args), port=args.port, host=args.host)
    return EXIT_OK


# ---------------------------------------------------------------------- #
# parser
# ---------------------------------------------------------------------- #

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gancollage")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_bundle(p):
        p.add_argument("--bundle", help="checkpoint bundle path "
                                        "(default: $COLLAGE_BUNDLE)")

    p = sub.add_parser("train", help="train GAN, encoder, and auxiliary nets")
    add_bundle(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dataset-seed", type=int, default=0)
    p.add_argument("--samples", type=int, default=8192)
    p.add_argument("--gan-iters", type=int, default=2000)
    p.add_argument("--encoder-iters", type=int, default=600)
    p.add_argument("--aux-iters", type=int, default=300)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--base-channels", type=int, default=64)
    p.add_argument("--disc-widths", type=int, nargs="+", default=[16, 32, 64])
    p.add_argument("--feature-dim", type=int, default=128)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--logs-dir", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("project", help="recover the latent for a real image")
    add_bundle(p)
    p.add_argument("--image", required=True)
    p.add_argument("--class-id", type=int, default=0)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--space", choices=["z", "zeta"], default="z")
    p.add_argument("--out", required=True, help="projection JSON output")
    p.add_argument("--curve", default=None, help="loss curve CSV (default: <out>.curve.csv)")
    p.set_defaults(func=cmd_project)

    p = sub.add_parser("edit", help="render an edit recipe JSON")
    add_bundle(p)
    p.add_argument("--recipe", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--projections", nargs="*", default=[],
                   help="projection JSONs providing latents for image_ref bases")
    p.set_defaults(func=cmd_edit)

    p = sub.add_parser("ablate-layers", help="render a recipe at layer subsets "
                                             "{1}, {1,2}, ... all")
    add_bundle(p)
    p.add_argument("--recipe", required=True)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ablate_layers)

    p = sub.add_parser("demo-pixel-vs-internal",
                       help="compare naive pixel collaging against internal collaging")
    add_bundle(p)
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--class-base", type=int, default=0)
    p.add_argument("--class-ref", type=int, default=4)
    p.set_defaults(func=cmd_demo_pixel_vs_internal)

    p = sub.add_parser("serve", help="run the HTTP service")
    add_bundle(p)
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--host", default="127.0.0.1")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CheckpointError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NO_BUNDLE
    except ValidationError as exc:
        pointer = exc.pointer or ""
        print(f"invalid recipe at '{pointer or '/'}': {exc}", file=sys.stderr)
        for err in getattr(exc, "all_errors", []) or []:
            print(f"  {err['pointer'] or '/'}: {err['message']}", file=sys.stderr)
        return EXIT_BAD_RECIPE
    except CollageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
