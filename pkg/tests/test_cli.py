"""CLI contract tests: exit codes, file outputs, and CLI/HTTP agreement."""

import base64
import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from gancollage.cli import main
from gancollage.imutil import encode_png_b64, image_to_png_bytes
from gancollage.service import create_app


def write_recipe(tmp_path, obj):
    path = tmp_path / "recipe.json"
    path.write_text(json.dumps(obj))
    return path


def full_mask_png(tmp_path, name="mask.png", value=1.0):
    path = tmp_path / name
    path.write_bytes(image_to_png_bytes(np.full((32, 32), value)))
    return name


class TestExitCodes:
    def test_missing_bundle_exits_2(self, tmp_path, capsys):
        recipe = write_recipe(tmp_path, {"base": {"z": [0.0] * 128, "class": 0}})
        code = main(["edit", "--bundle", str(tmp_path / "none.ncol"),
                     "--recipe", str(recipe), "--out", str(tmp_path / "o.png")])
        assert code == 2

    def test_invalid_recipe_exits_3_with_pointer(self, tiny_bundle_path, tmp_path, capsys):
        mask = full_mask_png(tmp_path)
        recipe = write_recipe(tmp_path, {
            "base": {"z": [0.0] * 128, "class": 0},
            "label_edits": [{"layers": [9], "regions": [{"mask": mask, "class": 1}]}]})
        code = main(["edit", "--bundle", str(tiny_bundle_path),
                     "--recipe", str(recipe), "--out", str(tmp_path / "o.png")])
        assert code == 3
        err = capsys.readouterr().err
        assert "/label_edits/0/layers/0" in err

    def test_env_var_bundle(self, tiny_bundle_path, tmp_path, monkeypatch):
        monkeypatch.setenv("COLLAGE_BUNDLE", str(tiny_bundle_path))
        recipe = write_recipe(tmp_path, {"base": {"z": [0.0] * 128, "class": 0}})
        out = tmp_path / "o.png"
        assert main(["edit", "--recipe", str(recipe), "--out", str(out)]) == 0
        assert out.is_file()


class TestEdit:
    def test_empty_recipe_equals_plain_generation(self, tiny_bundle, tiny_bundle_path, tmp_path):
        z = np.random.default_rng(0).standard_normal(128)
        recipe = write_recipe(tmp_path, {"base": {"z": list(z), "class": 3}})
        out = tmp_path / "o.png"
        assert main(["edit", "--bundle", str(tiny_bundle_path),
                     "--recipe", str(recipe), "--out", str(out)]) == 0
        img, _ = tiny_bundle.gen.forward(z, 3, mode="edit")
        assert out.read_bytes() == image_to_png_bytes(img.data[0])

    def test_cli_and_http_renders_bit_identical(self, tiny_bundle, tiny_bundle_path, tmp_path):
        rng = np.random.default_rng(1)
        z = rng.standard_normal(128)
        zr = rng.standard_normal(128)
        mask = np.zeros((32, 32))
        mask[8:24, 8:24] = 1.0
        base = {"base": {"z": list(z), "class": 2},
                "references": [{"z": list(zr), "class": 5}],
                "label_edits": [{"layers": [1, 2],
                                 "regions": [{"mask": None, "class": 6, "intensity": 0.8}]}],
                "feature_edits": [{"layers": [3, 4],
                                   "blends": [{"ref": 0, "mask": None, "shift": [2, -3]}]}]}

        cli_obj = json.loads(json.dumps(base))
        (tmp_path / "m.png").write_bytes(image_to_png_bytes(mask))
        cli_obj["label_edits"][0]["regions"][0]["mask"] = "m.png"
        cli_obj["feature_edits"][0]["blends"][0]["mask"] = "m.png"
        recipe = write_recipe(tmp_path, cli_obj)
        out = tmp_path / "o.png"
        assert main(["edit", "--bundle", str(tiny_bundle_path),
                     "--recipe", str(recipe), "--out", str(out)]) == 0

        http_obj = json.loads(json.dumps(base))
        b64 = encode_png_b64(mask)
        http_obj["label_edits"][0]["regions"][0]["mask"] = b64
        http_obj["feature_edits"][0]["blends"][0]["mask"] = b64
        with TestClient(create_app(bundle=tiny_bundle)) as client:
            sid = client.post("/sessions").json()["session_id"]
            body = client.post(f"/sessions/{sid}/render", json=http_obj).json()
        assert base64.b64decode(body["png"]) == out.read_bytes()


class TestProjectCommand:
    def test_project_writes_outputs(self, tiny_bundle, tiny_bundle_path, tmp_path):
        img, _ = tiny_bundle.gen.forward(
            np.random.default_rng(2).standard_normal(128), 1, mode="edit")
        target = tmp_path / "x.png"
        target.write_bytes(image_to_png_bytes(img.data[0]))
        out = tmp_path / "proj.json"
        assert main(["project", "--bundle", str(tiny_bundle_path),
                     "--image", str(target), "--class-id", "1",
                     "--steps", "4", "--out", str(out)]) == 0
        data = json.loads(out.read_text())
        assert len(data["z"]) == 128
        assert data["best_loss"] <= data["initial_loss"]
        curve = (tmp_path / "proj.curve.csv").read_text().splitlines()
        assert curve[0] == "iteration,loss,best_loss"
        assert len(curve) == 6  # header + steps+1 rows

    def test_edit_with_projdu_image_ref(self, tiny_bundle, tiny_bundle_path, tmp_path):
        img, _ = tiny_bundle.gen.forward(
            np.random.default_rng(3).standard_normal(128), 4, mode="edit")
        target = tmp_path / "x.png"
        target.write_bytes(image_to_png_bytes(img.data[0]))
        proj = tmp_path / "proj.json"
        main(["project", "--bundle", str(tiny_bundle_path), "--image", str(target),
              "--class-id", "4", "--steps", "2", "--out", str(proj)])
        ref = json.loads(proj.read_text())["image_ref"]
        recipe = write_recipe(tmp_path, {"base": {"image_ref": ref, "class": 4}})
        out = tmp_path / "o.png"
        assert main(["edit", "--bundle", str(tiny_bundle_path), "--recipe", str(recipe),
                     "--out", str(out), "--projections", str(proj)]) == 0
        assert out.is_file()


class TestDemos:
    def test_ablate_layers_writes_all_subsets(self, tiny_bundle_path, tmp_path):
        mask = full_mask_png(tmp_path)
        recipe = write_recipe(tmp_path, {
            "base": {"z": [0.2] * 128, "class": 0},
            "label_edits": [{"layers": [1], "regions": [{"mask": mask, "class": 3}]}]})
        out = tmp_path / "ablate"
        assert main(["ablate-layers", "--bundle", str(tiny_bundle_path),
                     "--recipe", str(recipe), "--out", str(out)]) == 0
        names = sorted(p.name for p in out.glob("*.png"))
        assert names == ["layers_1-1.png", "layers_1-2.png",
                         "layers_1-3.png", "layers_1-4.png"]

    def test_pixel_vs_internal_demo(self, tiny_bundle_path, tmp_path):
        out = tmp_path / "demo"
        assert main(["demo-pixel-vs-internal", "--bundle", str(tiny_bundle_path),
                     "--out", str(out), "--seed", "5"]) == 0
        assert (out / "side_by_side.png").is_file()
        assert (out / "internal_collage.png").is_file()
        assert (out / "pixel_paste_poisson.png").is_file()
