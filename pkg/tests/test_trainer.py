"""Dataset and training-pipeline tests (tiny budgets; the full-scale run
lives in the acceptance suite)."""

import numpy as np
import pytest

from gancollage.nets import DiscriminatorConfig, GeneratorConfig
from gancollage.projection import AuxTrainConfig, EncoderTrainConfig
from gancollage.trainer import (
    ShapesDataset,
    SyntheticDatasetSpec,
    TrainConfig,
    make_dataset,
    train_all,
    train_gan,
)


def tiny_cfg(**kw):
    kw.setdefault("seed", 3)
    kw.setdefault("gan_iters", 4)
    kw.setdefault("batch_size", 4)
    kw.setdefault("generator", GeneratorConfig(base_channels=8))
    kw.setdefault("discriminator", DiscriminatorConfig(widths=(8, 16, 32), feature_dim=24))
    kw.setdefault("encoder", EncoderTrainConfig(iters=2, batch_size=4, eval_batch=4))
    kw.setdefault("aux", AuxTrainConfig(batch_size=2, identity_pretrain_iters=5))
    kw.setdefault("aux_iters", 2)
    return TrainConfig(**kw)


class TestDataset:
    def test_same_seed_same_sample(self):
        a = make_dataset(SyntheticDatasetSpec(seed=5))
        b = make_dataset(SyntheticDatasetSpec(seed=5))
        img_a, lab_a = a.sample(0)
        img_b, lab_b = b.sample(0)
        assert lab_a == lab_b
        assert np.array_equal(img_a, img_b)

    def test_different_seed_differs(self):
        a = make_dataset(SyntheticDatasetSpec(seed=5))
        b = make_dataset(SyntheticDatasetSpec(seed=6))
        assert not np.array_equal(a.sample(0)[0], b.sample(0)[0])

    def test_labels_in_range_and_cycling(self):
        ds = make_dataset(SyntheticDatasetSpec(num_classes=8))
        labels = [ds.sample(i)[1] for i in range(24)]
        assert all(0 <= l < 8 for l in labels)
        assert sorted(set(labels)) == list(range(8))

    def test_images_in_unit_interval(self):
        ds = make_dataset(SyntheticDatasetSpec(seed=1))
        imgs, _ = ds.batch(range(16))
        assert imgs.min() >= 0.0 and imgs.max() <= 1.0
        assert imgs.shape == (16, 3, 32, 32)

    def test_class_hues_separated(self):
        # measured over 1000 rendered samples (125 per class)
        ds = make_dataset(SyntheticDatasetSpec(seed=2))
        hues = [ds.class_mean_hue(k, n=125) for k in range(8)]

        def circ(a, b):
            d = abs(a - b) % 1.0
            return min(d, 1.0 - d)

        worst = min(circ(hues[i], hues[j])
                    for i in range(8) for j in range(i + 1, 8))
        assert worst > 0.1

    def test_class_mean_colors_distinct(self):
        ds = make_dataset(SyntheticDatasetSpec(seed=2))
        means = np.stack([ds.class_mean_color(k, n=50) for k in range(8)])
        for i in range(8):
            for j in range(i + 1, 8):
                assert np.abs(means[i] - means[j]).max() > 0.05


class TestTrainGan:
    def test_zero_iterations_returns_initialization(self):
        ds = make_dataset(SyntheticDatasetSpec(num_samples=64, seed=3))
        g1, d1, log = train_gan(ds, tiny_cfg(gan_iters=0))
        g2, d2, _ = train_gan(ds, tiny_cfg(gan_iters=0))
        assert log == []
        for a, b in zip(g1.parameters(), g2.parameters()):
            assert np.array_equal(a.data, b.data)

    def test_seeded_runs_bit_identical(self):
        ds = make_dataset(SyntheticDatasetSpec(num_samples=64, seed=3))
        g1, d1, _ = train_gan(ds, tiny_cfg())
        g2, d2, _ = train_gan(ds, tiny_cfg())
        for (n1, a), (n2, b) in zip(g1.named_parameters(), g2.named_parameters()):
            assert n1 == n2 and np.array_equal(a.data, b.data), n1
        for (n1, a), (n2, b) in zip(d1.named_buffers(), d2.named_buffers()):
            assert np.array_equal(a, b), n1

    def test_checkpoint_cadence(self):
        ds = make_dataset(SyntheticDatasetSpec(num_samples=64, seed=3))
        seen = []
        cfg = tiny_cfg(checkpoint_every=2)
        train_gan(ds, cfg, on_checkpoint=lambda it, g, d: seen.append(it))
        assert seen == [2, 4]


class TestTrainAll:
    def test_stage_order_and_isolation(self, tmp_path):
        ds = make_dataset(SyntheticDatasetSpec(num_samples=64, seed=3))
        bundle, stages, _ = train_all(ds, tiny_cfg(), tmp_path / "b.ncol")
        assert stages == ["gan", "encoder", "aux"]
        assert bundle.stages_done == ["gan", "encoder", "aux"]

    def test_encoder_stage_leaves_gan_untouched(self):
        from gancollage.projection import train_encoder

        ds = make_dataset(SyntheticDatasetSpec(num_samples=64, seed=3))
        gen, disc, _ = train_gan(ds, tiny_cfg())
        g_before = {k: v.copy() for k, v in gen.state_arrays().items()}
        d_before = {k: v.copy() for k, v in disc.state_arrays().items()}
        train_encoder(gen, disc, EncoderTrainConfig(iters=3, batch_size=4, eval_batch=4))
        for k, v in gen.state_arrays().items():
            assert np.array_equal(v, g_before[k]), k
        for k, v in disc.state_arrays().items():
            assert np.array_equal(v, d_before[k]), k

    def test_aux_stage_leaves_predecessors_untouched(self):
        from gancollage.projection import train_aux, train_encoder

        ds = make_dataset(SyntheticDatasetSpec(num_samples=64, seed=3))
        gen, disc, _ = train_gan(ds, tiny_cfg())
        enc, _ = train_encoder(gen, disc, EncoderTrainConfig(iters=2, batch_size=4, eval_batch=4))
        before = {}
        for prefix, model in (("g", gen), ("d", disc), ("e", enc)):
            for k, v in model.state_arrays().items():
                before[f"{prefix}.{k}"] = v.copy()
        train_aux(gen, disc, enc,
                  AuxTrainConfig(batch_size=2, identity_pretrain_iters=3), iters=2)
        for prefix, model in (("g", gen), ("d", disc), ("e", enc)):
            for k, v in model.state_arrays().items():
                assert np.array_equal(v, before[f"{prefix}.{k}"]), f"{prefix}.{k}"

    def test_resume_skips_done_stages(self, tmp_path):
        ds = make_dataset(SyntheticDatasetSpec(num_samples=64, seed=3))
        path = tmp_path / "b.ncol"
        bundle1, stages1, _ = train_all(ds, tiny_cfg(), path)
        bundle2, stages2, _ = train_all(ds, tiny_cfg(), path, resume=True)
        assert stages1 == ["gan", "encoder", "aux"]
        assert stages2 == []
        for (n1, a), (_, b) in zip(bundle1.gen.named_parameters(),
                                   bundle2.gen.named_parameters()):
            np.testing.assert_array_equal(
                a.data.astype(np.float32), b.data.astype(np.float32), err_msg=n1)

    def test_train_twice_same_bundle_bytes(self, tmp_path):
        ds = make_dataset(SyntheticDatasetSpec(num_samples=64, seed=3))
        p1, p2 = tmp_path / "b1.ncol", tmp_path / "b2.ncol"
        train_all(ds, tiny_cfg(), p1)
        train_all(ds, tiny_cfg(), p2)
        assert p1.read_bytes() == p2.read_bytes()
