"""Shared fixtures.

``tiny_bundle`` is an untrained, fast-to-build model set for contract tests.
``trained_bundle`` runs the full desk-scale training pipeline once and caches
the checkpoint under tests/_bundle_cache/ (training is deterministic, so the
cache equals a fresh run; delete the directory to force retraining).
"""

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from gancollage.bundle import Bundle
from gancollage.nets import (
    Discriminator,
    DiscriminatorConfig,
    Encoder,
    EncoderConfig,
    Generator,
    GeneratorConfig,
)
from gancollage.projection import AuxNets, AuxNetsConfig

CACHE_DIR = Path(__file__).parent / "_bundle_cache"
BUNDLE_TAG = "v1-gan2000-enc700-aux260"

TRAINED_GEN = GeneratorConfig(base_channels=64)
TRAINED_DISC = DiscriminatorConfig(widths=(16, 32, 64), feature_dim=128)


def build_tiny_bundle(seed=0) -> Bundle:
    gen = Generator(GeneratorConfig(base_channels=8), np.random.default_rng(seed))
    disc = Discriminator(DiscriminatorConfig(widths=(8, 16, 32), feature_dim=24),
                         np.random.default_rng(seed + 1))
    enc = Encoder(EncoderConfig(widths=(8, 16, 32), feature_dim=24, latent_dim=128),
                  np.random.default_rng(seed + 2))
    aux = AuxNets(AuxNetsConfig(latent_dim=128, hidden=(32, 256, 32)),
                  np.random.default_rng(seed + 3))
    for m in (gen, disc, enc, aux):
        m.set_trainable(False)
    return Bundle(gen=gen, disc=disc, enc=enc, aux=aux, seed=seed,
                  stages_done=["gan", "encoder", "aux"])


@pytest.fixture(scope="session")
def tiny_bundle():
    return build_tiny_bundle()


@pytest.fixture(scope="session")
def tiny_bundle_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("bundle") / "tiny.ncol"
    build_tiny_bundle().save(path)
    return path


def train_full_bundle(path: Path) -> Bundle:
    from gancollage.projection import AuxTrainConfig, EncoderTrainConfig
    from gancollage.trainer import SyntheticDatasetSpec, TrainConfig, make_dataset, train_all

    dataset = make_dataset(SyntheticDatasetSpec(num_samples=8192, seed=7))
    cfg = TrainConfig(
        seed=11,
        gan_iters=2000,
        batch_size=16,
        generator=TRAINED_GEN,
        discriminator=TRAINED_DISC,
        encoder=EncoderTrainConfig(iters=700, batch_size=16, lr=2e-4),
        aux=AuxTrainConfig(batch_size=8, inner_lr=0.1, outer_lr=1e-3),
        aux_iters=260,
    )
    bundle, _, _ = train_all(dataset, cfg, path)
    return bundle


@pytest.fixture(scope="session")
def trained_bundle():
    CACHE_DIR.mkdir(exist_ok=True)
    path = CACHE_DIR / f"bundle-{BUNDLE_TAG}.ncol"
    if path.is_file():
        try:
            return Bundle.load(path)
        except Exception:
            path.unlink()
    print(f"\n[conftest] training full bundle into {path} (one-time, ~20 min)...")
    return train_full_bundle(path)


@pytest.fixture(scope="session")
def trained_bundle_path(trained_bundle):
    return CACHE_DIR / f"bundle-{BUNDLE_TAG}.ncol"
