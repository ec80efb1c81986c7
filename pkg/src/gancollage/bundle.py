"""Bundle of trained models (generator, discriminator, encoder, auxiliary
nets) persisted as a single checkpoint file."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .errors import CheckpointError
from .nets import (
    Discriminator,
    DiscriminatorConfig,
    Encoder,
    EncoderConfig,
    Generator,
    GeneratorConfig,
)
from .projection import AuxNets, AuxNetsConfig


@dataclass
class Bundle:
    gen: Generator
    disc: Discriminator
    enc: Optional[Encoder] = None
    aux: Optional[AuxNets] = None
    seed: int = 0
    stages_done: list = None

    def __post_init__(self):
        if self.stages_done is None:
            self.stages_done = []

    # ------------------------------------------------------------------ #
    def model_info(self) -> dict:
        cfg = self.gen.config
        return {
            "layers": cfg.num_layers,
            "resolutions": [cfg.layer_resolution(l) for l in range(1, cfg.num_layers + 1)],
            "num_classes": cfg.num_classes,
            "latent_dim": cfg.latent_dim,
            "resolution": cfg.resolution,
            "stages_done": list(self.stages_done),
        }

    def save(self, path) -> None:
        config = {
            "generator": asdict(self.gen.config),
            "discriminator": _cfg_dict(self.disc.config),
            "encoder": _cfg_dict(self.enc.config) if self.enc else None,
            "aux": _cfg_dict(self.aux.config) if self.aux else None,
            "seed": self.seed,
            "stages_done": list(self.stages_done),
        }
        arrays = {}
        for prefix, model in (("gen", self.gen), ("disc", self.disc),
                              ("enc", self.enc), ("aux", self.aux)):
            if model is None:
                continue
            for name, arr in model.state_arrays().items():
                arrays[f"{prefix}.{name}"] = arr
        save_checkpoint(path, config, arrays)

    @classmethod
    def load(cls, path) -> "Bundle":
        config, arrays = load_checkpoint(path)
        if "generator" not in config:
            raise CheckpointError(f"{path} is not a model bundle")
        gen = Generator(GeneratorConfig(**config["generator"]), np.random.default_rng(0))
        disc = Discriminator(
            DiscriminatorConfig(**_tupled(config["discriminator"], "widths")),
            np.random.default_rng(0))
        enc = aux = None
        if config.get("encoder"):
            enc = Encoder(EncoderConfig(**_tupled(config["encoder"], "widths")),
                          np.random.default_rng(0))
        if config.get("aux"):
            aux = AuxNets(AuxNetsConfig(**_tupled(config["aux"], "hidden")),
                          np.random.default_rng(0))
        for prefix, model in (("gen", gen), ("disc", disc), ("enc", enc), ("aux", aux)):
            if model is None:
                continue
            subset = {name[len(prefix) + 1:]: arr for name, arr in arrays.items()
                      if name.startswith(prefix + ".")}
            model.load_state_arrays(subset)
            model.set_trainable(False)
        return cls(gen=gen, disc=disc, enc=enc, aux=aux,
                   seed=config.get("seed", 0),
                   stages_done=list(config.get("stages_done", [])))


def _cfg_dict(cfg) -> dict:
    d = asdict(cfg)
    for key, value in d.items():
        if isinstance(value, tuple):
            d[key] = list(value)
    return d


def _tupled(d: dict, key: str) -> dict:
    d = dict(d)
    if key in d and isinstance(d[key], list):
        d[key] = tuple(d[key])
    return d
