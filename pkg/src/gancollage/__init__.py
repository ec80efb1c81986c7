"""Semantic image collaging on a toy conditional GAN.

Editing happens inside the generator: spatial class maps reweight the
conditional normalization parameters, blending masks mix intermediate
feature maps from several latents, and real images enter the pipeline via
encoder-initialized latent projection. A Poisson solver pastes edited clips
back without seams.
"""

__version__ = "0.1.0"
