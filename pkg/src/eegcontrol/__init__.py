"""EEG-conditioned image generation on a frozen latent diffusion backbone."""

__version__ = "0.1.0"
