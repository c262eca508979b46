"""Text-conditioned drumbeat generation with a latent diffusion model."""

from __future__ import annotations

__version__ = "0.1.0"
