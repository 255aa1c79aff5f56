"""Adversarial denoising-diffusion domain translation for sector-scan images.

Thin wrapper around the compiled ``_core`` extension; see the project README
for the CLI and file formats.
"""

from ._core import (
    Model,
    NoiseSchedule,
    config_fingerprint,
    decode_mask_gray,
    encode_mask_gray,
    evaluate,
    extract_features,
    forward_marginal,
    forward_span,
    frechet_from_features,
    generate_phantoms,
    make_schedule,
    mse,
    posterior,
    psnr,
    span_coefficients,
    ssim,
    train,
    translate,
)

__all__ = [
    "Model",
    "NoiseSchedule",
    "config_fingerprint",
    "decode_mask_gray",
    "encode_mask_gray",
    "evaluate",
    "extract_features",
    "forward_marginal",
    "forward_span",
    "frechet_from_features",
    "generate_phantoms",
    "make_schedule",
    "mse",
    "posterior",
    "psnr",
    "span_coefficients",
    "ssim",
    "train",
    "translate",
]

__version__ = "0.1.0"
