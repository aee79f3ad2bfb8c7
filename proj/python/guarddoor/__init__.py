"""Protective image backdoor toolkit.

Core operations are implemented in C++ and exposed through the compiled
``_guarddoor`` extension: metrics (ssim / psnr / mse / protect_score),
preprocessing attacks, trigger embedding via a small convolutional VAE,
and the full training/evaluation pipeline driven by ``RunConfig``.
"""

from ._guarddoor import (
    VAE,
    Editor,
    RunConfig,
    apply_attack,
    evaluate,
    gen_data,
    inject,
    mse,
    protect_score,
    psnr,
    report,
    ssim,
    train_denoiser,
    train_editor,
    train_vae,
)

__all__ = [
    "VAE",
    "Editor",
    "RunConfig",
    "apply_attack",
    "evaluate",
    "gen_data",
    "inject",
    "mse",
    "protect_score",
    "psnr",
    "report",
    "ssim",
    "train_denoiser",
    "train_editor",
    "train_vae",
]

__version__ = "0.1.0"
