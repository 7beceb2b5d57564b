"""Inference tasks over trained checkpoints.

All tasks are read-only: they rebuild the models from a checkpoint, turn
latents into INR parameters, and evaluate those on coordinate grids of the
requested resolution. One set of generated parameters can be rendered at
any scale.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import torch

from .diffusion import ddim_sample
from .errors import ConfigError, ShapeError, StageError
from .inr import INRParams, inr_forward, make_coordinate_grid
from .ivae import features_to_input, sample_posterior
from .pipeline import Checkpoint, ModelBundle, restore
from .rng import derive_seed, torch_generator


@dataclass
class PsnrReport:
    mse: float
    psnr_db: float  # inf when mse == 0

    def as_text(self) -> str:
        psnr = "inf" if np.isinf(self.psnr_db) else f"{self.psnr_db:.4f}"
        return f"mse={self.mse:.8g}\npsnr_db={psnr}\n"


def compute_psnr(pred: np.ndarray, target: np.ndarray, peak: float = 1.0) -> PsnrReport:
    if pred.shape != target.shape:
        raise ShapeError("shape-mismatch", f"pred {pred.shape} != target {target.shape}")
    mse = float(np.mean((pred.astype(np.float64) - target.astype(np.float64)) ** 2))
    if mse == 0.0:
        return PsnrReport(mse=0.0, psnr_db=float("inf"))
    return PsnrReport(mse=mse, psnr_db=float(10.0 * np.log10(peak * peak / mse)))


def parse_scale(text) -> float:
    factor = float(Fraction(str(text)))
    if factor <= 0:
        raise ConfigError("config-invalid", "scale must be positive")
    return factor


def scaled_resolution(resolution, factor: float) -> tuple[int, ...]:
    """Per-axis counts round(factor * n), which must stay >= 1."""
    counts = tuple(int(np.floor(factor * n + 0.5)) for n in resolution)
    if any(c < 1 for c in counts):
        raise ConfigError("config-invalid", f"scale {factor} collapses resolution {resolution}")
    return counts


def render(params: INRParams, bundle: ModelBundle, resolution, clamp: bool = True) -> np.ndarray:
    """Evaluate generated INRs on a grid; returns (B, H, W, F) float32."""
    grid = make_coordinate_grid(resolution)
    out = inr_forward(params, grid, bundle.hd.inr_cfg)
    if out.dim() == 2:
        out = out.unsqueeze(0)
    out = out.reshape(out.shape[0], *resolution, out.shape[-1])
    if clamp:
        out = out.clamp(0.0, 1.0)
    return out.detach().numpy().astype(np.float32)


def _require_stage(ckpt: Checkpoint, stages) -> None:
    if ckpt.stage not in stages:
        raise StageError("stage-mismatch", f"stage {ckpt.stage!r} not in {stages}")


def sample(ckpt: Checkpoint, n: int, scale=1.0, ddim_steps: int = 50, eta: float = 0.0, seed: int = 0):
    """Draw latents from the diffusion prior and render them at the given scale."""
    _require_stage(ckpt, ("ldmi", "hypertransformed"))
    factor = parse_scale(scale)
    bundle = restore(ckpt)
    enc_cfg = bundle.encoder.cfg
    resolution = scaled_resolution(enc_cfg.resolution, factor)
    if n == 0:
        return np.zeros((0, *resolution, enc_cfg.in_channels), dtype=np.float32)
    shape = (n, enc_cfg.latent_channels, *enc_cfg.latent_size)
    with torch.no_grad():
        z = ddim_sample(bundle.denoiser, bundle.schedule, ddim_steps, eta, derive_seed(seed, "sample"), shape)
        params = bundle.hd.generate(z)
        return render(params, bundle, resolution)


def reconstruct(ckpt: Checkpoint, dataset, scale=1.0, seed: int = 0, sample_z: bool = False):
    """Encode signals, decode posterior latents to INRs, render, and score.

    Returns (images at the requested scale, PsnrReport at native scale).
    The posterior mean is used unless sample_z is set.
    """
    _require_stage(ckpt, ("ivae", "ldmi", "hypertransformed"))
    factor = parse_scale(scale)
    bundle = restore(ckpt)
    enc_cfg = bundle.encoder.cfg
    if tuple(dataset.resolution) != tuple(enc_cfg.resolution):
        raise ShapeError(
            "resolution-mismatch",
            f"signals at {dataset.resolution}, model trained at {enc_cfg.resolution}",
        )
    x = features_to_input(dataset.features)
    with torch.no_grad():
        post = bundle.encoder(x)
        if sample_z:
            gen = torch_generator(seed, "reconstruct")
            z = sample_posterior(post, torch.randn(post.mean.shape, generator=gen))
        else:
            z = post.mean
        params = bundle.hd.generate(z)
        images = render(params, bundle, scaled_resolution(enc_cfg.resolution, factor))
        native = render(params, bundle, enc_cfg.resolution)
    report = compute_psnr(native, dataset.features)
    return images, report


def inpaint(ckpt: Checkpoint, features: np.ndarray, mask: np.ndarray, n_samples: int, seed: int = 0):
    """Complete a partially observed signal from posterior samples.

    Missing features are filled with mid-gray before encoding; each
    posterior draw decodes to a full image. Returns (images, list of
    observed-region MSEs).
    """
    _require_stage(ckpt, ("ivae", "ldmi", "hypertransformed"))
    bundle = restore(ckpt)
    enc_cfg = bundle.encoder.cfg
    feats = np.asarray(features, dtype=np.float32)
    if feats.shape[:2] != mask.shape:
        raise ShapeError("shape-mismatch", f"mask {mask.shape} != signal grid {feats.shape[:2]}")
    if not mask.any():
        raise ConfigError("empty-context", "mask marks every location missing")
    filled = np.where(mask[:, :, None], feats, np.float32(0.5))
    x = features_to_input(filled)
    gen = torch_generator(seed, "inpaint")
    with torch.no_grad():
        post = bundle.encoder(x)
        images, scores = [], []
        for _ in range(n_samples):
            noise = torch.randn(post.mean.shape, generator=gen)
            params = bundle.hd.generate(sample_posterior(post, noise))
            img = render(params, bundle, enc_cfg.resolution)[0]
            images.append(img)
            diff = (img - feats) ** 2
            scores.append(float(diff[mask].mean()))
    return np.stack(images), scores
