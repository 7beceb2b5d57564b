"""Convolutional Gaussian encoder and the beta-weighted ELBO.

The encoder consumes the gridded feature values of a signal (coordinates
are implicit in the grid layout) and emits mean/log-variance tensors over
the latent shape. The ELBO reconstruction term evaluates the generated INR
on the signal's coordinates under a fixed-sigma Gaussian likelihood.
"""

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .errors import ConfigError, ShapeError
from .hyperdecoder import HyperDecoder
from .inr import INRConfig, gaussian_logprob_elements, inr_forward, make_coordinate_grid

LOGVAR_MIN, LOGVAR_MAX = -30.0, 20.0


@dataclass(frozen=True)
class EncoderConfig:
    resolution: tuple[int, int] = (16, 16)
    in_channels: int = 1
    latent_channels: int = 4
    base_channels: int = 32
    ch_mult: tuple[int, ...] = (1, 2, 2)
    num_blocks: int = 2

    def __post_init__(self):
        if any(m < 1 for m in self.ch_mult) or not self.ch_mult:
            raise ConfigError("config-invalid", "ch_mult must be non-empty positive ints")
        factor = 2 ** (len(self.ch_mult) - 1)
        if self.resolution[0] % factor or self.resolution[1] % factor:
            raise ConfigError("config-invalid", "resolution not divisible by downsample factor")

    @property
    def latent_size(self) -> tuple[int, int]:
        factor = 2 ** (len(self.ch_mult) - 1)
        return (self.resolution[0] // factor, self.resolution[1] // factor)


def _norm(ch: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(8, ch), ch)


class ResBlock(nn.Module):
    def __init__(self, ch_in, ch_out):
        super().__init__()
        self.norm1 = _norm(ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.norm2 = _norm(ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, x):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return self.skip(x) + h


class Encoder(nn.Module):
    """Stride-2 residual stack ending in a 1x1 head for mean and log-variance."""

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        ch = cfg.base_channels * cfg.ch_mult[0]
        self.stem = nn.Conv2d(cfg.in_channels, ch, 3, padding=1)
        stages = []
        for i, mult in enumerate(cfg.ch_mult):
            target = cfg.base_channels * mult
            for _ in range(cfg.num_blocks):
                stages.append(ResBlock(ch, target))
                ch = target
            if ch != target:
                stages.append(ResBlock(ch, target))
                ch = target
            if i < len(cfg.ch_mult) - 1:
                stages.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
        self.stages = nn.Sequential(*stages)
        self.head_norm = _norm(ch)
        self.head = nn.Conv2d(ch, 2 * cfg.latent_channels, 1)

    def forward(self, x: torch.Tensor) -> "GaussianPosterior":
        if x.shape[-2:] != tuple(self.cfg.resolution) or x.shape[-3] != self.cfg.in_channels:
            raise ShapeError(
                "resolution-mismatch",
                f"encoder expects {self.cfg.in_channels}x{self.cfg.resolution}, got {tuple(x.shape[-3:])}",
            )
        h = self.stages(self.stem(x))
        h = self.head(torch.nn.functional.silu(self.head_norm(h)))
        mean, logvar = torch.chunk(h, 2, dim=-3)
        return GaussianPosterior(mean=mean, logvar=logvar.clamp(LOGVAR_MIN, LOGVAR_MAX))


@dataclass
class GaussianPosterior:
    mean: torch.Tensor
    logvar: torch.Tensor


@dataclass
class ElboReport:
    recon_logprob: float
    kl: float
    beta: float
    total: float


def features_to_input(features, device=None, dtype=torch.float32) -> torch.Tensor:
    """(H, W, F) or (B, H, W, F) channels-last array -> channels-first tensor."""
    t = torch.as_tensor(np.asarray(features), dtype=dtype, device=device)
    if t.dim() == 3:
        t = t.unsqueeze(0)
    return t.permute(0, 3, 1, 2).contiguous()


def encode(features, encoder: Encoder) -> GaussianPosterior:
    """Posterior for one signal's gridded features (H, W, F)."""
    post = encoder(features_to_input(features, dtype=next(encoder.parameters()).dtype))
    return GaussianPosterior(mean=post.mean.squeeze(0), logvar=post.logvar.squeeze(0))


# the encoder clamps its emitted logvar to [LOGVAR_MIN, LOGVAR_MAX]; the ops
# below only guard the exp against overflow so that explicitly constructed
# posteriors with very small variance behave as the math says
def sample_posterior(post: GaussianPosterior, noise: torch.Tensor) -> torch.Tensor:
    if noise.shape != post.mean.shape:
        raise ShapeError("shape-mismatch", "noise shape must equal posterior mean shape")
    return post.mean + torch.exp(0.5 * post.logvar.clamp(max=LOGVAR_MAX)) * noise


def kl_standard_normal(post: GaussianPosterior) -> torch.Tensor:
    """KL(q || N(0, I)) summed over all latent entries."""
    logvar = post.logvar.clamp(max=LOGVAR_MAX)
    return 0.5 * (post.mean.pow(2) + logvar.exp() - 1.0 - logvar).sum()


def _kl_per_item(post: GaussianPosterior) -> torch.Tensor:
    logvar = post.logvar.clamp(max=LOGVAR_MAX)
    terms = 0.5 * (post.mean.pow(2) + logvar.exp() - 1.0 - logvar)
    return terms.flatten(1).sum(dim=1)


def elbo_terms(
    features: torch.Tensor,
    encoder: Encoder,
    hd: HyperDecoder,
    inr_cfg: INRConfig,
    noise: torch.Tensor,
):
    """Per-item (recon_logprob, kl) for a channels-first feature batch."""
    post = encoder(features)
    if noise.shape != post.mean.shape:
        raise ShapeError("shape-mismatch", "noise shape must equal posterior shape")
    z = sample_posterior(post, noise)
    params = hd.generate(z)
    grid = make_coordinate_grid(tuple(features.shape[-2:]))
    pred = inr_forward(params, grid, inr_cfg, exact=False)  # (B, N, F)
    target = features.permute(0, 2, 3, 1).reshape(pred.shape)
    recon = gaussian_logprob_elements(pred, target, inr_cfg.sigma).flatten(1).sum(dim=1)
    return recon, _kl_per_item(post)


def elbo(signal_features, encoder, hd, inr_cfg, beta: float, noise: torch.Tensor) -> ElboReport:
    """Single-sample ELBO estimate for one signal, using the provided noise."""
    if beta < 0:
        raise ConfigError("config-invalid", "beta must be >= 0")
    x = features_to_input(signal_features, dtype=next(encoder.parameters()).dtype)
    recon, kl = elbo_terms(x, encoder, hd, inr_cfg, noise.unsqueeze(0))
    recon, kl = float(recon[0]), float(kl[0])
    return ElboReport(recon_logprob=recon, kl=kl, beta=beta, total=recon - beta * kl)
