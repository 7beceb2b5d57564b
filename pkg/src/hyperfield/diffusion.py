"""Discrete-time denoising diffusion over latent tensors.

The schedule stores float64 coefficients; operations cast to the dtype of
the tensors they act on. Timesteps are 1-based throughout, matching the
convention that alpha_bar at t=0 is identically 1.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, ShapeError


@dataclass
class NoiseSchedule:
    T: int
    beta: torch.Tensor  # (T,) float64
    alpha: torch.Tensor
    alpha_bar: torch.Tensor
    alpha_bar_prev: torch.Tensor  # alpha_bar shifted, with 1.0 at index 0
    posterior_var: torch.Tensor  # beta_tilde
    sigma1_sq: float = 0.0  # terminal-step variance; deterministic by default


def make_schedule(T: int, kind: str = "linear", beta_start: float = 1e-4, beta_end: float = 2e-2) -> NoiseSchedule:
    if T < 1:
        raise ConfigError("config-invalid", "diffusion steps must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ConfigError("config-invalid", "need 0 < beta_start <= beta_end < 1")
    if kind != "linear":
        raise ConfigError("config-invalid", f"unknown schedule kind {kind!r}")
    beta = torch.linspace(beta_start, beta_end, T, dtype=torch.float64)
    alpha = 1.0 - beta
    alpha_bar = torch.cumprod(alpha, dim=0)
    alpha_bar_prev = torch.cat([torch.ones(1, dtype=torch.float64), alpha_bar[:-1]])
    posterior_var = (1.0 - alpha_bar_prev) / (1.0 - alpha_bar) * beta
    return NoiseSchedule(
        T=T,
        beta=beta,
        alpha=alpha,
        alpha_bar=alpha_bar,
        alpha_bar_prev=alpha_bar_prev,
        posterior_var=posterior_var,
    )


def _gather(values: torch.Tensor, t, like: torch.Tensor) -> torch.Tensor:
    """Index 1-based timesteps into a schedule array, broadcast against `like`."""
    t = torch.as_tensor(t, dtype=torch.long)
    T = values.shape[0]
    if bool((t < 1).any()) or bool((t > T).any()):
        raise ConfigError("t-out-of-range", f"t must lie in [1, {T}]")
    out = values[t - 1].to(like.dtype)
    if out.dim() == 0:
        return out
    return out.view(-1, *([1] * (like.dim() - 1)))


def forward_diffuse(z0: torch.Tensor, t, eps: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Closed-form marginal: z_t = sqrt(ab_t) z0 + sqrt(1 - ab_t) eps."""
    if eps.shape != z0.shape:
        raise ShapeError("shape-mismatch", "eps shape must equal z0 shape")
    ab = _gather(sched.alpha_bar, t, z0)
    return ab.sqrt() * z0 + (1.0 - ab).sqrt() * eps


def estimate_z0(z_t: torch.Tensor, t, eps_hat: torch.Tensor, sched: NoiseSchedule) -> torch.Tensor:
    """Invert the forward marginal assuming eps_hat is the injected noise."""
    ab = _gather(sched.alpha_bar, t, z_t)
    return (z_t - (1.0 - ab).sqrt() * eps_hat) / ab.sqrt()


def ddpm_posterior_params(z_t: torch.Tensor, zhat0: torch.Tensor, t: int, sched: NoiseSchedule):
    """Mean and variance of the reverse-step posterior given the z0 estimate."""
    if not 2 <= int(t) <= sched.T:
        raise ConfigError("t-out-of-range", "posterior defined for t in [2, T]")
    i = int(t) - 1
    ab_t = sched.alpha_bar[i]
    ab_prev = sched.alpha_bar_prev[i]
    coef0 = ab_prev.sqrt() * sched.beta[i] / (1.0 - ab_t)
    coef_t = sched.alpha[i].sqrt() * (1.0 - ab_prev) / (1.0 - ab_t)
    mean = coef0.to(z_t.dtype) * zhat0 + coef_t.to(z_t.dtype) * z_t
    return mean, float(sched.posterior_var[i])


def ddpm_loss_terms(z0: torch.Tensor, t: torch.Tensor, eps: torch.Tensor, denoiser, sched: NoiseSchedule) -> torch.Tensor:
    """Per-element squared denoising error, summed over latent dims: (B,)."""
    z_t = forward_diffuse(z0, t, eps, sched)
    err = eps - denoiser(z_t, t)
    return err.pow(2).flatten(1).sum(dim=1)


def ddpm_loss(z0: torch.Tensor, denoiser, sched: NoiseSchedule, generator: torch.Generator) -> torch.Tensor:
    """Monte Carlo denoising loss: t ~ U(1, T), eps ~ N(0, I), mean over batch."""
    b = z0.shape[0]
    t = torch.randint(1, sched.T + 1, (b,), generator=generator)
    eps = torch.randn(z0.shape, generator=generator, dtype=z0.dtype)
    return ddpm_loss_terms(z0, t, eps, denoiser, sched).mean()


def ddim_timesteps(T: int, num_steps: int) -> list[int]:
    """Descending ladder with uniform stride, always containing t=1."""
    if not 1 <= num_steps <= T:
        raise ConfigError("config-invalid", f"num_steps must lie in [1, {T}]")
    if num_steps == 1:
        return [T]
    taus = [1 + round(i * (T - 1) / (num_steps - 1)) for i in range(num_steps)]
    taus = sorted(set(taus), reverse=True)
    return taus


def ddim_sample(denoiser, sched: NoiseSchedule, num_steps: int, eta: float, seed: int, shape) -> torch.Tensor:
    """Ancestral/DDIM sampling over a subsampled timestep ladder.

    eta scales the per-step noise (0 = deterministic, 1 = full DDPM
    posterior noise); the terminal step returns the z0 estimate.
    """
    if not 0.0 <= eta <= 1.0:
        raise ConfigError("config-invalid", "eta must lie in [0, 1]")
    taus = ddim_timesteps(sched.T, num_steps)
    gen = torch.Generator().manual_seed(seed)
    z = torch.randn(tuple(shape), generator=gen)
    for i, t in enumerate(taus):
        t_batch = torch.full((z.shape[0],), t, dtype=torch.long)
        eps_hat = denoiser(z, t_batch)
        zhat = estimate_z0(z, t_batch, eps_hat, sched)
        if i == len(taus) - 1:
            return zhat
        ab_t = float(sched.alpha_bar[t - 1])
        ab_prev = float(sched.alpha_bar[taus[i + 1] - 1])
        sigma = eta * math.sqrt((1.0 - ab_prev) / (1.0 - ab_t) * (1.0 - ab_t / ab_prev))
        direction = max(1.0 - ab_prev - sigma * sigma, 0.0) ** 0.5
        z = math.sqrt(ab_prev) * zhat + direction * eps_hat
        if eta > 0.0:
            z = z + sigma * torch.randn(z.shape, generator=gen, dtype=z.dtype)
    return z


# ---------------------------------------------------------------------------
# Denoising network


@dataclass(frozen=True)
class DenoiserConfig:
    channels: int = 4
    base_channels: int = 32
    ch_mult: tuple[int, ...] = (1, 2)
    num_blocks: int = 2

    def __post_init__(self):
        if len(self.ch_mult) < 1:
            raise ConfigError("config-invalid", "ch_mult must be non-empty")


def timestep_embedding(t: torch.Tensor, dim: int, dtype=torch.float32) -> torch.Tensor:
    """Sinusoidal embedding of (possibly fractional) timesteps."""
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=dtype) / half)
    args = t.to(dtype)[:, None] * freqs[None]
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.nn.functional.pad(emb, (0, 1))
    return emb


class TimeResBlock(nn.Module):
    def __init__(self, ch_in, ch_out, time_dim):
        super().__init__()
        self.norm1 = nn.GroupNorm(math.gcd(8, ch_in), ch_in)
        self.conv1 = nn.Conv2d(ch_in, ch_out, 3, padding=1)
        self.time_proj = nn.Linear(time_dim, ch_out)
        self.norm2 = nn.GroupNorm(math.gcd(8, ch_out), ch_out)
        self.conv2 = nn.Conv2d(ch_out, ch_out, 3, padding=1)
        self.skip = nn.Conv2d(ch_in, ch_out, 1) if ch_in != ch_out else nn.Identity()

    def forward(self, x, temb):
        h = self.conv1(torch.nn.functional.silu(self.norm1(x)))
        h = h + self.time_proj(torch.nn.functional.silu(temb))[:, :, None, None]
        h = self.conv2(torch.nn.functional.silu(self.norm2(h)))
        return self.skip(x) + h


class EpsilonNet(nn.Module):
    """Small two-scale residual network predicting the injected noise."""

    def __init__(self, cfg: DenoiserConfig):
        super().__init__()
        self.cfg = cfg
        base = cfg.base_channels
        time_dim = base * 4
        self.time_mlp = nn.Sequential(nn.Linear(base, time_dim), nn.SiLU(), nn.Linear(time_dim, time_dim))
        self.base = base

        chans = [base * m for m in cfg.ch_mult]
        self.stem = nn.Conv2d(cfg.channels, chans[0], 3, padding=1)
        self.down_blocks = nn.ModuleList()
        self.downsamples = nn.ModuleList()
        ch = chans[0]
        for i, target in enumerate(chans):
            blocks = nn.ModuleList()
            for _ in range(cfg.num_blocks):
                blocks.append(TimeResBlock(ch, target, time_dim))
                ch = target
            if ch != target:
                blocks.append(TimeResBlock(ch, target, time_dim))
                ch = target
            self.down_blocks.append(blocks)
            if i < len(chans) - 1:
                self.downsamples.append(nn.Conv2d(ch, ch, 3, stride=2, padding=1))
        self.up_blocks = nn.ModuleList()
        for i in reversed(range(len(chans) - 1)):
            target = chans[i]
            blocks = nn.ModuleList()
            for j in range(cfg.num_blocks):
                blocks.append(TimeResBlock(ch + (chans[i] if j == 0 else 0), target, time_dim))
                ch = target
            self.up_blocks.append(blocks)
        self.out_norm = nn.GroupNorm(math.gcd(8, ch), ch)
        self.out_conv = nn.Conv2d(ch, cfg.channels, 3, padding=1)

    def forward(self, z_t: torch.Tensor, t) -> torch.Tensor:
        squeeze = z_t.dim() == 3
        if squeeze:
            z_t = z_t.unsqueeze(0)
        t = torch.as_tensor(t, dtype=torch.long)
        if t.dim() == 0:
            t = t.expand(z_t.shape[0])
        temb = self.time_mlp(timestep_embedding(t, self.base, dtype=z_t.dtype))

        h = self.stem(z_t)
        skips = []
        for i, blocks in enumerate(self.down_blocks):
            for block in blocks:
                h = block(h, temb)
            if i < len(self.downsamples):
                skips.append(h)
                h = self.downsamples[i](h)
        for blocks, skip in zip(self.up_blocks, reversed(skips)):
            h = torch.nn.functional.interpolate(h, size=skip.shape[-2:], mode="nearest")
            h = torch.cat([h, skip], dim=1)
            for block in blocks:
                h = block(h, temb)
        out = self.out_conv(torch.nn.functional.silu(self.out_norm(h)))
        return out.squeeze(0) if squeeze else out
