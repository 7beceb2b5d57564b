"""Implicit neural representation: coordinate grids, forward evaluation, likelihood.

An INR maps coordinates in [-1, 1]^d to feature values through a small MLP
whose weights are supplied per datum. Weights may carry a leading batch
dimension, in which case one shared coordinate set is evaluated under a
batch of networks at once.
"""

import math
from dataclasses import dataclass, field

import torch

from .errors import ConfigError, ShapeError

# fourier feature projections are a fixed architecture constant, not a
# learned or run-seeded quantity; one internal seed keeps them reproducible
_FOURIER_SEED = 0x5EED_F00D


@dataclass(frozen=True)
class INRConfig:
    in_dim: int = 2
    out_dim: int = 1
    hidden_dim: int = 32
    hidden_layers: int = 2
    activation: str = "sine"  # sine | relu
    omega: float = 30.0
    enc_dim: int = 0  # 0 = identity encoding, else fourier output width (even)
    fourier_scale: float = 10.0
    sigma: float = 1.0  # gaussian likelihood scale

    def __post_init__(self):
        if self.hidden_layers < 1 or self.hidden_dim < 1:
            raise ConfigError("config-invalid", "hidden_layers and hidden_dim must be >= 1")
        if self.activation not in ("sine", "relu"):
            raise ConfigError("config-invalid", f"unknown activation {self.activation!r}")
        if self.activation == "sine" and self.omega <= 0:
            raise ConfigError("config-invalid", "omega must be > 0 for sine activation")
        if self.enc_dim < 0 or self.enc_dim % 2:
            raise ConfigError("config-invalid", "enc_dim must be 0 or a positive even number")
        if self.sigma <= 0:
            raise ConfigError("config-invalid", "likelihood sigma must be > 0")

    @property
    def encoded_dim(self) -> int:
        return self.enc_dim if self.enc_dim else self.in_dim

    def layer_shapes(self) -> list[tuple[int, int]]:
        """(d_out, d_in) of each weight matrix, input encoding through output."""
        dims = [self.encoded_dim] + [self.hidden_dim] * self.hidden_layers + [self.out_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


@dataclass
class INRParams:
    """Weight matrices (optionally batched) plus shared bias vectors."""

    weights: list[torch.Tensor]  # each (d_out, d_in) or (B, d_out, d_in)
    biases: list[torch.Tensor]  # each (d_out,)

    @property
    def batched(self) -> bool:
        return self.weights[0].dim() == 3

    def weight_count(self) -> int:
        per_net = [w[0] if w.dim() == 3 else w for w in self.weights]
        return sum(w.numel() for w in per_net)


@dataclass
class CoordinateGrid:
    """Row-major cartesian product of per-axis pixel-center coordinates."""

    coords: torch.Tensor  # (N, in_dim) float64
    shape: tuple[int, ...] = field(default=())

    def __len__(self) -> int:
        return self.coords.shape[0]


def axis_coordinates(n: int) -> torch.Tensor:
    """Pixel centers of n samples on [-1, 1]: x_j = -1 + (2j+1)/n."""
    if n < 1:
        raise ConfigError("config-invalid", "axis sample count must be >= 1")
    j = torch.arange(n, dtype=torch.float64)
    return (2.0 * j + 1.0) / n - 1.0


def make_coordinate_grid(shape, in_dim: int | None = None) -> CoordinateGrid:
    shape = tuple(int(s) for s in shape)
    if in_dim is not None and in_dim != len(shape):
        raise ShapeError("shape-mismatch", f"in_dim {in_dim} != len(shape) {len(shape)}")
    axes = [axis_coordinates(n) for n in shape]
    mesh = torch.meshgrid(*axes, indexing="ij")
    coords = torch.stack([m.reshape(-1) for m in mesh], dim=-1)
    return CoordinateGrid(coords=coords, shape=shape)


def fourier_matrix(cfg: INRConfig, dtype=torch.float64) -> torch.Tensor:
    gen = torch.Generator().manual_seed(_FOURIER_SEED)
    num_freqs = cfg.enc_dim // 2
    b = torch.randn(num_freqs, cfg.in_dim, generator=gen, dtype=torch.float64)
    return (b * cfg.fourier_scale).to(dtype)


def encode_coords(coords: torch.Tensor, cfg: INRConfig) -> torch.Tensor:
    if coords.shape[-1] != cfg.in_dim:
        raise ShapeError("shape-mismatch", f"coords dim {coords.shape[-1]} != in_dim {cfg.in_dim}")
    if cfg.enc_dim == 0:
        return coords
    proj = 2.0 * math.pi * coords @ fourier_matrix(cfg, coords.dtype).T
    return torch.cat([torch.sin(proj), torch.cos(proj)], dim=-1)


def _as_coords(coords, cfg: INRConfig, dtype) -> torch.Tensor:
    if isinstance(coords, CoordinateGrid):
        coords = coords.coords
    return coords.to(dtype)


def inr_forward(params: INRParams, coords, cfg: INRConfig, exact: bool = True) -> torch.Tensor:
    """Evaluate the network at each coordinate.

    Returns (N, out_dim), or (B, N, out_dim) when params are batched. The
    activation for sine networks is sin(omega * (W h + b)) on every layer
    except the last, which stays affine.

    With exact=True (default) each point's output is a pure function of its
    coordinate down to the bit: the contraction is performed per point, so
    reordering or subsetting the coordinate set reorders/subsets the outputs
    identically. exact=False uses blocked matmuls, a few times faster but
    without that bitwise guarantee; training loops use it.
    """
    shapes = cfg.layer_shapes()
    if len(params.weights) != len(shapes) or len(params.biases) != len(shapes):
        raise ShapeError("shape-mismatch", "parameter count does not match config")
    for w, (d_out, d_in) in zip(params.weights, shapes):
        if tuple(w.shape[-2:]) != (d_out, d_in):
            raise ShapeError("shape-mismatch", f"weight shape {tuple(w.shape)} != {(d_out, d_in)}")

    dtype = params.weights[0].dtype
    h = encode_coords(_as_coords(coords, cfg, dtype), cfg)
    if params.batched:
        h = h.unsqueeze(0).expand(params.weights[0].shape[0], -1, -1)
    last = len(shapes) - 1
    for l, (w, b) in enumerate(zip(params.weights, params.biases)):
        if exact:
            z = (h.unsqueeze(-2) * w.unsqueeze(-3)).sum(-1) + b
        else:
            z = h @ w.transpose(-2, -1) + b
        if l == last:
            h = z
        elif cfg.activation == "sine":
            h = torch.sin(cfg.omega * z)
        else:
            h = torch.relu(z)
    return h


def siren_init(cfg: INRConfig, seed: int, batch: int | None = None) -> INRParams:
    """Uniform init keeping sine pre-activations well scaled.

    First layer ~ U(-1/fan_in, 1/fan_in); deeper layers
    ~ U(-sqrt(6/fan_in)/omega, sqrt(6/fan_in)/omega); biases zero.
    """
    if cfg.activation != "sine":
        raise ConfigError("config-invalid", "siren_init requires sine activation")
    gen = torch.Generator().manual_seed(seed)
    weights, biases = [], []
    for i, (d_out, d_in) in enumerate(cfg.layer_shapes()):
        bound = 1.0 / d_in if i == 0 else math.sqrt(6.0 / d_in) / cfg.omega
        shape = (d_out, d_in) if batch is None else (batch, d_out, d_in)
        w = (torch.rand(shape, generator=gen) * 2.0 - 1.0) * bound
        weights.append(w)
        biases.append(torch.zeros(d_out))
    return INRParams(weights=weights, biases=biases)


def gaussian_logprob_elements(pred: torch.Tensor, target: torch.Tensor, sigma: float) -> torch.Tensor:
    """Per-entry log-density of target under N(pred, sigma^2)."""
    if sigma <= 0:
        raise ConfigError("config-invalid", "likelihood sigma must be > 0")
    if pred.shape != target.shape:
        raise ShapeError("shape-mismatch", f"pred {tuple(pred.shape)} != target {tuple(target.shape)}")
    resid = (target - pred) / sigma
    const = math.log(sigma) + 0.5 * math.log(2.0 * math.pi)
    return -0.5 * resid * resid - const


def likelihood_logprob(pred: torch.Tensor, target: torch.Tensor, sigma: float) -> torch.Tensor:
    """Total log-density of target under N(pred, sigma^2 I), summed over entries."""
    return gaussian_logprob_elements(pred, target, sigma).sum()
