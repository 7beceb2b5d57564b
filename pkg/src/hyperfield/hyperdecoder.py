"""Transformer hypernetwork mapping latent tensors to INR parameters.

The latent tensor is patch-tokenized and self-attended; a set of learned
weight-query tokens (one per weight group per INR layer) cross-attends to
the latent tokens and is projected to grouped weight columns. Full weight
matrices come from combining each grouped column with a learned per-column
template, either by scaling (W = (1 + w_o) * template) or by normalized
product. Biases of the generated INR are shared learned vectors, not a
function of the latent.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError, NumericsError, ShapeError
from .inr import INRConfig, INRParams, siren_init

NORM_EPS = 1e-12  # below this column norm, norm-mode reconstruction is degenerate


@dataclass(frozen=True)
class HDConfig:
    latent_size: tuple[int, int] = (4, 4)
    latent_channels: int = 4
    patch_size: int = 1
    token_dim: int = 64
    encoder_layers: int = 2
    decoder_layers: int = 2
    heads: int = 4
    head_dim: int = 16
    feedforward_dim: int = 128
    groups: int = 2
    recon_mode: str = "scale"  # scale | norm

    def __post_init__(self):
        h, w = self.latent_size
        if h % self.patch_size or w % self.patch_size:
            raise ConfigError("config-invalid", "latent size must be divisible by patch_size")
        if self.recon_mode not in ("scale", "norm"):
            raise ConfigError("config-invalid", f"unknown recon_mode {self.recon_mode!r}")
        if self.groups < 1:
            raise ConfigError("config-invalid", "groups must be >= 1")

    @property
    def num_tokens(self) -> int:
        return (self.latent_size[0] // self.patch_size) * (self.latent_size[1] // self.patch_size)


class MultiheadAttention(nn.Module):
    """Scaled dot-product attention with explicit head split."""

    def __init__(self, dim, heads, head_dim):
        super().__init__()
        inner = heads * head_dim
        self.heads = heads
        self.head_dim = head_dim
        self.to_q = nn.Linear(dim, inner)
        self.to_k = nn.Linear(dim, inner)
        self.to_v = nn.Linear(dim, inner)
        self.to_out = nn.Linear(inner, dim)

    def forward(self, query, context, key_mask=None, return_weights=False):
        b, nq, _ = query.shape
        nk = context.shape[1]

        def split(x):
            return x.view(b, -1, self.heads, self.head_dim).transpose(1, 2)

        q = split(self.to_q(query))
        k = split(self.to_k(context))
        v = split(self.to_v(context))
        scores = q @ k.transpose(-2, -1) / math.sqrt(self.head_dim)
        if key_mask is not None:
            mask = key_mask.view(1, 1, 1, nk) if key_mask.dim() == 1 else key_mask.view(b, 1, 1, nk)
            scores = scores.masked_fill(~mask, float("-inf"))
        attn = torch.softmax(scores, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, nq, -1)
        out = self.to_out(out)
        return (out, attn) if return_weights else out


class FeedForward(nn.Module):
    def __init__(self, dim, hidden):
        super().__init__()
        self.net = nn.Sequential(nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim))

    def forward(self, x):
        return self.net(x)


class EncoderBlock(nn.Module):
    """Pre-norm self-attention block."""

    def __init__(self, cfg: HDConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.token_dim)
        self.attn = MultiheadAttention(cfg.token_dim, cfg.heads, cfg.head_dim)
        self.norm2 = nn.LayerNorm(cfg.token_dim)
        self.ff = FeedForward(cfg.token_dim, cfg.feedforward_dim)

    def forward(self, x):
        h = self.norm1(x)
        x = x + self.attn(h, h)
        return x + self.ff(self.norm2(x))


class DecoderBlock(nn.Module):
    """Pre-norm block: query self-attention, cross-attention to latent tokens, MLP."""

    def __init__(self, cfg: HDConfig):
        super().__init__()
        self.norm1 = nn.LayerNorm(cfg.token_dim)
        self.self_attn = MultiheadAttention(cfg.token_dim, cfg.heads, cfg.head_dim)
        self.norm2 = nn.LayerNorm(cfg.token_dim)
        self.cross_attn = MultiheadAttention(cfg.token_dim, cfg.heads, cfg.head_dim)
        self.norm3 = nn.LayerNorm(cfg.token_dim)
        self.ff = FeedForward(cfg.token_dim, cfg.feedforward_dim)

    def forward(self, q, context, key_mask=None):
        h = self.norm1(q)
        q = q + self.self_attn(h, h)
        q = q + self.cross_attn(self.norm2(q), context, key_mask=key_mask)
        return q + self.ff(self.norm3(q))


def reconstruct_weights(w_out: torch.Tensor, template: torch.Tensor, mode: str) -> torch.Tensor:
    """Expand grouped columns (..., d_out, G) into a full matrix (..., d_out, d_in).

    Column c (1-based) uses group ceil(c/k) with k = d_in/G. "scale" applies
    (1 + w_o) elementwise to the template column; "norm" normalizes the
    elementwise product to unit length and refuses near-zero columns.
    """
    d_out, d_in = template.shape[-2:]
    g = w_out.shape[-1]
    if d_in % g:
        raise ShapeError("shape-mismatch", f"d_in {d_in} not divisible by {g} groups")
    if w_out.shape[-2] != d_out:
        raise ShapeError("shape-mismatch", "w_out rows do not match template rows")
    expanded = torch.repeat_interleave(w_out, d_in // g, dim=-1)
    if mode == "scale":
        return (1.0 + expanded) * template
    if mode == "norm":
        prod = expanded * template
        norms = prod.norm(dim=-2, keepdim=True)
        if bool((norms < NORM_EPS).any()):
            raise NumericsError("degenerate-norm", "norm-mode column norm below 1e-12")
        return prod / norms
    raise ConfigError("config-invalid", f"unknown recon_mode {mode!r}")


class HyperDecoder(nn.Module):
    """Latent tensor -> INR parameters."""

    def __init__(self, cfg: HDConfig, inr_cfg: INRConfig):
        super().__init__()
        self.cfg = cfg
        self.inr_cfg = inr_cfg
        self.layer_shapes = inr_cfg.layer_shapes()
        for d_out, d_in in self.layer_shapes:
            if d_in % cfg.groups:
                raise ConfigError(
                    "config-invalid",
                    f"groups {cfg.groups} must divide every layer input dim, got {d_in}",
                )

        p, d_z = cfg.patch_size, cfg.latent_channels
        self.patch_proj = nn.Linear(p * p * d_z, cfg.token_dim)
        self.pos_emb = nn.Parameter(torch.zeros(cfg.num_tokens, cfg.token_dim))
        self.encoder = nn.ModuleList(EncoderBlock(cfg) for _ in range(cfg.encoder_layers))
        self.decoder = nn.ModuleList(DecoderBlock(cfg) for _ in range(cfg.decoder_layers))
        self.out_norm = nn.LayerNorm(cfg.token_dim)

        n_layers = len(self.layer_shapes)
        self.queries = nn.Parameter(torch.zeros(cfg.groups * n_layers, cfg.token_dim))
        self.heads = nn.ModuleList(nn.Linear(cfg.token_dim, d_out) for d_out, _ in self.layer_shapes)
        self.templates = nn.ParameterList(
            nn.Parameter(torch.empty(d_out, d_in)) for d_out, d_in in self.layer_shapes
        )
        self.inr_biases = nn.ParameterList(
            nn.Parameter(torch.zeros(d_out)) for d_out, _ in self.layer_shapes
        )
        self.reset_parameters(0)

    def reset_parameters(self, seed: int) -> None:
        """Deterministic init; output heads start at zero so generated weights
        begin exactly at the templates in scale mode."""
        gen = torch.Generator().manual_seed(seed)
        for name, param in self.named_parameters():
            if name.startswith("templates"):
                continue  # handled below
            if name == "pos_emb" or name == "queries":
                nn.init.normal_(param, std=0.02, generator=gen)
            elif name.startswith("heads"):
                nn.init.zeros_(param)
            elif name.startswith("inr_biases"):
                nn.init.zeros_(param)
            elif param.dim() >= 2:
                nn.init.kaiming_uniform_(param, a=math.sqrt(5), generator=gen)
            else:
                nn.init.zeros_(param)
        for block in [*self.encoder, *self.decoder, self.out_norm]:
            for m in block.modules():
                if isinstance(m, nn.LayerNorm):
                    nn.init.ones_(m.weight)
                    nn.init.zeros_(m.bias)
        if self.inr_cfg.activation == "sine":
            init = siren_init(self.inr_cfg, seed ^ 0x7E0)
            for tmpl, w in zip(self.templates, init.weights):
                with torch.no_grad():
                    tmpl.copy_(w)
        else:
            for tmpl in self.templates:
                nn.init.kaiming_uniform_(tmpl, a=math.sqrt(5), generator=gen)

    def patch_embed(self, z: torch.Tensor) -> torch.Tensor:
        """Row-major patch flattening + shared projection, before positions."""
        b, c, h, w = z.shape
        if (h, w) != tuple(self.cfg.latent_size) or c != self.cfg.latent_channels:
            raise ShapeError("shape-mismatch", f"latent {(c, h, w)} != configured shape")
        p = self.cfg.patch_size
        patches = z.view(b, c, h // p, p, w // p, p)
        patches = patches.permute(0, 2, 4, 1, 3, 5).reshape(b, self.cfg.num_tokens, c * p * p)
        return self.patch_proj(patches)

    def tokenize(self, z: torch.Tensor) -> torch.Tensor:
        return self.patch_embed(z) + self.pos_emb

    def encode_tokens(self, tokens: torch.Tensor) -> torch.Tensor:
        for block in self.encoder:
            tokens = block(tokens)
        return tokens

    def decode_tokens(self, latent_tokens: torch.Tensor, cross_mask=None) -> list[torch.Tensor]:
        """Cross-attend weight queries to latent tokens; returns per-layer
        grouped matrices, each (B, d_out, G)."""
        b = latent_tokens.shape[0]
        q = self.queries.unsqueeze(0).expand(b, -1, -1)
        for block in self.decoder:
            q = block(q, latent_tokens, key_mask=cross_mask)
        q = self.out_norm(q)
        g = self.cfg.groups
        outs = []
        for i, head in enumerate(self.heads):
            chunk = q[:, i * g : (i + 1) * g]  # (B, G, token_dim)
            outs.append(head(chunk).transpose(1, 2))  # (B, d_out, G)
        return outs

    def forward(self, z: torch.Tensor) -> INRParams:
        return self.generate(z)

    def generate(self, z: torch.Tensor) -> INRParams:
        """Full pipeline: tokenize, self-attend, cross-attend, reconstruct."""
        squeeze = z.dim() == 3
        if squeeze:
            z = z.unsqueeze(0)
        tokens = self.encode_tokens(self.tokenize(z))
        grouped = self.decode_tokens(tokens)
        weights = [
            reconstruct_weights(w_o, tmpl, self.cfg.recon_mode)
            for w_o, tmpl in zip(grouped, self.templates)
        ]
        if squeeze:
            weights = [w.squeeze(0) for w in weights]
        return INRParams(weights=weights, biases=list(self.inr_biases))

    def parameter_counts(self) -> dict:
        """Hypernetwork size vs. size of the INR weights it emits."""
        hd = sum(p.numel() for p in self.parameters())
        inr_weights = sum(t.numel() for t in self.templates)
        return {"hd_params": hd, "inr_weights": inr_weights, "ratio": inr_weights / hd}
