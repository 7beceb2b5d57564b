"""Training orchestration and checkpointing.

Checkpoints are archives of named binary tensor records plus the full
config text and a stage tag ("ivae" after first-stage training, "ldmi"
once the latent denoiser is added, "hypertransformed" after decoder-only
retraining against a frozen encoder/denoiser pair). Stage transitions
enforce freeze contracts at the byte level: tensors owned by a frozen
component are carried through unchanged.
"""

import hashlib
import io
import struct
from dataclasses import dataclass, field

import numpy as np
import torch

from . import tensorio
from .config import FullConfig, TrainConfig, complete_config, parse_config, serialize_config
from .diffusion import EpsilonNet, NoiseSchedule, ddpm_loss_terms, make_schedule
from .errors import FormatError, NumericsError, ShapeError, StageError
from .hyperdecoder import HyperDecoder
from .ivae import Encoder, elbo_terms, features_to_input, sample_posterior
from .rng import derive_seed, torch_generator

ARCHIVE_MAGIC = b"LDMA"
ARCHIVE_VERSION = 1
STAGES = ("ivae", "ldmi", "hypertransformed")
GRAD_CLIP_NORM = 1.0


@dataclass
class Checkpoint:
    stage: str
    tensors: dict[str, np.ndarray]
    config_text: str


@dataclass
class ModelBundle:
    cfg: FullConfig
    encoder: Encoder
    hd: HyperDecoder
    denoiser: EpsilonNet
    schedule: NoiseSchedule = field(repr=False, default=None)


def build_models(cfg: FullConfig, seed: int) -> ModelBundle:
    """Construct all networks with deterministic initialization."""
    cfg = complete_config(cfg).validate()
    torch.manual_seed(derive_seed(seed, "init"))
    encoder = Encoder(cfg.encoder())
    hd = HyperDecoder(cfg.hd(), cfg.inr())
    hd.reset_parameters(derive_seed(seed, "init-hd"))
    denoiser = EpsilonNet(cfg.denoiser())
    torch.nn.init.zeros_(denoiser.out_conv.weight)
    torch.nn.init.zeros_(denoiser.out_conv.bias)
    return ModelBundle(
        cfg=cfg,
        encoder=encoder,
        hd=hd,
        denoiser=denoiser,
        schedule=make_schedule(**cfg.schedule_args()),
    )


# ---------------------------------------------------------------------------
# Named-tensor export/import


def _hd_tensor_name(key: str) -> str:
    # template and bias parameters describe the generated INR, so they live
    # under the inr.* namespace; everything else is transformer machinery
    if key.startswith("templates."):
        return f"inr.template.W{int(key.split('.')[1]) + 1}"
    if key.startswith("inr_biases."):
        return f"inr.bias.b{int(key.split('.')[1]) + 1}"
    return f"hd.{key}"


def state_tensors(bundle: ModelBundle, include_eps: bool) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    for key, value in bundle.encoder.state_dict().items():
        out[f"enc.{key}"] = value.detach().numpy().copy()
    for key, value in bundle.hd.state_dict().items():
        out[_hd_tensor_name(key)] = value.detach().numpy().copy()
    if include_eps:
        for key, value in bundle.denoiser.state_dict().items():
            out[f"eps.{key}"] = value.detach().numpy().copy()
    return out


def expected_tensor_names(bundle: ModelBundle, stage: str) -> set[str]:
    return set(state_tensors(bundle, include_eps=stage in ("ldmi", "hypertransformed")))


def load_state(bundle: ModelBundle, tensors: dict[str, np.ndarray], stage: str) -> None:
    expected = expected_tensor_names(bundle, stage)
    missing = expected - set(tensors)
    if missing:
        raise FormatError("incomplete-checkpoint", f"missing tensors: {sorted(missing)[:5]}")
    unexpected = set(tensors) - expected
    if unexpected:
        raise FormatError("unexpected-tensor", f"unknown tensors: {sorted(unexpected)[:5]}")

    enc_state, hd_state, eps_state = {}, {}, {}
    hd_keys = {_hd_tensor_name(k): k for k in bundle.hd.state_dict()}
    for name, arr in tensors.items():
        t = torch.from_numpy(arr.copy())
        if name.startswith("enc."):
            enc_state[name[4:]] = t
        elif name.startswith("eps."):
            eps_state[name[4:]] = t
        else:
            hd_state[hd_keys[name]] = t
    bundle.encoder.load_state_dict(enc_state)
    bundle.hd.load_state_dict(hd_state)
    if eps_state:
        bundle.denoiser.load_state_dict(eps_state)


def restore(ckpt: Checkpoint, seed: int = 0) -> ModelBundle:
    """Rebuild models from a checkpoint's embedded config and load its tensors."""
    bundle = build_models(parse_config(ckpt.config_text), seed)
    load_state(bundle, ckpt.tensors, ckpt.stage)
    return bundle


def hash_tensors(ckpt: Checkpoint, prefix: str) -> str:
    """Order-independent byte hash of every tensor whose name has the prefix."""
    h = hashlib.sha256()
    for name in sorted(ckpt.tensors):
        if name.startswith(prefix):
            h.update(name.encode())
            h.update(tensorio.tensor_to_bytes(ckpt.tensors[name]))
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Checkpoint archive


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    if ckpt.stage not in STAGES:
        raise StageError("stage-mismatch", f"unknown stage {ckpt.stage!r}")
    names = list(ckpt.tensors)
    records = [tensorio.tensor_to_bytes(ckpt.tensors[n]) for n in names]
    config_bytes = ckpt.config_text.encode()

    header = io.BytesIO()
    header.write(ARCHIVE_MAGIC)
    header.write(struct.pack("<B", ARCHIVE_VERSION))
    stage_b = ckpt.stage.encode()
    header.write(struct.pack("<H", len(stage_b)))
    header.write(stage_b)
    header.write(struct.pack("<I", len(names)))
    dir_size = sum(2 + len(n.encode()) + 16 for n in names) + 16
    offset = header.tell() + dir_size
    for name, rec in zip(names, records):
        nb = name.encode()
        header.write(struct.pack("<H", len(nb)))
        header.write(nb)
        header.write(struct.pack("<QQ", offset, len(rec)))
        offset += len(rec)
    header.write(struct.pack("<QQ", offset, len(config_bytes)))
    with open(path, "wb") as f:
        f.write(header.getvalue())
        for rec in records:
            f.write(rec)
        f.write(config_bytes)


def load_checkpoint(path, validate: bool = True) -> Checkpoint:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != ARCHIVE_MAGIC:
        raise FormatError("bad-magic", f"expected {ARCHIVE_MAGIC!r}, got {data[:4]!r}")
    (version,) = struct.unpack_from("<B", data, 4)
    if version != ARCHIVE_VERSION:
        raise FormatError("bad-version", f"unsupported archive version {version}")
    off = 5
    (stage_len,) = struct.unpack_from("<H", data, off)
    off += 2
    stage = data[off : off + stage_len].decode()
    off += stage_len
    if stage not in STAGES:
        raise StageError("stage-mismatch", f"unknown stage {stage!r}")
    (n,) = struct.unpack_from("<I", data, off)
    off += 4
    entries = []
    for _ in range(n):
        (name_len,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off : off + name_len].decode()
        off += name_len
        rec_off, rec_len = struct.unpack_from("<QQ", data, off)
        off += 16
        entries.append((name, rec_off, rec_len))
    cfg_off, cfg_len = struct.unpack_from("<QQ", data, off)
    if cfg_off + cfg_len > len(data):
        raise FormatError("truncated", "archive ends before config block")
    tensors = {}
    for name, rec_off, rec_len in entries:
        if name in tensors:
            raise FormatError("duplicate-name", f"tensor {name!r} appears twice")
        if rec_off + rec_len > len(data):
            raise FormatError("truncated", f"record {name!r} extends past end of file")
        tensors[name] = tensorio.tensor_from_bytes(data[rec_off : rec_off + rec_len])
    config_text = data[cfg_off : cfg_off + cfg_len].decode()
    ckpt = Checkpoint(stage=stage, tensors=tensors, config_text=config_text)
    if validate:
        bundle = build_models(parse_config(config_text), 0)
        missing = expected_tensor_names(bundle, stage) - set(tensors)
        if missing:
            raise FormatError("incomplete-checkpoint", f"missing tensors: {sorted(missing)[:5]}")
    return ckpt


# ---------------------------------------------------------------------------
# Training loops


class _BatchSampler:
    """Seed-determined epoch permutations, chunked into fixed-size batches."""

    def __init__(self, n: int, batch_size: int, gen: torch.Generator):
        self.n, self.batch_size, self.gen = n, batch_size, gen
        self.pool: list[int] = []

    def next(self) -> torch.Tensor:
        while len(self.pool) < self.batch_size:
            self.pool.extend(torch.randperm(self.n, generator=self.gen).tolist())
        batch, self.pool = self.pool[: self.batch_size], self.pool[self.batch_size :]
        return torch.tensor(batch, dtype=torch.long)


def sample_timesteps(T: int, count: int, gen: torch.Generator) -> torch.Tensor:
    """Uniform draws over the integer range [1, T]."""
    return torch.randint(1, T + 1, (count,), generator=gen)


def _check_dataset(dataset, enc_cfg) -> torch.Tensor:
    if tuple(dataset.resolution) != tuple(enc_cfg.resolution):
        raise ShapeError(
            "resolution-mismatch",
            f"dataset resolution {dataset.resolution} != configured {enc_cfg.resolution}",
        )
    if dataset.feat_dim != enc_cfg.in_channels:
        raise ShapeError(
            "resolution-mismatch",
            f"dataset feat_dim {dataset.feat_dim} != encoder in_channels {enc_cfg.in_channels}",
        )
    return features_to_input(dataset.features)


def _guard_finite(loss: torch.Tensor, step: int) -> None:
    if not bool(torch.isfinite(loss)):
        raise NumericsError("diverged", f"non-finite loss at step {step}")


def train_stage1(dataset, cfg: FullConfig, seed: int):
    """Jointly fit encoder and hypernetwork decoder by maximizing the ELBO."""
    torch.set_num_threads(1)
    cfg = complete_config(cfg).validate()
    bundle = build_models(cfg, seed)
    feats = _check_dataset(dataset, bundle.encoder.cfg)
    tc = cfg.train()
    inr_cfg = bundle.hd.inr_cfg
    d_z, (hz, wz) = bundle.encoder.cfg.latent_channels, bundle.encoder.cfg.latent_size

    params = list(bundle.encoder.parameters()) + list(bundle.hd.parameters())
    opt = torch.optim.Adam(params, lr=tc.lr, betas=(0.9, 0.999), eps=1e-8)
    gen = torch_generator(seed, "train")
    sampler = _BatchSampler(len(dataset), tc.batch_size, gen)

    trace = []
    for step in range(tc.iterations):
        x = feats[sampler.next()]
        noise = torch.randn((x.shape[0], d_z, hz, wz), generator=gen)
        recon, kl = elbo_terms(x, bundle.encoder, bundle.hd, inr_cfg, noise)
        loss = -(recon - tc.kl_weight * kl).mean()
        _guard_finite(loss, step)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(params, GRAD_CLIP_NORM)
        opt.step()
        trace.append((step, loss.item(), kl.detach().mean().item(), recon.detach().mean().item()))

    ckpt = Checkpoint(
        stage="ivae",
        tensors=state_tensors(bundle, include_eps=False),
        config_text=serialize_config(cfg),
    )
    return ckpt, trace


def train_stage2(dataset, ivae_ckpt: Checkpoint, train_cfg: TrainConfig, seed: int):
    """Fit the latent denoiser to encoder posteriors; encoder and decoder stay frozen."""
    if ivae_ckpt.stage != "ivae":
        raise StageError("stage-mismatch", f"expected stage ivae, got {ivae_ckpt.stage!r}")
    torch.set_num_threads(1)
    bundle = restore(ivae_ckpt, seed)
    feats = _check_dataset(dataset, bundle.encoder.cfg)
    bundle.encoder.requires_grad_(False)
    bundle.hd.requires_grad_(False)

    opt = torch.optim.Adam(bundle.denoiser.parameters(), lr=train_cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    gen = torch_generator(seed, "train")
    sampler = _BatchSampler(len(dataset), train_cfg.batch_size, gen)
    sched = bundle.schedule

    trace = []
    for step in range(train_cfg.iterations):
        x = feats[sampler.next()]
        with torch.no_grad():
            post = bundle.encoder(x)
            z0 = sample_posterior(post, torch.randn(post.mean.shape, generator=gen))
        t = sample_timesteps(sched.T, x.shape[0], gen)
        eps = torch.randn(z0.shape, generator=gen)
        loss = ddpm_loss_terms(z0, t, eps, bundle.denoiser, sched).mean()
        _guard_finite(loss, step)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(bundle.denoiser.parameters(), GRAD_CLIP_NORM)
        opt.step()
        trace.append((step, loss.item()))

    tensors = dict(ivae_ckpt.tensors)  # frozen groups carried through byte-identical
    for key, value in bundle.denoiser.state_dict().items():
        tensors[f"eps.{key}"] = value.detach().numpy().copy()
    ckpt = Checkpoint(stage="ldmi", tensors=tensors, config_text=ivae_ckpt.config_text)
    return ckpt, trace


def hyper_transform(dataset, frozen_ckpt: Checkpoint, train_cfg: TrainConfig, seed: int):
    """Re-initialize the decoder and train it alone against a frozen
    encoder/denoiser pair, maximizing decoded log-likelihood."""
    if frozen_ckpt.stage != "ldmi":
        raise StageError("stage-mismatch", f"expected stage ldmi, got {frozen_ckpt.stage!r}")
    torch.set_num_threads(1)
    bundle = restore(frozen_ckpt, seed)
    feats = _check_dataset(dataset, bundle.encoder.cfg)
    bundle.encoder.requires_grad_(False)
    bundle.denoiser.requires_grad_(False)
    bundle.hd.reset_parameters(derive_seed(seed, "init-hd"))

    inr_cfg = bundle.hd.inr_cfg
    opt = torch.optim.Adam(bundle.hd.parameters(), lr=train_cfg.lr, betas=(0.9, 0.999), eps=1e-8)
    gen = torch_generator(seed, "train")
    sampler = _BatchSampler(len(dataset), train_cfg.batch_size, gen)

    trace = []
    for step in range(train_cfg.iterations):
        x = feats[sampler.next()]
        noise = torch.randn(
            (x.shape[0], bundle.encoder.cfg.latent_channels, *bundle.encoder.cfg.latent_size),
            generator=gen,
        )
        recon, _ = elbo_terms(x, bundle.encoder, bundle.hd, inr_cfg, noise)
        loss = -recon.mean()
        _guard_finite(loss, step)
        opt.zero_grad()
        loss.backward()
        torch.nn.utils.clip_grad_norm_(bundle.hd.parameters(), GRAD_CLIP_NORM)
        opt.step()
        trace.append((step, loss.item()))

    tensors = {
        name: arr
        for name, arr in frozen_ckpt.tensors.items()
        if name.startswith("enc.") or name.startswith("eps.")
    }
    for key, value in bundle.hd.state_dict().items():
        tensors[_hd_tensor_name(key)] = value.detach().numpy().copy()
    ckpt = Checkpoint(stage="hypertransformed", tensors=tensors, config_text=frozen_ckpt.config_text)
    return ckpt, trace
