import numpy as np
import pytest
import torch

from hyperfield import pipeline, tensorio
from hyperfield.config import parse_config

torch.set_num_threads(1)

TOY_CONFIG = """\
[encoder]
resolution = 16x16
in_channels = 1
latent_channels = 4
base_channels = 32
ch_mult = 1,2,2
num_blocks = 2

[hd]
latent_size = 4x4
patch_size = 1
token_dim = 64
encoder_layers = 2
decoder_layers = 2
heads = 4
head_dim = 16
feedforward_dim = 128
groups = 2
recon_mode = scale

[inr]
type = siren
layers = 3
hidden_dim = 32
omega = 30.0
sigma = 0.1

[diffusion]
diffusion_steps = 1000
base_channels = 32
ch_mult = 1,2
num_blocks = 2

[train]
batch_size = 16
iterations = 2200
lr = 1e-3
kl_weight = 1e-4
"""

# tiny variant for gradient-oracle work: every component a few layers wide
GRAD_TOY_CONFIG = """\
[encoder]
resolution = 4x4
in_channels = 1
latent_channels = 2
base_channels = 8
ch_mult = 1
num_blocks = 0

[hd]
latent_size = 4x4
patch_size = 2
token_dim = 16
encoder_layers = 1
decoder_layers = 1
heads = 2
head_dim = 8
feedforward_dim = 32
groups = 2
recon_mode = scale

[inr]
type = siren
layers = 3
hidden_dim = 8
omega = 30.0
sigma = 1.0

[diffusion]
base_channels = 8
ch_mult = 1
num_blocks = 1

[train]
batch_size = 2
iterations = 10
lr = 1e-3
kl_weight = 1e-3
"""


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def central_diff(f, param: torch.Tensor, index, h: float = 1e-5) -> float:
    """Central finite difference of scalar f() along one parameter entry."""
    with torch.no_grad():
        orig = param.view(-1)[index].item()
        param.view(-1)[index] = orig + h
        up = f()
        param.view(-1)[index] = orig - h
        down = f()
        param.view(-1)[index] = orig
    return (up - down) / (2.0 * h)


def check_grads_fd(f, params: dict[str, torch.Tensor], n_per_param: int, seed: int = 0, tol: float = 1e-4):
    """Compare autograd gradients of scalar f() against central differences.

    Checks n_per_param randomly chosen entries of each named parameter;
    returns the worst relative error seen.
    """
    for p in params.values():
        p.requires_grad_(True)
        p.grad = None
    loss = f()
    loss.backward()
    rng = np.random.Generator(np.random.PCG64(seed))
    worst = 0.0
    for name, p in params.items():
        assert p.grad is not None, f"no gradient reached {name}"
        flat = p.grad.view(-1)
        idx = rng.choice(p.numel(), size=min(n_per_param, p.numel()), replace=False)
        for i in idx:
            analytic = flat[int(i)].item()
            numeric = central_diff(lambda: float(f()), p, int(i))
            scale = max(abs(analytic), abs(numeric))
            if scale < 1e-7:  # both effectively zero
                continue
            err = abs(analytic - numeric) / scale
            assert err < tol, f"{name}[{i}]: analytic {analytic:.8g} vs fd {numeric:.8g} (rel {err:.2e})"
            worst = max(worst, err)
    return worst


def grad_toy_bundle(dtype=torch.float64, seed: int = 3):
    """Width-8 toy with a 2-conv encoder, G=2, 4x4 latent; heads randomized
    so every parameter group carries gradient."""
    cfg = parse_config(GRAD_TOY_CONFIG)
    bundle = pipeline.build_models(cfg, seed=seed)
    gen = torch.Generator().manual_seed(seed + 6)
    for head in bundle.hd.heads:
        torch.nn.init.normal_(head.weight, std=0.05, generator=gen)
        torch.nn.init.normal_(head.bias, std=0.05, generator=gen)
    bundle.encoder = bundle.encoder.to(dtype)
    bundle.hd = bundle.hd.to(dtype)
    return cfg, bundle


@pytest.fixture(scope="session")
def toy_dataset():
    return tensorio.make_synthetic_dataset("gaussians", 64, (16, 16), seed=7)


@pytest.fixture(scope="session")
def trained_toy(tmp_path_factory, toy_dataset):
    """Full two-stage-plus-hypertransform run on the toy set, shared across tests."""
    root = tmp_path_factory.mktemp("trained_toy")
    cfg = parse_config(TOY_CONFIG)
    ckpt1, trace1 = pipeline.train_stage1(toy_dataset, cfg, seed=11)
    tc = cfg.train()
    tc.iterations = 400
    ckpt2, trace2 = pipeline.train_stage2(toy_dataset, ckpt1, tc, seed=12)
    tc_ht = cfg.train()
    tc_ht.iterations = 800
    ckpt3, trace3 = pipeline.hyper_transform(toy_dataset, ckpt2, tc_ht, seed=13)
    paths = {}
    for name, ckpt in [("ivae", ckpt1), ("ldmi", ckpt2), ("ht", ckpt3)]:
        paths[name] = root / f"{name}.ckpt"
        pipeline.save_checkpoint(paths[name], ckpt)
    return {
        "config": cfg,
        "ckpts": {"ivae": ckpt1, "ldmi": ckpt2, "ht": ckpt3},
        "paths": paths,
        "traces": {"stage1": trace1, "stage2": trace2, "ht": trace3},
    }
