"""Scratch reference-run probe (deleted before ship)."""
import sys, time
import numpy as np
import torch

from hyperfield import pipeline, tensorio
from hyperfield.config import parse_config
from hyperfield.ivae import features_to_input
from hyperfield.inr import inr_forward, make_coordinate_grid

variant = sys.argv[1] if len(sys.argv) > 1 else "base"

ds = tensorio.make_synthetic_dataset("gaussians", 64, (16, 16), seed=7)
text = open("configs/toy16.cfg").read()
if variant == "fourier":
    text = text.replace("point_enc_dim = 0", "point_enc_dim = 16").replace("groups = 2", "groups = 8")
if variant == "wide":
    text = text.replace("hidden_dim = 32", "hidden_dim = 64")
cfg = parse_config(text)

torch.set_num_threads(1)
from hyperfield.pipeline import build_models, _BatchSampler, _check_dataset, GRAD_CLIP_NORM
from hyperfield.ivae import elbo_terms
from hyperfield.rng import torch_generator

bundle = build_models(pipeline.complete_config(cfg), 11)
feats = _check_dataset(ds, bundle.encoder.cfg)
tc = cfg.train()
inr_cfg = bundle.hd.inr_cfg
d_z, (hz, wz) = bundle.encoder.cfg.latent_channels, bundle.encoder.cfg.latent_size
params = list(bundle.encoder.parameters()) + list(bundle.hd.parameters())
opt = torch.optim.Adam(params, lr=tc.lr)
gen = torch_generator(11, "train")
sampler = _BatchSampler(len(ds), tc.batch_size, gen)

grid = make_coordinate_grid((16, 16))
target = torch.from_numpy(ds.features).reshape(64, 256, 1)

def train_psnr():
    with torch.no_grad():
        post = bundle.encoder(feats)
        p = bundle.hd.generate(post.mean)
        pred = inr_forward(p, grid, inr_cfg, exact=False).clamp(0, 1)
    mse = float(((pred - target) ** 2).mean())
    return 10 * np.log10(1.0 / mse)

t0 = time.time()
for step in range(5000):
    x = feats[sampler.next()]
    noise = torch.randn((x.shape[0], d_z, hz, wz), generator=gen)
    recon, kl = elbo_terms(x, bundle.encoder, bundle.hd, inr_cfg, noise)
    loss = -(recon - tc.kl_weight * kl).mean()
    opt.zero_grad()
    loss.backward()
    torch.nn.utils.clip_grad_norm_(params, GRAD_CLIP_NORM)
    opt.step()
    if (step + 1) % 250 == 0:
        print(f"[{variant}] step {step+1}  loss {loss.item():9.2f}  psnr {train_psnr():6.2f} dB  ({time.time()-t0:5.0f}s)", flush=True)
