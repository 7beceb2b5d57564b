"""Command-line entry point.

Subcommands: gen-data, train-ivae, train-diffusion, hyper-transform,
sample, reconstruct, inpaint, inspect. All randomness derives from --seed;
running any subcommand twice with the same arguments produces byte
identical artifacts. Failures print one machine-parseable line to stderr:
"error[<code>]: <message>" (exit 2 for usage/config errors, 1 otherwise).
"""

import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import torch

from . import pipeline, tasks, tensorio
from .config import FullConfig, parse_config
from .errors import ConfigError, HyperfieldError
from .rng import derive_seed


def _load_config(path) -> FullConfig:
    if path is None:
        raise ConfigError("config-invalid", "--config is required for this subcommand")
    return parse_config(Path(path).read_text())


def _write_trace(path, trace, header):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(header)
        for row in trace:
            writer.writerow([f"{v:.8g}" if isinstance(v, float) else v for v in row])


def _write_manifest(out_dir: Path, **kv):
    lines = "".join(f"{k}={v}\n" for k, v in kv.items())
    (out_dir / "manifest.txt").write_text(lines)


def _save_images(out_dir: Path, prefix: str, images: np.ndarray):
    for i, img in enumerate(images):
        tensorio.save_ppm(out_dir / f"{prefix}_{i:03d}.ppm", img)


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args):
    out = _out_dir(args)
    res = tuple(int(v) for v in args.resolution.lower().split("x"))
    ds = tensorio.make_synthetic_dataset(args.kind, args.n, res, args.seed)
    tensorio.save_dataset(out / "dataset.ten", ds)
    _save_images(out, "item", ds.features)
    _write_manifest(out, kind=args.kind, n=args.n, resolution=args.resolution, seed=args.seed)
    return 0


def cmd_train_ivae(args):
    cfg = _load_config(args.config)
    ds = tensorio.load_dataset(args.data)
    out = _out_dir(args)
    ckpt, trace = pipeline.train_stage1(ds, cfg, args.seed)
    pipeline.save_checkpoint(out / "ivae.ckpt", ckpt)
    _write_trace(out / "trace_stage1.csv", trace, ["step", "loss", "kl", "recon"])
    return 0


def _train_cfg_for(args, ckpt):
    source = _load_config(args.config) if args.config else parse_config(ckpt.config_text)
    return source.train()


def cmd_train_diffusion(args):
    ckpt = pipeline.load_checkpoint(args.ckpt)
    ds = tensorio.load_dataset(args.data)
    out = _out_dir(args)
    ckpt2, trace = pipeline.train_stage2(ds, ckpt, _train_cfg_for(args, ckpt), args.seed)
    pipeline.save_checkpoint(out / "ldmi.ckpt", ckpt2)
    _write_trace(out / "trace_stage2.csv", trace, ["step", "loss"])
    return 0


def cmd_hyper_transform(args):
    ckpt = pipeline.load_checkpoint(args.ckpt)
    ds = tensorio.load_dataset(args.data)
    out = _out_dir(args)
    ckpt2, trace = pipeline.hyper_transform(ds, ckpt, _train_cfg_for(args, ckpt), args.seed)
    pipeline.save_checkpoint(out / "hypertransformed.ckpt", ckpt2)
    _write_trace(out / "trace_ht.csv", trace, ["step", "loss"])
    return 0


def cmd_sample(args):
    ckpt = pipeline.load_checkpoint(args.ckpt)
    out = _out_dir(args)
    images = tasks.sample(ckpt, args.n, args.scale, args.steps, args.eta, args.seed)
    _save_images(out, "sample", images)
    _write_manifest(out, seed=args.seed, scale=args.scale, steps=args.steps, eta=args.eta, n=args.n)
    return 0


def cmd_reconstruct(args):
    ckpt = pipeline.load_checkpoint(args.ckpt)
    ds = tensorio.load_dataset(args.data)
    out = _out_dir(args)
    images, report = tasks.reconstruct(ckpt, ds, args.scale, args.seed, sample_z=args.sample_posterior)
    _save_images(out, "recon", images)
    (out / "psnr.txt").write_text(report.as_text())
    _write_manifest(out, seed=args.seed, scale=args.scale, n=len(images))
    return 0


def cmd_inpaint(args):
    ckpt = pipeline.load_checkpoint(args.ckpt)
    ds = tensorio.load_dataset(args.data)
    mask = tensorio.load_mask(args.mask)
    out = _out_dir(args)
    images, scores = tasks.inpaint(ckpt, ds.features[0], mask, args.n, args.seed)
    _save_images(out, "inpaint", images)
    (out / "scores.txt").write_text("".join(f"observed_mse_{i}={s:.8g}\n" for i, s in enumerate(scores)))
    _write_manifest(out, seed=args.seed, n=args.n, mask=Path(args.mask).name)
    return 0


def cmd_inspect(args):
    if args.ckpt:
        ckpt = pipeline.load_checkpoint(args.ckpt)
        bundle = pipeline.restore(ckpt)
        print(f"stage={ckpt.stage}")
        for name in ckpt.tensors:
            print(f"tensor {name} shape={list(ckpt.tensors[name].shape)}")
    else:
        cfg = _load_config(args.config)
        bundle = pipeline.build_models(cfg, args.seed)
        print("stage=none (built from config)")
    counts = bundle.hd.parameter_counts()
    enc_params = sum(p.numel() for p in bundle.encoder.parameters())
    eps_params = sum(p.numel() for p in bundle.denoiser.parameters())
    print(f"hd_params={counts['hd_params']}")
    print(f"inr_generated_weights={counts['inr_weights']}")
    print(f"inr_to_hd_ratio={counts['ratio']:.6f}")
    print(f"encoder_params={enc_params}")
    print(f"denoiser_params={eps_params}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hyperfield", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, *, config=False, data=False, out=False, ckpt=False):
        p.add_argument("--seed", type=int, default=0)
        if config:
            p.add_argument("--config", type=str, default=None)
        if data:
            p.add_argument("--data", type=str, required=True)
        if out:
            p.add_argument("--out", type=str, required=True)
        if ckpt:
            p.add_argument("--ckpt", type=str, required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic dataset")
    common(p, out=True)
    p.add_argument("--kind", type=str, required=True, choices=tensorio.SYNTHETIC_KINDS)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--resolution", type=str, default="16x16")

    p = sub.add_parser("train-ivae", help="first-stage training of encoder + decoder")
    common(p, config=True, data=True, out=True)

    p = sub.add_parser("train-diffusion", help="second-stage latent denoiser training")
    common(p, config=True, data=True, out=True, ckpt=True)

    p = sub.add_parser("hyper-transform", help="retrain only the decoder against a frozen checkpoint")
    common(p, config=True, data=True, out=True, ckpt=True)

    p = sub.add_parser("sample", help="sample images from the diffusion prior")
    common(p, out=True, ckpt=True)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--scale", type=str, default="1")
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--eta", type=float, default=0.0)

    p = sub.add_parser("reconstruct", help="encode signals and render reconstructions")
    common(p, data=True, out=True, ckpt=True)
    p.add_argument("--scale", type=str, default="1")
    p.add_argument("--sample-posterior", action="store_true")

    p = sub.add_parser("inpaint", help="complete a masked signal from posterior samples")
    common(p, data=True, out=True, ckpt=True)
    p.add_argument("--mask", type=str, required=True)
    p.add_argument("--n", type=int, default=2)

    p = sub.add_parser("inspect", help="report checkpoint stage, tensors, and parameter counts")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ckpt", type=str, default=None)
    p.add_argument("--config", type=str, default=None)
    return parser


_COMMANDS = {
    "gen-data": cmd_gen_data,
    "train-ivae": cmd_train_ivae,
    "train-diffusion": cmd_train_diffusion,
    "hyper-transform": cmd_hyper_transform,
    "sample": cmd_sample,
    "reconstruct": cmd_reconstruct,
    "inpaint": cmd_inpaint,
    "inspect": cmd_inspect,
}


def main(argv=None) -> int:
    torch.set_num_threads(1)
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 2
    except HyperfieldError as exc:
        print(f"error[{exc.code}]: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
