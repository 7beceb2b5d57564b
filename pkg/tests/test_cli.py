import filecmp
from pathlib import Path

import numpy as np
import pytest

from conftest import GRAD_TOY_CONFIG
from hyperfield import cli, pipeline, tensorio
from hyperfield.config import parse_config, serialize_config


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def mini_run(tmp_path_factory):
    """gen-data + both training stages through the real CLI."""
    root = tmp_path_factory.mktemp("cli_mini")
    cfg_path = root / "mini.cfg"
    cfg_path.write_text(GRAD_TOY_CONFIG.replace("iterations = 10", "iterations = 25"))
    data_dir = root / "data"
    assert run_cli("gen-data", "--out", data_dir, "--kind", "gaussians", "--n", 8,
                   "--resolution", "4x4", "--seed", 3) == 0
    assert run_cli("train-ivae", "--config", cfg_path, "--data", data_dir / "dataset.ten",
                   "--out", root / "s1", "--seed", 4) == 0
    assert run_cli("train-diffusion", "--config", cfg_path, "--data", data_dir / "dataset.ten",
                   "--ckpt", root / "s1" / "ivae.ckpt", "--out", root / "s2", "--seed", 5) == 0
    return {
        "root": root,
        "config": cfg_path,
        "data": data_dir / "dataset.ten",
        "ivae": root / "s1" / "ivae.ckpt",
        "ldmi": root / "s2" / "ldmi.ckpt",
    }


class TestExitCodes:
    def test_unknown_subcommand_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("frobnicate")
        assert exc.value.code == 2

    def test_unknown_flag_exits_2(self):
        with pytest.raises(SystemExit) as exc:
            run_cli("gen-data", "--out", "x", "--kind", "gaussians", "--n", 1, "--frob", 1)
        assert exc.value.code == 2

    def test_negative_kl_weight_message(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text(GRAD_TOY_CONFIG.replace("kl_weight = 1e-3", "kl_weight = -1"))
        data = tmp_path / "d.ten"
        ds = tensorio.make_synthetic_dataset("gaussians", 2, (4, 4), seed=1)
        tensorio.save_dataset(data, ds)
        code = run_cli("train-ivae", "--config", cfg, "--data", data, "--out", tmp_path / "o")
        assert code == 2
        assert "kl_weight must be >= 0" in capsys.readouterr().err

    def test_runtime_failure_exits_1(self, tmp_path, capsys):
        code = run_cli("inspect", "--ckpt", tmp_path / "missing.ckpt")
        assert code == 1
        assert "error[" in capsys.readouterr().err

    def test_unknown_config_key_exits_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("[train]\nwarp_factor = 9\n")
        code = run_cli("train-ivae", "--config", cfg, "--data", "x", "--out", tmp_path / "o")
        assert code == 2
        assert "warp_factor" in capsys.readouterr().err


class TestConfigRoundtrip:
    def test_serialize_parse_normalizes_whitespace_only(self):
        text = "[train]\nbatch_size=4\n\n\nlr =  1e-3\n[inr]\n  layers = 2\n"
        normalized = serialize_config(parse_config(text))
        assert normalized == "[train]\nbatch_size = 4\nlr = 1e-3\n\n[inr]\nlayers = 2\n"
        # fixed point: a second pass changes nothing
        assert serialize_config(parse_config(normalized)) == normalized

    def test_shipped_configs_parse(self):
        for name in ("celeba64.cfg", "toy16.cfg"):
            cfg = parse_config((Path("configs") / name).read_text())
            cfg.validate()


class TestArtifacts:
    def test_gen_data_deterministic(self, tmp_path):
        for d in ("a", "b"):
            assert run_cli("gen-data", "--out", tmp_path / d, "--kind", "stripes",
                           "--n", 3, "--resolution", "8x8", "--seed", 7) == 0
        match, mismatch, errors = filecmp.cmpfiles(
            tmp_path / "a", tmp_path / "b",
            [p.name for p in (tmp_path / "a").iterdir()], shallow=False,
        )
        assert not mismatch and not errors

    def test_training_deterministic_across_runs(self, mini_run, tmp_path):
        assert run_cli("train-ivae", "--config", mini_run["config"], "--data", mini_run["data"],
                       "--out", tmp_path / "again", "--seed", 4) == 0
        assert (tmp_path / "again" / "ivae.ckpt").read_bytes() == mini_run["ivae"].read_bytes()
        assert (tmp_path / "again" / "trace_stage1.csv").exists()

    def test_sample_zero_is_ok_and_empty(self, mini_run, tmp_path):
        out = tmp_path / "s0"
        assert run_cli("sample", "--ckpt", mini_run["ldmi"], "--out", out, "--n", 0,
                       "--steps", 5, "--seed", 1) == 0
        assert not list(out.glob("*.ppm"))

    def test_sample_deterministic(self, mini_run, tmp_path):
        for d in ("x", "y"):
            assert run_cli("sample", "--ckpt", mini_run["ldmi"], "--out", tmp_path / d,
                           "--n", 2, "--steps", 5, "--eta", 0.0, "--seed", 9) == 0
        files = sorted(p.name for p in (tmp_path / "x").iterdir())
        assert files == ["manifest.txt", "sample_000.ppm", "sample_001.ppm"]
        for name in files:
            assert (tmp_path / "x" / name).read_bytes() == (tmp_path / "y" / name).read_bytes()

    def test_sample_rejects_ivae_stage(self, mini_run, tmp_path, capsys):
        code = run_cli("sample", "--ckpt", mini_run["ivae"], "--out", tmp_path / "s", "--n", 1)
        assert code == 1
        assert "stage" in capsys.readouterr().err

    def test_reconstruct_writes_psnr(self, mini_run, tmp_path):
        out = tmp_path / "rec"
        assert run_cli("reconstruct", "--ckpt", mini_run["ivae"], "--data", mini_run["data"],
                       "--out", out, "--scale", "1/2") == 0
        text = (out / "psnr.txt").read_text()
        assert text.startswith("mse=") and "psnr_db=" in text
        assert len(list(out.glob("recon_*.ppm"))) == 8
        img = tensorio.load_ppm(out / "recon_000.ppm")
        assert img.shape == (2, 2, 1)  # 4x4 at scale 1/2

    def test_inpaint_flow(self, mini_run, tmp_path):
        mask = np.zeros((4, 4), dtype=bool)
        mask[:, :2] = True
        mask_path = tmp_path / "mask.pgm"
        tensorio.save_mask(mask_path, mask)
        out = tmp_path / "inp"
        assert run_cli("inpaint", "--ckpt", mini_run["ivae"], "--data", mini_run["data"],
                       "--mask", mask_path, "--out", out, "--n", 2, "--seed", 3) == 0
        assert len(list(out.glob("inpaint_*.ppm"))) == 2
        assert (out / "scores.txt").read_text().count("observed_mse") == 2

    def test_hyper_transform_flow(self, mini_run, tmp_path):
        out = tmp_path / "ht"
        assert run_cli("hyper-transform", "--config", mini_run["config"], "--data", mini_run["data"],
                       "--ckpt", mini_run["ldmi"], "--out", out, "--seed", 6) == 0
        ht = pipeline.load_checkpoint(out / "hypertransformed.ckpt")
        ldmi = pipeline.load_checkpoint(mini_run["ldmi"])
        assert ht.stage == "hypertransformed"
        assert pipeline.hash_tensors(ht, "enc.") == pipeline.hash_tensors(ldmi, "enc.")
        assert pipeline.hash_tensors(ht, "eps.") == pipeline.hash_tensors(ldmi, "eps.")


class TestInspect:
    def test_checkpoint_report(self, mini_run, capsys):
        assert run_cli("inspect", "--ckpt", mini_run["ldmi"]) == 0
        out = capsys.readouterr().out
        assert "stage=ldmi" in out
        assert "hd_params=" in out and "inr_generated_weights=" in out
        assert "tensor enc.stem.weight" in out

    def test_paper_scale_accounting(self, capsys):
        assert run_cli("inspect", "--config", "configs/celeba64.cfg") == 0
        out = capsys.readouterr().out
        hd = int(out.split("hd_params=")[1].split()[0])
        inr = int(out.split("inr_generated_weights=")[1].split()[0])
        assert abs(hd - 8_060_000) / 8_060_000 < 0.02
        assert abs(inr - 330_000) / 330_000 < 0.02
