import statistics

import numpy as np
import pytest
import torch

from conftest import GRAD_TOY_CONFIG
from hyperfield import pipeline, tensorio
from hyperfield.config import parse_config
from hyperfield.errors import FormatError, StageError
from hyperfield.rng import torch_generator


@pytest.fixture(scope="module")
def mini_dataset():
    return tensorio.make_synthetic_dataset("gaussians", 8, (4, 4), seed=2)


@pytest.fixture(scope="module")
def mini_cfg():
    return parse_config(GRAD_TOY_CONFIG.replace("iterations = 10", "iterations = 30"))


@pytest.fixture(scope="module")
def mini_ckpt(mini_dataset, mini_cfg):
    ckpt, trace = pipeline.train_stage1(mini_dataset, mini_cfg, seed=5)
    return ckpt


class TestCheckpointArchive:
    def test_roundtrip_identity(self, tmp_path, mini_ckpt):
        path = tmp_path / "a.ckpt"
        pipeline.save_checkpoint(path, mini_ckpt)
        back = pipeline.load_checkpoint(path)
        assert back.stage == mini_ckpt.stage
        assert back.config_text == mini_ckpt.config_text
        assert set(back.tensors) == set(mini_ckpt.tensors)
        for name in mini_ckpt.tensors:
            assert back.tensors[name].tobytes() == mini_ckpt.tensors[name].tobytes()
            assert back.tensors[name].dtype == mini_ckpt.tensors[name].dtype

    def test_save_load_save_is_byte_stable(self, tmp_path, mini_ckpt):
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        pipeline.save_checkpoint(p1, mini_ckpt)
        pipeline.save_checkpoint(p2, pipeline.load_checkpoint(p1))
        assert p1.read_bytes() == p2.read_bytes()

    def test_missing_tensor_rejected(self, tmp_path, mini_ckpt):
        crippled = pipeline.Checkpoint(
            stage=mini_ckpt.stage,
            tensors={k: v for k, v in mini_ckpt.tensors.items() if k != "inr.template.W1"},
            config_text=mini_ckpt.config_text,
        )
        path = tmp_path / "bad.ckpt"
        pipeline.save_checkpoint(path, crippled)
        with pytest.raises(FormatError) as exc:
            pipeline.load_checkpoint(path)
        assert exc.value.code == "incomplete-checkpoint"

    def test_stage_tag_preserved(self, tmp_path, mini_ckpt):
        path = tmp_path / "a.ckpt"
        pipeline.save_checkpoint(path, mini_ckpt)
        assert pipeline.load_checkpoint(path).stage == "ivae"

    def test_expected_names_cover_groups(self, mini_ckpt):
        names = set(mini_ckpt.tensors)
        assert any(n.startswith("enc.") for n in names)
        assert any(n.startswith("hd.") for n in names)
        assert "inr.template.W1" in names and "inr.bias.b1" in names
        assert not any(n.startswith("eps.") for n in names)  # ivae stage has no denoiser


class TestStage1:
    def test_deterministic_given_seed(self, mini_dataset, mini_cfg):
        a, _ = pipeline.train_stage1(mini_dataset, mini_cfg, seed=9)
        b, _ = pipeline.train_stage1(mini_dataset, mini_cfg, seed=9)
        assert set(a.tensors) == set(b.tensors)
        for name in a.tensors:
            assert a.tensors[name].tobytes() == b.tensors[name].tobytes(), name

    def test_seed_changes_result(self, mini_dataset, mini_cfg):
        a, _ = pipeline.train_stage1(mini_dataset, mini_cfg, seed=9)
        b, _ = pipeline.train_stage1(mini_dataset, mini_cfg, seed=10)
        assert any(
            a.tensors[n].tobytes() != b.tensors[n].tobytes() for n in a.tensors
        )

    def test_zero_lr_leaves_parameters_at_init(self, mini_dataset, mini_cfg):
        cfg0 = parse_config(GRAD_TOY_CONFIG.replace("lr = 1e-3", "lr = 0.0"))
        ckpt, trace = pipeline.train_stage1(mini_dataset, cfg0, seed=4)
        init = pipeline.state_tensors(pipeline.build_models(cfg0, 4), include_eps=False)
        for name in ckpt.tensors:
            assert ckpt.tensors[name].tobytes() == init[name].tobytes(), name

    def test_trace_format(self, mini_dataset, mini_cfg, mini_ckpt):
        _, trace = pipeline.train_stage1(mini_dataset, mini_cfg, seed=5)
        assert len(trace) == 30
        step, loss, kl, recon = trace[0]
        assert step == 0 and np.isfinite([loss, kl, recon]).all()
        assert all(row[2] >= 0 for row in trace)  # kl nonnegative

    def test_dataset_mismatch_rejected(self, mini_cfg):
        bad = tensorio.make_synthetic_dataset("gaussians", 4, (8, 8), seed=1)
        with pytest.raises(Exception) as exc:
            pipeline.train_stage1(bad, mini_cfg, seed=0)
        assert getattr(exc.value, "code", "") == "resolution-mismatch"


class TestStage2:
    def test_requires_ivae_stage(self, mini_dataset, mini_cfg, mini_ckpt):
        tc = mini_cfg.train()
        ldmi, _ = pipeline.train_stage2(mini_dataset, mini_ckpt, tc, seed=6)
        with pytest.raises(StageError):
            pipeline.train_stage2(mini_dataset, ldmi, tc, seed=6)

    def test_freeze_contract_and_new_tensors(self, mini_dataset, mini_cfg, mini_ckpt):
        tc = mini_cfg.train()
        ldmi, trace = pipeline.train_stage2(mini_dataset, mini_ckpt, tc, seed=6)
        assert ldmi.stage == "ldmi"
        for prefix in ("enc.", "hd.", "inr."):
            assert pipeline.hash_tensors(ldmi, prefix) == pipeline.hash_tensors(mini_ckpt, prefix)
        assert any(n.startswith("eps.") for n in ldmi.tensors)
        assert len(trace) == tc.iterations

    def test_timesteps_uniform_over_deciles(self):
        gen = torch_generator(3, "train")
        T, n = 1000, 100_000
        t = pipeline.sample_timesteps(T, n, gen)
        assert t.min() >= 1 and t.max() <= T
        counts = torch.bincount((t - 1) // (T // 10), minlength=10).float()
        p = 0.1
        se = (n * p * (1 - p)) ** 0.5
        assert ((counts - n * p).abs() <= 3 * se).all()


@pytest.fixture(scope="module")
def ldmi_ckpt(mini_dataset, mini_cfg, mini_ckpt):
    tc = mini_cfg.train()
    ckpt, _ = pipeline.train_stage2(mini_dataset, mini_ckpt, tc, seed=6)
    return ckpt


class TestHyperTransform:
    def test_requires_ldmi_stage(self, mini_dataset, mini_cfg, mini_ckpt):
        with pytest.raises(StageError):
            pipeline.hyper_transform(mini_dataset, mini_ckpt, mini_cfg.train(), seed=7)

    def test_freeze_and_retrain_contract(self, mini_dataset, mini_cfg, ldmi_ckpt):
        ht, trace = pipeline.hyper_transform(mini_dataset, ldmi_ckpt, mini_cfg.train(), seed=7)
        assert ht.stage == "hypertransformed"
        assert pipeline.hash_tensors(ht, "enc.") == pipeline.hash_tensors(ldmi_ckpt, "enc.")
        assert pipeline.hash_tensors(ht, "eps.") == pipeline.hash_tensors(ldmi_ckpt, "eps.")
        assert pipeline.hash_tensors(ht, "hd.") != pipeline.hash_tensors(ldmi_ckpt, "hd.")

    def test_deterministic(self, mini_dataset, mini_cfg, ldmi_ckpt):
        a, _ = pipeline.hyper_transform(mini_dataset, ldmi_ckpt, mini_cfg.train(), seed=8)
        b, _ = pipeline.hyper_transform(mini_dataset, ldmi_ckpt, mini_cfg.train(), seed=8)
        for name in a.tensors:
            assert a.tensors[name].tobytes() == b.tensors[name].tobytes()


class TestTrainedToy:
    """Reference-run oracles on the shared trained toy model."""

    def test_stage1_loss_halves(self, trained_toy):
        trace = trained_toy["traces"]["stage1"]
        start = statistics.fmean(r[1] for r in trace[:50])
        end = statistics.fmean(r[1] for r in trace[-50:])
        assert end < 0.5 * start

    def test_stage2_loss_halves(self, trained_toy):
        trace = trained_toy["traces"]["stage2"]
        start = statistics.fmean(r[1] for r in trace[:50])
        end = statistics.fmean(r[1] for r in trace[-50:])
        assert end < 0.5 * start

    def test_hyper_transform_nll_halves(self, trained_toy):
        trace = trained_toy["traces"]["ht"]
        start = statistics.fmean(r[1] for r in trace[:50])
        end = statistics.fmean(r[1] for r in trace[-50:])
        assert end < 0.5 * start

    def test_stage_tags(self, trained_toy):
        assert trained_toy["ckpts"]["ivae"].stage == "ivae"
        assert trained_toy["ckpts"]["ldmi"].stage == "ldmi"
        assert trained_toy["ckpts"]["ht"].stage == "hypertransformed"
