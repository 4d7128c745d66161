import math

import pytest
import torch

from diffpaint import training
from diffpaint.training import (
    FINAL_CHECKPOINT,
    LOG_NAME,
    Checkpoint,
    TrainConfig,
    Trainer,
    gated_confidence,
    load_checkpoint,
    manifest_hash,
    manifest_text,
    save_checkpoint,
    step_seed,
)
from reference import read_log

TINY = dict(total_steps=4, pretrain_steps=2, batch_size=2, width=16, enc_layers=1, dec_layers=1, critic_base=8, checkpoint_every=2)


class TestTrainConfig:
    def test_defaults_are_desk_preset(self):
        cfg = TrainConfig()
        assert cfg.patch_size == 32
        assert cfg.max_strokes == 8
        assert cfg.batch_size == 16
        assert (cfg.total_steps, cfg.pretrain_steps) == (2000, 1000)
        assert (cfg.lr, cfg.weight_decay) == (1e-4, 1e-2)
        assert (cfg.lambda_p, cfg.lambda_w, cfg.lambda_c, cfg.lambda_dis) == (8.0, 10.0, 0.1, 10.0)
        assert cfg.n_critic == 5
        assert cfg.width == 64

    def test_paper_scale(self):
        cfg = TrainConfig.paper_scale()
        assert cfg.batch_size == 64
        assert (cfg.total_steps, cfg.pretrain_steps) == (100_000, 50_000)
        assert cfg.width == 128

    @pytest.mark.parametrize(
        "bad",
        [
            dict(patch_size=30),
            dict(pretrain_steps=10, total_steps=5),
            dict(lambda_w=-1.0),
            dict(batch_size=0),
            dict(n_critic=0),
        ],
    )
    def test_validation(self, bad):
        with pytest.raises(ValueError):
            TrainConfig(**bad)

    def test_file_round_trip(self, tmp_path):
        cfg = TrainConfig(seed=7, no_coord=True, lambda_c=0.25, **TINY)
        path = tmp_path / "config.txt"
        cfg.save(path)
        assert TrainConfig.from_file(path) == cfg

    def test_overrides_win(self, tmp_path):
        cfg = TrainConfig(seed=7, **TINY)
        path = tmp_path / "config.txt"
        cfg.save(path)
        loaded = TrainConfig.from_file(path, seed=99, no_differential=True)
        assert loaded.seed == 99 and loaded.no_differential

    def test_bad_files(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("not_a_key = 3\n")
        with pytest.raises(ValueError, match="unknown config key"):
            TrainConfig.from_file(path)
        path.write_text("seed 3\n")
        with pytest.raises(ValueError, match="expected"):
            TrainConfig.from_file(path)
        path.write_text("no_coord = maybe\n")
        with pytest.raises(ValueError, match="bad boolean"):
            TrainConfig.from_file(path)

    def test_comments_and_blanks_ignored(self, tmp_path):
        path = tmp_path / "config.txt"
        path.write_text("# a comment\n\nseed = 5  # trailing\n")
        assert TrainConfig.from_file(path).seed == 5


class TestStepSeed:
    def test_deterministic(self):
        assert step_seed(0, 10) == step_seed(0, 10)

    def test_distinct_across_steps_and_runs(self):
        seeds = {step_seed(0, i) for i in range(100)}
        assert len(seeds) == 100
        assert step_seed(0, 5) != step_seed(1, 5)


class TestGatedConfidence:
    def test_forward_is_hard(self):
        logits = torch.tensor([-2.0, -1e-6, 0.0, 1e-6, 3.0])
        out = gated_confidence(logits)
        assert out.tolist() == [0.0, 0.0, 1.0, 1.0, 1.0]

    def test_backward_is_sigmoid_derivative(self):
        logits = torch.tensor([0.3, -1.2], requires_grad=True)
        gated_confidence(logits).sum().backward()
        want = torch.sigmoid(logits.detach()) * (1 - torch.sigmoid(logits.detach()))
        assert torch.allclose(logits.grad, want, atol=1e-7)


class TestCheckpoints:
    def test_save_load_round_trip(self, tmp_path):
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, tmp_path / "run")
        path = tmp_path / "ck.pt"
        save_checkpoint(path, trainer.painter, trainer.critic, cfg, step=3)
        ck = load_checkpoint(path)
        assert isinstance(ck, Checkpoint)
        assert ck.step == 3
        assert ck.manifest["width"] == cfg.width
        for k, v in trainer.painter.state_dict().items():
            assert torch.equal(ck.painter.state_dict()[k], v)
        assert ck.critic is not None

    def test_manifest_mismatch_rejected(self, tmp_path):
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, tmp_path / "run")
        path = tmp_path / "ck.pt"
        save_checkpoint(path, trainer.painter, trainer.critic, cfg, step=0)
        with pytest.raises(ValueError, match="manifest mismatch"):
            load_checkpoint(path, expect={"width": 999})

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nope.pt")

    def test_manifest_hash_stable(self):
        cfg = TrainConfig(**TINY)
        assert manifest_hash(manifest_text(cfg)) == manifest_hash(manifest_text(cfg))
        other = TrainConfig(**{**TINY, "width": 32})
        assert manifest_hash(manifest_text(cfg)) != manifest_hash(manifest_text(other))


class TestTrainingLoop:
    def test_ten_step_bit_reproducibility(self, tmp_path):
        cfg = TrainConfig(seed=3, total_steps=10, pretrain_steps=5, batch_size=2, width=16, enc_layers=1, dec_layers=1, critic_base=8)
        Trainer(cfg, tmp_path / "a").train()
        Trainer(cfg, tmp_path / "b").train()
        log_a = (tmp_path / "a" / LOG_NAME).read_text()
        log_b = (tmp_path / "b" / LOG_NAME).read_text()
        assert log_a == log_b

    def test_phase_boundary_gamma(self, tmp_path):
        cfg = TrainConfig(seed=1, **TINY)
        Trainer(cfg, tmp_path / "run").train()
        log = read_log(tmp_path / "run" / LOG_NAME)
        assert log["gamma"][0] == 0.0 and log["gamma"][1] == 0.0
        assert log["adv_critic"][0] == 0.0
        assert log["adv_critic"][2] != 0.0  # adversarial phase active

    def test_no_discriminator_zeroes_adv_fields(self, tmp_path):
        cfg = TrainConfig(seed=1, no_discriminator=True, **TINY)
        trainer = Trainer(cfg, tmp_path / "run")
        assert trainer.critic is None
        trainer.train()
        log = read_log(tmp_path / "run" / LOG_NAME)
        assert all(v == 0.0 for v in log["adv_critic"])
        assert all(v == 0.0 for v in log["adv_generator"])
        assert all(v == 0.0 for v in log["gamma"])
        ck = load_checkpoint(tmp_path / "run" / FINAL_CHECKPOINT)
        assert ck.critic is None

    def test_no_conf_reg_zeroes_term(self, tmp_path):
        cfg = TrainConfig(seed=1, no_conf_reg=True, **TINY)
        Trainer(cfg, tmp_path / "run").train()
        log = read_log(tmp_path / "run" / LOG_NAME)
        assert all(v == 0.0 for v in log["confidence_reg"])

    def test_adversarial_step_updates_both_networks(self, tmp_path):
        cfg = TrainConfig(seed=2, **TINY)
        trainer = Trainer(cfg, tmp_path / "run")
        p_before = torch.cat([p.flatten() for p in trainer.painter.parameters()]).clone()
        c_before = torch.cat([p.flatten() for p in trainer.critic.parameters()]).clone()
        batch, gen = trainer.synthesize(0)
        report = trainer.critic_generator_step(batch, gen)
        p_after = torch.cat([p.flatten() for p in trainer.painter.parameters()])
        c_after = torch.cat([p.flatten() for p in trainer.critic.parameters()])
        assert not torch.equal(p_before, p_after)
        assert not torch.equal(c_before, c_after)
        assert report.finite()

    def test_pretrain_step_leaves_critic_untouched(self, tmp_path):
        cfg = TrainConfig(seed=2, **TINY)
        trainer = Trainer(cfg, tmp_path / "run")
        c_before = torch.cat([p.flatten() for p in trainer.critic.parameters()]).clone()
        batch, _ = trainer.synthesize(0)
        trainer.painter_step(batch)
        c_after = torch.cat([p.flatten() for p in trainer.critic.parameters()])
        assert torch.equal(c_before, c_after)

    def test_checkpoint_cadence_and_retention(self, tmp_path):
        cfg = TrainConfig(seed=1, total_steps=6, pretrain_steps=6, batch_size=2, width=16, enc_layers=1, dec_layers=1, critic_base=8, checkpoint_every=2, no_discriminator=True)
        Trainer(cfg, tmp_path / "run").train()
        numbered = sorted((tmp_path / "run").glob("checkpoint_0*.pt"))
        assert [p.name for p in numbered] == ["checkpoint_000004.pt", "checkpoint_000006.pt"]
        assert (tmp_path / "run" / FINAL_CHECKPOINT).exists()

    def test_non_finite_loss_aborts_with_batch_seed(self, tmp_path, monkeypatch):
        cfg = TrainConfig(seed=1, **TINY)
        trainer = Trainer(cfg, tmp_path / "run")

        def poisoned(target, rendered, weight):
            return (rendered * 0).sum() + float("nan")

        monkeypatch.setattr(training, "pixel_loss", poisoned)
        with pytest.raises(RuntimeError, match="batch seed"):
            trainer.train()
        log_text = (tmp_path / "run" / LOG_NAME).read_text()
        assert "# aborted" in log_text
        assert str(step_seed(cfg.seed, 0)) in log_text

    def test_config_written_to_run_dir(self, tmp_path):
        cfg = TrainConfig(seed=4, **TINY)
        Trainer(cfg, tmp_path / "run").train()
        assert TrainConfig.from_file(tmp_path / "run" / "config.txt") == cfg
