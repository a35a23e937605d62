import statistics

import pytest
import torch

from conceptgan.checkpoint import CheckpointError, CheckpointVersionError
from conceptgan.data import generate_toy
from conceptgan.loss import NonFiniteLossError
from conceptgan.train import (
    TrainConfig,
    fit,
    init_state,
    load_checkpoint,
    read_metrics,
    run_seed,
    save_checkpoint,
    train_step,
)

from conftest import toy_config


def small_config(tmp_path, **kw):
    base = dict(steps=40, eval_every=20, toy_train_count=256, toy_test_count=64,
                backbone_width=8, generator_width=16, disc_width=8)
    base.update(kw)
    return toy_config(tmp_path, **base)


def toy_batch(n=16, seed=0):
    ds = generate_toy(seed, n)
    return torch.from_numpy(ds.images), torch.from_numpy(ds.labels)


def snapshot(module):
    return [p.detach().clone() for p in module.parameters()]


def unchanged(before, module):
    return all(torch.equal(a, b) for a, b in zip(before, module.parameters()))


class TestTrainStep:
    def test_classification_only_leaves_gan_untouched(self, tmp_path):
        cfg = small_config(tmp_path, alpha=1.0, beta=0.0, gamma=0.0, delta=0.0)
        state = init_state(cfg, 0)
        g0, d0 = snapshot(state.model.generator), snapshot(state.model.discriminator)
        th0 = snapshot(state.model.classifier)
        train_step(state, *toy_batch(), cfg)
        assert unchanged(g0, state.model.generator)
        assert unchanged(d0, state.model.discriminator)
        assert not unchanged(th0, state.model.classifier)

    def test_adversarial_only_leaves_heads_untouched(self, tmp_path):
        cfg = small_config(tmp_path, alpha=0.0, beta=0.0, gamma=0.0, delta=1.0)
        state = init_state(cfg, 0)
        th0, t0 = snapshot(state.model.classifier), snapshot(state.model.aux_classifier)
        g0 = snapshot(state.model.generator)
        train_step(state, *toy_batch(), cfg)
        assert unchanged(th0, state.model.classifier)
        assert unchanged(t0, state.model.aux_classifier)
        assert not unchanged(g0, state.model.generator)

    def test_adversarial_gradient_reaches_generator_and_encoder(self, tmp_path):
        cfg = small_config(tmp_path, alpha=0.0, beta=0.0, gamma=0.0, delta=1.0)
        state = init_state(cfg, 0)
        train_step(state, *toy_batch(), cfg)
        n = state.grad_norms
        assert n["generator"] > 0
        assert n["discriminator"] > 0
        # through G into the concepts and the backbone
        assert n["concept_encoder"] > 0 and n["backbone"] > 0
        assert n["classifier"] == 0 and n["aux_classifier"] == 0

    def test_optimizers_partition_parameters(self, tmp_path):
        state = init_state(small_config(tmp_path), 0)
        main = {id(p) for g in state.opt_main.param_groups for p in g["params"]}
        disc = {id(p) for g in state.opt_disc.param_groups for p in g["params"]}
        assert not main & disc
        assert disc == {id(p) for p in state.model.discriminator.parameters()}
        assert main | disc == {id(p) for p in state.model.parameters()}

    def test_breakdown_identity(self, tmp_path):
        cfg = small_config(tmp_path, alpha=0.5, beta=2.0, gamma=3.0, delta=0.25)
        state = init_state(cfg, 0)
        v = train_step(state, *toy_batch(), cfg)
        expected = 0.5 * v["l_c"] + 2.0 * v["l_r"] + 3.0 * v["l_f"] + 0.25 * (v["l_d_real"] + v["l_d_fake"])
        assert v["total"] == pytest.approx(expected, rel=1e-6)
        assert state.step == 1

    def test_non_finite_aborts_with_term(self, tmp_path):
        cfg = small_config(tmp_path)
        state = init_state(cfg, 0)
        with torch.no_grad():
            state.model.classifier.bias.fill_(float("nan"))
        with pytest.raises(NonFiniteLossError, match="l_c"):
            train_step(state, *toy_batch(), cfg)

    def test_cgan_step(self, tmp_path):
        cfg = small_config(tmp_path, gan="cgan", noise="pcn")
        state = init_state(cfg, 0)
        v = train_step(state, *toy_batch(), cfg)
        assert all(torch.isfinite(torch.tensor(x)) for x in v.values())

    def test_partial_batch_of_one(self, tmp_path):
        cfg = small_config(tmp_path)
        state = init_state(cfg, 0)
        train_step(state, *toy_batch(1), cfg)


def test_descent_on_toy(trained_toy):
    *_, run_dir = trained_toy
    rows = read_metrics(run_dir / "metrics.csv")
    early = statistics.mean(r["total"] for r in rows[0:100])
    late = statistics.mean(r["total"] for r in rows[900:1000])
    assert late < early


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        cfg = small_config(tmp_path)
        state = init_state(cfg, 0)
        for i in range(3):
            train_step(state, *toy_batch(seed=i), cfg)
        save_checkpoint(state, tmp_path / "a.ckpt", cfg)
        loaded, cfg2 = load_checkpoint(tmp_path / "a.ckpt")
        assert cfg2 == cfg
        assert loaded.step == 3
        for a, b in zip(state.model.state_dict().values(), loaded.model.state_dict().values()):
            assert torch.equal(a, b)
        assert torch.equal(state.noise_rng.get_state(), loaded.noise_rng.get_state())
        for oa, ob in ((state.opt_main, loaded.opt_main), (state.opt_disc, loaded.opt_disc)):
            sa, sb = oa.state_dict()["state"], ob.state_dict()["state"]
            assert sa.keys() == sb.keys()
            for k in sa:
                for key in sa[k]:
                    assert torch.equal(torch.as_tensor(sa[k][key]), torch.as_tensor(sb[k][key]))

    def test_step_after_load_matches(self, tmp_path):
        cfg = small_config(tmp_path)
        state = init_state(cfg, 0)
        train_step(state, *toy_batch(seed=1), cfg)
        save_checkpoint(state, tmp_path / "b.ckpt", cfg)
        loaded, _ = load_checkpoint(tmp_path / "b.ckpt")
        va = train_step(state, *toy_batch(seed=2), cfg)
        vb = train_step(loaded, *toy_batch(seed=2), cfg)
        assert va == vb
        for a, b in zip(state.model.parameters(), loaded.model.parameters()):
            assert torch.equal(a, b)

    def test_tampered_version_byte(self, tmp_path):
        cfg = small_config(tmp_path)
        path = tmp_path / "c.ckpt"
        save_checkpoint(init_state(cfg, 0), path, cfg)
        raw = bytearray(path.read_bytes())
        raw[0] = 99
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointVersionError, match="version 99"):
            load_checkpoint(path)

    def test_corrupt_manifest(self, tmp_path):
        cfg = small_config(tmp_path)
        path = tmp_path / "d.ckpt"
        save_checkpoint(init_state(cfg, 0), path, cfg)
        raw = bytearray(path.read_bytes())
        raw[20] = ord("}")
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError):
            load_checkpoint(path)

    def test_corrupt_payload(self, tmp_path):
        cfg = small_config(tmp_path)
        path = tmp_path / "e.ckpt"
        save_checkpoint(init_state(cfg, 0), path, cfg)
        raw = bytearray(path.read_bytes())
        raw[-1] ^= 0xFF
        path.write_bytes(bytes(raw))
        with pytest.raises(CheckpointError, match="checksum"):
            load_checkpoint(path)

    def test_incompatible_config(self, tmp_path):
        cfg = small_config(tmp_path)
        path = tmp_path / "f.ckpt"
        save_checkpoint(init_state(cfg, 0), path, cfg)
        with pytest.raises(CheckpointError, match="does not match"):
            load_checkpoint(path, small_config(tmp_path, concepts=7))


class TestRuns:
    def test_same_seed_identical_csv(self, tmp_path):
        cfg = small_config(tmp_path, steps=25, eval_every=10)
        run_seed(cfg, 3, tmp_path / "a")
        run_seed(cfg, 3, tmp_path / "b")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() == (tmp_path / "b" / "metrics.csv").read_bytes()
        run_seed(cfg, 4, tmp_path / "c")
        assert (tmp_path / "a" / "metrics.csv").read_bytes() != (tmp_path / "c" / "metrics.csv").read_bytes()

    def test_resume_matches_continuous_run(self, tmp_path):
        # 256 samples / 32 = 8 steps per epoch; checkpoint at 20 is mid-epoch
        cfg = small_config(tmp_path, steps=40, eval_every=10, checkpoint_every=20)
        run_seed(cfg, 0, tmp_path / "full")
        run_seed(cfg, 0, tmp_path / "cut", stop_at=30)
        assert len(read_metrics(tmp_path / "cut" / "metrics.csv")) == 30
        run_seed(cfg, 0, tmp_path / "cut", resume_from=tmp_path / "cut" / "step_0000020.ckpt")
        full = (tmp_path / "full" / "metrics.csv").read_bytes()
        assert (tmp_path / "cut" / "metrics.csv").read_bytes() == full

    def test_fit_reports_each_seed_and_mean(self, tmp_path):
        cfg = small_config(tmp_path / "run", steps=10, eval_every=0, seeds=(1, 2, 3, 4, 5))
        report = fit(cfg)
        assert [r["seed"] for r in report.per_seed] == [1, 2, 3, 4, 5]
        mean = sum(r["accuracy"] for r in report.per_seed) / 5
        assert report.accuracy == pytest.approx(mean, abs=1e-12)
        text = (tmp_path / "run" / "report.txt").read_text()
        assert text.count("seed ") == 5 and "mean:" in text
        for s in (1, 2, 3, 4, 5):
            assert (tmp_path / "run" / f"seed_{s}" / "metrics.csv").exists()
            assert (tmp_path / "run" / f"seed_{s}" / "final.ckpt").exists()
        assert (tmp_path / "run" / "config.cfg").exists()

    def test_epoch_budget(self, tmp_path):
        cfg = small_config(tmp_path, steps=0, epochs=2, eval_every=0, toy_train_count=70)
        state, _ = run_seed(cfg, 0, tmp_path / "ep")
        assert state.step == 2 * 3  # 70 samples in batches of 32


@pytest.mark.parametrize("bad", [dict(batch_size=0), dict(seeds=()), dict(lr_main=0.0),
                                 dict(noise="uniform"), dict(steps=0, epochs=0)])
def test_config_validated(bad):
    with pytest.raises(ValueError):
        TrainConfig(**bad)


def test_cgan_outputs_depend_on_label(tmp_path):
    cfg = small_config(tmp_path, gan="cgan", steps=60, eval_every=0)
    state, _ = run_seed(cfg, 0, tmp_path / "cgan")
    model = state.model.eval()
    x, y = toy_batch(32, seed=5)
    perm = (y + 1) % 4
    with torch.no_grad():
        d = model.discriminate(x, y)
        d_perm = model.discriminate(x, perm)
        c = model.encode_concepts(model.encode_backbone(x))
        noise = torch.zeros(32, cfg.noise_size)
        g = model.generate(model.generator_input(c, noise, y))
        g_perm = model.generate(model.generator_input(c, noise, perm))
    assert (d - d_perm).abs().max() > 1e-4
    assert (g - g_perm).abs().max() > 1e-4
