"""Joint training loop, per-seed runs, checkpointing and metrics logging."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import checkpoint as ckpt
from .data import Dataset, batches, channel_stats, load_dataset, num_batches
from .evaluation import MetricReport, aggregate_seeds, evaluate, write_report
from .loss import (
    BREAKDOWN_FIELDS,
    LossWeights,
    NonFiniteLossError,
    classification_loss,
    fidelity_loss,
    gan_loss_terms,
    generator_adversarial_loss,
    reconstruction_loss,
    total_loss,
)
from .model import COMPONENTS, ConceptGAN, ModelConfig, build_model
from .noise import METHODS, sample

log = logging.getLogger(__name__)

CSV_COLUMNS = ("step",) + BREAKDOWN_FIELDS + ("acc", "aux_acc")
CLASS_COUNTS = {"toy": 4, "cifar10": 10, "cifar100": 100}
IMAGE_SIZES = {"toy": 16, "cifar10": 32, "cifar100": 32}


@dataclass
class TrainConfig:
    dataset: str = "toy"
    data_root: str = ""
    gan: str = "vanilla"
    disc: str = "vgg8"
    concepts: int = 10
    noise: str = "dan"
    noise_size: int = 10
    batch_size: int = 32
    steps: int = 2000
    epochs: int = 0
    lr_main: float = 2e-4
    lr_disc: float = 2e-4
    adam_beta1: float = 0.0
    adam_beta2: float = 0.999
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0
    generator_objective: str = "saturating"
    fidelity_space: str = "prob"
    normalization: str = "unit_interval"
    seeds: tuple = (0,)
    checkpoint_every: int = 0
    eval_every: int = 500
    out: str = "runs/default"
    backbone_width: int = 16
    backbone_blocks: int = 1
    generator_width: int = 64
    disc_width: int = 16
    train_subset: int = 0
    test_subset: int = 0
    toy_seed: int = 0
    toy_train_count: int = 4096
    toy_test_count: int = 1024

    def __post_init__(self):
        self.seeds = tuple(int(s) for s in self.seeds)
        if self.dataset not in CLASS_COUNTS:
            raise ValueError(f"unknown dataset {self.dataset!r}")
        if self.gan not in ("vanilla", "cgan"):
            raise ValueError(f"unknown gan variant {self.gan!r}")
        if self.noise not in METHODS:
            raise ValueError(f"unknown noise method {self.noise!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not self.seeds:
            raise ValueError("at least one seed is required")
        if self.lr_main <= 0 or self.lr_disc <= 0:
            raise ValueError("learning rates must be > 0")
        if self.steps < 0 or self.epochs < 0 or (self.steps == 0 and self.epochs == 0):
            raise ValueError("set steps or epochs to a positive value")
        if self.generator_objective not in ("saturating", "non_saturating"):
            raise ValueError(f"unknown generator objective {self.generator_objective!r}")
        if self.fidelity_space not in ("prob", "logit"):
            raise ValueError(f"unknown fidelity space {self.fidelity_space!r}")
        if self.normalization not in ("unit_interval", "standardized"):
            raise ValueError(f"unknown normalization {self.normalization!r}")
        self.weights  # validates

    @property
    def weights(self) -> LossWeights:
        return LossWeights(self.alpha, self.beta, self.gamma, self.delta)

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            variant="cgan" if self.gan == "cgan" else "vanilla_gan",
            discriminator_depth=self.disc,
            concept_count=self.concepts,
            noise_size=self.noise_size,
            class_count=CLASS_COUNTS[self.dataset],
            image_size=IMAGE_SIZES[self.dataset],
            backbone_width=self.backbone_width,
            backbone_blocks=self.backbone_blocks,
            generator_width=self.generator_width,
            discriminator_width=self.disc_width,
        )

    def to_dict(self) -> dict:
        d = asdict(self)
        d["seeds"] = list(self.seeds)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class TrainState:
    model: ConceptGAN
    opt_main: torch.optim.Optimizer
    opt_disc: torch.optim.Optimizer
    noise_rng: torch.Generator
    seed: int = 0
    step: int = 0
    best: dict = field(default_factory=lambda: {"accuracy": -1.0, "step": -1})
    grad_norms: dict = field(default_factory=dict)


def _new_state(mc: ModelConfig, seed: int, config: TrainConfig, dtype=torch.float32) -> TrainState:
    model = build_model(mc, seed, dtype)
    betas = (config.adam_beta1, config.adam_beta2)
    opt_main = torch.optim.Adam(model.main_parameters(), lr=config.lr_main, betas=betas)
    opt_disc = torch.optim.Adam(model.discriminator_parameters(), lr=config.lr_disc, betas=betas)
    main_ids = {id(p) for g in opt_main.param_groups for p in g["params"]}
    disc_ids = {id(p) for g in opt_disc.param_groups for p in g["params"]}
    assert not main_ids & disc_ids, "optimizer parameter sets overlap"
    assert len(main_ids) + len(disc_ids) == len(list(model.parameters()))
    # noise stream is seeded apart from init so resuming only needs this state
    noise_rng = torch.Generator().manual_seed(seed * 7919 + 17)
    return TrainState(model, opt_main, opt_disc, noise_rng, seed)


def init_state(config: TrainConfig, seed: int, train_ds: Optional[Dataset] = None,
               dtype=torch.float32) -> TrainState:
    state = _new_state(config.model_config(), seed, config, dtype)
    if config.normalization == "standardized" and train_ds is not None:
        mean, std = channel_stats(train_ds)
        bb = state.model.backbone
        bb.input_mean.copy_(torch.from_numpy(mean).view(1, 3, 1, 1))
        bb.input_std.copy_(torch.from_numpy(std).view(1, 3, 1, 1))
    return state


def compute_losses(model: ConceptGAN, x, y, noise, config: TrainConfig):
    """Forward pass and every loss term.

    Returns ``(breakdown, main_objective, disc_objective)``. The generated
    images go to the discriminator without detaching, so the adversarial
    term of the main objective back-propagates through D into G and on into
    the concept encoder and backbone.
    """
    w = config.weights
    out = model.full_forward(x, noise, y)
    cond = y if model.config.conditional else None
    d_real = model.discriminate(x, cond)
    d_fake = model.discriminate(out.reconstruction, cond)
    l_c = classification_loss(out.logits, y)
    l_r = reconstruction_loss(x, out.reconstruction)
    l_f = fidelity_loss(out.logits, out.aux_logits, config.fidelity_space)
    l_d_real, l_d_fake = gan_loss_terms(d_real, d_fake)
    breakdown = total_loss(w, l_c, l_r, l_f, l_d_real, l_d_fake)
    g_adv = generator_adversarial_loss(d_fake, config.generator_objective)
    main_obj = w.alpha * l_c + w.beta * l_r + w.gamma * l_f + w.delta * g_adv
    disc_obj = w.delta * (l_d_real + l_d_fake)
    return breakdown, main_obj, disc_obj


def train_step(state: TrainState, x: torch.Tensor, y: torch.Tensor, config: TrainConfig) -> dict:
    """One joint iteration; returns the loss breakdown as floats."""
    model = state.model
    model.train()
    noise = sample(config.noise, x.shape[0], config.noise_size, state.noise_rng, x.dtype)
    breakdown, main_obj, disc_obj = compute_losses(model, x, y, noise, config)
    for name, t in (("main_objective", main_obj), ("disc_objective", disc_obj)):
        if not torch.isfinite(t):
            raise NonFiniteLossError(name, float(t))

    main_params = model.main_parameters()
    disc_params = model.discriminator_parameters()
    g_main = torch.autograd.grad(main_obj, main_params, retain_graph=True, allow_unused=True)
    g_disc = torch.autograd.grad(disc_obj, disc_params, allow_unused=True)
    for p, g in zip(main_params, g_main):
        p.grad = g
    for p, g in zip(disc_params, g_disc):
        p.grad = g
    state.grad_norms = _grad_norms(model)
    state.opt_disc.step()
    state.opt_main.step()
    state.opt_main.zero_grad(set_to_none=True)
    state.opt_disc.zero_grad(set_to_none=True)
    state.step += 1
    return breakdown.values()


def _grad_norms(model: ConceptGAN) -> dict[str, float]:
    norms = {}
    for name in COMPONENTS:
        sq = sum(float(p.grad.detach().double().pow(2).sum())
                 for p in getattr(model, name).parameters() if p.grad is not None)
        norms[name] = sq ** 0.5
    return norms


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _optimizer_tensors(opt: torch.optim.Optimizer) -> dict[str, torch.Tensor]:
    out = {}
    for idx, st in opt.state_dict()["state"].items():
        for key, value in st.items():
            out[f"{idx}.{key}"] = torch.as_tensor(value)
    return out


def _load_optimizer(opt: torch.optim.Optimizer, tensors: dict[str, torch.Tensor]) -> None:
    sd = opt.state_dict()
    state: dict[int, dict] = {}
    for name, t in tensors.items():
        idx, key = name.split(".", 1)
        state.setdefault(int(idx), {})[key] = t
    sd["state"] = state
    opt.load_state_dict(sd)


def save_checkpoint(state: TrainState, path, config: Optional[TrainConfig] = None) -> None:
    tensors = {name: dict(getattr(state.model, name).state_dict()) for name in COMPONENTS}
    tensors["optim.main"] = _optimizer_tensors(state.opt_main)
    tensors["optim.disc"] = _optimizer_tensors(state.opt_disc)
    tensors["rng"] = {"noise": state.noise_rng.get_state()}
    mc = state.model.config
    meta = {
        "model_config": asdict(mc),
        "fingerprint": mc.fingerprint(),
        "train_config": config.to_dict() if config is not None else None,
        "seed": state.seed,
        "step": state.step,
        "best": state.best,
        "dtype": str(next(state.model.parameters()).dtype).replace("torch.", ""),
    }
    ckpt.save_bundle(path, tensors, meta)


def load_checkpoint(path, config: Optional[TrainConfig] = None) -> tuple[TrainState, Optional[TrainConfig]]:
    """Restore a :class:`TrainState`; ``config`` overrides the stored training config."""
    tensors, meta = ckpt.load_bundle(path)
    try:
        mc = ModelConfig(**meta["model_config"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ckpt.CheckpointError(f"{path}: bad model config ({exc})") from exc
    if mc.fingerprint() != meta.get("fingerprint"):
        raise ckpt.CheckpointError(f"{path}: model config fingerprint mismatch")
    if config is None and meta.get("train_config"):
        config = TrainConfig.from_dict(meta["train_config"])
    if config is not None and config.model_config() != mc:
        raise ckpt.CheckpointError(f"{path}: checkpoint model config does not match the run config")
    dtype = getattr(torch, meta.get("dtype", "float32"))
    state = _new_state(mc, meta["seed"], config or TrainConfig(), dtype)
    for name in COMPONENTS:
        try:
            getattr(state.model, name).load_state_dict(tensors[name])
        except (KeyError, RuntimeError) as exc:
            raise ckpt.CheckpointError(f"{path}: component {name} incompatible ({exc})") from exc
    _load_optimizer(state.opt_main, tensors.get("optim.main", {}))
    _load_optimizer(state.opt_disc, tensors.get("optim.disc", {}))
    state.noise_rng.set_state(tensors["rng"]["noise"])
    state.step = int(meta["step"])
    state.best = dict(meta.get("best") or state.best)
    return state, config


# ---------------------------------------------------------------------------
# Runs
# ---------------------------------------------------------------------------


def datasets_for(config: TrainConfig) -> tuple[Dataset, Dataset]:
    root = config.data_root or None
    if config.dataset == "toy":
        train = load_dataset("toy", "train", toy_seed=config.toy_seed, toy_count=config.toy_train_count)
        # distinct stream for the held-out split
        test = load_dataset("toy", "test", toy_seed=config.toy_seed + 1_000_003, toy_count=config.toy_test_count)
    else:
        train = load_dataset(config.dataset, "train", root)
        test = load_dataset(config.dataset, "test", root)
    if config.train_subset:
        train = train.subset(config.train_subset)
    if config.test_subset:
        test = test.subset(config.test_subset)
    return train, test


def total_steps(config: TrainConfig, train_size: int) -> int:
    if config.steps:
        return config.steps
    return config.epochs * num_batches(train_size, config.batch_size)


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def _write_rows(fh, rows):
    w = csv.writer(fh)
    for r in rows:
        w.writerow([r["step"]] + [_fmt(r.get(k)) for k in CSV_COLUMNS[1:]])


def run_seed(config: TrainConfig, seed: int, out_dir, data: Optional[tuple[Dataset, Dataset]] = None,
             resume_from=None, stop_at: Optional[int] = None) -> tuple[TrainState, MetricReport]:
    """Train one seed, writing ``metrics.csv`` and checkpoints into ``out_dir``.

    ``stop_at`` halts early (after that many total steps) without the final
    evaluation; it exists to produce interrupted runs for resume checks.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    train_ds, test_ds = data or datasets_for(config)
    dtype = torch.float32
    if resume_from is not None:
        state, _ = load_checkpoint(resume_from, config)
        rows = _read_rows(out_dir / "metrics.csv", before=state.step)
    else:
        state = init_state(config, seed, train_ds, dtype)
        rows = []
    n_steps = total_steps(config, len(train_ds))
    last = n_steps if stop_at is None else min(stop_at, n_steps)
    spe = num_batches(len(train_ds), config.batch_size)

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        csv.writer(fh).writerow(CSV_COLUMNS)
        _write_rows(fh, rows)
        while state.step < last:
            epoch, offset = divmod(state.step, spe)
            for xb, yb in batches(train_ds, config.batch_size, [seed, epoch], start=offset):
                x = torch.from_numpy(xb).to(dtype)
                y = torch.from_numpy(yb)
                try:
                    values = train_step(state, x, y, config)
                except NonFiniteLossError:
                    log.error("seed %d step %d: non-finite loss, aborting", seed, state.step)
                    raise
                row = {"step": state.step - 1, **values}
                if config.eval_every and state.step % config.eval_every == 0 or state.step == n_steps:
                    rep = evaluate(state.model, test_ds)
                    row.update(acc=rep.accuracy, aux_acc=rep.aux_accuracy)
                    if rep.accuracy > state.best["accuracy"]:
                        state.best = {"accuracy": rep.accuracy, "step": state.step}
                    log.info("seed %d step %d: acc %.2f aux %.2f total %.4f",
                             seed, state.step, rep.accuracy, rep.aux_accuracy, values["total"])
                _write_rows(fh, [row])
                if config.checkpoint_every and state.step % config.checkpoint_every == 0:
                    fh.flush()
                    save_checkpoint(state, out_dir / f"step_{state.step:07d}.ckpt", config)
                if state.step >= last:
                    break

    if state.step < n_steps:
        save_checkpoint(state, out_dir / "last.ckpt", config)
        return state, None
    save_checkpoint(state, out_dir / "final.ckpt", config)
    report = evaluate(state.model, test_ds)
    write_report(aggregate_seeds([report], [seed]), out_dir)
    return state, report


def _read_rows(path: Path, before: int) -> list[dict]:
    if not path.exists():
        return []
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            if int(rec["step"]) < before:
                rows.append({k: (int(v) if k == "step" else (float(v) if v else None)) for k, v in rec.items()})
    return rows


def read_metrics(path) -> list[dict]:
    return _read_rows(Path(path), before=2**62)


def fit(config: TrainConfig) -> MetricReport:
    """One run per seed under ``config.out``, then the seed-averaged report."""
    from .config import dump_config

    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.cfg").write_text(dump_config(config))
    data = datasets_for(config)
    reports = []
    for seed in config.seeds:
        _, rep = run_seed(config, seed, out / f"seed_{seed}", data)
        reports.append(rep)
    final = aggregate_seeds(reports, config.seeds)
    write_report(final, out)
    return final
