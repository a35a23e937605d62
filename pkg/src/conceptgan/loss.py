"""Weighted four-part objective: classification, reconstruction, fidelity, adversarial."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F

EPS = 1e-7

BREAKDOWN_FIELDS = ("l_c", "l_r", "l_f", "l_d_real", "l_d_fake", "total")


class NonFiniteLossError(FloatingPointError):
    def __init__(self, term: str, value):
        super().__init__(f"non-finite loss term {term!r}: {value}")
        self.term = term


@dataclass(frozen=True)
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 1.0
    delta: float = 1.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"loss weight {k} must be finite and >= 0, got {v}")


@dataclass
class LossBreakdown:
    """Per-term losses as tensors (graph attached) plus their weighted total."""

    l_c: torch.Tensor
    l_r: torch.Tensor
    l_f: torch.Tensor
    l_d_real: torch.Tensor
    l_d_fake: torch.Tensor
    total: torch.Tensor

    def values(self) -> dict[str, float]:
        return {k: float(getattr(self, k).detach()) for k in BREAKDOWN_FIELDS}


def classification_loss(logits: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    if logits.dim() != 2 or labels.shape != logits.shape[:1]:
        raise ValueError(f"shape mismatch: logits {tuple(logits.shape)}, labels {tuple(labels.shape)}")
    if labels.numel() and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        raise ValueError(f"labels must lie in [0, {logits.shape[1]})")
    return F.cross_entropy(logits, labels)


def reconstruction_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    if x.shape != x_hat.shape:
        raise ValueError(f"shape mismatch: {tuple(x.shape)} vs {tuple(x_hat.shape)}")
    return F.mse_loss(x_hat, x)


def fidelity_loss(logits: torch.Tensor, aux_logits: torch.Tensor, space: str = "prob") -> torch.Tensor:
    """MSE between the two heads, on softmax outputs (default) or raw logits."""
    if logits.shape != aux_logits.shape:
        raise ValueError(f"shape mismatch: {tuple(logits.shape)} vs {tuple(aux_logits.shape)}")
    if space == "prob":
        return F.mse_loss(F.softmax(aux_logits, dim=1), F.softmax(logits, dim=1))
    if space == "logit":
        return F.mse_loss(aux_logits, logits)
    raise ValueError(f"unknown fidelity space {space!r}")


def _clamped(p: torch.Tensor, name: str) -> torch.Tensor:
    if not torch.isfinite(p).all() or (p < 0).any() or (p > 1).any():
        raise FloatingPointError(f"{name} scores must be finite probabilities")
    return p.clamp(EPS, 1 - EPS)


def gan_loss_terms(d_real: torch.Tensor, d_fake: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """Discriminator terms ``-mean log D(x)`` and ``-mean log(1 - D(G(.)))``."""
    d_real = _clamped(d_real, "d_real")
    d_fake = _clamped(d_fake, "d_fake")
    return -torch.log(d_real).mean(), -torch.log1p(-d_fake).mean()


def generator_adversarial_loss(d_fake: torch.Tensor, objective: str = "saturating") -> torch.Tensor:
    """What G minimises: ``mean log(1 - D(G))`` or the non-saturating ``-mean log D(G)``."""
    d_fake = _clamped(d_fake, "d_fake")
    if objective == "saturating":
        return torch.log1p(-d_fake).mean()
    if objective == "non_saturating":
        return -torch.log(d_fake).mean()
    raise ValueError(f"unknown generator objective {objective!r}")


def total_loss(weights: LossWeights, l_c, l_r, l_f, l_d_real, l_d_fake) -> LossBreakdown:
    terms = dict(l_c=l_c, l_r=l_r, l_f=l_f, l_d_real=l_d_real, l_d_fake=l_d_fake)
    for name, value in terms.items():
        v = torch.as_tensor(value)
        if not torch.isfinite(v).all():
            raise NonFiniteLossError(name, v.detach())
    w = weights
    total = w.alpha * l_c + w.beta * l_r + w.gamma * l_f + w.delta * (l_d_real + l_d_fake)
    return LossBreakdown(**{k: torch.as_tensor(v) for k, v in terms.items()}, total=torch.as_tensor(total))
