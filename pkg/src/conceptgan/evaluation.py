"""Accuracy metrics, seed aggregation and top-k concept exemplars."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .data import Dataset


@dataclass
class MetricReport:
    accuracy: float  # percent
    aux_accuracy: float  # percent
    sample_count: int
    per_seed: list[dict] = field(default_factory=list)

    def __post_init__(self):
        for name in ("accuracy", "aux_accuracy"):
            v = getattr(self, name)
            if not 0.0 <= v <= 100.0:
                raise ValueError(f"{name} must be a percentage, got {v}")

    def as_row(self) -> dict:
        return {"accuracy": self.accuracy, "aux_accuracy": self.aux_accuracy, "sample_count": self.sample_count}


@torch.no_grad()
def predict_all(model, ds: Dataset, batch_size: int = 256):
    """Theta logits, T logits and concept scores for every sample of ``ds`` (eval mode)."""
    was_training = model.training
    model.eval()
    logits, aux, concepts = [], [], []
    dtype = next(model.parameters()).dtype
    try:
        for i in range(0, len(ds), batch_size):
            x = torch.from_numpy(ds.get(slice(i, i + batch_size))).to(dtype)
            rep = model.encode_backbone(x)
            c = model.encode_concepts(rep)
            logits.append(model.classify(rep))
            aux.append(model.classify_aux(c))
            concepts.append(c)
    finally:
        model.train(was_training)
    return torch.cat(logits), torch.cat(aux), torch.cat(concepts)


def evaluate(model, ds: Dataset, batch_size: int = 256) -> MetricReport:
    """Top-1 accuracy of Theta and auxiliary accuracy of T, in percent."""
    logits, aux, _ = predict_all(model, ds, batch_size)
    labels = torch.from_numpy(ds.labels)
    correct = int((logits.argmax(1) == labels).sum())
    aux_correct = int((aux.argmax(1) == labels).sum())
    n = len(ds)
    return MetricReport(100.0 * correct / n, 100.0 * aux_correct / n, n)


def aggregate_seeds(reports: Sequence[MetricReport], seeds: Optional[Sequence[int]] = None) -> MetricReport:
    if not reports:
        raise ValueError("aggregate_seeds needs at least one report")
    seeds = list(seeds) if seeds is not None else list(range(len(reports)))
    acc = sum(r.accuracy for r in reports) / len(reports)
    aux = sum(r.aux_accuracy for r in reports) / len(reports)
    per_seed = [dict(seed=s, **r.as_row()) for s, r in zip(seeds, reports)]
    return MetricReport(acc, aux, reports[0].sample_count, per_seed)


def write_report(report: MetricReport, directory, name: str = "report") -> None:
    """``<name>.csv`` (per-seed rows + mean) and ``<name>.txt``."""
    directory = Path(directory)
    rows = report.per_seed or [dict(seed="", **report.as_row())]
    with open(directory / f"{name}.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["seed", "accuracy", "aux_accuracy", "sample_count"])
        for r in rows:
            w.writerow([r["seed"], repr(r["accuracy"]), repr(r["aux_accuracy"]), r["sample_count"]])
        w.writerow(["mean", repr(report.accuracy), repr(report.aux_accuracy), report.sample_count])
    lines = [f"samples: {report.sample_count}"]
    for r in rows:
        lines.append(f"seed {r['seed']}: accuracy {r['accuracy']:.2f}  aux_accuracy {r['aux_accuracy']:.2f}")
    lines.append(f"mean: accuracy {report.accuracy:.2f}  aux_accuracy {report.aux_accuracy:.2f}")
    (directory / f"{name}.txt").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Concept activation index
# ---------------------------------------------------------------------------


@dataclass
class ConceptActivationIndex:
    """Per concept: sample ids ranked by descending score, ties by ascending id."""

    order: list[np.ndarray]
    scores: np.ndarray  # N x C
    labels: np.ndarray
    winners_only: bool = False

    @property
    def concept_count(self) -> int:
        return self.scores.shape[1]

    def top(self, concept: int, k: int) -> list[tuple[int, float, int]]:
        ids = self.order[concept][:k]
        return [(int(i), float(self.scores[i, concept]), int(self.labels[i])) for i in ids]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["concept", "rank", "sample_id", "score", "label"])
            for c, ids in enumerate(self.order):
                for rank, i in enumerate(ids):
                    w.writerow([c, rank, int(i), repr(float(self.scores[i, c])), int(self.labels[i])])


def rank_concepts(scores: np.ndarray, labels: np.ndarray, winners_only: bool = False) -> ConceptActivationIndex:
    """Rank samples per concept.

    With ``winners_only`` a sample is listed only under the concept it scores
    highest on (first index wins ties).
    """
    scores = np.asarray(scores)
    ids = np.arange(scores.shape[0])
    winner = scores.argmax(axis=1)
    order = []
    for c in range(scores.shape[1]):
        keep = ids[winner == c] if winners_only else ids
        # lexsort: last key is primary
        order.append(keep[np.lexsort((keep, -scores[keep, c]))])
    return ConceptActivationIndex(order, scores, np.asarray(labels), winners_only)


def build_activation_index(model, ds: Dataset, winners_only: bool = False,
                           batch_size: int = 256) -> ConceptActivationIndex:
    _, _, concepts = predict_all(model, ds, batch_size)
    return rank_concepts(concepts.double().numpy(), ds.labels, winners_only)


def render_concept_grid(index: ConceptActivationIndex, ds: Dataset, concept: int, k: int = 5,
                        out_path=None, class_names: Optional[Sequence[str]] = None, scale: int = 4):
    """Write one row of the top-``k`` images for ``concept`` as a PNG.

    Each tile is upscaled by ``scale`` (nearest neighbour) and captioned with
    its class and score. Returns the PIL image.
    """
    from PIL import Image, ImageDraw, ImageFont

    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0 <= concept < index.concept_count:
        raise IndexError(f"concept {concept} out of range [0, {index.concept_count})")
    top = index.top(concept, k)
    h, w = ds.images.shape[2:]
    scale = max(scale, -(-64 // w))  # tiles at least 64 px wide so captions fit
    tw, th = w * scale, h * scale
    caption = 24
    pad = 4
    grid = Image.new("RGB", (len(top) * (tw + pad) + pad, th + caption + 2 * pad), "white")
    draw = ImageDraw.Draw(grid)
    font = ImageFont.load_default()
    for j, (sid, score, label) in enumerate(top):
        arr = np.clip(ds.get(sid).transpose(1, 2, 0) * 255.0 + 0.5, 0, 255).astype(np.uint8)
        tile = Image.fromarray(arr, "RGB").resize((tw, th), Image.NEAREST)
        x0 = pad + j * (tw + pad)
        grid.paste(tile, (x0, pad))
        name = class_names[label] if class_names else str(label)
        draw.text((x0, th + pad + 1), f"{name}", fill="black", font=font)
        draw.text((x0, th + pad + 12), f"{score:.3f}", fill="black", font=font)
    if out_path is not None:
        grid.save(out_path, format="PNG")
    return grid
