"""Structured Gaussian noise for the generator input.

Three layouts of a B x S block:

* ``dan`` - every entry an independent N(0, 1) draw.
* ``icn`` - one length-B vector, replicated across the S columns.
* ``pcn`` - one length-S vector, replicated across the B rows.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

METHODS = ("dan", "icn", "pcn")


@dataclass
class NoiseBlock:
    data: torch.Tensor
    method: str
    seed: Optional[int] = None

    @property
    def shape(self):
        return tuple(self.data.shape)


def _check(batch: int, size: int) -> None:
    if batch < 1 or size < 1:
        raise ValueError(f"noise dims must be >= 1, got B={batch}, S={size}")


def sample_dan(batch: int, size: int, generator: Optional[torch.Generator] = None,
               dtype=torch.float32) -> NoiseBlock:
    _check(batch, size)
    return NoiseBlock(torch.randn(batch, size, generator=generator, dtype=dtype), "dan")


def sample_icn(batch: int, size: int, generator: Optional[torch.Generator] = None,
               dtype=torch.float32) -> NoiseBlock:
    _check(batch, size)
    v = torch.randn(batch, 1, generator=generator, dtype=dtype)
    return NoiseBlock(v.repeat(1, size), "icn")


def sample_pcn(batch: int, size: int, generator: Optional[torch.Generator] = None,
               dtype=torch.float32) -> NoiseBlock:
    _check(batch, size)
    w = torch.randn(1, size, generator=generator, dtype=dtype)
    return NoiseBlock(w.repeat(batch, 1), "pcn")


_SAMPLERS = {"dan": sample_dan, "icn": sample_icn, "pcn": sample_pcn}


def sample(method: str, batch: int, size: int, generator: Optional[torch.Generator] = None,
           dtype=torch.float32) -> NoiseBlock:
    try:
        fn = _SAMPLERS[method.lower()]
    except KeyError:
        raise ValueError(f"unknown noise method {method!r}; expected one of {METHODS}") from None
    return fn(batch, size, generator, dtype)


def concat_concepts(concepts: torch.Tensor, noise) -> torch.Tensor:
    """Append noise columns to a B x C concept matrix, giving B x (C + S)."""
    data = noise.data if isinstance(noise, NoiseBlock) else noise
    if concepts.dim() != 2 or data.dim() != 2:
        raise ValueError("concepts and noise must both be 2-D")
    if data.shape[1] < 1:
        raise ValueError("noise size must be >= 1")
    if concepts.shape[0] != data.shape[0]:
        raise ValueError(f"batch mismatch: concepts {concepts.shape[0]} vs noise {data.shape[0]}")
    return torch.cat([concepts, data.to(concepts.dtype)], dim=1)


def noise_stats(method: str, batch: int, size: int, draws: int, seed: int = 0) -> dict:
    """Moment and structure summary over ``draws`` independent blocks.

    ``generator_*`` fields describe the underlying standard-normal draws
    (all entries for dan, column 0 for icn, row 0 for pcn).
    """
    from scipy import stats

    g = torch.Generator().manual_seed(seed)
    blocks = torch.stack([sample(method, batch, size, g, torch.float64).data for _ in range(draws)])
    blocks = blocks.numpy()
    pooled = blocks.ravel()
    if method == "dan":
        gen = pooled
    elif method == "icn":
        gen = blocks[:, :, 0].ravel()
    else:
        gen = blocks[:, 0, :].ravel()
    within = _shifted_var(blocks, axis=2).max()
    across = _shifted_var(blocks, axis=1).max()
    ks = stats.kstest(gen, "norm")
    return {
        "method": method,
        "batch": batch,
        "size": size,
        "draws": draws,
        "pooled_mean": float(pooled.mean()),
        "pooled_var": float(pooled.var()),
        "generator_mean": float(gen.mean()),
        "generator_var": float(gen.var()),
        "max_within_row_var": float(within),
        "max_across_row_var": float(across),
        "row_axis_corr": _mean_offdiag_corr(blocks, axis=2),
        "col_axis_corr": _mean_offdiag_corr(blocks, axis=1),
        "ks_stat": float(ks.statistic),
        "ks_pvalue": float(ks.pvalue),
    }


def _shifted_var(x: np.ndarray, axis: int) -> np.ndarray:
    """Population variance computed about the first element; exactly 0 for constant slices."""
    d = x - np.take(x, [0], axis=axis)
    return (d * d).mean(axis=axis) - d.mean(axis=axis) ** 2


def _mean_offdiag_corr(blocks: np.ndarray, axis: int) -> float:
    """Mean off-diagonal correlation between positions along ``axis``, over draws.

    For icn the entries of a row (axis=2) are one value, so the correlation
    is exactly 1; for dan it is ~0.
    """
    x = np.moveaxis(blocks, axis, -1)
    width = x.shape[-1]
    if width < 2:
        return float("nan")
    x = x.reshape(-1, width)
    c = np.corrcoef(x, rowvar=False)
    return float((c.sum() - np.trace(c)) / (width * (width - 1)))
