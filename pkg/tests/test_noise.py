import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from conceptgan.noise import concat_concepts, noise_stats, sample, sample_dan, sample_icn, sample_pcn

dims = st.tuples(st.integers(1, 64), st.integers(1, 64))


def gen(seed=0):
    return torch.Generator().manual_seed(seed)


@pytest.mark.parametrize("fn", [sample_dan, sample_icn, sample_pcn])
@pytest.mark.parametrize("b,s", [(32, 10), (32, 5), (1, 1)])
def test_shapes(fn, b, s):
    block = fn(b, s, gen())
    assert block.shape == (b, s)
    assert torch.isfinite(block.data).all()


@settings(max_examples=100, deadline=None)
@given(dims, st.integers(0, 2**31))
def test_icn_rows_constant(bs, seed):
    x = sample_icn(*bs, gen(seed)).data
    assert (x - x[:, :1]).abs().max() == 0


@settings(max_examples=100, deadline=None)
@given(dims, st.integers(0, 2**31))
def test_pcn_rows_identical(bs, seed):
    x = sample_pcn(*bs, gen(seed)).data
    assert torch.equal(x, x[:1].expand_as(x))


def test_single_draw_is_standard_normal_value():
    g1, g2 = gen(4), gen(4)
    assert sample_dan(1, 1, g1).data.item() == torch.randn(1, generator=g2).item()


def test_dan_pooled_moments():
    x = sample_dan(1000, 1000, gen(1), torch.float64).data
    assert abs(x.mean().item()) < 0.01
    assert 0.99 < x.var().item() < 1.01


@pytest.mark.parametrize("method,axis", [("icn", "col"), ("pcn", "row")])
def test_generating_vector_moments(method, axis):
    g = gen(2)
    draws = []
    for _ in range(10_000):
        x = sample(method, 10, 10, g, torch.float64).data
        draws.append(x[:, 0] if axis == "col" else x[0])
    v = torch.cat(draws).numpy()
    assert len(v) == 100_000
    assert abs(v.mean()) < 0.015
    assert abs(v.var() - 1) < 0.02
    assert stats.kstest(v, "norm").pvalue > 0.01


def test_dan_column_covariance_is_identity():
    g = gen(5)
    x = torch.stack([sample_dan(1, 6, g, torch.float64).data[0] for _ in range(20_000)]).numpy()
    cov = np.cov(x, rowvar=False)
    # standard error of a covariance entry ~ 1/sqrt(n)
    se = 1 / np.sqrt(len(x))
    assert np.abs(cov - np.eye(6)).max() < 3 * se * np.sqrt(2)


def test_tiled_axis_fully_correlated():
    icn = noise_stats("icn", 8, 6, 500)
    pcn = noise_stats("pcn", 8, 6, 500)
    dan = noise_stats("dan", 8, 6, 500)
    assert icn["row_axis_corr"] == pytest.approx(1.0, abs=1e-12)
    assert pcn["col_axis_corr"] == pytest.approx(1.0, abs=1e-12)
    assert abs(dan["row_axis_corr"]) < 0.05 and abs(dan["col_axis_corr"]) < 0.05
    assert icn["max_within_row_var"] == 0.0
    assert pcn["max_across_row_var"] == 0.0


def test_unknown_method():
    with pytest.raises(ValueError, match="unknown noise method"):
        sample("gaussian", 2, 2)


@pytest.mark.parametrize("b,s", [(0, 3), (3, 0)])
def test_dims_validated(b, s):
    with pytest.raises(ValueError):
        sample_dan(b, s)


class TestConcat:
    def test_shape(self):
        c = torch.rand(32, 10)
        z = concat_concepts(c, sample_dan(32, 5, gen()))
        assert z.shape == (32, 15)

    def test_slices_recover_inputs(self):
        c = torch.rand(7, 10)
        n = sample_pcn(7, 3, gen())
        z = concat_concepts(c, n)
        assert torch.equal(z[:, :10], c)
        assert torch.equal(z[:, 10:], n.data)

    def test_batch_mismatch(self):
        with pytest.raises(ValueError, match="batch mismatch"):
            concat_concepts(torch.rand(4, 10), sample_dan(5, 2, gen()))

    def test_empty_noise_rejected(self):
        with pytest.raises(ValueError):
            concat_concepts(torch.rand(4, 10), torch.zeros(4, 0))


def test_same_generator_state_same_noise():
    assert torch.equal(sample_dan(4, 3, gen(9)).data, sample_dan(4, 3, gen(9)).data)
