import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats

from smcomm.channels import (
    DiscreteChannel,
    VectorChannel,
    dequantize,
    discrete_from_spec,
    quantize,
    transmit_symbol,
    transmit_vector,
    vector_from_spec,
)
from smcomm.errors import ConfigurationError, RejectedInputError

N = 100_000


class TestDiscreteChannel:
    def test_identity(self):
        ch = DiscreteChannel.identity(5)
        rng = np.random.default_rng(0)
        sent = rng.integers(0, 5, size=1000)
        np.testing.assert_array_equal(ch.transmit(sent, rng), sent)
        assert all(transmit_symbol(ch, s, rng) == s for s in range(5))

    def test_bsc_flip_rate(self):
        rng = np.random.default_rng(1)
        sent = rng.integers(0, 2, size=N)
        flips = np.mean(DiscreteChannel.bsc(0.1).transmit(sent, rng) != sent)
        assert 0.094 <= flips <= 0.106

    def test_uniform_total_variation(self):
        rng = np.random.default_rng(2)
        out = DiscreteChannel.uniform(4).transmit(np.zeros(N, dtype=int), rng)
        freq = np.bincount(out, minlength=4) / N
        assert 0.5 * np.abs(freq - 0.25).sum() < 0.01

    @pytest.mark.parametrize("seed", [3, 4])
    def test_confusion_frequencies_chi_square(self, seed):
        rng = np.random.default_rng(seed)
        m = rng.dirichlet(np.ones(3), size=3)
        m[:, -1] = 1.0 - m[:, :-1].sum(axis=1)
        ch = DiscreteChannel(m)
        for row in range(3):
            out = ch.transmit(np.full(N, row), rng)
            counts = np.bincount(out, minlength=3)
            assert stats.chisquare(counts, N * m[row]).pvalue > 0.001

    def test_symmetric_reduces_to_bsc(self):
        np.testing.assert_array_equal(DiscreteChannel.symmetric(2, 0.2).matrix,
                                      DiscreteChannel.bsc(0.2).matrix)
        m = DiscreteChannel.symmetric(16, 0.05).matrix
        np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-12)
        assert m[0, 0] == 0.95 and m[0, 1] == pytest.approx(0.05 / 15)

    @pytest.mark.parametrize("matrix", [
        [[0.5, 0.6], [0.5, 0.5]],
        [[1.0, 0.0]],
        [[1.2, -0.2], [0.0, 1.0]],
        [[np.nan, 1.0], [0.0, 1.0]],
    ])
    def test_invalid_matrix(self, matrix):
        with pytest.raises(ConfigurationError):
            DiscreteChannel(np.array(matrix))

    def test_row_tolerance(self):
        DiscreteChannel(np.array([[0.5, 0.5 + 5e-13], [0.0, 1.0]]))

    @pytest.mark.parametrize("symbol", [-1, 2, 7])
    def test_out_of_range(self, symbol):
        with pytest.raises(RejectedInputError):
            transmit_symbol(DiscreteChannel.bsc(0.1), symbol, np.random.default_rng(0))

    def test_immutable(self):
        ch = DiscreteChannel.bsc(0.1)
        with pytest.raises(ValueError):
            ch.matrix[0, 0] = 0.0

    @pytest.mark.parametrize("spec, expected", [
        ({"preset": "bsc", "p": 0.25}, [[0.75, 0.25], [0.25, 0.75]]),
        ({"preset": "identity", "n": 2}, [[1, 0], [0, 1]]),
        ({"preset": "uniform", "n": 2}, [[0.5, 0.5], [0.5, 0.5]]),
        ({"matrix": [[0.0, 1.0], [1.0, 0.0]]}, [[0, 1], [1, 0]]),
    ])
    def test_from_spec(self, spec, expected):
        np.testing.assert_array_equal(discrete_from_spec(spec).matrix, expected)

    def test_unknown_preset(self):
        with pytest.raises(ConfigurationError):
            discrete_from_spec({"preset": "erasure"})


class TestQuantizer:
    def test_hand_example(self):
        ch = VectorChannel.quantized(4)
        out = transmit_vector(ch, [-1.0, -0.2, 0.9], np.random.default_rng(0))
        np.testing.assert_array_equal(out, [-0.75, -0.25, 0.75])

    def test_clipping_and_top_edge(self):
        np.testing.assert_array_equal(quantize([-3.0, 1.0, 7.0], 4), [0, 3, 3])

    @settings(max_examples=100, deadline=None)
    @given(x=st.floats(-1, 1), levels=st.integers(2, 64))
    def test_midpoint_within_half_cell(self, x, levels):
        mid = dequantize(quantize(x, levels), levels)
        assert abs(mid - x) <= 1.0 / levels + 1e-12

    @given(levels=st.integers(2, 64))
    def test_midpoints_are_fixed_points(self, levels):
        cells = np.arange(levels)
        np.testing.assert_array_equal(quantize(dequantize(cells, levels), levels), cells)


class TestVectorChannel:
    @given(v=st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=8))
    def test_clean_identity(self, v):
        np.testing.assert_array_equal(transmit_vector(VectorChannel.clean(), v), v)

    def test_zero_sigma(self):
        v = np.array([0.3, -2.0])
        np.testing.assert_array_equal(
            transmit_vector(VectorChannel.gaussian(0.0), v, np.random.default_rng(0)), v)

    def test_gaussian_moments(self):
        rng = np.random.default_rng(5)
        noise = VectorChannel.gaussian(0.3).transmit(np.zeros((N, 2)), rng)
        assert abs(noise.mean()) < 0.005
        assert noise.std() == pytest.approx(0.3, rel=0.01)

    @pytest.mark.parametrize("ch", [
        VectorChannel.gaussian(0.5),
        VectorChannel.quantized(8, DiscreteChannel.symmetric(8, 0.3)),
    ])
    def test_memoryless_across_coordinates(self, ch):
        rng = np.random.default_rng(6)
        x = np.zeros((N, 2)) + 0.1
        noise = ch.transmit(x, rng) - x
        assert abs(np.corrcoef(noise.T)[0, 1]) < 0.02

    def test_quantized_dmc_flip_rate(self):
        rng = np.random.default_rng(7)
        ch = VectorChannel.quantized(16, DiscreteChannel.symmetric(16, 0.05))
        out = ch.transmit(np.full(N, 0.1), rng)
        assert np.mean(out != dequantize(quantize(0.1, 16), 16)) == pytest.approx(0.05, abs=0.003)

    @pytest.mark.parametrize("bad", [[np.nan], [1.0, np.inf]])
    def test_non_finite(self, bad):
        with pytest.raises(RejectedInputError):
            VectorChannel.clean().transmit(bad)

    def test_level_mismatch(self):
        with pytest.raises(ConfigurationError):
            VectorChannel.quantized(4, DiscreteChannel.bsc(0.1))

    @pytest.mark.parametrize("ch", [
        VectorChannel.clean(),
        VectorChannel.gaussian(0.2),
        VectorChannel.quantized(4),
        VectorChannel.quantized(2, DiscreteChannel.bsc(0.1)),
    ])
    def test_spec_round_trip(self, ch):
        back = vector_from_spec(ch.to_spec())
        assert back.to_spec() == ch.to_spec()
