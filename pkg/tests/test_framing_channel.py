import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from dopplersync import channel, framing
from dopplersync.channel import ChannelParams, PriorSpec

GOLDEN_PREAMBLE = "110000000011000110111110010001"


class TestFraming:
    def test_modulate(self):
        np.testing.assert_array_equal(framing.modulate_bpsk([0, 1, 0]), [1, -1, 1])

    def test_demap_round_trip(self, rng):
        b = rng.integers(0, 2, 100)
        np.testing.assert_array_equal(framing.demap_bpsk(framing.modulate_bpsk(b)), b)

    def test_rejects_non_binary(self):
        with pytest.raises(ValueError):
            framing.modulate_bpsk([0, 2])

    def test_frame_layout(self, rng):
        cfg = framing.FrameConfig(30, 504)
        pre = framing.generate_preamble(n=30)
        data = rng.integers(0, 2, 504)
        f = framing.build_frame(pre, data, cfg)
        assert f.length == cfg.length == 534
        assert f.preamble_mask[:30].all() and not f.preamble_mask[30:].any()
        assert np.mean(np.abs(f.symbols) ** 2) == 1.0
        np.testing.assert_array_equal(f.symbols[30:], framing.modulate_bpsk(data))
        g = framing.build_frame(pre, data, cfg)
        np.testing.assert_array_equal(f.symbols, g.symbols)

    def test_no_preamble(self):
        f = framing.build_frame([], np.zeros(8, dtype=np.uint8), framing.FrameConfig(0, 8))
        assert not f.preamble_mask.any()
        assert np.all(f.symbols == 1)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            framing.build_frame([0] * 3, [0] * 8, framing.FrameConfig(2, 8))
        with pytest.raises(ValueError):
            framing.build_frame([0] * 2, [0] * 7, framing.FrameConfig(2, 8))

    def test_golden_preamble(self):
        assert "".join(map(str, framing.generate_preamble())) == GOLDEN_PREAMBLE

    def test_preamble_edge_cases(self):
        assert framing.generate_preamble(n=0).size == 0
        assert not np.array_equal(framing.generate_preamble(1), framing.generate_preamble(2))


class TestChannel:
    def test_prior_draws(self):
        prior = PriorSpec(0.01, 1e-5)
        r = channel.rng_stream(1, 0)
        draws = np.array([channel.sample_params(r, prior).as_array() for _ in range(20000)])
        assert np.all(np.abs(draws[:, 1]) <= 0.01) and np.all(np.abs(draws[:, 2]) <= 1e-5)
        assert abs(draws[:, 1].var() / ((0.02) ** 2 / 12) - 1) < 0.05

    def test_reproducible_streams(self):
        a = channel.sample_params(channel.rng_stream(7, 3, 1), PriorSpec())
        b = channel.sample_params(channel.rng_stream(7, 3, 1), PriorSpec())
        c = channel.sample_params(channel.rng_stream(7, 3, 2), PriorSpec())
        assert a == b and a != c

    def test_trajectory_values(self):
        assert np.all(channel.phase_trajectory(ChannelParams(0, 0, 0), 10) == 0)
        phi = channel.phase_trajectory(ChannelParams(2.0, 0.011, -9e-6), 101)
        assert phi[100] == pytest.approx(float(channel.wrap_phase(3.01)), abs=1e-12)
        alt = channel.phase_trajectory(ChannelParams(0.0, np.pi, 0.0), 4)
        np.testing.assert_allclose(alt, [0, np.pi, 0, np.pi], atol=1e-12)

    def test_wrap_boundaries(self):
        assert channel.wrap_phase(np.pi) == np.pi
        assert channel.wrap_phase(-np.pi) == np.pi

    @given(st.floats(-1e3, 1e3))
    def test_wrap_range(self, x):
        w = float(channel.wrap_phase(x))
        assert -np.pi < w <= np.pi
        assert np.isclose(np.cos(w), np.cos(x), atol=1e-9) and np.isclose(np.sin(w), np.sin(x), atol=1e-9)

    def test_noiseless_apply(self, rng):
        f = framing.build_frame([], rng.integers(0, 2, 50), framing.FrameConfig(0, 50))
        obs = channel.apply(f, ChannelParams(0, 0, 0), 1e-30, rng)
        np.testing.assert_allclose(obs.samples, f.symbols, atol=1e-12)
        obs = channel.apply(f, ChannelParams(1.0, 0.01, 1e-5), 1e-30, rng)
        np.testing.assert_allclose(np.abs(obs.samples), 1.0, atol=1e-12)

    def test_noise_split(self):
        f = framing.build_frame([], np.zeros(100000, dtype=np.uint8), framing.FrameConfig(0, 100000))
        y = channel.apply(f, ChannelParams(0, 0, 0), 1.0, channel.rng_stream(3, 0)).samples
        assert abs(np.var(y.real) - 0.5) < 0.01 and abs(np.var(y.imag) - 0.5) < 0.01

    def test_node_streams_independent(self):
        f = framing.build_frame([], np.zeros(100000, dtype=np.uint8), framing.FrameConfig(0, 100000))
        a = channel.apply(f, ChannelParams(0, 0, 0), 1.0, channel.rng_stream(3, 0, 0)).samples
        b = channel.apply(f, ChannelParams(0, 0, 0), 1.0, channel.rng_stream(3, 0, 1)).samples
        assert abs(np.corrcoef(a.real, b.real)[0, 1]) < 0.02

    def test_snr(self):
        assert channel.snr_db_to_sigma2(0) == 1.0
        assert channel.snr_db_to_sigma2(10) == pytest.approx(0.1)
        assert channel.snr_db_to_sigma2(-10) == pytest.approx(10.0)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            PriorSpec(0.0, 1e-5)
        with pytest.raises(ValueError):
            channel.NodeObservation(np.zeros(3, complex), 0.0)
        with pytest.raises(ValueError):
            channel.phase_trajectory(ChannelParams(0, 0, 0), 0)
