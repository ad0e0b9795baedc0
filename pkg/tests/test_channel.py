"""Tests for fading draws, CSIR corruption and the received-signal model."""

from dataclasses import replace

import numpy as np
import pytest

from imnet.channel import (
    NOISE_VAR,
    ChannelConfig,
    ChannelRealization,
    apply_channel,
    corrupt_csir,
    csir_error_variance,
    draw_channel,
    exp_correlation_matrix,
    snr_to_es,
)
from imnet.config import SCENARIOS
from imnet.mapping import IMConfig, encode_bits, random_bits, signal_matrices
from imnet.rng import complex_normal, substream

S1 = SCENARIOS[1]
S2 = SCENARIOS[2]


def within_3se(samples, expected):
    samples = np.asarray(samples, dtype=float)
    se = samples.std(ddof=1) / np.sqrt(samples.size)
    return abs(samples.mean() - expected) <= 3 * se


class TestCorrelationMatrix:
    def test_zero_rho_is_identity(self):
        np.testing.assert_array_equal(exp_correlation_matrix(5, 0.0), np.eye(5))

    def test_two_by_two(self):
        np.testing.assert_array_equal(exp_correlation_matrix(2, 0.5), [[1, 0.5], [0.5, 1]])

    def test_positive_definite(self):
        theta = exp_correlation_matrix(8, 0.5)
        np.testing.assert_array_equal(theta, theta.T)
        assert np.linalg.eigvalsh(theta).min() > 0

    def test_rho_one_rejected(self):
        with pytest.raises(ValueError, match="rho"):
            exp_correlation_matrix(3, 1.0)


class TestChannelConfig:
    @pytest.mark.parametrize(
        "kwargs", [dict(model="tdl"), dict(csir="estimated"), dict(rho=1.0), dict(n_pilot=0), dict(pilot_energy=0.0)]
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            ChannelConfig(**kwargs)


class TestDrawChannel:
    def test_shapes(self):
        ch = draw_channel(S2, ChannelConfig(), np.random.default_rng(0), 7)
        assert ch.h_true.shape == (7, 8, 2, 8)
        assert ch.h_rx is ch.h_true
        assert ch.noise_var == NOISE_VAR

    def test_rayleigh_power(self):
        ch = draw_channel(S1, ChannelConfig(), np.random.default_rng(1), 25_000)
        assert within_3se(np.abs(ch.h_true.ravel()) ** 2, 1 / S1.n_tx)

    def test_correlated_rho_zero_matches_rayleigh(self):
        a = draw_channel(S2, ChannelConfig("rayleigh"), np.random.default_rng(4), 10)
        b = draw_channel(S2, ChannelConfig("correlated", rho=0.0), np.random.default_rng(4), 10)
        np.testing.assert_allclose(a.h_true, b.h_true, rtol=0, atol=1e-15)

    def test_correlated_statistics(self):
        cfg = IMConfig(8, 8, 1, 1, 1)
        h = draw_channel(cfg, ChannelConfig("correlated", rho=0.5), np.random.default_rng(2), 20_000).h_true
        assert within_3se(np.abs(h.ravel()) ** 2, 1 / cfg.n_tx)
        # adjacent transmit antennas on the same receive antenna
        prod = (h[..., 1:] * np.conj(h[..., :-1])).real.ravel() * cfg.n_tx
        assert within_3se(prod, 0.5)

    def test_determinism(self):
        a = draw_channel(S2, ChannelConfig("correlated"), substream(9, "channel", 3), 5)
        b = draw_channel(S2, ChannelConfig("correlated"), substream(9, "channel", 3), 5)
        np.testing.assert_array_equal(a.h_true, b.h_true)


class TestCSIR:
    def test_formula(self):
        cfg = IMConfig(8, 8, 8, 1, 1)
        assert csir_error_variance(cfg, ChannelConfig(csir="imperfect", n_pilot=8, pilot_energy=1.0), None) == 1.0
        # defaults: one pilot per antenna at the data energy
        assert csir_error_variance(cfg, ChannelConfig(csir="imperfect"), 10.0) == pytest.approx(0.1)

    def test_needs_snr_when_pilot_energy_tracks_data(self):
        with pytest.raises(ValueError, match="snr_db"):
            csir_error_variance(S1, ChannelConfig(csir="imperfect"), None)

    def test_error_variance_monte_carlo(self):
        cfg = IMConfig(8, 8, 8, 1, 1)
        ch_cfg = ChannelConfig(csir="imperfect", n_pilot=8, pilot_energy=1.0)
        h = np.zeros((250, 8, 8, 8), complex)
        err = corrupt_csir(h, cfg, ch_cfg, np.random.default_rng(0))
        assert within_3se(np.abs(err.ravel()) ** 2, 1.0)

    def test_many_pilots_vanishing_error(self):
        ch_cfg = ChannelConfig(csir="imperfect", n_pilot=10**9, pilot_energy=1.0)
        ch = draw_channel(S1, ch_cfg, np.random.default_rng(0), 100)
        np.testing.assert_allclose(ch.h_rx, ch.h_true, rtol=0, atol=1e-3)

    def test_perfect_mode_identity(self):
        h = draw_channel(S1, ChannelConfig(), np.random.default_rng(0), 3).h_true
        assert corrupt_csir(h, S1, ChannelConfig(), np.random.default_rng(1)) is h

    def test_imperfect_true_channel_unchanged(self):
        a = draw_channel(S1, ChannelConfig(), np.random.default_rng(5), 4)
        b = draw_channel(S1, ChannelConfig(csir="imperfect"), np.random.default_rng(5), 4, snr_db=10.0)
        np.testing.assert_array_equal(a.h_true, b.h_true)
        assert not np.allclose(b.h_rx, b.h_true)


class TestApplyChannel:
    def test_identity_channel_noiseless(self):
        cfg = IMConfig(4, 4, 4, 2, 2)
        x = signal_matrices(encode_bits(random_bits(np.random.default_rng(0), 3, cfg), cfg), cfg)
        eye = np.broadcast_to(np.eye(4), (3, 4, 4, 4)).astype(complex)
        y = apply_channel(x, ChannelRealization(eye, eye), 0.0, None)
        np.testing.assert_array_equal(y, x)

    def test_noiseless_consistency(self):
        rng = np.random.default_rng(3)
        x = signal_matrices(encode_bits(random_bits(rng, 5, S2), S2), S2)
        ch = draw_channel(S2, ChannelConfig(), rng, 5)
        y = apply_channel(x, ch, 13.0, None)
        es = snr_to_es(13.0)
        for b in range(5):
            for i in range(S2.n_sub):
                np.testing.assert_allclose(y[b, :, i], ch.h_true[b, i] @ x[b, :, i] * np.sqrt(es), atol=1e-12)

    def test_noise_only_limit(self):
        x = np.zeros((20_000, S1.n_tx, S1.n_sub), complex)
        ch = draw_channel(S1, ChannelConfig(), np.random.default_rng(0), len(x))
        y = apply_channel(x, ch, -300.0, np.random.default_rng(1))
        assert within_3se(np.abs(y.ravel()) ** 2, NOISE_VAR)

    def test_single_frame(self):
        x = np.ones((S1.n_tx, S1.n_sub), complex)
        ch = draw_channel(S1, ChannelConfig(), np.random.default_rng(0), 1)
        assert apply_channel(x, ch, 0.0, None).shape == (S1.n_rx, S1.n_sub)

    def test_shape_mismatch(self):
        ch = draw_channel(S1, ChannelConfig(), np.random.default_rng(0), 2)
        with pytest.raises(ValueError):
            apply_channel(np.zeros((2, 3, 4), complex), ch, 0.0, None)

    def test_determinism(self):
        x = np.ones((4, S1.n_tx, S1.n_sub), complex)
        ch = draw_channel(S1, ChannelConfig(), np.random.default_rng(0), 4)
        a = apply_channel(x, ch, 5.0, substream(1, "noise", 0))
        b = apply_channel(x, ch, 5.0, substream(1, "noise", 0))
        np.testing.assert_array_equal(a, b)


class TestRNG:
    def test_substreams_differ_by_purpose_and_index(self):
        draws = {
            key: substream(0, *key).integers(0, 2**62)
            for key in [("bits", 0), ("noise", 0), ("bits", 1)]
        }
        assert len(set(draws.values())) == 3

    def test_complex_normal_variance(self):
        z = complex_normal(np.random.default_rng(0), 100_000, 0.25)
        assert within_3se(np.abs(z) ** 2, 0.25)
        assert abs(np.mean(z.real * z.imag)) < 0.01
