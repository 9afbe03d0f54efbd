"""Fading and noise statistics: unit second moment, SNR calibration."""

import math

import numpy as np
import pytest

from mamc.channel import ChannelDraw, apply_channel, draw_fading, measured_snr
from mamc.modem import BasebandSignal, ModulationScheme, synthesize


def _unit_signal(n, seed=0):
    rng = np.random.default_rng(seed)
    samples = np.exp(1j * rng.uniform(0, 2 * np.pi, n))
    return BasebandSignal(samples, 8)


class TestDrawFading:
    def test_unit_second_moment(self):
        h = draw_fading(1_000_000, np.random.default_rng(0))
        assert abs(np.mean(np.abs(h) ** 2) - 1.0) < 0.01

    def test_cross_antenna_correlation(self):
        rng = np.random.default_rng(1)
        draws = draw_fading(2_000_000, rng).reshape(-1, 2)
        a, b = draws[:, 0], draws[:, 1]
        corr = np.abs(np.mean(a * np.conj(b)))
        assert corr < 0.01

    def test_determinism(self):
        a = draw_fading(8, np.random.default_rng(7))
        b = draw_fading(8, np.random.default_rng(7))
        np.testing.assert_array_equal(a, b)

    def test_invalid_count(self):
        with pytest.raises(ValueError, match="n_antennas"):
            draw_fading(0, np.random.default_rng(0))

    def test_rayleigh_envelope_ks(self):
        # envelope CDF is 1 - exp(-r^2) for scale 1/sqrt(2); the KS statistic
        # must stay below the 1% critical value 1.628/sqrt(n)
        n = 100_000
        h = draw_fading(n, np.random.default_rng(3))
        r = np.sort(np.abs(h))
        cdf = 1.0 - np.exp(-(r**2))
        empirical_hi = np.arange(1, n + 1) / n
        empirical_lo = np.arange(0, n) / n
        ks = max(np.max(empirical_hi - cdf), np.max(cdf - empirical_lo))
        assert ks < 1.628 / math.sqrt(n)


class TestApplyChannel:
    def test_noise_free_is_exact_product(self):
        sig = _unit_signal(256)
        h = draw_fading(4, np.random.default_rng(2))
        rx = apply_channel(sig, ChannelDraw(h, math.inf, 0))
        np.testing.assert_array_equal(rx.samples, h[:, None] * sig.samples[None, :])

    def test_flat_fading_constant_within_frame(self):
        sig = _unit_signal(128, seed=5)
        h = draw_fading(3, np.random.default_rng(4))
        rx = apply_channel(sig, ChannelDraw(h, math.inf, 0))
        ratio = rx.samples / sig.samples[None, :]
        np.testing.assert_allclose(
            ratio, np.broadcast_to(ratio[:, :1], ratio.shape), atol=1e-12
        )

    def test_zero_db_power_ratio(self):
        # Monte Carlo over 1e5 frames: E|h s|^2 / E|w|^2 = 1 within 2%
        sig = _unit_signal(32)
        rng = np.random.default_rng(6)
        p_signal = p_noise = 0.0
        for i in range(100_000):
            h = draw_fading(1, rng)
            rx = apply_channel(sig, ChannelDraw(h, 0.0, i))
            clean = h[:, None] * sig.samples[None, :]
            p_signal += np.sum(np.abs(clean) ** 2)
            p_noise += np.sum(np.abs(rx.samples - clean) ** 2)
        assert abs(p_signal / p_noise - 1.0) < 0.02

    def test_noise_variance_at_10db(self):
        sig = BasebandSignal(np.zeros(4096, dtype=complex), 8)
        rng = np.random.default_rng(8)
        samples = []
        for i in range(64):
            rx = apply_channel(sig, ChannelDraw(draw_fading(4, rng), 10.0, 1000 + i))
            samples.append(rx.samples.ravel())
        noise = np.concatenate(samples)
        var = np.mean(np.abs(noise) ** 2)
        assert abs(var - 0.1) < 0.001

    def test_noise_independent_across_antennas(self):
        sig = BasebandSignal(np.zeros(100_000, dtype=complex), 8)
        rx = apply_channel(
            sig, ChannelDraw(np.ones(2, dtype=complex), 0.0, 99)
        )
        a, b = rx.samples[0], rx.samples[1]
        corr = np.abs(np.mean(a * np.conj(b)))
        assert corr < 0.01

    def test_noise_seed_determinism(self):
        sig = _unit_signal(64)
        h = draw_fading(2, np.random.default_rng(0))
        rx1 = apply_channel(sig, ChannelDraw(h, 5.0, 1234))
        rx2 = apply_channel(sig, ChannelDraw(h, 5.0, 1234))
        np.testing.assert_array_equal(rx1.samples, rx2.samples)


class TestMeasuredSnr:
    def test_identical_arrays_give_infinity(self):
        x = np.ones((2, 8), dtype=complex)
        assert measured_snr(x, x) == math.inf

    def test_noise_equal_to_signal_gives_zero_db(self):
        x = np.ones((2, 8), dtype=complex)
        assert abs(measured_snr(x, x + x)) < 1e-12

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError, match="shape"):
            measured_snr(np.ones(4), np.ones(5))

    def test_per_frame_measurement_tracks_target(self):
        # average the linear ratios: the dB values themselves are dragged
        # below the target by the fading term (instantaneous vs average SNR)
        rng = np.random.default_rng(21)
        sig = synthesize(ModulationScheme.QAM16, 512, rng)
        ratios = []
        for i in range(2000):
            h = draw_fading(2, rng)
            rx = apply_channel(sig, ChannelDraw(h, 5.0, 7000 + i))
            clean = h[:, None] * sig.samples[None, :]
            ratios.append(10.0 ** (measured_snr(clean, rx.samples) / 10.0))
        averaged_db = 10.0 * math.log10(np.mean(ratios))
        assert abs(averaged_db - 5.0) < 0.2

    @pytest.mark.parametrize("target", [-10.0, 0.0, 10.0])
    def test_calibration_against_target(self, target):
        # averaged over 1e4 frames the measured SNR hits the target to 0.2 dB
        rng = np.random.default_rng(10)
        sig = synthesize(ModulationScheme.QPSK, 512, rng)
        p_signal = p_noise = 0.0
        for i in range(10_000):
            h = draw_fading(2, rng)
            draw = ChannelDraw(h, target, 5000 + i)
            rx = apply_channel(sig, draw)
            clean = h[:, None] * sig.samples[None, :]
            p_signal += np.sum(np.abs(clean) ** 2)
            p_noise += np.sum(np.abs(rx.samples - clean) ** 2)
        measured = 10.0 * math.log10(p_signal / p_noise)
        assert abs(measured - target) < 0.2
