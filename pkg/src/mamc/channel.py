"""Per-antenna Rayleigh flat fading plus AWGN at a target average SNR.

Fading coefficients are i.i.d. circularly-symmetric complex Gaussian with
unit second moment, constant over one frame.  Noise is drawn per antenna
and per sample with variance 10**(-snr_db/10), so the target is the
average SNR (the expectation over fading); the instantaneous SNR
|h|^2 / sigma^2 still varies from antenna to antenna.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ChannelDraw", "ReceivedFrame", "draw_fading", "apply_channel", "measured_snr"]


@dataclass(frozen=True)
class ChannelDraw:
    """One realization of the channel: fading vector, target SNR, noise seed."""

    coefficients: np.ndarray  # complex, shape (n_antennas,)
    snr_db: float
    noise_seed: int


@dataclass(frozen=True)
class ReceivedFrame:
    """Faded and noisy frame, one row per antenna."""

    samples: np.ndarray  # complex, shape (n_antennas, frame_len)
    draw: ChannelDraw


def draw_fading(n_antennas: int, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. coefficients (a + jb)/sqrt(2) with a, b standard normal."""
    if n_antennas < 1:
        raise ValueError("n_antennas must be >= 1")
    re = rng.standard_normal(n_antennas)
    im = rng.standard_normal(n_antennas)
    return (re + 1j * im) / math.sqrt(2)


def apply_channel(signal, draw: ChannelDraw) -> ReceivedFrame:
    """Multiply the frame by each fading coefficient and add white noise.

    ``signal`` may be a BasebandSignal or a plain complex array of unit
    mean power.  A non-finite ``snr_db`` (e.g. +inf) disables the noise.
    """
    samples = np.asarray(getattr(signal, "samples", signal))
    rx = draw.coefficients[:, None] * samples[None, :]
    if np.isfinite(draw.snr_db):
        sigma2 = 10.0 ** (-draw.snr_db / 10.0)
        nrng = np.random.Generator(np.random.Philox(key=draw.noise_seed))
        noise = math.sqrt(sigma2 / 2.0) * (
            nrng.standard_normal(rx.shape) + 1j * nrng.standard_normal(rx.shape)
        )
        rx = rx + noise
    return ReceivedFrame(rx, draw)


def measured_snr(clean: np.ndarray, noisy: np.ndarray) -> float:
    """10*log10 of clean power over residual power; +inf when noise-free."""
    clean = np.asarray(clean)
    noisy = np.asarray(noisy)
    if clean.shape != noisy.shape:
        raise ValueError(f"shape mismatch: {clean.shape} vs {noisy.shape}")
    p_noise = float(np.sum(np.abs(noisy - clean) ** 2))
    if p_noise == 0.0:
        return math.inf
    p_signal = float(np.sum(np.abs(clean) ** 2))
    return 10.0 * math.log10(p_signal / p_noise)
