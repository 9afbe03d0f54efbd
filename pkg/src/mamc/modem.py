"""Synthesis of unit-power complex baseband frames for 20 modulation schemes.

Digital linear schemes (PSK/QAM/APSK/OOK/ASK) map random bits onto
unit-energy constellations and shape them with a root-raised-cosine filter
at 8 samples per symbol.  GMSK, FM, AM, DSB and SSB are synthesized
directly from a band-limited random message (or a random bit stream for
GMSK).  Every frame is trimmed to steady state, normalized to unit mean
power, and fully determined by the supplied random generator.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

__all__ = [
    "ModulationScheme",
    "DIGITAL_SCHEMES",
    "ANALOG_SCHEMES",
    "SynthesisParams",
    "Constellation",
    "BasebandSignal",
    "build_constellation",
    "map_symbols",
    "rrc_taps",
    "pulse_shape",
    "synthesize_analog",
    "synthesize",
]

SAMPLES_PER_SYMBOL = 8


class ModulationScheme(enum.IntEnum):
    """The 20 supported schemes; the integer value is the class index."""

    BPSK = 0
    QPSK = 1
    PSK8 = 2
    PSK16 = 3
    QAM16 = 4
    QAM32 = 5
    QAM64 = 6
    QAM128 = 7
    QAM256 = 8
    APSK16 = 9
    APSK32 = 10
    APSK64 = 11
    APSK128 = 12
    OOK = 13
    ASK4 = 14
    GMSK = 15
    FM = 16
    AM = 17
    DSB = 18
    SSB = 19

    @property
    def label(self) -> str:
        return _LABELS[self]

    @classmethod
    def from_label(cls, label: str) -> "ModulationScheme":
        try:
            return _SCHEME_BY_LABEL[label.strip().upper()]
        except KeyError:
            raise ValueError(f"unknown modulation scheme {label!r}") from None


_LABELS = {
    ModulationScheme.BPSK: "BPSK",
    ModulationScheme.QPSK: "QPSK",
    ModulationScheme.PSK8: "8PSK",
    ModulationScheme.PSK16: "16PSK",
    ModulationScheme.QAM16: "16QAM",
    ModulationScheme.QAM32: "32QAM",
    ModulationScheme.QAM64: "64QAM",
    ModulationScheme.QAM128: "128QAM",
    ModulationScheme.QAM256: "256QAM",
    ModulationScheme.APSK16: "16APSK",
    ModulationScheme.APSK32: "32APSK",
    ModulationScheme.APSK64: "64APSK",
    ModulationScheme.APSK128: "128APSK",
    ModulationScheme.OOK: "OOK",
    ModulationScheme.ASK4: "4ASK",
    ModulationScheme.GMSK: "GMSK",
    ModulationScheme.FM: "FM",
    ModulationScheme.AM: "AM",
    ModulationScheme.DSB: "DSB",
    ModulationScheme.SSB: "SSB",
}

_SCHEME_BY_LABEL = {label: scheme for scheme, label in _LABELS.items()}

ANALOG_SCHEMES = frozenset(
    {
        ModulationScheme.GMSK,
        ModulationScheme.FM,
        ModulationScheme.AM,
        ModulationScheme.DSB,
        ModulationScheme.SSB,
    }
)

DIGITAL_SCHEMES = frozenset(set(ModulationScheme) - ANALOG_SCHEMES)


@dataclass(frozen=True)
class SynthesisParams:
    """Waveform parameters; the defaults are the shipped configuration."""

    rrc_rolloff: float = 0.35
    samples_per_symbol: int = SAMPLES_PER_SYMBOL
    rrc_span_symbols: int = 16
    am_index: float = 0.8
    fm_deviation: float = 0.05  # peak deviation as a fraction of sample rate
    gmsk_bt: float = 0.3
    message_tones: int = 8
    message_max_freq: float = 0.05  # fraction of sample rate


DEFAULT_PARAMS = SynthesisParams()


@dataclass(frozen=True)
class Constellation:
    """Unit-mean-energy symbol alphabet with a bits-to-point labeling.

    ``points`` are stored in geometric enumeration order and
    ``labeling[bit_value]`` gives the point index for a bit group read
    MSB-first.
    """

    points: np.ndarray
    bits_per_symbol: int
    labeling: np.ndarray

    def symbol_for_bits(self, value: int) -> complex:
        return complex(self.points[self.labeling[value]])


@dataclass(frozen=True)
class BasebandSignal:
    """Complex baseband frame; ``sample_rate_ratio`` is samples per symbol
    (8 for the linear schemes and GMSK, 1 for direct analog synthesis)."""

    samples: np.ndarray
    sample_rate_ratio: int


def _gray(k: int) -> int:
    return k ^ (k >> 1)


def _gray_positions(m: int) -> np.ndarray:
    """pos[v] = k such that gray(k) == v."""
    pos = np.empty(m, dtype=np.int64)
    for k in range(m):
        pos[_gray(k)] = k
    return pos


def _normalized(points: np.ndarray) -> np.ndarray:
    return points / math.sqrt(float(np.mean(np.abs(points) ** 2)))


def _psk(m: int) -> Constellation:
    points = np.exp(2j * np.pi * np.arange(m) / m)
    return Constellation(points, int(math.log2(m)), _gray_positions(m))


def _square_qam(side: int) -> Constellation:
    levels = 2 * np.arange(side) - (side - 1)
    points = (levels[:, None] + 1j * levels[None, :]).ravel()
    bits_axis = int(math.log2(side))
    pos = _gray_positions(side)
    labeling = np.empty(side * side, dtype=np.int64)
    for v in range(side * side):
        vi, vq = v >> bits_axis, v & (side - 1)
        labeling[v] = pos[vi] * side + pos[vq]
    return Constellation(_normalized(points), 2 * bits_axis, labeling)


def _cross_qam(total: int) -> Constellation:
    # 32: 6x6 grid minus the four corner points; 128: 12x12 minus 2x2 corners.
    side, cut = (6, 1) if total == 32 else (12, 2)
    levels = 2 * np.arange(side) - (side - 1)
    corner = levels[side - cut]  # smallest magnitude level inside the cut
    points = [
        complex(i, q)
        for i in levels
        for q in levels
        if not (abs(i) >= corner and abs(q) >= corner)
    ]
    assert len(points) == total
    bits = int(math.log2(total))
    return Constellation(
        _normalized(np.array(points)), bits, np.arange(total, dtype=np.int64)
    )


def _apsk(rings: tuple[tuple[int, float, float], ...]) -> Constellation:
    points = []
    for count, radius, offset in rings:
        angles = offset + 2 * np.pi * np.arange(count) / count
        points.extend(radius * np.exp(1j * angles))
    total = len(points)
    bits = int(math.log2(total))
    return Constellation(
        _normalized(np.array(points)), bits, np.arange(total, dtype=np.int64)
    )


def _ask(levels: np.ndarray, gray: bool) -> Constellation:
    m = len(levels)
    bits = int(math.log2(m))
    labeling = _gray_positions(m) if gray else np.arange(m, dtype=np.int64)
    return Constellation(_normalized(levels.astype(complex)), bits, labeling)


@lru_cache(maxsize=None)
def build_constellation(scheme: ModulationScheme) -> Constellation:
    """Return the scheme's unit-mean-energy constellation.

    PSK, square QAM and 4ASK use Gray labeling; cross QAM and APSK use
    natural binary labeling over a fixed geometric enumeration.  Analog
    schemes have no constellation and are rejected.
    """
    if scheme in ANALOG_SCHEMES:
        raise ValueError(f"{scheme.label} has no constellation")
    if scheme is ModulationScheme.BPSK:
        return Constellation(
            np.array([1.0 + 0j, -1.0 + 0j]), 1, np.array([0, 1], dtype=np.int64)
        )
    if scheme is ModulationScheme.QPSK:
        points = np.array([1 + 1j, -1 + 1j, -1 - 1j, 1 - 1j]) / math.sqrt(2)
        return Constellation(points, 2, _gray_positions(4))
    if scheme is ModulationScheme.PSK8:
        return _psk(8)
    if scheme is ModulationScheme.PSK16:
        return _psk(16)
    if scheme is ModulationScheme.QAM16:
        return _square_qam(4)
    if scheme is ModulationScheme.QAM64:
        return _square_qam(8)
    if scheme is ModulationScheme.QAM256:
        return _square_qam(16)
    if scheme is ModulationScheme.QAM32:
        return _cross_qam(32)
    if scheme is ModulationScheme.QAM128:
        return _cross_qam(128)
    if scheme is ModulationScheme.APSK16:
        # DVB-S2 4+12 layout, ring ratio 2.57
        return _apsk(((4, 1.0, np.pi / 4), (12, 2.57, np.pi / 12)))
    if scheme is ModulationScheme.APSK32:
        # DVB-S2 4+12+16 layout, ring ratios 2.84 / 5.27
        return _apsk(
            ((4, 1.0, np.pi / 4), (12, 2.84, np.pi / 12), (16, 5.27, 0.0))
        )
    if scheme is ModulationScheme.APSK64:
        return _apsk(
            (
                (4, 1.0, np.pi / 4),
                (12, 2.2, np.pi / 12),
                (20, 3.5, np.pi / 20),
                (28, 4.8, np.pi / 28),
            )
        )
    if scheme is ModulationScheme.APSK128:
        # doubled 64APSK ring densities on the same radii
        return _apsk(
            (
                (8, 1.0, np.pi / 8),
                (24, 2.2, np.pi / 24),
                (40, 3.5, np.pi / 40),
                (56, 4.8, np.pi / 56),
            )
        )
    if scheme is ModulationScheme.OOK:
        # bit 0 -> off, bit 1 -> on
        return Constellation(
            np.array([0j, math.sqrt(2) + 0j]), 1, np.array([0, 1], dtype=np.int64)
        )
    if scheme is ModulationScheme.ASK4:
        return _ask(np.array([-3.0, -1.0, 1.0, 3.0]), gray=True)
    raise ValueError(f"unhandled scheme {scheme!r}")


def map_symbols(constellation: Constellation, bits: np.ndarray) -> np.ndarray:
    """Map a 0/1 bit sequence onto constellation points, MSB first."""
    bits = np.asarray(bits)
    bps = constellation.bits_per_symbol
    if bits.size % bps != 0:
        raise ValueError(
            f"bit count {bits.size} is not a multiple of {bps} bits per symbol"
        )
    groups = bits.reshape(-1, bps).astype(np.int64)
    weights = 1 << np.arange(bps - 1, -1, -1)
    values = groups @ weights
    return constellation.points[constellation.labeling[values]]


def rrc_taps(
    roll_off: float, samples_per_symbol: int, span_symbols: int
) -> np.ndarray:
    """Unit-energy root-raised-cosine impulse response.

    Returns ``span_symbols * samples_per_symbol + 1`` taps, symmetric about
    the center, with the removable singularities at t = 0 and
    |t| = T/(4*roll_off) replaced by their analytic limits.
    """
    if not 0.0 < roll_off <= 1.0:
        raise ValueError(f"roll_off must be in (0, 1], got {roll_off}")
    if samples_per_symbol < 2:
        raise ValueError("samples_per_symbol must be >= 2")
    if span_symbols < 4 or span_symbols % 2 != 0:
        raise ValueError("span_symbols must be even and >= 4")

    n = span_symbols * samples_per_symbol + 1
    t = (np.arange(n) - (n - 1) / 2) / samples_per_symbol  # in symbol periods
    beta = roll_off

    at_zero = t == 0.0
    at_edge = np.isclose(np.abs(4.0 * beta * t), 1.0, rtol=0.0, atol=1e-12)
    # placeholder far from both singularities for the masked positions
    safe_t = np.where(at_zero | at_edge, 1.0 / (8.0 * beta), t)

    num = np.sin(np.pi * safe_t * (1 - beta)) + 4 * beta * safe_t * np.cos(
        np.pi * safe_t * (1 + beta)
    )
    den = np.pi * safe_t * (1 - (4 * beta * safe_t) ** 2)
    taps = num / den

    taps = np.where(at_zero, 1 - beta + 4 * beta / np.pi, taps)
    edge = (beta / math.sqrt(2)) * (
        (1 + 2 / np.pi) * math.sin(np.pi / (4 * beta))
        + (1 - 2 / np.pi) * math.cos(np.pi / (4 * beta))
    )
    taps = np.where(at_edge, edge, taps)

    return taps / math.sqrt(float(np.sum(taps**2)))


def pulse_shape(
    symbols: np.ndarray,
    taps: np.ndarray,
    samples_per_symbol: int,
    num_samples: int | None = None,
) -> BasebandSignal:
    """Upsample by zero insertion, filter, trim to steady state, normalize.

    With ``num_samples`` given, only samples with full filter support are
    kept (the central ``num_samples`` of them); with ``num_samples=None``
    the full filter response is returned, which is useful for inspecting
    the impulse response.  Output is scaled to unit mean power.
    """
    symbols = np.asarray(symbols, dtype=complex)
    taps = np.asarray(taps, dtype=float)
    if symbols.size == 0 or taps.size == 0:
        raise ValueError("symbols and taps must be non-empty")

    up = np.zeros(symbols.size * samples_per_symbol, dtype=complex)
    up[::samples_per_symbol] = symbols
    full = np.convolve(up, taps)

    if num_samples is None:
        out = full
    else:
        steady = up.size - (taps.size - 1)
        if steady < num_samples:
            span = (taps.size - 1) // samples_per_symbol
            need = math.ceil(num_samples / samples_per_symbol) + span
            raise ValueError(
                f"only {max(steady, 0)} steady-state samples available for "
                f"{num_samples} requested; supply at least {need} symbols"
            )
        start = (taps.size - 1) + (steady - num_samples) // 2
        out = full[start : start + num_samples]

    out = out / math.sqrt(float(np.mean(np.abs(out) ** 2)))
    return BasebandSignal(out, samples_per_symbol)


def _random_message(
    num_samples: int, rng: np.random.Generator, params: SynthesisParams
) -> np.ndarray:
    """Band-limited random message: sum of random-phase tones, unit RMS."""
    freqs = rng.uniform(0.0, params.message_max_freq, params.message_tones)
    phases = rng.uniform(0.0, 2 * np.pi, params.message_tones)
    t = np.arange(num_samples)
    msg = np.sum(
        np.cos(2 * np.pi * freqs[:, None] * t[None, :] + phases[:, None]), axis=0
    )
    return msg / math.sqrt(float(np.mean(msg**2)))


def _analytic_signal(real_signal: np.ndarray) -> np.ndarray:
    """One-sided-spectrum (analytic) signal of a real frame via the FFT."""
    n = real_signal.size
    spectrum = np.fft.fft(real_signal)
    gain = np.zeros(n)
    gain[0] = 1.0
    if n % 2 == 0:
        gain[n // 2] = 1.0
        gain[1 : n // 2] = 2.0
    else:
        gain[1 : (n + 1) // 2] = 2.0
    return np.fft.ifft(spectrum * gain)


def _gmsk(
    num_samples: int, rng: np.random.Generator, params: SynthesisParams
) -> np.ndarray:
    sps = params.samples_per_symbol
    gauss_span = 4  # symbols; tails beyond this are negligible at BT >= 0.3
    n_bits = math.ceil(num_samples / sps) + 2 * gauss_span

    nrz = np.repeat(2.0 * rng.integers(0, 2, n_bits) - 1.0, sps)

    n_taps = gauss_span * sps + 1
    tt = (np.arange(n_taps) - (n_taps - 1) / 2) / sps
    sigma = math.sqrt(math.log(2)) / (2 * np.pi * params.gmsk_bt)
    gauss = np.exp(-(tt**2) / (2 * sigma**2))
    gauss /= gauss.sum()

    freq = np.convolve(nrz, gauss)
    phase = np.cumsum(freq) * (np.pi / (2 * sps))
    samples = np.exp(1j * phase)

    steady = nrz.size - (n_taps - 1)
    start = (n_taps - 1) + (steady - num_samples) // 2
    return samples[start : start + num_samples]


def synthesize_analog(
    scheme: ModulationScheme,
    num_samples: int,
    rng: np.random.Generator,
    params: SynthesisParams = DEFAULT_PARAMS,
) -> BasebandSignal:
    """Direct synthesis for GMSK, FM, AM, DSB and SSB.

    FM/AM/DSB/SSB modulate a band-limited random message; GMSK runs a
    Gaussian-filtered continuous-phase modulator over random bits.  The AM
    message is peak-normalized so the envelope stays non-negative for
    modulation indices <= 1.
    """
    if scheme not in ANALOG_SCHEMES:
        raise ValueError(f"{scheme.label} is not an analog or GMSK scheme")

    if scheme is ModulationScheme.GMSK:
        samples = _gmsk(num_samples, rng, params)
        ratio = params.samples_per_symbol
    else:
        msg = _random_message(num_samples, rng, params)
        ratio = 1
        if scheme is ModulationScheme.FM:
            phase = 2 * np.pi * params.fm_deviation * np.cumsum(msg)
            samples = np.exp(1j * phase)
        elif scheme is ModulationScheme.AM:
            peak = msg / np.max(np.abs(msg))
            samples = (1.0 + params.am_index * peak).astype(complex)
        elif scheme is ModulationScheme.DSB:
            samples = msg.astype(complex)
        else:  # SSB, upper sideband
            samples = _analytic_signal(msg)

    samples = samples / math.sqrt(float(np.mean(np.abs(samples) ** 2)))
    return BasebandSignal(samples, ratio)


def synthesize(
    scheme: ModulationScheme,
    num_samples: int,
    rng: np.random.Generator,
    params: SynthesisParams = DEFAULT_PARAMS,
) -> BasebandSignal:
    """Synthesize one unit-power frame of ``num_samples`` for any scheme."""
    if num_samples < 1:
        raise ValueError("num_samples must be >= 1")
    if scheme in ANALOG_SCHEMES:
        return synthesize_analog(scheme, num_samples, rng, params)

    constellation = build_constellation(scheme)
    sps = params.samples_per_symbol
    n_symbols = math.ceil(num_samples / sps) + params.rrc_span_symbols
    bits = rng.integers(0, 2, n_symbols * constellation.bits_per_symbol)
    symbols = map_symbols(constellation, bits)
    taps = rrc_taps(params.rrc_rolloff, sps, params.rrc_span_symbols)
    return pulse_shape(symbols, taps, sps, num_samples)
