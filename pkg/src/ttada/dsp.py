"""Waveform-to-log-mel front end plus deterministic synthetic audio.

Front-end constants default to a 44.1 kHz signal analysed with a 1024-point
Hann window, hop 320, and 64 mel bins spanning 50-14000 Hz. The mel scale is
the HTK form m = 2595*log10(1 + f/700); spectra are magnitude-squared and
floored at 1e-10 before the natural log.
"""

from __future__ import annotations

import wave as _wave
from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np

from .errors import FormatError, ValidationError
from .seeding import make_rng, stable_seed

if TYPE_CHECKING:  # pragma: no cover
    from .harness import SyntheticDomainSpec

LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class DspConfig:
    sample_rate_hz: int = 44100
    window_size: int = 1024
    hop_size: int = 320
    mel_bins: int = 64
    fmin_hz: float = 50.0
    fmax_hz: float = 14000.0

    def __post_init__(self):
        if self.hop_size > self.window_size:
            raise ValidationError(
                f"hop_size {self.hop_size} exceeds window_size {self.window_size}"
            )
        if self.hop_size < 1 or self.window_size < 2:
            raise ValidationError("hop_size and window_size must be positive")
        if not (0 <= self.fmin_hz < self.fmax_hz <= self.sample_rate_hz / 2):
            raise ValidationError(
                f"need fmin < fmax <= nyquist; got [{self.fmin_hz}, {self.fmax_hz}] "
                f"at rate {self.sample_rate_hz}"
            )
        if self.mel_bins < 2:
            raise ValidationError(f"mel_bins must be >= 2, got {self.mel_bins}")

    @property
    def fft_bins(self) -> int:
        return self.window_size // 2 + 1


@dataclass
class MelSpectrogram:
    """T x F matrix of log-mel energies with its front-end provenance."""

    frames: np.ndarray
    config: DspConfig
    source_id: str = ""

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValidationError(
                f"mel frames must be a T x F matrix with T >= 1, got {self.frames.shape}"
            )
        if self.frames.shape[1] != self.config.mel_bins:
            raise ValidationError(
                f"mel frames have {self.frames.shape[1]} bins, config says "
                f"{self.config.mel_bins}"
            )
        if not np.all(np.isfinite(self.frames)):
            raise ValidationError("mel frames contain non-finite entries")


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(config: DspConfig) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter, mel-spaced."""
    mel_pts = np.linspace(
        hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz), config.mel_bins + 2
    )
    return mel_to_hz(mel_pts)[1:-1]


def mel_filterbank(config: DspConfig) -> np.ndarray:
    """Triangular filters, one row per mel bin, over the rfft bin grid."""
    mel_pts = np.linspace(
        hz_to_mel(config.fmin_hz), hz_to_mel(config.fmax_hz), config.mel_bins + 2
    )
    hz_pts = mel_to_hz(mel_pts)
    bin_hz = np.arange(config.fft_bins) * config.sample_rate_hz / config.window_size
    fb = np.zeros((config.mel_bins, config.fft_bins))
    for m in range(config.mel_bins):
        lo, center, hi = hz_pts[m], hz_pts[m + 1], hz_pts[m + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        fb[m] = np.maximum(0.0, np.minimum(rising, falling))
        if not fb[m].any():
            raise ValidationError(
                f"mel filter {m} (center {center:.1f} Hz) covers no FFT bin; "
                f"reduce mel_bins or widen the frequency range"
            )
    return fb


def _hann(n: int) -> np.ndarray:
    # Periodic Hann, the standard STFT analysis window.
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_power(wave: np.ndarray, config: DspConfig) -> np.ndarray:
    """Hann-windowed magnitude-squared spectra, T = 1 + (len - window) // hop."""
    wave = np.asarray(wave, dtype=np.float64).reshape(-1)
    if len(wave) < config.window_size:
        raise ValidationError(
            f"waveform of {len(wave)} samples is shorter than one "
            f"{config.window_size}-sample window"
        )
    frames = np.lib.stride_tricks.sliding_window_view(wave, config.window_size)
    frames = frames[:: config.hop_size]
    spectra = np.fft.rfft(frames * _hann(config.window_size), axis=1)
    return (spectra.real**2 + spectra.imag**2).astype(np.float64)


def log_mel_spectrogram(
    wave: np.ndarray, config: DspConfig | None = None, source_id: str = ""
) -> MelSpectrogram:
    config = config or DspConfig()
    power = stft_power(wave, config)
    mel = power @ mel_filterbank(config).T
    return MelSpectrogram(np.log(mel + LOG_FLOOR), config, source_id)


# ---------------------------------------------------------------------------
# Synthetic class-conditional signals


def synth_waveform(spec: "SyntheticDomainSpec", class_id: int, seed: int) -> np.ndarray:
    """Deterministic class-conditional clip for one synthetic domain.

    The recipe family fixes the signal structure, the domain spec colors it
    (noise, bandpass, envelope). Identical (spec, class_id, seed) inputs
    produce bit-identical samples.
    """
    if not 0 <= class_id < spec.num_classes:
        raise ValidationError(
            f"unknown class {class_id} for domain '{spec.name}' "
            f"({spec.num_classes} classes)"
        )
    recipe = spec.class_recipes[class_id]
    rng = make_rng(stable_seed(seed, spec.name, class_id))
    sr = spec.sample_rate_hz
    n = int(round(spec.duration_s * sr))
    t = np.arange(n) / sr
    # Per-item multiplicative detuning; nonzero jitter makes neighboring
    # classes overlap so the classification task has genuine headroom.
    detune = 1.0 + recipe.params.get("jitter", 0.0) * rng.uniform(-1.0, 1.0)

    if recipe.family == "tone":
        f0 = recipe.params["freq"] * detune
        x = np.zeros(n)
        for k, amp in enumerate((1.0, 0.5, 0.25), start=1):
            x += amp * np.sin(2.0 * np.pi * k * f0 * t + rng.uniform(0, 2 * np.pi))
    elif recipe.family == "chirp":
        f0, f1 = recipe.params["f0"] * detune, recipe.params["f1"] * detune
        phase = 2.0 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2.0 * spec.duration_s))
        x = np.sin(phase + rng.uniform(0, 2 * np.pi))
        x += 0.3 * np.sin(2.0 * phase + rng.uniform(0, 2 * np.pi))
    elif recipe.family == "noise_burst":
        lo = recipe.params["band_lo"] * detune
        hi = recipe.params["band_hi"] * detune
        bursts = int(recipe.params.get("bursts", 3))
        x = _bandpass(rng.standard_normal(n), sr, lo, hi)
        env = np.zeros(n)
        width = n // (2 * bursts)
        for b in range(bursts):
            start = int((b + 0.25) * n / bursts)
            seg = np.arange(max(width, 1))
            ramp = 0.5 - 0.5 * np.cos(2.0 * np.pi * seg / max(width, 1))
            stop = min(start + len(ramp), n)
            env[start:stop] = np.maximum(env[start:stop], ramp[: stop - start])
        x *= env
    elif recipe.family == "am_tone":
        carrier = recipe.params["carrier"] * detune
        rate = recipe.params["rate"]
        tremolo = 0.55 + 0.45 * np.sin(2.0 * np.pi * rate * t + rng.uniform(0, 2 * np.pi))
        x = np.sin(2.0 * np.pi * carrier * t + rng.uniform(0, 2 * np.pi))
        x += 0.4 * np.sin(4.0 * np.pi * carrier * t + rng.uniform(0, 2 * np.pi))
        x *= tremolo
    else:
        raise ValidationError(f"unknown signal family '{recipe.family}'")

    if spec.envelope == "fade":
        ramp_len = max(1, int(0.2 * sr))
        ramp = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp_len) / ramp_len)
        x[:ramp_len] *= ramp
        x[-ramp_len:] *= ramp[::-1]
    elif spec.envelope != "flat":
        raise ValidationError(f"unknown envelope '{spec.envelope}'")

    if spec.noise_level > 0.0:
        x = x + spec.noise_level * rng.standard_normal(n)
    if spec.bandpass is not None:
        x = _bandpass(x, sr, spec.bandpass[0], spec.bandpass[1])
    if spec.eq_tilt_db_per_octave != 0.0:
        x = _eq_tilt(x, sr, spec.eq_tilt_db_per_octave)
    peak = np.abs(x).max()
    if peak > 0.0:
        x = 0.7 * x / peak
    return x


def _bandpass(x: np.ndarray, sr: int, lo: float, hi: float) -> np.ndarray:
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), d=1.0 / sr)
    spectrum[(freqs < lo) | (freqs > hi)] = 0.0
    return np.fft.irfft(spectrum, n=len(x))


def _eq_tilt(x: np.ndarray, sr: int, db_per_octave: float, pivot_hz: float = 1000.0) -> np.ndarray:
    """Deterministic channel coloration: smooth spectral tilt around a pivot."""
    spectrum = np.fft.rfft(x)
    freqs = np.fft.rfftfreq(len(x), d=1.0 / sr)
    octaves = np.log2(np.maximum(freqs, 20.0) / pivot_hz)
    spectrum *= 10.0 ** (db_per_octave * octaves / 20.0)
    return np.fft.irfft(spectrum, n=len(x))


def resample_linear(samples: np.ndarray, src_rate: int, dst_rate: int) -> np.ndarray:
    """Linear-interpolation resampler; adequate at toy scale, not audiophile."""
    if src_rate == dst_rate:
        return np.asarray(samples, dtype=np.float64)
    samples = np.asarray(samples, dtype=np.float64)
    n_out = int(round(len(samples) * dst_rate / src_rate))
    t_src = np.arange(len(samples)) / src_rate
    t_dst = np.arange(n_out) / dst_rate
    return np.interp(t_dst, t_src, samples)


# ---------------------------------------------------------------------------
# WAV I/O (PCM 16-bit mono only)


def read_wav(path: str) -> tuple[np.ndarray, int]:
    """Read a PCM 16-bit mono RIFF/WAVE file, scaled to [-1, 1]."""
    try:
        with _wave.open(str(path), "rb") as wf:
            if wf.getcomptype() != "NONE":
                raise FormatError(
                    f"{path}: unsupported encoding '{wf.getcomptype()}' (need PCM)"
                )
            if wf.getsampwidth() != 2:
                raise FormatError(
                    f"{path}: {8 * wf.getsampwidth()}-bit samples unsupported "
                    f"(need 16-bit PCM)"
                )
            if wf.getnchannels() != 1:
                raise FormatError(
                    f"{path}: {wf.getnchannels()} channels unsupported (need mono)"
                )
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except _wave.Error as e:
        raise FormatError(f"{path}: malformed WAV header ({e})") from e
    except EOFError as e:
        raise FormatError(f"{path}: truncated WAV file") from e
    samples = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    return samples, rate


def write_wav(path: str, samples: np.ndarray, rate: int) -> None:
    """Write samples in [-1, 1] as PCM 16-bit mono."""
    quantized = np.clip(np.round(np.asarray(samples) * 32768.0), -32768, 32767)
    with _wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(rate)
        wf.writeframes(quantized.astype("<i2").tobytes())
