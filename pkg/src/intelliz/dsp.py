"""Audio front end: log-mel spectrograms, periodicity tracks and voicing masks.

Mel and periodicity analysis share one framing routine, so for a given
config both produce the same number of frames, with frame ``t`` centered on
sample ``t * hop_size`` when ``center`` is on.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import AudioFormatError, ConfigError


@dataclass(frozen=True)
class DspConfig:
    sample_rate: int = 24000
    window_size: int = 1024
    fft_size: int = 1024
    hop_size: int = 256
    mel_bins: int = 100
    fmin: float = 0.0
    fmax: float | None = None
    f0_min: float = 60.0
    f0_max: float = 500.0
    periodicity_threshold: float = 0.85
    center: bool = True
    log_floor: float = 1e-10
    silence_rms: float = 1e-4
    octave_tolerance: float = 0.03

    def __post_init__(self):
        self.validate()

    @property
    def mel_fmax(self) -> float:
        return self.sample_rate / 2 if self.fmax is None else self.fmax

    def validate(self):
        nyq = self.sample_rate / 2
        checks = [
            (self.sample_rate > 0, "sample_rate must be positive"),
            (0 < self.window_size <= self.fft_size, "need 0 < window_size <= fft_size"),
            (0 < self.hop_size <= self.window_size, "need 0 < hop_size <= window_size"),
            (self.mel_bins > 0, "mel_bins must be positive"),
            (0 <= self.fmin < self.mel_fmax <= nyq, "need 0 <= fmin < fmax <= sample_rate/2"),
            (0 < self.f0_min < self.f0_max < nyq, "need 0 < f0_min < f0_max < sample_rate/2"),
            (0 < self.periodicity_threshold <= 1, "periodicity_threshold must be in (0, 1]"),
            (self.log_floor > 0, "log_floor must be positive"),
            (self.silence_rms >= 0, "silence_rms must be non-negative"),
            (0 <= self.octave_tolerance < 1, "octave_tolerance must be in [0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(f"dsp: {msg}")
        if math.ceil(self.sample_rate / self.f0_min) + 1 >= self.window_size:
            raise ConfigError("dsp: window too short for f0_min pitch lag")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class AudioBuffer:
    samples: np.ndarray
    sample_rate: int = 24000

    def __post_init__(self):
        x = np.asarray(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise AudioFormatError("audio must be mono (1-D samples)")
        if x.size == 0:
            raise AudioFormatError("audio is empty")
        if not np.all(np.isfinite(x)):
            raise AudioFormatError("audio contains non-finite samples")
        if np.max(np.abs(x)) > 1.0:
            raise AudioFormatError("audio samples must lie in [-1, 1]")
        if self.sample_rate <= 0:
            raise AudioFormatError("sample_rate must be positive")
        object.__setattr__(self, "samples", x)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate


@dataclass(eq=False)
class MelSpectrogram:
    frames: np.ndarray  # (T, M) natural-log mel energies
    hop_size: int = 256
    sample_rate: int = 24000

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ValueError("mel frames must be a (T, M) matrix with T >= 1")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("mel frames must be finite")

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def mel_bins(self) -> int:
        return self.frames.shape[1]


@dataclass(eq=False)
class PeriodicityTrack:
    values: np.ndarray  # periodicity in [0, 1]
    f0: np.ndarray  # Hz, 0 when unvoiced

    def __len__(self):
        return len(self.values)


@dataclass(eq=False)
class AperiodicityMask:
    """Per-frame voicing bits: 1 keeps the frame in pooling, 0 drops it."""

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.ndim != 1:
            raise ValueError("mask must be 1-D")
        if not np.all((bits == 0) | (bits == 1)):
            raise ValueError("mask bits must be 0 or 1")
        self.bits = bits.astype(np.uint8)

    def __len__(self):
        return len(self.bits)

    @property
    def voiced_count(self) -> int:
        return int(self.bits.sum())

    @classmethod
    def ones(cls, n: int) -> "AperiodicityMask":
        return cls(np.ones(n, dtype=np.uint8))


def frame_count(n_samples: int, cfg: DspConfig) -> int:
    if cfg.center:
        return 1 + n_samples // cfg.hop_size
    if n_samples < cfg.window_size:
        return 0
    return 1 + (n_samples - cfg.window_size) // cfg.hop_size


def _check_audio(audio: AudioBuffer, cfg: DspConfig):
    if audio.sample_rate != cfg.sample_rate:
        raise AudioFormatError(
            f"sample rate {audio.sample_rate} does not match config {cfg.sample_rate}")
    if frame_count(len(audio), cfg) < 1:
        raise AudioFormatError("audio shorter than one analysis window")


def frame_signal(x: np.ndarray, cfg: DspConfig) -> np.ndarray:
    """(T, window_size) matrix of analysis frames (a strided view)."""
    if cfg.center:
        half = cfg.window_size // 2
        x = np.pad(x, (half, cfg.window_size - half), mode="reflect")
    n = frame_count(len(x) - (cfg.window_size if cfg.center else 0), cfg)
    view = np.lib.stride_tricks.sliding_window_view(x, cfg.window_size)
    return view[::cfg.hop_size][:n]


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(cfg: DspConfig) -> np.ndarray:
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.mel_fmax), cfg.mel_bins + 2))
    return edges[1:-1]


def mel_filterbank(cfg: DspConfig) -> np.ndarray:
    """(mel_bins, fft_size//2 + 1) triangular filters with unit peak."""
    edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin), hz_to_mel(cfg.mel_fmax), cfg.mel_bins + 2))
    freqs = np.fft.rfftfreq(cfg.fft_size, 1.0 / cfg.sample_rate)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs[None, :] - lo) / (mid - lo)
    falling = (hi - freqs[None, :]) / (hi - mid)
    return np.maximum(0.0, np.minimum(rising, falling))


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def compute_mel(audio: AudioBuffer, cfg: DspConfig) -> MelSpectrogram:
    _check_audio(audio, cfg)
    frames = frame_signal(audio.samples, cfg) * hann(cfg.window_size)
    power = np.abs(np.fft.rfft(frames, n=cfg.fft_size, axis=1)) ** 2
    energy = power @ mel_filterbank(cfg).T
    return MelSpectrogram(np.log(np.maximum(energy, cfg.log_floor)), cfg.hop_size, cfg.sample_rate)


def _nccf(frames: np.ndarray, max_lag: int) -> np.ndarray:
    """Normalized cross-correlation of each frame with its own lagged copy.

    Returns (T, max_lag + 1); entry tau is
    sum x[n] x[n+tau] / sqrt(sum x[n]^2 * sum x[n+tau]^2) over the overlap.
    """
    W = frames.shape[1]
    nfft = 1 << (2 * W - 1).bit_length()
    spec = np.fft.rfft(frames, n=nfft, axis=1)
    cross = np.fft.irfft(np.abs(spec) ** 2, n=nfft, axis=1)[:, :max_lag + 1]
    sq = frames ** 2
    csum = np.concatenate([np.zeros((len(frames), 1)), np.cumsum(sq, axis=1)], axis=1)
    lags = np.arange(max_lag + 1)
    head = csum[:, W - lags]  # energy of x[0 : W-tau]
    tail = csum[:, W:W + 1] - csum[:, lags]  # energy of x[tau : W]
    denom = np.sqrt(np.maximum(head * tail, 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        r = np.where(denom > 0, cross / denom, 0.0)
    return np.clip(r, -1.0, 1.0)


def estimate_periodicity(audio: AudioBuffer, cfg: DspConfig) -> PeriodicityTrack:
    """Autocorrelation pitch tracker.

    For each frame the pitch lag is the shortest local maximum of the
    normalized autocorrelation in [sr/f0_max, sr/f0_min] whose height is
    within ``octave_tolerance`` of the tallest one. The lag and the peak
    height are refined by parabolic interpolation; the refined height,
    clamped to [0, 1], is the periodicity. Frames below ``silence_rms`` or
    without a positive peak are unvoiced (f0 = 0, periodicity = 0).
    """
    _check_audio(audio, cfg)
    frames = frame_signal(audio.samples, cfg)
    frames = frames - frames.mean(axis=1, keepdims=True)
    T = len(frames)
    sr = cfg.sample_rate
    lag_lo = max(2, int(math.floor(sr / cfg.f0_max)))
    lag_hi = int(math.ceil(sr / cfg.f0_min))
    r = _nccf(frames, lag_hi + 1)

    values = np.zeros(T)
    f0 = np.zeros(T)
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    for t in range(T):
        if rms[t] <= cfg.silence_rms:
            continue
        rt = r[t]
        mid = rt[lag_lo:lag_hi + 1]
        left = rt[lag_lo - 1:lag_hi]
        right = rt[lag_lo + 1:lag_hi + 2]
        peaks = np.nonzero((mid >= left) & (mid > right) & (mid > 0))[0]
        if peaks.size == 0:
            continue
        best = mid[peaks].max()
        k = peaks[mid[peaks] >= best - cfg.octave_tolerance][0]
        lag = lag_lo + k
        ym, y0, yp = rt[lag - 1], rt[lag], rt[lag + 1]
        curv = ym - 2 * y0 + yp
        delta = 0.0 if curv >= 0 else float(np.clip(0.5 * (ym - yp) / curv, -0.5, 0.5))
        peak = y0 - 0.25 * (ym - yp) * delta
        values[t] = min(max(peak, 0.0), 1.0)
        f0[t] = sr / (lag + delta)
    f0[values == 0] = 0.0
    return PeriodicityTrack(values, f0)


def make_mask(track: PeriodicityTrack, threshold: float) -> AperiodicityMask:
    """Bit is 1 where periodicity reaches ``threshold``, else 0."""
    if not 0 < threshold <= 1:
        raise ConfigError(f"threshold must be in (0, 1], got {threshold}")
    return AperiodicityMask((np.asarray(track.values) >= threshold).astype(np.uint8))


def voicing_mask(audio: AudioBuffer, cfg: DspConfig, threshold: float | None = None) -> AperiodicityMask:
    thr = cfg.periodicity_threshold if threshold is None else threshold
    return make_mask(estimate_periodicity(audio, cfg), thr)
