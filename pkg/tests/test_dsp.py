import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import SR, interior, sine
from intelliz.dsp import (AperiodicityMask, AudioBuffer, DspConfig, PeriodicityTrack, compute_mel,
                          estimate_periodicity, frame_count, frame_signal, make_mask, mel_filterbank)
from intelliz.errors import AudioFormatError, ConfigError


def naive_frame_count(n, window, hop):
    # walk the signal one hop at a time
    count, start = 0, 0
    while start + window <= n:
        count += 1
        start += hop
    return count


def htk_centers(n_mels, fmin, fmax):
    lo = 2595.0 * np.log10(1.0 + fmin / 700.0)
    hi = 2595.0 * np.log10(1.0 + fmax / 700.0)
    pts = np.linspace(lo, hi, n_mels + 2)[1:-1]
    return 700.0 * (10.0 ** (pts / 2595.0) - 1.0)


def test_frame_count_without_padding():
    cfg = DspConfig(center=False)
    assert frame_count(SR, cfg) == 90
    assert frame_count(SR, cfg) == naive_frame_count(SR, 1024, 256)
    assert compute_mel(AudioBuffer(np.zeros(SR)), cfg).frame_count == 90


def test_frame_count_centered():
    cfg = DspConfig()
    assert frame_count(SR, cfg) == 1 + SR // 256 == 94
    assert frame_signal(np.zeros(SR), cfg).shape == (94, 1024)


@given(st.integers(1024, 6000), st.sampled_from([64, 128, 256]))
def test_frame_count_matches_scalar_framer(n, hop):
    cfg = DspConfig(center=False, hop_size=hop)
    assert frame_count(n, cfg) == naive_frame_count(n, 1024, hop)


def test_zero_audio_gives_floor():
    cfg = DspConfig()
    mel = compute_mel(AudioBuffer(np.zeros(SR)), cfg)
    assert mel.frames.shape == (94, 100)
    assert np.all(mel.frames == np.log(1e-10))


def test_sine_440_peaks_at_nearest_center():
    cfg = DspConfig()
    mel = compute_mel(sine(440.0), cfg)
    want = int(np.argmin(np.abs(htk_centers(100, 0.0, 12000.0) - 440.0)))
    for t in interior(mel.frame_count):
        assert int(np.argmax(mel.frames[t])) == want


def test_filterbank_matches_triangle_oracle():
    cfg = DspConfig()
    fb = mel_filterbank(cfg)
    assert fb.shape == (100, 513)
    freqs = np.arange(513) * SR / 1024
    edges = np.concatenate([[0.0], htk_centers(100, 0.0, 12000.0), [12000.0]])
    for m in range(100):
        lo, c, hi = edges[m], edges[m + 1], edges[m + 2]
        for k in (int(np.argmin(np.abs(freqs - c))), int(np.searchsorted(freqs, hi)) - 1):
            f = freqs[k]
            want = max(0.0, min((f - lo) / (c - lo), (hi - f) / (hi - c)))
            assert abs(fb[m, k] - want) < 1e-9


def test_sine_220_periodicity_and_f0():
    track = estimate_periodicity(sine(220.0), DspConfig())
    idx = interior(len(track))
    assert np.all(track.values[idx] >= 0.99)
    assert np.all(np.abs(track.f0[idx] - 220.0) <= 5.0)


def test_white_noise_is_aperiodic():
    # the standalone oracle (scripts/noise_periodicity_oracle.py) puts the
    # best in-window peak of seeded white noise at about 0.10, max about 0.16
    rng = np.random.default_rng(0)
    x = np.clip(0.3 * rng.standard_normal(2 * SR), -1, 1)
    track = estimate_periodicity(AudioBuffer(x), DspConfig())
    assert np.all(track.values < 0.5)
    assert abs(np.mean(track.values) - 0.10) < 0.05


def test_silence_is_unvoiced():
    track = estimate_periodicity(AudioBuffer(np.zeros(SR)), DspConfig())
    assert np.all(track.values == 0) and np.all(track.f0 == 0)
    assert make_mask(track, 0.85).voiced_count == 0


@pytest.mark.parametrize("values, thr, want", [
    ([1.0, 0.3, 0.99], 1.0, [1, 0, 0]),
    ([0.98, 0.97, 0.2], 0.95, [1, 1, 0]),
    ([0.01, 0.5, 0.2], 1e-9, [1, 1, 1]),
])
def test_mask_examples(values, thr, want):
    track = PeriodicityTrack(np.array(values), np.zeros(len(values)))
    assert make_mask(track, thr).bits.tolist() == want


@pytest.mark.parametrize("thr", [0.0, -0.1, 1.01])
def test_mask_threshold_range(thr):
    with pytest.raises(ConfigError):
        make_mask(PeriodicityTrack(np.ones(3), np.ones(3)), thr)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=50), st.floats(0.01, 1), st.floats(0.01, 1))
def test_mask_monotone_in_threshold(values, a, b):
    lo, hi = min(a, b), max(a, b)
    track = PeriodicityTrack(np.array(values), np.zeros(len(values)))
    m_lo = make_mask(track, lo).bits
    m_hi = make_mask(track, hi).bits
    assert np.all(m_hi <= m_lo)


@settings(max_examples=25, deadline=None)
@given(st.integers(1100, 9000), st.integers(0, 2 ** 31), st.booleans())
def test_mel_and_periodicity_align(n, seed, center):
    cfg = DspConfig(center=center)
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, n)
    audio = AudioBuffer(x)
    assert compute_mel(audio, cfg).frame_count == len(estimate_periodicity(audio, cfg)) == frame_count(n, cfg)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_frontend_deterministic(seed):
    x = np.random.default_rng(seed).uniform(-0.5, 0.5, 4000)
    cfg = DspConfig()
    a, b = AudioBuffer(x), AudioBuffer(x.copy())
    assert compute_mel(a, cfg).frames.tobytes() == compute_mel(b, cfg).frames.tobytes()
    assert estimate_periodicity(a, cfg).values.tobytes() == estimate_periodicity(b, cfg).values.tobytes()


@pytest.mark.parametrize("samples, sr", [
    (np.zeros((10, 2)), SR),
    (np.zeros(0), SR),
    (np.array([0.0, np.nan]), SR),
    (np.array([0.0, 1.5]), SR),
])
def test_audio_buffer_rejects(samples, sr):
    with pytest.raises(AudioFormatError):
        AudioBuffer(samples, sr)


def test_sample_rate_mismatch():
    with pytest.raises(AudioFormatError):
        compute_mel(AudioBuffer(np.zeros(SR), 16000), DspConfig())


def test_short_audio_without_padding():
    with pytest.raises(AudioFormatError):
        compute_mel(AudioBuffer(np.zeros(500)), DspConfig(center=False))


@pytest.mark.parametrize("kw", [dict(hop_size=0), dict(mel_bins=0), dict(fmax=20000.0),
                                dict(periodicity_threshold=0.0), dict(window_size=2048, fft_size=1024),
                                dict(f0_min=20.0)])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        DspConfig(**kw)


def test_mask_ones():
    m = AperiodicityMask.ones(5)
    assert m.voiced_count == 5 and len(m) == 5
