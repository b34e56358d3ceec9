"""Deterministic synthetic multi-speaker corpus.

Each utterance is a string of symbols. Voiced symbols render as a harmonic
tone at the speaker's f0, shaped by symbol formants scaled by the speaker's
vocal-tract factor; unvoiced symbols render as band-limited noise. Segment
boundaries fall exactly between frame centers, so the frame-level
voiced/unvoiced truth (the oracle mask) is known by construction.

Sentences are shared across speakers (a parallel corpus). Every utterance
draws from its own seed derived from (corpus seed, speaker, sentence).
"""
from __future__ import annotations

import json
import os
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .dsp import AperiodicityMask, AudioBuffer, DspConfig
from .errors import CorpusError
from .fileio import quantize_pcm16, read_mask, read_wav, write_mask, write_wav
from .tts import TextSeq

FORMAT = "intelliz-corpus-1"


@dataclass(frozen=True)
class Symbol:
    name: str
    voiced: bool
    # voiced: formant centers (Hz); unvoiced: (band center, bandwidth) in Hz
    shape: tuple


VOCAB = (
    Symbol("a", True, (730.0, 1090.0, 2440.0)),
    Symbol("i", True, (270.0, 2290.0, 3010.0)),
    Symbol("u", True, (300.0, 870.0, 2240.0)),
    Symbol("e", True, (530.0, 1840.0, 2480.0)),
    Symbol("o", True, (570.0, 840.0, 2410.0)),
    Symbol("ae", True, (660.0, 1720.0, 2410.0)),
    Symbol("uh", True, (440.0, 1020.0, 2240.0)),
    Symbol("ah", True, (490.0, 1350.0, 1690.0)),
    Symbol("s", False, (6500.0, 2500.0)),
    Symbol("sh", False, (3500.0, 1500.0)),
    Symbol("f", False, (5000.0, 6000.0)),
    Symbol("h", False, (1500.0, 1200.0)),
)
VOICED = np.array([s.voiced for s in VOCAB])


@dataclass(frozen=True)
class SyntheticSpeaker:
    speaker_id: str
    f0_base: float
    formant_scale: float
    noise_color: float
    tilt: float
    gain: float


@dataclass(eq=False)
class SyntheticUtterance:
    speaker_id: str
    sentence_id: int
    audio: AudioBuffer
    text: TextSeq
    voiced_flags: np.ndarray
    oracle_mask: AperiodicityMask

    @property
    def key(self) -> str:
        return f"{self.speaker_id}/{sentence_name(self.sentence_id)}"


@dataclass(eq=False)
class Corpus:
    speakers: list
    utterances: list
    sample_rate: int
    hop_size: int
    window_size: int
    seed: int
    texts: list = field(default_factory=list)

    def by_speaker(self) -> dict:
        out: dict = {}
        for u in self.utterances:
            out.setdefault(u.speaker_id, []).append(u)
        return out

    @property
    def speaker_ids(self) -> list:
        return [s.speaker_id for s in self.speakers]


def sentence_name(j: int) -> str:
    return f"s{j:03d}"


def make_speakers(n: int, seed: int, dsp: DspConfig = DspConfig()) -> list:
    """Speakers spread over f0 and vocal-tract scale so no two coincide."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0FFEE]))
    lo, hi = max(90.0, dsp.f0_min * 1.3), min(250.0, dsp.f0_max * 0.8)
    pos = (np.arange(n) + 0.5 + rng.uniform(-0.25, 0.25, n)) / n
    scale_pos = (np.arange(n) * 0.618034) % 1.0
    color_pos = (np.arange(n) * 0.381966 + 0.5) % 1.0
    speakers = []
    for i in range(n):
        speakers.append(SyntheticSpeaker(
            speaker_id=f"spk{i:02d}",
            f0_base=float(lo * (hi / lo) ** pos[i]),
            formant_scale=float(0.85 + 0.35 * scale_pos[i]),
            noise_color=float(-1.0 + 2.0 * color_pos[i]),
            tilt=float(rng.uniform(0.6, 1.4)),
            gain=float(rng.uniform(0.8, 1.2)),
        ))
    return speakers


def make_text(rng: np.random.Generator, min_len=6, max_len=12, min_dur=5, max_dur=10) -> TextSeq:
    n = int(rng.integers(min_len, max_len + 1))
    while True:
        sym = rng.integers(0, len(VOCAB), size=n)
        if VOICED[sym].any() and (~VOICED[sym]).any():
            break
    return TextSeq(sym, rng.integers(min_dur, max_dur + 1, size=n))


def segment_bounds(text: TextSeq, hop: int) -> np.ndarray:
    """Sample boundaries of each symbol; boundaries sit half a hop before a
    frame center so frame t (centered at t*hop) belongs to one segment."""
    cum = np.concatenate([[0], np.cumsum(text.durations)])
    bounds = cum * hop - hop // 2
    bounds[0] = 0
    return bounds


def oracle_mask(text: TextSeq) -> AperiodicityMask:
    return AperiodicityMask(VOICED[text.frame_symbols()].astype(np.uint8))


def boundary_frames(text: TextSeq, dsp: DspConfig) -> np.ndarray:
    """True for frames whose analysis window is not inside one segment.

    Windows that reach past either end of the signal count as boundary
    frames too, since reflect padding breaks periodicity there.
    """
    bounds = segment_bounds(text, dsp.hop_size)
    seg = np.repeat(np.arange(len(text.durations)), text.durations)
    t = np.arange(text.frame_count)
    lo = t * dsp.hop_size - dsp.window_size // 2
    hi = lo + dsp.window_size
    start, end = bounds[seg], bounds[seg + 1]
    return (lo < start) | (hi > end)


def _envelope(freqs, formants, scale, tilt):
    env = np.full_like(freqs, 0.02)
    for k, F in enumerate(formants):
        Fs = F * scale
        bw = 60.0 + 0.08 * Fs
        env += (0.7 ** k) * np.exp(-0.5 * ((freqs - Fs) / bw) ** 2)
    return env * (np.maximum(freqs, 100.0) / 100.0) ** (-0.5 * tilt)


def _voiced(n, start, sr, f0, phases, symbol, spk):
    t = (start + np.arange(n)) / sr
    k = np.arange(1, len(phases) + 1)
    amps = _envelope(k * f0, symbol.shape, spk.formant_scale, spk.tilt)
    x = np.sin(2 * np.pi * f0 * np.outer(t, k) + phases) @ amps
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def _unvoiced(n, sr, rng, symbol, spk):
    noise = rng.standard_normal(n)
    spec = np.fft.rfft(noise)
    freqs = np.fft.rfftfreq(n, 1.0 / sr)
    center = min(symbol.shape[0] * spk.formant_scale, 0.45 * sr)
    band = np.exp(-0.5 * ((freqs - center) / symbol.shape[1]) ** 2)
    color = (np.maximum(freqs, 200.0) / 4000.0) ** (0.5 * spk.noise_color)
    x = np.fft.irfft(spec * band * color, n=n)
    return x / (np.sqrt(np.mean(x ** 2)) + 1e-12)


def render_utterance(spk: SyntheticSpeaker, text: TextSeq, rng: np.random.Generator,
                     dsp: DspConfig = DspConfig()) -> AudioBuffer:
    """Synthesize the waveform of ``text`` spoken by ``spk``."""
    sr = dsp.sample_rate
    bounds = segment_bounds(text, dsp.hop_size)
    f0 = spk.f0_base * (1.0 + rng.uniform(-0.03, 0.03))
    n_harm = int(min(5000.0, 0.45 * sr) // f0)
    phases = rng.uniform(0, 2 * np.pi, n_harm)
    gain = spk.gain * (1.0 + rng.uniform(-0.1, 0.1))
    x = np.zeros(bounds[-1])
    for k, sym_id in enumerate(text.symbols):
        a, b = bounds[k], bounds[k + 1]
        sym = VOCAB[sym_id]
        if sym.voiced:
            seg = 0.15 * _voiced(b - a, a, sr, f0, phases, sym, spk)
            seg += 0.002 * rng.standard_normal(b - a)
        else:
            seg = 0.06 * _unvoiced(b - a, sr, rng, sym, spk)
        x[a:b] = gain * seg
    return AudioBuffer(quantize_pcm16(np.clip(x, -0.99, 0.99)), sr)


def utterance_rng(seed: int, speaker_index: int, sentence: int, variant: int = 0):
    return np.random.default_rng(np.random.SeedSequence([seed, speaker_index + 1, sentence + 1, variant]))


def make_corpus(n_speakers: int, n_sentences: int, seed: int, dsp: DspConfig = DspConfig()) -> Corpus:
    if n_speakers < 2:
        raise CorpusError("need ≥2 speakers")
    if n_sentences < 2:
        raise CorpusError("need ≥2 sentences per speaker")
    speakers = make_speakers(n_speakers, seed, dsp)
    text_rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E47]))
    texts = [make_text(text_rng) for _ in range(n_sentences)]
    utts = []
    for i, spk in enumerate(speakers):
        for j, text in enumerate(texts):
            audio = render_utterance(spk, text, utterance_rng(seed, i, j), dsp)
            utts.append(SyntheticUtterance(spk.speaker_id, j, audio, text, VOICED[text.symbols].copy(),
                                           oracle_mask(text)))
    return Corpus(speakers, utts, dsp.sample_rate, dsp.hop_size, dsp.window_size, seed, texts)


# -- on-disk layout ----------------------------------------------------------

def _text_lines(text: TextSeq) -> str:
    return " ".join(map(str, text.symbols)) + "\n" + " ".join(map(str, text.durations)) + "\n"


def _parse_text(raw: str, path) -> TextSeq:
    lines = raw.strip().splitlines()
    if len(lines) != 2:
        raise CorpusError(f"{path}: expected two lines (symbol ids, durations)")
    try:
        return TextSeq([int(t) for t in lines[0].split()], [int(t) for t in lines[1].split()])
    except ValueError as exc:
        raise CorpusError(f"{path}: {exc}") from None


def write_corpus(corpus: Corpus, root) -> Path:
    """Write ``<root>/<speaker>/<sentence>.{wav,txt,msk}`` plus manifest.json.

    The tree is built in a sibling temp dir and renamed into place; ``root``
    must not exist or be an empty directory.
    """
    root = Path(root)
    if root.exists() and (not root.is_dir() or any(root.iterdir())):
        raise CorpusError(f"{root} exists and is not an empty directory")
    root.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(dir=root.parent, prefix=f".{root.name}."))
    try:
        entries = []
        for u in corpus.utterances:
            d = tmp / u.speaker_id
            d.mkdir(exist_ok=True)
            stem = sentence_name(u.sentence_id)
            write_wav(d / f"{stem}.wav", u.audio)
            (d / f"{stem}.txt").write_text(_text_lines(u.text))
            write_mask(d / f"{stem}.msk", u.oracle_mask)
            entries.append({"speaker": u.speaker_id, "sentence": u.sentence_id,
                            "wav": f"{u.speaker_id}/{stem}.wav", "txt": f"{u.speaker_id}/{stem}.txt",
                            "msk": f"{u.speaker_id}/{stem}.msk", "frames": u.text.frame_count})
        manifest = {
            "format": FORMAT,
            "seed": corpus.seed,
            "sample_rate": corpus.sample_rate,
            "hop_size": corpus.hop_size,
            "window_size": corpus.window_size,
            "vocab": [{"id": i, "name": s.name, "voiced": s.voiced} for i, s in enumerate(VOCAB)],
            "speakers": [asdict(s) for s in corpus.speakers],
            "utterances": entries,
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        if root.exists():
            root.rmdir()
        os.replace(tmp, root)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise
    return root


def load_corpus(root) -> Corpus:
    root = Path(root)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except FileNotFoundError:
        raise CorpusError(f"{root}: no manifest.json") from None
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{root}/manifest.json: {exc}") from None
    if manifest.get("format") != FORMAT:
        raise CorpusError(f"{root}: unsupported corpus format {manifest.get('format')!r}")
    speakers = [SyntheticSpeaker(**s) for s in manifest["speakers"]]
    texts: dict = {}
    utts = []
    for e in manifest["utterances"]:
        audio = read_wav(root / e["wav"])
        text = _parse_text((root / e["txt"]).read_text(), root / e["txt"])
        if int(text.symbols.max()) >= len(VOCAB):
            raise CorpusError(f"{e['txt']}: symbol outside the vocabulary")
        mask = read_mask(root / e["msk"])
        if len(mask) != text.frame_count:
            raise CorpusError(f"{e['msk']}: mask length {len(mask)} != text frames {text.frame_count}")
        texts.setdefault(e["sentence"], text)
        utts.append(SyntheticUtterance(e["speaker"], e["sentence"], audio, text,
                                       VOICED[text.symbols].copy(), mask))
    return Corpus(speakers, utts, manifest["sample_rate"], manifest["hop_size"], manifest["window_size"],
                  manifest["seed"], [texts[k] for k in sorted(texts)])
