"""Turn a corpus into model-ready arrays: normalized log-mels and masks."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .corpus import Corpus
from .dsp import DspConfig, compute_mel, make_mask, estimate_periodicity
from .errors import CorpusError
from .tts import TextSeq


@dataclass(frozen=True)
class MelNorm:
    """Global affine normalization of log-mel values."""

    mean: float
    std: float

    def apply(self, frames):
        return (np.asarray(frames) - self.mean) / self.std

    def invert(self, frames):
        return np.asarray(frames) * self.std + self.mean

    def to_list(self):
        return [self.mean, self.std]


@dataclass(eq=False)
class PreparedUtterance:
    speaker: str
    sentence: int
    text: TextSeq
    mel: np.ndarray  # normalized (T, M)
    mask: np.ndarray  # estimated voicing bits
    oracle: np.ndarray  # construction-time voicing bits


@dataclass(eq=False)
class PreparedCorpus:
    utterances: list
    norm: MelNorm
    dsp: DspConfig

    def by_speaker(self) -> dict:
        out: dict = {}
        for u in self.utterances:
            out.setdefault(u.speaker, []).append(u)
        return out

    @property
    def speakers(self) -> list:
        return sorted({u.speaker for u in self.utterances})

    @property
    def texts(self) -> dict:
        return {u.sentence: u.text for u in self.utterances}


def prepare_corpus(corpus: Corpus, dsp: DspConfig = DspConfig(), norm: MelNorm | None = None) -> PreparedCorpus:
    """Compute mels and estimated masks for every utterance.

    ``norm`` defaults to the mean/std of all log-mel values in the corpus.
    """
    if corpus.sample_rate != dsp.sample_rate or corpus.hop_size != dsp.hop_size:
        raise CorpusError("corpus sample rate / hop size do not match the dsp config")
    raw = []
    for u in corpus.utterances:
        mel = compute_mel(u.audio, dsp).frames
        if mel.shape[0] != u.text.frame_count:
            raise CorpusError(f"{u.key}: {mel.shape[0]} mel frames but durations sum to {u.text.frame_count}")
        mask = make_mask(estimate_periodicity(u.audio, dsp), dsp.periodicity_threshold).bits
        raw.append((u, mel, mask))
    if norm is None:
        allv = np.concatenate([m.reshape(-1) for _, m, _ in raw])
        norm = MelNorm(float(allv.mean()), float(allv.std()) or 1.0)
    utts = [PreparedUtterance(u.speaker_id, u.sentence_id, u.text, norm.apply(mel), mask, u.oracle_mask.bits)
            for u, mel, mask in raw]
    return PreparedCorpus(utts, norm, dsp)
