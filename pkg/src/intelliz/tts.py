"""Toy multi-speaker generator and its pretraining with a speaker lookup table.

The generator upsamples symbol embeddings by their (given) durations, adds a
projection of the speaker embedding to every frame and decodes each frame
independently to mel bins. Pretraining learns the generator jointly with a
per-speaker table; that table becomes the frozen set of prototypes.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import (ConfigError, CorpusError, DivergenceError, FrozenParameterError, MissingPrototypeError,
                     ShapeError, VocabularyError)
from .grad import (AdamState, DifferentiableOp, ParamSet, adam_step, glorot_normal, he_normal, make_rng,
                   mlp_backward, mlp_forward, register_op, relu_backward, relu_forward)

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class TextSeq:
    symbols: np.ndarray
    durations: np.ndarray

    def __post_init__(self):
        sym = np.asarray(self.symbols, dtype=np.int64).reshape(-1)
        dur = np.asarray(self.durations, dtype=np.int64).reshape(-1)
        if sym.size == 0:
            raise VocabularyError("text is empty")
        if sym.shape != dur.shape:
            raise ShapeError("symbols and durations differ in length")
        if np.any(sym < 0):
            raise VocabularyError("negative symbol id")
        if np.any(dur < 1):
            raise ShapeError("durations must be >= 1")
        object.__setattr__(self, "symbols", sym)
        object.__setattr__(self, "durations", dur)

    @property
    def frame_count(self) -> int:
        return int(self.durations.sum())

    def frame_symbols(self) -> np.ndarray:
        return np.repeat(self.symbols, self.durations)

    def __eq__(self, other):
        return (isinstance(other, TextSeq) and np.array_equal(self.symbols, other.symbols)
                and np.array_equal(self.durations, other.durations))

    def __hash__(self):
        return hash((self.symbols.tobytes(), self.durations.tobytes()))


@dataclass(frozen=True)
class GeneratorConfig:
    vocab_size: int = 12
    hidden: int = 128
    decoder_hidden: tuple[int, ...] = (128,)

    def __post_init__(self):
        object.__setattr__(self, "decoder_hidden", tuple(int(h) for h in self.decoder_hidden))
        if self.vocab_size < 1 or self.hidden < 1 or any(h < 1 for h in self.decoder_hidden):
            raise ConfigError("generator: sizes must be positive")

    @property
    def n_decoder_layers(self) -> int:
        return len(self.decoder_hidden) + 1


def init_generator_params(rng, cfg: GeneratorConfig, mel_bins: int, spk_dim: int) -> dict:
    params = {
        "gen.emb": rng.standard_normal((cfg.vocab_size, cfg.hidden)),
        "gen.Wc": glorot_normal(rng, cfg.hidden, spk_dim),
        "gen.bc": np.zeros(cfg.hidden),
    }
    sizes = (cfg.hidden, *cfg.decoder_hidden, mel_bins)
    for i in range(len(sizes) - 1):
        params[f"gen.W{i}"] = he_normal(rng, sizes[i + 1], sizes[i])
        params[f"gen.b{i}"] = np.zeros(sizes[i + 1])
    return params


def generate_forward(text: TextSeq, v, params, cfg: GeneratorConfig = GeneratorConfig()):
    """Y~ = G(X, v) as a (sum(durations), M) array. Returns ``(Y, cache)``."""
    emb = params["gen.emb"]
    if int(text.symbols.max()) >= emb.shape[0]:
        raise VocabularyError(f"symbol id {int(text.symbols.max())} >= vocab size {emb.shape[0]}")
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (params["gen.Wc"].shape[1],):
        raise ShapeError(f"speaker embedding has shape {v.shape}, expected ({params['gen.Wc'].shape[1]},)")
    sym = text.frame_symbols()
    pre = emb[sym] + (params["gen.Wc"] @ v + params["gen.bc"])
    h, relu_cache = relu_forward(pre)
    n = cfg.n_decoder_layers
    Y, mlp_cache = mlp_forward(h, [params[f"gen.W{i}"] for i in range(n)],
                               [params[f"gen.b{i}"] for i in range(n)])
    return Y, (sym, v, relu_cache, mlp_cache, params["gen.Wc"], emb.shape)


def generate_backward(dY, cache):
    """Returns ``(dv, grads)`` for the generator parameters."""
    sym, v, relu_cache, mlp_cache, Wc, emb_shape = cache
    dh, dWs, dbs = mlp_backward(dY, mlp_cache)
    dpre = relu_backward(dh, relu_cache)
    demb = np.zeros(emb_shape)
    np.add.at(demb, sym, dpre)
    dc = dpre.sum(axis=0)
    grads = {"gen.emb": demb, "gen.Wc": np.outer(dc, v), "gen.bc": dc}
    for i, (dW, db) in enumerate(zip(dWs, dbs)):
        grads[f"gen.W{i}"] = dW
        grads[f"gen.b{i}"] = db
    return Wc.T @ dc, grads


def generate(text: TextSeq, v, params, cfg: GeneratorConfig = GeneratorConfig(), hop_size=256,
             sample_rate=24000):
    from .dsp import MelSpectrogram

    return MelSpectrogram(generate_forward(text, v, params, cfg)[0], hop_size, sample_rate)


def l1_forward(pred, target):
    diff = pred - target
    return float(np.mean(np.abs(diff))), (np.sign(diff), diff.size)


def l1_backward(dloss, cache):
    sign, n = cache
    return dloss * sign / n


class PrototypeTable:
    """Speaker id -> prototype embedding, backed by one (n_speakers, d) array.

    Trainable during pretraining; :meth:`freeze` makes it immutable.
    """

    KEY = "proto.table"

    def __init__(self, speaker_ids, table):
        self.speaker_ids = list(speaker_ids)
        if len(set(self.speaker_ids)) != len(self.speaker_ids):
            raise CorpusError("duplicate speaker ids in prototype table")
        self.params = ParamSet({self.KEY: table})
        if self.params[self.KEY].shape[0] != len(self.speaker_ids):
            raise ShapeError("prototype table rows != number of speakers")
        self._index = {s: i for i, s in enumerate(self.speaker_ids)}

    @property
    def table(self) -> np.ndarray:
        return self.params[self.KEY]

    @property
    def dim(self) -> int:
        return self.table.shape[1]

    @property
    def frozen(self) -> bool:
        return self.params.frozen

    def freeze(self) -> "PrototypeTable":
        self.params.freeze()
        return self

    def index(self, speaker_id) -> int:
        try:
            return self._index[speaker_id]
        except KeyError:
            raise MissingPrototypeError(f"no prototype for speaker {speaker_id!r}") from None

    def __getitem__(self, speaker_id) -> np.ndarray:
        return self.table[self.index(speaker_id)]

    def __setitem__(self, speaker_id, value):
        if self.frozen:
            raise FrozenParameterError("prototype table is frozen")
        self.table[self.index(speaker_id)] = value

    def __contains__(self, speaker_id):
        return speaker_id in self._index

    def __len__(self):
        return len(self.speaker_ids)

    def to_tensors(self) -> dict:
        return {self.KEY: self.table}


@dataclass(frozen=True)
class PretrainConfig:
    steps: int = 300
    batch_size: int = 16
    lr: float = 3e-3
    seed: int = 0
    proto_init_std: float = 0.01

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ConfigError("pretrain: steps and batch_size must be >= 1")
        if self.lr <= 0 or self.proto_init_std < 0:
            raise ConfigError("pretrain: lr must be positive, proto_init_std non-negative")


@dataclass
class PretrainResult:
    generator: ParamSet
    prototypes: PrototypeTable
    losses: list


def pretrain_multispeaker(utterances, gen_cfg: GeneratorConfig, spk_dim: int,
                          cfg: PretrainConfig = PretrainConfig()) -> PretrainResult:
    """Fit G and the speaker table with L1 reconstruction on (X_n, Y_in) pairs.

    ``utterances`` is a sequence of objects with ``speaker``, ``text`` and
    ``mel`` (normalized (T, M) array) attributes.
    """
    utterances = list(utterances)
    by_speaker: dict = {}
    for u in utterances:
        by_speaker.setdefault(u.speaker, []).append(u)
    if len(by_speaker) < 2:
        raise CorpusError("need ≥2 speakers for multi-speaker pretraining")
    if min(len(v) for v in by_speaker.values()) < 2:
        raise CorpusError("need ≥2 sentences per speaker for multi-speaker pretraining")
    mel_bins = utterances[0].mel.shape[1]

    rng = make_rng(cfg.seed)
    gen = ParamSet(init_generator_params(rng, gen_cfg, mel_bins, spk_dim))
    speakers = sorted(by_speaker)
    protos = PrototypeTable(speakers, cfg.proto_init_std * rng.standard_normal((len(speakers), spk_dim)))
    opt_g = AdamState(lr=cfg.lr)
    opt_p = AdamState(lr=cfg.lr)
    losses = []
    batch = min(cfg.batch_size, len(utterances))
    for step in range(cfg.steps):
        idx = rng.choice(len(utterances), size=batch, replace=False)
        ggrads = {k: np.zeros_like(v) for k, v in gen.items()}
        pgrad = np.zeros_like(protos.table)
        total = 0.0
        for j in idx:
            u = utterances[j]
            row = protos.index(u.speaker)
            Y, cache = generate_forward(u.text, protos.table[row], gen, gen_cfg)
            loss, lcache = l1_forward(Y, u.mel)
            total += loss
            dv, g = generate_backward(l1_backward(1.0 / batch, lcache), cache)
            for k in g:
                ggrads[k] += g[k]
            pgrad[row] += dv
        total /= batch
        if not np.isfinite(total):
            raise DivergenceError(f"pretraining diverged at step {step} (loss={total})")
        losses.append(total)
        adam_step(opt_g, gen, ggrads)
        adam_step(opt_p, protos.params, {PrototypeTable.KEY: pgrad})
        if step % 50 == 0:
            log.debug("pretrain step %d  l_rec=%.4f", step, total)
    protos.freeze()
    return PretrainResult(gen, protos, losses)


class GeneratorOp(DifferentiableOp):
    name = "generator"

    def __init__(self, text: TextSeq, cfg: GeneratorConfig):
        self.text = text
        self.cfg = cfg

    def forward(self, inputs):
        params = {k: v for k, v in inputs.items() if k != "v"}
        return generate_forward(self.text, inputs["v"], params, self.cfg)

    def backward(self, grad_out, cache):
        dv, grads = generate_backward(grad_out, cache)
        grads["v"] = dv
        return grads


class ReconstructionLossOp(DifferentiableOp):
    name = "l1_reconstruction"

    def __init__(self, target):
        self.target = np.asarray(target, dtype=np.float64)

    def forward(self, inputs):
        loss, cache = l1_forward(inputs["pred"], self.target)
        return np.array(loss), cache

    def backward(self, grad_out, cache):
        return {"pred": l1_backward(float(grad_out), cache)}


@register_op("generator")
def _generator_case(rng):
    cfg = GeneratorConfig(vocab_size=5, hidden=9, decoder_hidden=(7,))
    text = TextSeq([0, 3, 1, 3], [2, 1, 3, 2])
    inputs = {"v": rng.standard_normal(6)}
    inputs.update(init_generator_params(rng, cfg, 4, 6))
    inputs["gen.bc"] = 0.1 * rng.standard_normal(9)
    return GeneratorOp(text, cfg), inputs


@register_op("l1_reconstruction")
def _l1_case(rng):
    target = rng.standard_normal((5, 4))
    pred = target + rng.choice([-1.0, 1.0], size=target.shape) * rng.uniform(0.1, 1.0, size=target.shape)
    return ReconstructionLossOp(target), {"pred": pred}
