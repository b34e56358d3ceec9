from types import SimpleNamespace

import numpy as np
import pytest

from intelliz.corpus import make_corpus
from intelliz.data import prepare_corpus
from intelliz.errors import CorpusError, FrozenParameterError, MissingPrototypeError, ShapeError, VocabularyError
from intelliz.grad import make_rng
from intelliz.tts import (GeneratorConfig, PretrainConfig, PrototypeTable, TextSeq, generate, generate_forward,
                          init_generator_params, pretrain_multispeaker)

CFG = GeneratorConfig(vocab_size=12, hidden=32, decoder_hidden=(32,))


def gen_params(seed=0, M=20, d=8):
    return init_generator_params(make_rng(seed), CFG, M, d)


def test_durations_set_length():
    text = TextSeq([1, 4], [2, 3])
    assert text.frame_count == 5
    Y, _ = generate_forward(text, np.ones(8), gen_params())
    assert Y.shape == (5, 20)
    assert text.frame_symbols().tolist() == [1, 1, 4, 4, 4]


def test_zero_embedding_removes_speaker():
    params = gen_params()
    params["gen.Wc"][:] = make_rng(1).standard_normal(params["gen.Wc"].shape)
    text = TextSeq([0, 3, 7], [2, 2, 2])
    a = generate_forward(text, np.zeros(8), params, CFG)[0]
    params2 = dict(params, **{"gen.Wc": -params["gen.Wc"]})
    b = generate_forward(text, np.zeros(8), params2, CFG)[0]
    assert np.array_equal(a, b)


def test_generate_deterministic():
    text = TextSeq([2, 5, 9], [3, 1, 4])
    v = make_rng(2).standard_normal(8)
    a = generate(text, v, gen_params(3), CFG).frames
    b = generate(text, v, gen_params(3), CFG).frames
    assert a.tobytes() == b.tobytes()


def test_generator_errors():
    with pytest.raises(VocabularyError):
        generate_forward(TextSeq([12], [1]), np.ones(8), gen_params(), CFG)
    with pytest.raises(ShapeError):
        generate_forward(TextSeq([1], [1]), np.ones(7), gen_params(), CFG)
    with pytest.raises(ShapeError):
        TextSeq([1, 2], [1])
    with pytest.raises(ShapeError):
        TextSeq([1], [0])


def test_prototype_table_freeze():
    table = PrototypeTable(["a", "b"], np.zeros((2, 3)))
    table["a"] = np.ones(3)
    table.freeze()
    with pytest.raises(FrozenParameterError):
        table["b"] = np.ones(3)
    with pytest.raises(ValueError):
        table.table[0, 0] = 5.0
    with pytest.raises(MissingPrototypeError):
        table["c"]
    assert table["a"].tolist() == [1.0, 1.0, 1.0]


def test_pretraining_halves_reconstruction_loss(prepared):
    res = pretrain_multispeaker(prepared.utterances, GeneratorConfig(), 64, PretrainConfig(steps=300))
    first = np.mean(res.losses[:10])
    last = np.mean(res.losses[-10:])
    assert last < 0.5 * first
    assert res.prototypes.frozen
    assert res.prototypes.speaker_ids == prepared.speakers
    # swapping speaker conditioning changes the output
    text = prepared.utterances[0].text
    a = generate_forward(text, res.prototypes["spk00"], res.generator)[0]
    b = generate_forward(text, res.prototypes["spk01"], res.generator)[0]
    assert np.mean(np.abs(a - b)) > 0.05


def test_single_speaker_rejected():
    utts = [SimpleNamespace(speaker="a", text=TextSeq([1], [2]), mel=np.zeros((2, 4))) for _ in range(3)]
    with pytest.raises(CorpusError, match="need ≥2 speakers"):
        pretrain_multispeaker(utts, CFG, 8, PretrainConfig(steps=2))


def test_identical_speakers_share_a_prototype():
    corpus = make_corpus(3, 4, 5)
    data = prepare_corpus(corpus)
    twin = [SimpleNamespace(speaker="twin" if u.speaker == "spk00" else u.speaker, text=u.text, mel=u.mel)
            for u in data.utterances if u.speaker in ("spk00", "spk02")]
    twin += [SimpleNamespace(speaker="spk00", text=u.text, mel=u.mel)
             for u in data.utterances if u.speaker == "spk00"]
    twin += [SimpleNamespace(speaker=u.speaker, text=u.text, mel=u.mel)
             for u in data.utterances if u.speaker == "spk01"]
    res = pretrain_multispeaker(twin, CFG, 8, PretrainConfig(steps=400, seed=1))
    p = res.prototypes
    same = np.linalg.norm(p["twin"] - p["spk00"])
    diff = min(np.linalg.norm(p["twin"] - p["spk01"]), np.linalg.norm(p["spk00"] - p["spk02"]),
               np.linalg.norm(p["spk00"] - p["spk01"]))
    assert same < 0.25 * diff
