import json

import pytest

from intelliz.config import RunConfig, config_from_dict, load_config
from intelliz.errors import ConfigError


def test_defaults():
    cfg = load_config(None)
    assert cfg == RunConfig()
    assert cfg.dsp.mel_bins == 100 and cfg.dsp.hop_size == 256
    assert cfg.train.weights.lambda_kd == 0.5


def test_nested_sections(tmp_path):
    doc = {"dsp": {"periodicity_threshold": 0.9},
           "model": {"encoder": {"dim": 32, "hidden": [16], "pool": {"heads": 2, "average": "voiced"}}},
           "train": {"steps": 10, "weights": {"lambda_adv": 0.0}, "interleave": [2, 1]},
           "corpus": {"speakers": 3}}
    (tmp_path / "c.json").write_text(json.dumps(doc))
    cfg = load_config(tmp_path / "c.json")
    assert cfg.dsp.periodicity_threshold == 0.9
    assert cfg.model.encoder.pool.average == "voiced" and cfg.model.encoder.hidden == (16,)
    assert cfg.train.interleave == (2, 1) and cfg.train.weights.lambda_adv == 0.0
    assert cfg.corpus.speakers == 3
    assert config_from_dict(cfg.to_dict()) == cfg


@pytest.mark.parametrize("doc", [
    {"dsp": {"bogus": 1}},
    {"nope": {}},
    {"train": {"steps": "ten"}},
    {"train": {"steps": 1.5}},
    {"train": {"use_mask": 1}},
    {"dsp": {"periodicity_threshold": 1.5}},
    {"model": {"encoder": {"dim": 30}}},
    {"model": {"encoder": {"hidden": 5}}},
    {"train": {"weights": {"lambda_kd": -1}}},
    {"corpus": {"speakers": 1}},
    [],
])
def test_invalid_documents(doc):
    with pytest.raises(ConfigError):
        config_from_dict(doc)


def test_bad_files(tmp_path):
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
