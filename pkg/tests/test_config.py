import json

import pytest

from dalbt.config import (
    ExperimentConfig,
    IdxDataset,
    SynthBlobsDataset,
    config_from_dict,
    config_from_json,
    config_hash,
    config_to_dict,
    parse_config,
)
from dalbt.errors import ConfigurationError


def test_minimal_config_is_fully_defaulted():
    cfg = config_from_dict({"dataset": {"kind": "synth_blobs"}})
    assert cfg == ExperimentConfig()
    assert isinstance(cfg.dataset, SynthBlobsDataset)
    assert cfg.loss.gamma == 0.001
    assert cfg.loss.lambda_bt == 0.005
    assert (cfg.train.batch_size, cfg.train.learning_rate) == (64, 0.001)
    assert cfg.weibull.eta == 20


def test_discriminated_dataset():
    cfg = config_from_dict({"dataset": {"kind": "idx", "train_images": "a", "train_labels": "b"}})
    assert isinstance(cfg.dataset, IdxDataset)
    with pytest.raises(ConfigurationError, match="dataset"):
        config_from_dict({"dataset": {"kind": "idx"}})


@pytest.mark.parametrize("doc, needle", [
    ({"train": {"batch_size": 1}}, "cross-correlation"),
    ({"train": {"bach_size": 8}}, "train.bach_size: unknown key"),
    ({"budget": "20"}, "budget"),
    ({"stages": 0}, "stages"),
    ({"strategy": "entropy"}, "strategy"),
    ({"loss": {"gamma": -1.0}}, "gamma"),
])
def test_errors_name_the_key(doc, needle):
    with pytest.raises(ConfigurationError, match=needle):
        config_from_dict(doc)


def test_round_trip_and_hash(tmp_path):
    doc = {"dataset": {"kind": "synth_blobs", "num_classes": 4}, "seeds": [3, 4],
           "ood": [{"kind": "synth_blobs", "count": 10}], "train": {"epochs": 2}}
    cfg = config_from_dict(doc)
    again = config_from_json(json.dumps(config_to_dict(cfg)))
    assert again == cfg
    assert config_hash(cfg) == config_hash(again)
    assert config_hash(cfg) != config_hash(config_from_dict({**doc, "seeds": [3]}))
    path = tmp_path / "c.json"
    path.write_text(json.dumps(doc))
    assert parse_config(path) == cfg
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "missing.json")
