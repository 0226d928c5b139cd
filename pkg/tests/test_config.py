import pytest

from pcwgat.config import PipelineConfig, from_dict, load_config
from pcwgat.errors import ConfigError


def test_defaults():
    c = PipelineConfig()
    assert c.clustering.k == 32
    assert c.training.lr == 1e-4 and c.training.batch_size == 32 and c.training.epochs == 100
    assert c.feature.neighbor_radius_frac == 0.02
    assert c.model.gat_heads == (8, 6, 4)


def test_toml_round_trip(tmp_path):
    c = from_dict({"clustering": {"k": 12}, "feature": {"sigma1": 0.01, "sigma2": 0.05},
                   "model": {"gat_heads": [2, 2]}})
    path = tmp_path / "c.toml"
    path.write_text(c.to_toml())
    assert load_config(path) == c


def test_precedence(tmp_path):
    path = tmp_path / "c.toml"
    path.write_text("[training]\nepochs = 7\nseed = 3\n")
    c = load_config(path, {"training": {"seed": 9}})
    assert c.training.epochs == 7 and c.training.seed == 9
    assert c.training.lr == 1e-4


@pytest.mark.parametrize("data", [
    {"training": {"epoch": 5}},
    {"trainer": {}},
    {"training": {"epochs": "5"}},
    {"training": {"epochs": 2.5}},
    {"clustering": {"k": 1}},
    {"graph": {"weight_mode": "nope"}},
    {"model": {"gat_heads": [1, "x"]}},
])
def test_rejected(data):
    with pytest.raises(ConfigError):
        from_dict(data)


def test_bad_toml(tmp_path):
    (tmp_path / "c.toml").write_text("[training\n")
    with pytest.raises(ConfigError):
        load_config(tmp_path / "c.toml")


def test_pipeline_hash_ignores_training():
    a = PipelineConfig()
    assert a.pipeline_hash() == from_dict({"training": {"seed": 4}, "model": {"d_out": 8}}).pipeline_hash()
    assert a.pipeline_hash() != from_dict({"clustering": {"k": 8}}).pipeline_hash()
