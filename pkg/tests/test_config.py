import pytest

from qpf.config import dump_config, load_config_file, toy_profile
from qpf.errors import ConfigError


class TestConfigFile:
    def test_round_trip(self, tmp_path):
        model, train = toy_profile()
        path = tmp_path / "cfg.toml"
        path.write_text(dump_config(model, train))
        m2, t2 = load_config_file(path)
        assert m2 == model
        assert t2 == train

    def test_partial_sections_take_defaults(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[model]\nembed_dim = 32\nheads = 4\n[train]\nsteps = 7\n")
        model, train = load_config_file(path)
        assert model.embed_dim == 32 and model.heads == 4
        assert model.depth == 12  # default
        assert train.steps == 7

    def test_unknown_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[model]\nembed_dims = 32\n")
        with pytest.raises(ConfigError, match="bad \\[model\\] key"):
            load_config_file(path)

    def test_unknown_section_rejected(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[optimizer]\nlr = 1.0\n")
        with pytest.raises(ConfigError, match="unknown config sections"):
            load_config_file(path)

    def test_invalid_toml_rejected(self, tmp_path):
        path = tmp_path / "cfg.toml"
        path.write_text("[model\nbroken")
        with pytest.raises(ConfigError, match="invalid TOML"):
            load_config_file(path)

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_config_file(tmp_path / "absent.toml")
