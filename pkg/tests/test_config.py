import sys
import os
import pytest

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

# Import module to test
from utils.config import Config, SamplerConfig, normalize_ratio_mode, parse_init
from utils.error_handler import ArgumentError, DataIOError, ParseError


class TestSamplerConfig:
    """Tests for run configuration validation"""

    def test_defaults_are_valid(self):
        """Test the default configuration passes validation"""
        cfg = SamplerConfig().validate()
        assert cfg.init_kind == "kmeans" and cfg.init_k == 80

    @pytest.mark.parametrize("field,value", [
        ("procs", 0), ("sweeps", 0), ("alpha", 0.0), ("tau2", -1.0), ("global_every", 0),
        ("ratio_mode", "sometimes"), ("executor", "gpu"), ("test_fraction", 1.0), ("model", "lda"),
        ("move_subset", -1), ("eval_every", 0),
    ])
    def test_invalid_field(self, field, value):
        """Test each range check names its field"""
        with pytest.raises(ArgumentError, match=field):
            SamplerConfig(**{field: value}).validate()

    def test_checkpoint_pairing(self):
        """Test checkpoint path and interval go together"""
        with pytest.raises(ArgumentError):
            SamplerConfig(checkpoint_path="x.ckpt").validate()
        with pytest.raises(ArgumentError):
            SamplerConfig(checkpoint_every=5).validate()
        SamplerConfig(checkpoint_path="x.ckpt", checkpoint_every=5).validate()

    def test_from_dict_unknown_key(self):
        """Test unknown keys are rejected"""
        with pytest.raises(ArgumentError, match="colour"):
            SamplerConfig.from_dict({"colour": "blue"})

    def test_dict_round_trip(self):
        """Test to_dict/from_dict preserve every field"""
        cfg = SamplerConfig(model="hdp", alpha=2.0, procs=3)
        assert SamplerConfig.from_dict(cfg.to_dict()) == cfg


class TestInitSpec:
    """Tests for init spec parsing"""

    def test_valid(self):
        """Test the two supported kinds"""
        assert parse_init("kmeans:12") == ("kmeans", 12)
        assert parse_init("random:3") == ("random", 3)

    @pytest.mark.parametrize("spec", ["kmeans", "kmeans:x", "random:0", "spectral:4"])
    def test_invalid(self, spec):
        """Test malformed specs"""
        with pytest.raises(ArgumentError):
            parse_init(spec)

    def test_ratio_mode_spelling(self):
        """Test the dashed spelling is normalized"""
        assert normalize_ratio_mode("always-accept") == "always_accept"
        assert normalize_ratio_mode(None) is None


class TestConfigFile:
    """Tests for the file-backed configuration manager"""

    def test_defaults_without_file(self):
        """Test defaults when no file is given"""
        config = Config()
        assert config.get("alpha") == 1.0
        assert config["procs"] == 1

    def test_yaml_file(self, tmp_path):
        """Test values load from YAML"""
        path = tmp_path / "run.yaml"
        path.write_text("model: hdp\nbeta: 0.2\nratio_mode: always-accept\n")
        cfg = Config(str(path)).to_sampler_config()
        assert (cfg.model, cfg.beta, cfg.ratio_mode) == ("hdp", 0.2, "always_accept")

    def test_json_file(self, tmp_path):
        """Test JSON files load through the same reader"""
        path = tmp_path / "run.json"
        path.write_text('{"alpha": 3.0, "procs": 2}')
        cfg = Config(str(path)).to_sampler_config()
        assert (cfg.alpha, cfg.procs) == (3.0, 2)

    def test_merge_skips_none(self):
        """Test unset overrides keep earlier values"""
        config = Config().merge({"alpha": 4.0})
        config.merge({"alpha": None, "procs": 3})
        assert (config["alpha"], config["procs"]) == (4.0, 3)

    def test_unknown_key_in_file(self, tmp_path):
        """Test unknown keys in files are argument errors"""
        path = tmp_path / "run.yaml"
        path.write_text("alpah: 2.0\n")
        with pytest.raises(ArgumentError):
            Config(str(path))

    def test_missing_file(self, tmp_path):
        """Test a missing config file"""
        with pytest.raises(DataIOError):
            Config(str(tmp_path / "none.yaml"))

    def test_malformed_file(self, tmp_path):
        """Test unparsable and non-mapping files"""
        path = tmp_path / "run.yaml"
        path.write_text("alpha: [1, 2\n")
        with pytest.raises(ParseError):
            Config(str(path))
        path.write_text("- 1\n- 2\n")
        with pytest.raises(ParseError):
            Config(str(path))

    def test_mapping_access(self):
        """Test iteration and items cover every run setting"""
        config = Config()
        assert set(config) == set(SamplerConfig().to_dict())
        assert dict(config.items())["model"] == "dpmm"
