import logging
from pathlib import Path

import pytest

from config import (
    AppConfig,
    ConfigValidationError,
    PipelineMode,
    ScenarioMode,
    parse_address,
)

DEFAULT_TOML = Path(__file__).parent.parent / "config" / "default.toml"


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("EDGESLAM_CONFIG", "EDGESLAM_EDGE_ADDR", "EDGESLAM_CLOUD_ADDR", "LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def test_default_file_matches_built_in_defaults():
    assert AppConfig.from_toml(DEFAULT_TOML).to_dict() == AppConfig().to_dict()


def test_from_dict_coerces_values():
    config = AppConfig.from_dict(
        {
            "scenario": {"mode": "raster", "room_size": [10, 8, 3], "robots": 3},
            "experiment": {"pipeline": "stream"},
            "link": {"backoff": 3},
        }
    )
    assert config.scenario.mode == ScenarioMode.RASTER
    assert config.scenario.room_size == (10.0, 8.0, 3.0)
    assert config.experiment.pipeline == PipelineMode.STREAM
    assert config.link.backoff == 3.0 and isinstance(config.link.backoff, float)


@pytest.mark.parametrize(
    "data, path",
    [
        ({"bogus": {}}, "bogus"),
        ({"camera": 3}, "camera"),
        ({"camera": {"focal": 1.0}}, "camera.focal"),
        ({"tracking": {"num_levels": 2.5}}, "tracking.num_levels"),
        ({"tracking": {"num_levels": True}}, "tracking.num_levels"),
        ({"cloud": {"mbp_enabled": "yes"}}, "cloud.mbp_enabled"),
        ({"experiment": {"pipeline": "batch"}}, "experiment.pipeline"),
        ({"scenario": {"room_size": [1.0, 2.0]}}, "scenario.room_size"),
        ({"link": {"drop_rate": 1.0}}, "link.drop_rate"),
        ({"tracking": {"lk_window": 20}}, "tracking.lk_window"),
        ({"codec": {"n_sigma": 6}}, "codec.n_sigma"),
    ],
)
def test_invalid_values_name_their_key(data, path):
    with pytest.raises(ConfigValidationError) as excinfo:
        AppConfig.from_dict(data)
    assert excinfo.value.path == path


def test_environment_overrides(monkeypatch, tmp_path):
    toml = tmp_path / "run.toml"
    toml.write_text("[scenario]\nrobots = 4\n")
    monkeypatch.setenv("EDGESLAM_CONFIG", str(toml))
    monkeypatch.setenv("EDGESLAM_EDGE_ADDR", "10.0.0.2:7001")
    monkeypatch.setenv("EDGESLAM_CLOUD_ADDR", "cloud.local:9000")
    monkeypatch.setenv("LOG_LEVEL", "debug")
    config = AppConfig.from_env()
    assert config.scenario.robots == 4
    assert (config.link.edge_host, config.link.edge_port) == ("10.0.0.2", 7001)
    assert (config.link.cloud_host, config.link.cloud_port) == ("cloud.local", 9000)
    assert config.logging.log_level == logging.DEBUG


def test_bad_address_names_the_variable(monkeypatch):
    monkeypatch.setenv("EDGESLAM_EDGE_ADDR", "nohost")
    with pytest.raises(ConfigValidationError, match="EDGESLAM_EDGE_ADDR"):
        AppConfig.from_env()
    assert parse_address("[::1]:80", "x") == ("[::1]", 80)
    with pytest.raises(ConfigValidationError):
        parse_address("host:port", "x")


def test_fingerprint_tracks_codec_agreement():
    a, b = AppConfig(), AppConfig()
    assert a.fingerprint(0xABCD) == b.fingerprint(0xABCD)
    assert a.fingerprint(0xABCD) != a.fingerprint(0xABCE)
    b.codec.p0_kf = 0.85
    assert a.fingerprint() != b.fingerprint()
    b = AppConfig()
    b.vio.window_size = 4
    assert a.fingerprint() == b.fingerprint()
