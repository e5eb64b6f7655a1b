from pathlib import Path

import pytest

from app.config import get_settings, load_run_config
from app.services.metric_loss import LossKind
from app.utils.errors import ConfigError

EXAMPLE = Path(__file__).resolve().parent.parent / "config.example.ini"


def write_config(tmp_path, text: str) -> Path:
    path = tmp_path / "run.ini"
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadRunConfig:
    def test_defaults_without_a_file(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        config = load_run_config()
        assert config.seed == 7
        assert config.train.hidden == (512, 256)
        assert config.train.loss is LossKind.PROPOSED
        assert config.prep.fractions == (0.70, 0.10, 0.20)
        assert config.paths.out_dir == str((tmp_path / "runs" / "default").resolve())

    def test_example_file_matches_defaults(self):
        config = load_run_config(EXAMPLE)
        assert config.train.epochs == 800
        assert config.downstream.gbt.rounds == 200
        assert config.stats.healthy_only is True

    def test_values_are_parsed(self, tmp_path):
        config = load_run_config(write_config(tmp_path, (
            "[train]\nhidden = 64, 32\nloss = swap\nper_sex = false\nepochs = 10\ndecay_start = 5\n"
            "[stats]\nmarkers = marker_01, marker_02\n"
        )))
        assert config.train.hidden == (64, 32)
        assert config.train.loss is LossKind.SWAP
        assert config.train.per_sex is False
        assert config.stats.markers == ["marker_01", "marker_02"]

    def test_relative_paths_follow_the_config_file(self, tmp_path):
        nested = tmp_path / "configs"
        nested.mkdir()
        path = nested / "run.ini"
        path.write_text("[paths]\ncohort = ../data/c.csv\n")
        config = load_run_config(path)
        assert config.paths.cohort == str((tmp_path / "data" / "c.csv").resolve())
        assert config.paths.out_dir == str((nested / "runs" / "default").resolve())

    def test_flags_override_the_file(self, tmp_path, monkeypatch):
        monkeypatch.chdir(tmp_path)
        path = write_config(tmp_path, "[run]\nseed = 1\n[train]\nloss = triplet\n")
        config = load_run_config(path, seed=99, out_dir="elsewhere", loss="swap")
        assert config.seed == 99
        assert config.train.loss is LossKind.SWAP
        assert config.paths.out_dir == str((tmp_path / "elsewhere").resolve())

    def test_unknown_section(self, tmp_path):
        with pytest.raises(ConfigError, match="Unknown config sections"):
            load_run_config(write_config(tmp_path, "[training]\nepochs = 3\n"))

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_run_config(write_config(tmp_path, "[train]\nepoch = 3\n"))
        assert info.value.details[0]["field"] == "train.epoch"

    def test_bad_value_is_named(self, tmp_path):
        with pytest.raises(ConfigError) as info:
            load_run_config(write_config(tmp_path, "[prep]\ntriplets = many\n"))
        assert info.value.details[0]["field"] == "prep.triplets"
        assert info.value.details[0]["received_value"] == "many"
        assert info.value.exit_code == 2

    def test_epochs_before_decay_start(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(write_config(tmp_path, "[train]\nepochs = 10\ndecay_start = 20\n"))

    def test_split_fractions_must_sum_to_one(self, tmp_path):
        with pytest.raises(ConfigError):
            load_run_config(write_config(tmp_path, "[prep]\ntrain_fraction = 0.5\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="not found"):
            load_run_config(tmp_path / "absent.ini")

    def test_unparseable_file(self, tmp_path):
        with pytest.raises(ConfigError, match="Cannot parse"):
            load_run_config(write_config(tmp_path, "seed = 3\n"))

    def test_unknown_loss_flag(self):
        with pytest.raises(ConfigError):
            load_run_config(loss="hinge")


class TestSettings:
    def test_defaults(self, monkeypatch):
        monkeypatch.delenv("TC_THREADS", raising=False)
        monkeypatch.delenv("TC_LOG_LEVEL", raising=False)
        settings = get_settings()
        assert (settings.threads, settings.log_level) == (1, "INFO")

    def test_environment(self, monkeypatch):
        monkeypatch.setenv("TC_THREADS", "4")
        monkeypatch.setenv("TC_LOG_LEVEL", "debug")
        settings = get_settings()
        assert (settings.threads, settings.log_level) == (4, "DEBUG")

    @pytest.mark.parametrize("name, value", [("TC_THREADS", "0"), ("TC_THREADS", "lots"), ("TC_LOG_LEVEL", "LOUD")])
    def test_invalid_environment(self, monkeypatch, name, value):
        monkeypatch.setenv(name, value)
        with pytest.raises(ConfigError):
            get_settings()
