import json
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from app.main import cli
from app.services.pipeline_service import RunLayout
from app.storage import file_digest, load_manifest
from check_artifacts import verify_digests

RUN_CONFIG = """
[run]
seed = 7

[paths]
cohort = data/cohort.csv
followup = data/followup.csv
features = data/features.csv
reference_ranges = data/reference_ranges.csv
out_dir = runs/test

[generator]
participants = 800
biomarkers = 8
lifestyle = 4
missingness = 0.02
followup_fraction = 0.15

[prep]
triplets = 2000

[train]
dim = 4
hidden = 16
epochs = 3
decay_start = 1
decay_interval = 1
batch_size = 128

[downstream]
gbt_rounds = 10
healthy_only = false
min_participants = 10
"""

STAGES = ["gen", "prep", "train", "stats", "embed", "eval", "predict"]


@pytest.fixture(scope="module")
def run(tmp_path_factory):
    base = tmp_path_factory.mktemp("pipeline")
    config = base / "run.ini"
    config.write_text(RUN_CONFIG, encoding="utf-8")
    result = CliRunner().invoke(cli, ["pipeline", "--config", str(config)])
    return base, config, result


@pytest.fixture
def layout(run):
    base, _, _ = run
    return RunLayout(base / "runs" / "test")


class TestPipelineCommand:
    def test_exits_cleanly(self, run):
        _, _, result = run
        assert result.exit_code == 0, result.output
        assert "outputs written under" in result.output

    def test_manifest_covers_every_stage(self, layout):
        manifest = load_manifest(layout.manifest)
        assert list(manifest.stages) == STAGES
        assert manifest.config["run"]["seed"] == 7
        assert manifest.formats["checkpoint"] == "TCEMB1"
        assert verify_digests(layout.out_dir) == []

    def test_generated_inputs_are_recorded(self, run, layout):
        base, _, _ = run
        manifest = load_manifest(layout.manifest)
        assert (base / "data" / "cohort.csv").exists()
        assert (base / "data" / "ground_truth.csv").exists()
        spec = json.loads((base / "data" / "generator_spec.json").read_text())
        assert spec["participants"] == 800
        assert "../../data/cohort.csv" in manifest.stages["gen"].outputs

    def test_splits_cover_labeled_rows_and_hold_out_followups(self, run, layout):
        base, _, _ = run
        labeled = pd.read_csv(layout.labeled)
        splits = pd.read_csv(layout.splits)
        assert sorted(splits["id"]) == sorted(labeled["id"])
        assert splits["split"].value_counts()["train"] == pytest.approx(0.7 * len(labeled), abs=2)
        followup = pd.read_csv(base / "data" / "followup.csv")
        held = set(followup["id"]) & set(labeled["id"])
        test_ids = set(splits.loc[splits["split"] == "test", "id"])
        assert held and held <= test_ids

    def test_per_sex_models_and_logs(self, layout):
        for sex in ("F", "M"):
            assert layout.checkpoint(sex).read_text().startswith("TCEMB1")
            log = pd.read_csv(layout.train_log(sex))
            assert log["epoch"].tolist() == [0, 1, 2]
            assert log["lr"].tolist() == pytest.approx([0.001, 0.001, 0.00095])
            assert log["val_loss"].notna().all()
            assert layout.triplets(sex).read_text().count("\n") == 2000

    def test_embeddings_cover_every_processed_row(self, layout):
        embeddings = pd.read_csv(layout.embeddings)
        processed = sum(len(pd.read_csv(layout.processed(sex))) for sex in ("F", "M"))
        assert len(embeddings) == processed
        assert list(embeddings.columns) == ["id", "emb_0", "emb_1", "emb_2", "emb_3"]
        assert embeddings["id"].is_monotonic_increasing

    def test_stats_outputs(self, layout):
        significance = pd.read_csv(layout.significance)
        assert set(significance["axis"]) <= {"activity", "sleep"}
        assert (significance["p_adjusted"] >= significance["p"] - 1e-12).all()
        families = pd.read_csv(layout.families)
        assert len(families) == 4

    def test_classifier_evaluation(self, layout):
        frame = pd.read_csv(layout.classifier_eval)
        assert len(frame) == 12
        assert set(frame["representation"]) == {"raw", "pca", "deep"}
        assert frame["weighted_f1"].between(0.0, 1.0).all()

    def test_prediction_outputs(self, layout):
        folds = pd.read_csv(layout.prediction("fold_r2"))
        assert len(folds) == 4 * 4 * 5
        summary = pd.read_csv(layout.prediction("summary"))
        assert len(summary) == 16
        improvement = pd.read_csv(layout.prediction("improvement"))
        assert len(improvement) == 12

    def test_rerun_reproduces_every_digest(self, run, layout):
        base, config, _ = run
        again = base / "runs" / "again"
        result = CliRunner().invoke(cli, ["pipeline", "--config", str(config), "--out", str(again)])
        assert result.exit_code == 0, result.output
        assert load_manifest(RunLayout(again).manifest).digests == load_manifest(layout.manifest).digests


class TestStageCommands:
    def test_stage_without_inputs_is_a_data_error(self, run, tmp_path):
        _, config, _ = run
        result = CliRunner().invoke(cli, ["train", "--config", str(config), "--out", str(tmp_path / "empty")])
        assert result.exit_code == 3
        assert "missing" in result.output

    def test_invalid_config_is_a_config_error(self, tmp_path):
        config = tmp_path / "bad.ini"
        config.write_text("[train]\nepochs = -1\n")
        result = CliRunner().invoke(cli, ["prep", "--config", str(config)])
        assert result.exit_code == 2
        assert "train.epochs" in result.output

    def test_unknown_loss_flag_is_rejected_by_click(self, tmp_path):
        result = CliRunner().invoke(cli, ["train", "--loss", "hinge"])
        assert result.exit_code == 2

    def test_gen_is_deterministic_and_complete_without_missingness(self, tmp_path):
        config = tmp_path / "gen.ini"
        config.write_text("[generator]\nparticipants = 200\nbiomarkers = 5\nmissingness = 0\n")
        first = CliRunner().invoke(cli, ["gen", "--config", str(config)])
        assert first.exit_code == 0, first.output
        cohort = tmp_path / "data" / "cohort.csv"
        digest = file_digest(cohort)
        assert pd.read_csv(cohort).isna().sum().sum() == 0
        second = CliRunner().invoke(cli, ["gen", "--config", str(config)])
        assert second.exit_code == 0
        assert file_digest(cohort) == digest
        assert str(cohort.resolve()) in first.output

    def test_version(self):
        result = CliRunner().invoke(cli, ["--version"])
        assert result.exit_code == 0
        assert "1.0.0" in result.output


QUALITY_CONFIG = """
[run]
seed = 7

[generator]
participants = 3000
biomarkers = 20
lifestyle = 4
missingness = 0.02
followup_fraction = 0.12

[prep]
triplets = 10000

[train]
dim = 16
hidden = 64,32
epochs = 100
decay_start = 80
decay_interval = 10
lr = 0.002
dropout = 0.1
batch_size = 256
"""


@pytest.fixture(scope="module")
def quality_scores(tmp_path_factory):
    """Weighted F1 per (loss, representation, classifier, task) after training with each loss."""
    base = tmp_path_factory.mktemp("quality")
    config = base / "run.ini"
    config.write_text(QUALITY_CONFIG, encoding="utf-8")
    runner = CliRunner()
    generated = runner.invoke(cli, ["gen", "--config", str(config)])
    assert generated.exit_code == 0, generated.output
    frames = []
    for loss in ("proposed", "triplet"):
        out = base / "runs" / loss
        for command in ("prep", "train", "eval"):
            result = runner.invoke(cli, [command, "--config", str(config), "--out", str(out), "--loss", loss])
            assert result.exit_code == 0, result.output
        frames.append(pd.read_csv(RunLayout(out).classifier_eval).assign(loss=loss))
    frame = pd.concat(frames, ignore_index=True)
    return frame.set_index(["loss", "representation", "classifier", "task"])["weighted_f1"].sort_index()


class TestRepresentationQuality:
    @pytest.mark.parametrize("task", ["binary", "multiclass"])
    def test_deep_embeddings_help_nearest_neighbours(self, quality_scores, task):
        deep = quality_scores["proposed", "deep", "knn", task]
        assert deep >= quality_scores["proposed", "raw", "knn", task] + 0.05
        assert deep >= quality_scores["proposed", "pca", "knn", task] + 0.05

    def test_regularized_loss_is_not_worse_than_plain_triplets(self, quality_scores):
        proposed = quality_scores.loc["proposed", "deep"].mean()
        plain = quality_scores.loc["triplet", "deep"].mean()
        assert proposed >= plain - 0.02

    def test_linear_discriminant_keeps_up_on_embeddings(self, quality_scores):
        deep = quality_scores.loc["proposed", "deep", "lda"].mean()
        raw = quality_scores.loc["proposed", "raw", "lda"].mean()
        assert deep >= raw - 0.02
