"""Run-directory manifest ordering and the single-writer lock."""

import pytest

from citing.errors import PipelineError
from citing.rundir import PHASES, RunLock, RunManifest, phase_of


class TestPhaseMapping:
    def test_stage_names_map_to_phases(self):
        assert phase_of("split") == "split"
        assert phase_of("sft_file") == "sft"
        assert phase_of("train_0") == "sft"
        assert phase_of("train_3") == "rounds"
        assert phase_of("round_2_revise") == "rounds"
        assert phase_of("judge") == "judge"

    def test_unknown_stage_rejected(self):
        with pytest.raises(PipelineError):
            phase_of("mystery")

    def test_phase_order_is_the_pipeline_order(self):
        assert PHASES == ("split", "rubrics", "assign", "sft", "rounds", "infer", "judge")


class TestManifest:
    def test_stages_complete_in_dependency_order(self, tmp_path):
        manifest = RunManifest(tmp_path)
        for stage in ("split", "rubrics", "assign", "sft_file", "train_0",
                      "round_1_generate", "train_1", "infer", "judge"):
            manifest.mark_complete(stage)
        assert manifest.is_complete("judge")

    def test_later_then_earlier_rejected(self, tmp_path):
        manifest = RunManifest(tmp_path)
        manifest.mark_complete("split")
        manifest.mark_complete("sft_file")
        with pytest.raises(PipelineError, match="cannot complete after"):
            manifest.mark_complete("rubrics")

    def test_round_trips_through_disk(self, tmp_path):
        manifest = RunManifest(tmp_path)
        manifest.set_config_digest("abc123")
        manifest.mark_complete("split", {"train": 8})
        reloaded = RunManifest.load(tmp_path)
        assert reloaded.is_complete("split")
        assert reloaded.artifacts("split") == {"train": 8}
        reloaded.check_config_digest("abc123")
        with pytest.raises(PipelineError, match="config digest mismatch"):
            reloaded.check_config_digest("def456")


class TestLock:
    def test_lock_is_exclusive_and_released(self, tmp_path):
        with RunLock(tmp_path):
            with pytest.raises(PipelineError, match="locked"):
                with RunLock(tmp_path):
                    pass
        # released: can be taken again
        with RunLock(tmp_path):
            pass
