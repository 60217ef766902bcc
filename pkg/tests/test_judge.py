"""Judge prompts, verdict parsing, tallies, and report rendering."""

import pytest

from citing.errors import CitingError, PipelineError, VerdictParseError
from citing.judge import (
    METRICS,
    ComparisonReport,
    JudgeVerdict,
    build_judge_prompt,
    parse_verdict,
    render_report,
    run_comparison,
    tally_verdicts,
)
from citing.providers import MockChatProvider


class TestJudgePrompt:
    def test_articulate_aspects_present(self):
        prompt = build_judge_prompt("q", "x", "y", "articulate")
        assert "Grammar and syntax correctness" in prompt
        assert "Logical flow of information" in prompt
        assert "Avoidance of jargon, or if jargon is used, it is properly explained" in prompt

    def test_in_depth_aspects_present(self):
        prompt = build_judge_prompt("q", "x", "y", "in_depth")
        assert "Incorporation of nuanced viewpoints or less-known facts" in prompt
        assert "Coverage of core principles or concepts" in prompt
        assert "Demonstrated understanding beyond the basic level" in prompt

    def test_comprehensive_aspects_present(self):
        prompt = build_judge_prompt("q", "x", "y", "comprehensive")
        assert "Addressing multiple angles or facets of the question" in prompt
        assert "Incorporating various viewpoints or perspectives" in prompt
        assert "Ensuring no major sub-topic or relevant information is left out" in prompt

    def test_labels_and_final_token_instruction(self):
        prompt = build_judge_prompt("the question", "first", "second", "articulate")
        assert "Response 1: first" in prompt
        assert "Response 2: second" in prompt
        assert "1 if Response 1 is better, 2 if Response 2 is better, or tie" in prompt

    def test_pure_function(self):
        assert build_judge_prompt("q", "x", "y", "in_depth") == build_judge_prompt(
            "q", "x", "y", "in_depth"
        )

    def test_unknown_metric_rejected(self):
        with pytest.raises(CitingError):
            build_judge_prompt("q", "x", "y", "brilliance")


class TestParseVerdict:
    def test_final_2_order_ab_is_lose(self):
        assert parse_verdict("Response 2 seems stronger. 2", "AB") == "lose"

    def test_final_1_order_ba_is_lose(self):
        assert parse_verdict("I pick 1", "BA") == "lose"

    def test_tie_token(self):
        assert parse_verdict("great answers, tie", "AB") == "tie"

    def test_case_insensitive_tie(self):
        assert parse_verdict("TIE", "BA") == "tie"

    def test_last_token_wins(self):
        assert parse_verdict("Response 1 is weaker, so my answer is 2", "AB") == "lose"

    def test_unparseable_raises(self):
        with pytest.raises(VerdictParseError):
            parse_verdict("no verdict here", "AB")


def make_inputs(n):
    responses_a = {f"r{i:03d}": f"answer a {i}" for i in range(n)}
    responses_b = {f"r{i:03d}": f"answer b {i}" for i in range(n)}
    instructions = {f"r{i:03d}": f"question {i}" for i in range(n)}
    return responses_a, responses_b, instructions


class TestRunComparison:
    def test_always_first_judge_conserves_and_tracks_order(self):
        responses_a, responses_b, instructions = make_inputs(100)
        judge = MockChatProvider(transform=lambda r: "1")
        report, verdicts = run_comparison(
            responses_a, responses_b, instructions, METRICS, judge, seed=7
        )
        for metric in METRICS:
            tally = report.tallies[metric]
            assert tally["win"] + tally["tie"] + tally["lose"] == 100
            assert tally["tie"] == 0
            ab = sum(
                1 for v in verdicts if v.metric == metric and v.presented_order == "AB"
            )
            assert tally["win"] == ab

    def test_always_tie_judge(self):
        responses_a, responses_b, instructions = make_inputs(100)
        judge = MockChatProvider(transform=lambda r: "tie")
        report, _ = run_comparison(
            responses_a, responses_b, instructions, ["articulate"], judge, seed=0
        )
        assert report.tallies["articulate"] == {"win": 0, "tie": 100, "lose": 0}

    def test_seeded_determinism(self):
        responses_a, responses_b, instructions = make_inputs(30)
        judge = MockChatProvider(transform=lambda r: "1")
        first = run_comparison(responses_a, responses_b, instructions, METRICS, judge, seed=5)
        second = run_comparison(responses_a, responses_b, instructions, METRICS, judge, seed=5)
        assert first[0].to_dict() == second[0].to_dict()
        assert [v.to_obj() for v in first[1]] == [v.to_obj() for v in second[1]]

    def test_mismatched_ids_rejected(self):
        responses_a, responses_b, instructions = make_inputs(3)
        responses_b.pop("r001")
        judge = MockChatProvider(transform=lambda r: "1")
        with pytest.raises(CitingError, match="share record ids"):
            run_comparison(responses_a, responses_b, instructions, METRICS, judge, seed=0)

    def test_unparseable_verdicts_skip_and_threshold(self):
        responses_a, responses_b, instructions = make_inputs(10)
        judge = MockChatProvider(transform=lambda r: "no verdict")
        with pytest.raises(PipelineError, match="skipped"):
            run_comparison(
                responses_a, responses_b, instructions, ["articulate"], judge, seed=0
            )

    def test_single_skip_under_threshold_reported(self):
        responses_a, responses_b, instructions = make_inputs(100)

        def judge_fn(request):
            return "mumble" if "question 3\n" in request.user_content else "2"

        judge = MockChatProvider(transform=judge_fn)
        report, _ = run_comparison(
            responses_a, responses_b, instructions, ["articulate"], judge, seed=0,
            skip_threshold=0.02,
        )
        assert report.skipped["articulate"] == 1
        tally = report.tallies["articulate"]
        assert tally["win"] + tally["tie"] + tally["lose"] == 99

    def test_order_insensitive_judge_has_full_flip_consistency(self):
        responses_a, responses_b, instructions = make_inputs(25)

        def prefers_a(request):
            # Finds which position holds system A's response and votes for it.
            content = request.user_content
            first = content.index("answer a") < content.index("answer b")
            return "1" if first else "2"

        judge = MockChatProvider(transform=prefers_a)
        report, _ = run_comparison(
            responses_a, responses_b, instructions, ["in_depth"], judge, seed=1, both_orders=True
        )
        assert report.flip_consistency == 1.0
        assert report.tallies["in_depth"]["win"] == 25

    def test_order_sensitive_judge_detected(self):
        responses_a, responses_b, instructions = make_inputs(25)
        judge = MockChatProvider(transform=lambda r: "1")  # always prefers position 1
        report, _ = run_comparison(
            responses_a, responses_b, instructions, ["in_depth"], judge, seed=1, both_orders=True
        )
        assert report.flip_consistency == 0.0


class TestTallies:
    def _verdicts(self):
        outcomes = ["win"] * 5 + ["tie"] * 2 + ["lose"] * 3
        return [
            JudgeVerdict(
                record_id=f"r{i}",
                metric="articulate",
                outcome=outcome,
                presented_order="AB",
                raw_judgment="1",
            )
            for i, outcome in enumerate(outcomes)
        ]

    def test_swap_exchanges_win_and_lose(self):
        verdicts = self._verdicts()
        forward = tally_verdicts(verdicts)["articulate"]
        swapped = tally_verdicts(verdicts, swapped=True)["articulate"]
        assert forward == {"win": 5, "tie": 2, "lose": 3}
        assert swapped == {"win": 3, "tie": 2, "lose": 5}

    def test_conservation_validated(self):
        report = ComparisonReport(
            system_a="A",
            system_b="B",
            tallies={"articulate": {"win": 5, "tie": 2, "lose": 3}},
            total=11,
            judge_model="j",
            seed=0,
        )
        with pytest.raises(CitingError, match="!= total"):
            report.validate()


class TestRendering:
    def _report(self, win, tie, lose, total):
        return ComparisonReport(
            system_a="CITING",
            system_b="SFT",
            tallies={"articulate": {"win": win, "tie": tie, "lose": lose}},
            total=total,
            judge_model="mock-judge",
            seed=0,
        )

    def test_table1_cell_format(self):
        text = render_report(self._report(75, 4, 21, 100), "markdown")
        assert "75% 4% 21%" in text
        assert "CITING vs SFT" in text

    def test_thirds_round_to_33(self):
        text = render_report(self._report(1, 1, 1, 3), "markdown")
        assert "33% 33% 33%" in text

    def test_half_rounds_away_from_zero(self):
        text = render_report(self._report(1, 3, 4, 8), "markdown")  # 12.5% -> 13%
        assert "13% 38% 50%" in text

    def test_json_layout_round_trips_counts(self):
        report = self._report(75, 4, 21, 100)
        payload = render_report(report, "json")
        import json

        restored = ComparisonReport.from_dict(json.loads(payload))
        assert restored.tallies == report.tallies
        assert restored.total == report.total

    def test_reloaded_report_renders_identically(self):
        import json

        report = ComparisonReport(
            system_a="A",
            system_b="B",
            tallies={
                "articulate": {"win": 1, "tie": 0, "lose": 1},
                "in_depth": {"win": 2, "tie": 0, "lose": 0},
                "comprehensive": {"win": 0, "tie": 2, "lose": 0},
            },
            total=2,
            judge_model="j",
            seed=0,
        )
        restored = ComparisonReport.from_dict(json.loads(render_report(report, "json")))
        assert render_report(restored, "markdown") == render_report(report, "markdown")
        header = render_report(restored, "markdown").splitlines()[0]
        assert header.index("Articulate") < header.index("In-depth") < header.index("Comprehensive")
