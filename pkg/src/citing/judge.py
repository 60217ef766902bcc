"""Pairwise comparison of two systems' responses by an LLM judge.

Each (instruction, response pair) is judged once per metric. The presentation
order of the two responses is flipped by a seeded coin per pair so neither
system systematically sits first; verdicts are recorded from system A's
perspective. Unparseable verdicts are skipped and reported, never silently
counted as ties.
"""

from __future__ import annotations

import logging
import random
import re
from dataclasses import dataclass, field
from decimal import ROUND_HALF_UP, Decimal
from typing import Mapping, Sequence

from .errors import CitingError, PipelineError, VerdictParseError
from .jsonio import read_json_file, write_json_file
from .providers import ChatProvider, ordered_parallel_map, user_request

logger = logging.getLogger(__name__)

METRICS = ("articulate", "in_depth", "comprehensive")

METRIC_DEFINITIONS: dict[str, dict] = {
    "articulate": {
        "title": "Articulate",
        "definition": (
            "Articulate is to judge how clearly and fluently a response is presented, "
            "which looks at the structure, language quality, and overall readability."
        ),
        "aspects": (
            "Grammar and syntax correctness",
            "Logical flow of information",
            "Avoidance of jargon, or if jargon is used, it is properly explained",
        ),
    },
    "in_depth": {
        "title": "In-depth",
        "definition": (
            "In-depth focuses on how thoroughly a topic or question is addressed. "
            "An in-depth response delves into details and nuances, rather than just "
            "scratching the surface."
        ),
        "aspects": (
            "Coverage of core principles or concepts",
            "Incorporation of nuanced viewpoints or less-known facts",
            "Demonstrated understanding beyond the basic level",
        ),
    },
    "comprehensive": {
        "title": "Comprehensive",
        "definition": (
            "Comprehensive evaluates the breadth of a response and is about covering "
            "a wide range of related facets or sub-topics."
        ),
        "aspects": (
            "Addressing multiple angles or facets of the question",
            "Incorporating various viewpoints or perspectives",
            "Ensuring no major sub-topic or relevant information is left out",
        ),
    },
}

OUTCOMES = ("win", "tie", "lose")
ORDERS = ("AB", "BA")

_VERDICT_RE = re.compile(r"\b(1|2|tie)\b", re.IGNORECASE)


@dataclass
class JudgeVerdict:
    record_id: str
    metric: str
    outcome: str  # from system A's perspective
    presented_order: str
    raw_judgment: str

    def __post_init__(self):
        if self.metric not in METRICS:
            raise CitingError(f"unknown metric {self.metric!r}")
        if self.outcome not in OUTCOMES:
            raise CitingError(f"unknown outcome {self.outcome!r}")
        if self.presented_order not in ORDERS:
            raise CitingError(f"unknown presentation order {self.presented_order!r}")

    def to_obj(self) -> dict:
        return {
            "record_id": self.record_id,
            "metric": self.metric,
            "outcome": self.outcome,
            "presented_order": self.presented_order,
            "raw_judgment": self.raw_judgment,
        }


@dataclass
class ComparisonReport:
    system_a: str
    system_b: str
    tallies: dict[str, dict[str, int]]
    total: int
    judge_model: str
    seed: int
    skipped: dict[str, int] = field(default_factory=dict)
    flip_consistency: float | None = None

    def validate(self) -> None:
        for metric, tally in self.tallies.items():
            counted = tally["win"] + tally["tie"] + tally["lose"] + self.skipped.get(metric, 0)
            if counted != self.total:
                raise CitingError(
                    f"metric {metric}: win+tie+lose+skipped = {counted} != total {self.total}"
                )

    def to_dict(self) -> dict:
        return {
            "system_a": self.system_a,
            "system_b": self.system_b,
            "tallies": self.tallies,
            "total": self.total,
            "judge_model": self.judge_model,
            "seed": self.seed,
            "skipped": self.skipped,
            "flip_consistency": self.flip_consistency,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ComparisonReport":
        report = cls(
            system_a=obj["system_a"],
            system_b=obj["system_b"],
            tallies={m: dict(t) for m, t in obj["tallies"].items()},
            total=obj["total"],
            judge_model=obj.get("judge_model", ""),
            seed=obj.get("seed", 0),
            skipped=dict(obj.get("skipped", {})),
            flip_consistency=obj.get("flip_consistency"),
        )
        report.validate()
        return report


def build_judge_prompt(instruction: str, response_x: str, response_y: str, metric: str) -> str:
    """Judge prompt for one metric; responses are labeled by presentation position."""
    if not instruction or not response_x or not response_y:
        raise CitingError("judge prompt requires non-empty instruction and responses")
    if metric not in METRIC_DEFINITIONS:
        raise CitingError(f"unknown metric {metric!r}")
    definition = METRIC_DEFINITIONS[metric]
    aspects = definition["aspects"]
    return (
        "You are comparing two responses to the same instruction.\n\n"
        f"Metric: {definition['title']}. {definition['definition']} "
        "Judge the quality of each response from the following aspects: "
        f"(1) {aspects[0]}; (2) {aspects[1]}; (3) {aspects[2]}.\n\n"
        f"Instruction: {instruction}\n\n"
        f"Response 1: {response_x}\n\n"
        f"Response 2: {response_y}\n\n"
        "Which response is better on this metric? End your answer with a single "
        "token: 1 if Response 1 is better, 2 if Response 2 is better, or tie."
    )


def parse_verdict(raw: str, presented_order: str) -> str:
    """Map the final 1/2/tie token to a win/tie/lose outcome for system A."""
    if presented_order not in ORDERS:
        raise CitingError(f"unknown presentation order {presented_order!r}")
    matches = _VERDICT_RE.findall(raw)
    if not matches:
        raise VerdictParseError(f"no verdict token in judge output: {raw[-120:]!r}")
    token = matches[-1].lower()
    if token == "tie":
        return "tie"
    first_wins = token == "1"
    if presented_order == "AB":
        return "win" if first_wins else "lose"
    return "lose" if first_wins else "win"


def tally_verdicts(
    verdicts: Sequence[JudgeVerdict], *, swapped: bool = False
) -> dict[str, dict[str, int]]:
    """Count win/tie/lose per metric; swapped=True reads them from system B's side."""
    tallies: dict[str, dict[str, int]] = {}
    for verdict in sorted(verdicts, key=lambda v: (v.record_id, v.metric)):
        tally = tallies.setdefault(verdict.metric, {"win": 0, "tie": 0, "lose": 0})
        outcome = verdict.outcome
        if swapped and outcome != "tie":
            outcome = "lose" if outcome == "win" else "win"
        tally[outcome] += 1
    return tallies


def run_comparison(
    responses_a: Mapping[str, str],
    responses_b: Mapping[str, str],
    instructions: Mapping[str, str],
    metrics: Sequence[str],
    judge: ChatProvider,
    seed: int,
    *,
    system_a: str = "A",
    system_b: str = "B",
    temperature: float = 0.0,
    max_new_tokens: int = 64,
    skip_threshold: float = 0.02,
    both_orders: bool = False,
    parallelism: int = 1,
) -> tuple[ComparisonReport, list[JudgeVerdict]]:
    """Judge every shared record on every metric and tally the outcomes.

    ``both_orders`` additionally judges each pair with the opposite
    presentation and reports the fraction of pairs where the two orderings
    agree (position-bias audit); primary tallies still come from the seeded
    order.
    """
    if not responses_a or not responses_b:
        raise CitingError("comparison requires non-empty response sets")
    ids_a, ids_b = set(responses_a), set(responses_b)
    if ids_a != ids_b:
        missing = sorted(ids_a.symmetric_difference(ids_b))
        raise CitingError(f"response files do not share record ids; unmatched: {missing[:5]}")
    missing_instructions = sorted(ids_a - set(instructions))
    if missing_instructions:
        raise CitingError(f"instructions missing for records: {missing_instructions[:5]}")
    for metric in metrics:
        if metric not in METRICS:
            raise CitingError(f"unknown metric {metric!r}")

    record_ids = sorted(ids_a)
    ordered_metrics = [m for m in METRICS if m in metrics]
    tasks = [(rid, metric) for rid in record_ids for metric in ordered_metrics]

    # One seeded flip per task, drawn in task order so runs are reproducible.
    rng = random.Random(seed)
    orders = ["AB" if rng.random() < 0.5 else "BA" for _ in tasks]

    def ask(record_id: str, metric: str, order: str) -> str:
        first, second = (
            (responses_a[record_id], responses_b[record_id])
            if order == "AB"
            else (responses_b[record_id], responses_a[record_id])
        )
        prompt = build_judge_prompt(instructions[record_id], first, second, metric)
        return judge.chat(
            user_request(
                judge.model_name, prompt, temperature=temperature, max_new_tokens=max_new_tokens
            )
        )

    def judge_task(task_with_order: tuple[tuple[str, str], str]) -> dict:
        (record_id, metric), order = task_with_order
        result: dict = {"record_id": record_id, "metric": metric, "order": order}
        try:
            raw = ask(record_id, metric, order)
            result["verdict"] = JudgeVerdict(
                record_id=record_id,
                metric=metric,
                outcome=parse_verdict(raw, order),
                presented_order=order,
                raw_judgment=raw,
            )
        except (VerdictParseError, CitingError) as exc:
            result["skip_reason"] = str(exc)
            return result
        if both_orders:
            flipped = "BA" if order == "AB" else "AB"
            try:
                raw2 = ask(record_id, metric, flipped)
                result["flip_outcome"] = parse_verdict(raw2, flipped)
            except (VerdictParseError, CitingError) as exc:
                result["flip_skip"] = str(exc)
        return result

    results = ordered_parallel_map(judge_task, list(zip(tasks, orders)), parallelism)

    verdicts: list[JudgeVerdict] = []
    skipped: dict[str, int] = {metric: 0 for metric in ordered_metrics}
    skipped_reasons: list = []
    agree = 0
    audited = 0
    for result in results:
        if "verdict" not in result:
            skipped[result["metric"]] += 1
            skipped_reasons.append((result["record_id"], result["metric"], result["skip_reason"]))
            continue
        verdicts.append(result["verdict"])
        if both_orders and "flip_outcome" in result:
            audited += 1
            if result["flip_outcome"] == result["verdict"].outcome:
                agree += 1

    total_tasks = len(tasks)
    total_skips = sum(skipped.values())
    if total_tasks and total_skips / total_tasks > skip_threshold:
        raise PipelineError(
            f"judge skipped {total_skips}/{total_tasks} comparisons "
            f"(threshold {skip_threshold:.0%}); first: {skipped_reasons[:3]}"
        )
    if total_skips:
        logger.warning("judge skipped %d comparisons: %s", total_skips, skipped_reasons[:5])

    tallies = tally_verdicts(verdicts)
    for metric in ordered_metrics:
        tallies.setdefault(metric, {"win": 0, "tie": 0, "lose": 0})

    report = ComparisonReport(
        system_a=system_a,
        system_b=system_b,
        tallies={metric: tallies[metric] for metric in ordered_metrics},
        total=len(record_ids),
        judge_model=judge.model_name,
        seed=seed,
        skipped=skipped,
        flip_consistency=(agree / audited) if audited else None,
    )
    report.validate()
    return report, verdicts


def _pct(count: int, total: int) -> str:
    if total == 0:
        return "0%"
    value = Decimal(count * 100) / Decimal(total)
    return f"{value.quantize(Decimal('1'), rounding=ROUND_HALF_UP)}%"


def render_report(report: ComparisonReport, layout: str = "markdown") -> str:
    """Render tallies as a markdown table of Win/Tie/Lose percentages or as JSON counts."""
    report.validate()
    if layout == "json":
        import json

        return json.dumps(report.to_dict(), sort_keys=True, ensure_ascii=False, indent=2)
    if layout != "markdown":
        raise CitingError(f"unknown report layout {layout!r}")

    # canonical metric order regardless of how the tallies dict was stored
    metrics = [m for m in METRICS if m in report.tallies]
    metrics += [m for m in report.tallies if m not in metrics]
    titles = [METRIC_DEFINITIONS[m]["title"] for m in metrics]
    header = "| Systems | " + " | ".join(f"{t} (Win Tie Lose)" for t in titles) + " |"
    divider = "|" + "---|" * (len(metrics) + 1)
    cells = []
    for metric in metrics:
        tally = report.tallies[metric]
        judged = tally["win"] + tally["tie"] + tally["lose"]
        cells.append(
            f"{_pct(tally['win'], judged)} {_pct(tally['tie'], judged)} {_pct(tally['lose'], judged)}"
        )
    row = f"| {report.system_a} vs {report.system_b} | " + " | ".join(cells) + " |"
    return "\n".join([header, divider, row])


def load_report(path) -> ComparisonReport:
    return ComparisonReport.from_dict(read_json_file(path))


def save_report(report: ComparisonReport, path) -> None:
    write_json_file(path, report.to_dict())
