"""Benchmark runner over line-delimited MHQA dataset files."""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

from ..errors import DatasetMalformed, IoFailure, ReapError
from .metrics import cem, token_f1

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class EvalExample:
    example_id: str
    question: str
    golden_answers: tuple[str, ...]


def load_dataset(path: str | Path) -> list[EvalExample]:
    """Read ``{id, question, golden_answers[]}`` records, one per line."""
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DatasetMalformed(f"cannot read dataset {path}: {exc}") from None
    examples = []
    seen: set[str] = set()
    for n, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetMalformed(f"invalid JSON ({exc.msg})", n) from None
        if not isinstance(rec, dict):
            raise DatasetMalformed("record is not an object", n)
        golds = rec.get("golden_answers")
        if not isinstance(golds, list) or not golds or not all(isinstance(g, str) for g in golds):
            raise DatasetMalformed("golden_answers must be a non-empty list of strings", n)
        question = rec.get("question")
        if not isinstance(question, str) or not question.strip():
            raise DatasetMalformed("question must be a non-empty string", n)
        ex_id = str(rec.get("id", n))
        if ex_id in seen:
            raise DatasetMalformed(f"duplicate example id {ex_id!r}", n)
        seen.add(ex_id)
        examples.append(EvalExample(ex_id, question, tuple(golds)))
    return examples


@dataclass
class ExampleRecord:
    example_id: str
    question: str
    golden_answers: list[str]
    prediction: str | None = None
    cem: bool | None = None
    f1: float | None = None
    acc: bool | None = None
    iterations: int | None = None
    error: str | None = None

    def to_dict(self) -> dict[str, Any]:
        out = dict(self.__dict__)
        if out["acc"] is None:
            del out["acc"]
        return out


@dataclass
class Report:
    records: list[ExampleRecord]
    config: dict[str, Any] = field(default_factory=dict)
    judged: bool = False

    @property
    def scored(self) -> list[ExampleRecord]:
        return [r for r in self.records if r.error is None]

    @property
    def errors(self) -> int:
        return sum(r.error is not None for r in self.records)

    def aggregates(self) -> dict[str, Any]:
        """Percentages averaged over examples that ran without error."""
        rows = self.scored
        n = len(rows)
        out: dict[str, Any] = {"n": len(self.records), "scored": n, "errors": self.errors}
        if n == 0:
            out.update(cem=None, f1=None, avg_iterations=None)
            if self.judged:
                out["acc"] = None
            return out
        out["cem"] = 100.0 * sum(bool(r.cem) for r in rows) / n
        out["f1"] = 100.0 * sum(r.f1 for r in rows) / n  # type: ignore[misc]
        if self.judged:
            out["acc"] = 100.0 * sum(bool(r.acc) for r in rows) / n
        out["avg_iterations"] = sum(r.iterations for r in rows) / n  # type: ignore[misc]
        correct = [r for r in rows if (r.acc if self.judged else r.cem)]
        out["avg_iterations_correct"] = (
            sum(r.iterations for r in correct) / len(correct) if correct else None  # type: ignore[misc]
        )
        return out

    def to_dict(self) -> dict[str, Any]:
        return {
            "aggregates": self.aggregates(),
            "records": [r.to_dict() for r in self.records],
            "config": self.config,
        }

    def summary_table(self) -> str:
        agg = self.aggregates()

        def pct(key: str) -> str:
            v = agg.get(key)
            return "-" if v is None else f"{v:.1f}"

        cols = ["CEM", "F1"] + (["ACC"] if self.judged else []) + ["AvgIter", "N", "Errors"]
        vals = [pct("cem"), pct("f1")] + ([pct("acc")] if self.judged else [])
        avg = agg.get("avg_iterations")
        vals += ["-" if avg is None else f"{avg:.2f}", str(agg["n"]), str(agg["errors"])]
        widths = [max(len(c), len(v)) for c, v in zip(cols, vals)]
        head = "  ".join(c.rjust(w) for c, w in zip(cols, widths))
        body = "  ".join(v.rjust(w) for v, w in zip(vals, widths))
        return f"{head}\n{'-' * len(head)}\n{body}\n"

    def write(self, out_dir: str | Path, figures: bool = True) -> dict[str, Path]:
        """Write report.json, summary.txt, records.tsv and (optionally) PNG figures."""
        out = Path(out_dir)
        try:
            out.mkdir(parents=True, exist_ok=True)
            paths = {"report": out / "report.json", "summary": out / "summary.txt",
                     "records": out / "records.tsv"}
            paths["report"].write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=2),
                                       encoding="utf-8")
            paths["summary"].write_text(self.summary_table(), encoding="utf-8")
            cols = ["example_id", "prediction", "cem", "f1"] + (["acc"] if self.judged else []) + [
                "iterations", "error"]
            with open(paths["records"], "w", encoding="utf-8", newline="") as fh:
                writer = csv.writer(fh, delimiter="\t")
                writer.writerow(cols)
                for r in self.records:
                    row = r.__dict__
                    writer.writerow(["" if row[c] is None else row[c] for c in cols])
            if figures:
                from ..plotting import plot_report

                paths.update(plot_report(self, out / "figures"))
        except OSError as exc:
            raise IoFailure(f"cannot write report to {out}: {exc}") from None
        return paths


def score_example(example: EvalExample, prediction: str,
                  judge: Callable[[str, str, str], bool] | None = None) -> dict[str, Any]:
    golds = list(example.golden_answers)
    scores: dict[str, Any] = {"cem": cem(prediction, golds), "f1": token_f1(prediction, golds)}
    if judge is not None:
        scores["acc"] = any(judge(example.question, g, prediction) for g in golds)
    return scores


def run_benchmark(dataset_path: str | Path, engine: Any, *, judge: Callable[[str, str, str], bool] | None = None,
                  parallel: int = 1, limit: int | None = None,
                  on_trace: Callable[[dict[str, Any]], None] | None = None,
                  config: dict[str, Any] | None = None) -> Report:
    """Run ``engine.run`` on each example and score it.

    Errors raised by the engine are recorded on the example and excluded
    from the aggregates; the run continues. Records and traces come back in
    dataset order regardless of ``parallel``.
    """
    examples = load_dataset(dataset_path)
    if limit is not None:
        examples = examples[:limit]

    def one(example: EvalExample) -> tuple[ExampleRecord, dict[str, Any] | None]:
        record = ExampleRecord(example.example_id, example.question, list(example.golden_answers))
        try:
            answer, trace = engine.run(example.question, gold=example.golden_answers)
        except ReapError as exc:
            record.error = f"{type(exc).__name__}: {exc}"
            partial = getattr(exc, "trace", None)
            return record, partial.to_dict() if partial is not None else None
        record.prediction = answer
        record.iterations = trace.iterations
        try:
            scores = score_example(example, answer, judge)
        except ReapError as exc:
            record.error = f"judge {type(exc).__name__}: {exc}"
            return record, trace.to_dict()
        record.cem, record.f1, record.acc = scores["cem"], scores["f1"], scores.get("acc")
        data = trace.to_dict()
        data["correct"] = bool(record.acc if judge is not None else record.cem)
        return record, data

    if parallel > 1:
        with ThreadPoolExecutor(max_workers=parallel) as pool:
            results = list(pool.map(one, examples))
    else:
        results = [one(e) for e in examples]
    records = []
    for record, trace in results:
        records.append(record)
        if on_trace is not None and trace is not None:
            on_trace(trace)
        if record.error:
            log.warning("example %s failed: %s", record.example_id, record.error)
    return Report(records, config=config or {}, judged=judge is not None)


def recompute_aggregates(report_dict: dict[str, Any]) -> dict[str, Any]:
    """Rebuild aggregates from the stored per-example records of a report.json."""
    records = [ExampleRecord(**{k: v for k, v in r.items()}) for r in report_dict["records"]]
    judged = "acc" in report_dict["aggregates"]
    return Report(records, judged=judged).aggregates()


__all__ = ["EvalExample", "ExampleRecord", "Report", "load_dataset", "recompute_aggregates",
           "run_benchmark", "score_example"]
