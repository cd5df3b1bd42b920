"""Cohort execution: bounded worker pool, incremental resumable trace file, report emission."""

from __future__ import annotations

import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence

from ..agents.backend import BoundedBackend, LlmBackend, backend_from_config
from ..agents.operators import PromptSet
from ..ehr import PatientRecord, load_cases
from ..errors import ConfigError
from ..knowledge import SafetyKB, load_kb
from ..metrics import MetricsReport, evaluate
from ..ontology import Ontology, icd_category
from ..panel import Panel
from ..safety import PipelineConfig, run_case
from .config import RunConfig
from .efficiency import EfficiencyReport, efficiency_from_traces

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


@dataclass(frozen=True)
class OutputFiles:
    """Files of one run; everything shares the trace file's stem."""

    traces: Path

    @property
    def stem(self) -> str:
        return self.traces.name[: -len(".jsonl")] if self.traces.name.endswith(".jsonl") else self.traces.name

    def _sibling(self, suffix: str) -> Path:
        return self.traces.with_name(self.stem + suffix)

    @property
    def done(self) -> Path:
        return self._sibling(".done")

    @property
    def failures(self) -> Path:
        return self._sibling(".failures.jsonl")

    @property
    def metrics_json(self) -> Path:
        return self._sibling(".metrics.json")

    @property
    def metrics_tsv(self) -> Path:
        return self._sibling(".metrics.tsv")

    @property
    def efficiency(self) -> Path:
        return self._sibling(".efficiency.json")


@dataclass
class CaseOutcome:
    case_id: str
    trace: dict[str, Any] | None = None
    error: str | None = None


def run_cases(
    records: Sequence[PatientRecord],
    panel: Panel,
    kb: SafetyKB,
    backend: LlmBackend,
    ontology: Ontology,
    pipeline: PipelineConfig,
    prompts: PromptSet | None = None,
    concurrency: int = 1,
):
    """Yield a ``CaseOutcome`` per record, in input order, while up to ``concurrency`` cases run."""
    prompts = prompts or PromptSet()

    def one(record: PatientRecord) -> CaseOutcome:
        try:
            trace = run_case(record, panel, kb, backend, ontology, pipeline, prompts)
        except ConfigError:
            raise
        except Exception as exc:  # exclude-and-count: one bad case must not sink the cohort
            log.error("case %s failed: %s: %s", record.case_id, type(exc).__name__, exc)
            return CaseOutcome(record.case_id, error=f"{type(exc).__name__}: {exc}")
        return CaseOutcome(record.case_id, trace=trace.to_dict())

    if concurrency <= 1:
        for r in records:
            yield one(r)
        return
    with ThreadPoolExecutor(max_workers=concurrency) as pool:
        futures = [pool.submit(one, r) for r in records]
        for fut in futures:
            yield fut.result()


def target_diag_keys(record: PatientRecord) -> list[str]:
    return sorted({icd_category(d) for d in record.target.diagnoses})


def evaluate_traces(
    traces: Sequence[Mapping[str, Any]],
    records: Mapping[str, PatientRecord],
    kb: SafetyKB,
    label: str = "model",
    excluded: int = 0,
) -> MetricsReport:
    """Score traces whose case has a ground truth; others count as excluded."""
    ids, preds, gts, diags = [], [], [], []
    for t in traces:
        rec = records.get(t["caseId"])
        if rec is None or rec.ground_truth is None:
            excluded += 1
            continue
        ids.append(rec.case_id)
        preds.append(set(t["final"]))
        gts.append(set(rec.ground_truth))
        diags.append(target_diag_keys(rec))
    return evaluate(ids, preds, gts, diags, kb, label=label, excluded=excluded)


def read_traces(path: str | Path) -> list[dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        return []
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


@dataclass
class BatchResult:
    traces: list[dict[str, Any]]
    metrics: MetricsReport
    efficiency: EfficiencyReport
    failures: dict[str, str] = field(default_factory=dict)
    pending: int = 0  # cases left unprocessed (only when ``max_cases`` cut the run short)
    files: OutputFiles | None = None

    @property
    def exit_code(self) -> int:
        return EXIT_PARTIAL if self.failures else EXIT_OK


def _read_done(path: Path) -> list[str]:
    if not path.exists():
        return []
    return [line.strip() for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]


def _compact(trace_path: Path, done: set[str]) -> list[dict[str, Any]]:
    """Keep only traces acknowledged in the sidecar (a crash can leave an unacknowledged tail)."""
    kept, seen = [], set()
    for line in trace_path.read_text(encoding="utf-8").splitlines() if trace_path.exists() else []:
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            continue  # torn final line
        cid = obj.get("caseId")
        if cid in done and cid not in seen:
            kept.append(obj)
            seen.add(cid)
    trace_path.write_text("".join(json.dumps(t, sort_keys=True) + "\n" for t in kept), encoding="utf-8")
    return kept


def run_batch(
    config: RunConfig,
    max_cases: int | None = None,
    backend: LlmBackend | None = None,
    label: str = "model",
) -> BatchResult:
    """Run the cohort described by ``config``; rerunning after an interruption resumes it.

    ``max_cases`` processes at most that many pending cases and stops, which is
    how an interruption is simulated in tests.
    """
    config.check_paths()
    kb = load_kb(config.kb)
    ontology = Ontology.load(config.ontology)
    panel = config.load_panel()
    for eid in config.drop_experts:
        panel.get(eid)
    pipeline = config.pipeline()
    prompts = PromptSet(config.prompts)
    records = load_cases(config.cases, kb.vocab)
    by_id = {r.case_id: r for r in records}
    if len(by_id) != len(records):
        raise ConfigError(f"{config.cases}: duplicate case ids")
    inner = backend if backend is not None else backend_from_config(config.backend, config.base)
    shared = BoundedBackend(inner, config.concurrency)

    config.output.mkdir(parents=True, exist_ok=True)
    files = OutputFiles(config.output / config.traces)
    trace_path, done_path = files.traces, files.done
    done = set(_read_done(done_path))
    kept = _compact(trace_path, done)
    done = {t["caseId"] for t in kept}
    done_path.write_text("".join(cid + "\n" for cid in sorted(done)), encoding="utf-8")

    pending = [r for r in records if r.case_id not in done]
    todo = pending if max_cases is None else pending[:max_cases]
    failures: dict[str, str] = {}
    with trace_path.open("a", encoding="utf-8") as tf, done_path.open("a", encoding="utf-8") as df:
        for outcome in run_cases(todo, panel, kb, shared, ontology, pipeline, prompts, config.concurrency):
            if outcome.trace is None:
                failures[outcome.case_id] = outcome.error or ""
                continue
            tf.write(json.dumps(outcome.trace, sort_keys=True) + "\n")
            tf.flush()
            df.write(outcome.case_id + "\n")
            df.flush()
    files.failures.write_text(
        "".join(json.dumps({"caseId": k, "error": v}, sort_keys=True) + "\n" for k, v in failures.items()),
        encoding="utf-8",
    )

    # reports cover every acknowledged trace, in input order
    order = {r.case_id: k for k, r in enumerate(records)}
    traces = sorted(read_traces(trace_path), key=lambda t: order.get(t["caseId"], len(order)))
    metrics = evaluate_traces(traces, by_id, kb, label=label, excluded=len(failures))
    efficiency = efficiency_from_traces(traces)
    metrics.write(files.metrics_json, files.metrics_tsv)
    efficiency.write(files.efficiency)
    return BatchResult(traces, metrics, efficiency, failures, len(pending) - len(todo), files)
