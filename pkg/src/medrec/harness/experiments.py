"""Leave-one-expert-out reruns and critique/support diagnostics over traces."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Collection, Mapping, Sequence

from ..agents.backend import LlmBackend
from ..agents.operators import PromptSet
from ..ehr import PatientRecord
from ..knowledge import SafetyKB
from ..metrics import score_accuracy
from ..ontology import Ontology
from ..panel import Panel
from ..safety import PipelineConfig
from .runner import run_cases


def _f1(preds: Sequence[Collection[str]], gts: Sequence[Collection[str]]) -> float | None:
    if not preds:
        return None
    return score_accuracy(preds, gts).f1


@dataclass
class LooRow:
    expert_id: str
    n: int  # subgroup size: cases where the expert was activated in the baseline
    f1_with: float | None
    f1_without: float | None

    @property
    def delta(self) -> float:
        """F1 lost when the expert is removed (positive = the expert helped)."""
        if self.f1_with is None or self.f1_without is None:
            return 0.0
        return self.f1_with - self.f1_without

    def to_dict(self) -> dict[str, Any]:
        return {
            "expertId": self.expert_id,
            "n": self.n,
            "f1With": self.f1_with,
            "f1Without": self.f1_without,
            "delta": round(self.delta, 10),
        }


@dataclass
class LooReport:
    baseline: list[dict[str, Any]]
    rows: list[LooRow] = field(default_factory=list)
    failures: dict[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"rows": [r.to_dict() for r in self.rows], "failures": dict(sorted(self.failures.items()))}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def run_loo(
    records: Sequence[PatientRecord],
    expert_ids: Sequence[str],
    panel: Panel,
    kb: SafetyKB,
    backend: LlmBackend,
    ontology: Ontology,
    pipeline: PipelineConfig = PipelineConfig(),
    prompts: PromptSet | None = None,
    concurrency: int = 1,
    baseline: Sequence[Mapping[str, Any]] | None = None,
) -> LooReport:
    """For each expert, rerun its baseline activation subgroup without it and compare F1.

    Unknown ids raise ``UnknownExpertId`` before anything runs.
    """
    for eid in expert_ids:
        panel.get(eid)
    failures: dict[str, str] = {}
    if baseline is None:
        baseline = []
        for o in run_cases(records, panel, kb, backend, ontology, pipeline, prompts, concurrency):
            if o.trace is None:
                failures[f"baseline/{o.case_id}"] = o.error or ""
            else:
                baseline.append(o.trace)
    by_id = {r.case_id: r for r in records}
    base = {t["caseId"]: t for t in baseline if t["caseId"] in by_id}
    report = LooReport(list(baseline), failures=failures)
    for eid in expert_ids:
        group = [
            by_id[cid] for cid, t in base.items()
            if t.get("routing") and eid in t["routing"]["activated"] and by_id[cid].ground_truth is not None
        ]
        dropped = replace(pipeline, drop_experts=tuple(pipeline.drop_experts) + (eid,))
        after: dict[str, set[str]] = {}
        for o in run_cases(group, panel, kb, backend, ontology, dropped, prompts, concurrency):
            if o.trace is None:
                failures[f"{eid}/{o.case_id}"] = o.error or ""
            else:
                after[o.case_id] = set(o.trace["final"])
        scored = [r for r in group if r.case_id in after]
        gts = [r.ground_truth for r in scored]
        report.rows.append(
            LooRow(
                eid,
                len(scored),
                _f1([set(base[r.case_id]["final"]) for r in scored], gts),
                _f1([after[r.case_id] for r in scored], gts),
            )
        )
    return report


# ---------------------------------------------------------------------------
# Diagnostics


def _counts(pred: set[str], gt: set[str]) -> tuple[int, int, int]:
    return len(pred & gt), len(pred - gt), len(gt - pred)


def _mean(rows: list[tuple[int, int, int]]) -> dict[str, float]:
    n = len(rows)
    return {k: (sum(r[i] for r in rows) / n if n else 0.0) for i, k in enumerate(("tp", "fp", "fn"))}


def run_diagnostics(
    traces: Sequence[Mapping[str, Any]],
    gts: Mapping[str, Collection[str]],
) -> dict[str, Any]:
    """Critique effect, removed-code support histogram, per-expert contributions, verdict mix.

    Traces whose case has no ground truth are skipped.
    """
    pre_rows, post_rows = [], []
    removed_support: Counter[int] = Counter()
    retained_support: Counter[int] = Counter()
    experts: dict[str, Counter[str]] = {}
    verdicts: Counter[str] = Counter()
    n = 0
    for t in traces:
        gt = gts.get(t["caseId"])
        if gt is None:
            continue
        gt = set(gt)
        n += 1
        support: Counter[str] = Counter()
        for eid, res in t.get("proposals", {}).items():
            codes = {p["code"] for p in res.get("proposals", [])}
            support.update(codes)
            row = experts.setdefault(eid, Counter())
            row["activated"] += 1
            row["proposed"] += len(codes)
            row["proposed_tp"] += len(codes & gt)
            retained = codes & set(t.get("retained", []))
            row["retained"] += len(retained)
            row["retained_tp"] += len(retained & gt)
        union = set(support)
        retained = set(t.get("retained", []))
        pre_rows.append(_counts(union, gt))
        post_rows.append(_counts(retained, gt))
        crit = t.get("critique") or {}
        for r in crit.get("removed", []):
            removed_support[support.get(r["code"], 0)] += 1
        for code in retained:
            retained_support[support.get(code, 0)] += 1
        for v in t.get("verdicts", []):
            verdicts[f"{v['flag']['relation']}/{v['action']}"] += 1
    return {
        "n": n,
        "preCritique": _mean(pre_rows),
        "postCritique": _mean(post_rows),
        "removedBySupport": {str(k): v for k, v in sorted(removed_support.items())},
        "retainedBySupport": {str(k): v for k, v in sorted(retained_support.items())},
        "experts": {eid: dict(sorted(c.items())) for eid, c in sorted(experts.items())},
        "verdicts": dict(sorted(verdicts.items())),
    }


def write_json(obj: Any, path: str | Path) -> None:
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
