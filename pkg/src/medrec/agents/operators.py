"""Summarize, Generate and Critique operators plus the single-call direct-prompting mode."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import asdict, dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from ..ehr import PatientRecord, serialize
from ..errors import BackendError, LevelTooShallow, MalformedCode, UnparsableOutput
from ..knowledge import IndicationMap
from ..ontology import MedVocab, Ontology, to_l4
from ..panel import Expert
from .backend import CallLog, CallRecord, LlmBackend, StageSettings
from .parsing import parse_json_object

log = logging.getLogger(__name__)

SUMMARY_FIELDS = ("expertise", "current_admission", "medication_relevant_history", "expertise_focus", "risks_to_watch")
DEFAULT_CONFIDENCE = 0.5

_SLOT = re.compile(r"\{([a-z_]+)\}")


class PromptSet:
    """Prompt templates read from ``directory`` when present there, else from the packaged assets."""

    def __init__(self, directory: str | Path | None = None):
        self.directory = Path(directory) if directory else None
        self._cache: dict[str, str] = {}

    def get(self, name: str) -> str:
        if name not in self._cache:
            local = self.directory / f"{name}.txt" if self.directory else None
            if local is not None and local.exists():
                self._cache[name] = local.read_text(encoding="utf-8")
            else:
                ref = resources.files("medrec").joinpath("assets", "prompts", f"{name}.txt")
                self._cache[name] = ref.read_text(encoding="utf-8")
        return self._cache[name]

    def render(self, name: str, **slots: Any) -> str:
        def sub(m: re.Match[str]) -> str:
            key = m.group(1)
            if key not in slots:
                raise KeyError(f"prompt {name!r} needs slot {key!r}")
            return str(slots[key])

        return _SLOT.sub(sub, self.get(name)).rstrip("\n")


@dataclass
class AgentContext:
    """Everything an operator needs for one case."""

    backend: LlmBackend
    ontology: Ontology
    vocab: MedVocab
    record: PatientRecord
    settings: StageSettings = field(default_factory=StageSettings)
    calls: CallLog = field(default_factory=CallLog)
    prompts: PromptSet = field(default_factory=PromptSet)

    @cached_property
    def patient_text(self) -> str:
        return serialize(self.record, self.ontology).text

    def call(
        self,
        stage: str,
        system: str,
        user: str,
        expert_id: str | None = None,
        payload: Mapping[str, Any] | None = None,
    ) -> str:
        meta = {"stage": stage, "case_id": self.record.case_id, "expert_id": expert_id, "payload": payload or {}}
        try:
            out = self.backend.complete(
                system, user, self.settings.temperature(stage), self.settings.max_tokens, meta=meta
            )
        except BackendError:
            self.calls.add(CallRecord(stage, expert_id, 0, 0, 0.0, ok=False))
            raise
        self.calls.add(CallRecord(stage, expert_id, out.in_tokens, out.out_tokens, out.latency))
        return out.text

    def describe(self, codes: Iterable[str], prior: Iterable[str] = ()) -> str:
        prior = set(prior)
        lines = [
            f"{c}: {self.ontology.describe_atc(c)}" + (" [PRIOR-MED]" if c in prior else "") for c in codes
        ]
        return "\n".join(lines) if lines else "none"


def _text(value: Any) -> str:
    if value is None:
        return ""
    return value if isinstance(value, str) else json.dumps(value, ensure_ascii=False, sort_keys=True)


def normalize_code(raw: Any) -> str | None:
    """Level-4 form of a model-emitted code, or None when it is not valid ATC."""
    try:
        return to_l4(str(raw).strip()).text
    except (MalformedCode, LevelTooShallow):
        return None


# ---------------------------------------------------------------------------
# Summarize


@dataclass(frozen=True)
class VisitRationale:
    visit_index: int
    text: str


@dataclass(frozen=True)
class ExpertSummary:
    expertise: str
    current_admission: str
    medication_relevant_history: str
    expertise_focus: str
    risks_to_watch: str
    visit_rationales: tuple[VisitRationale, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["visit_rationales"] = [asdict(v) for v in self.visit_rationales]
        return d

    @classmethod
    def from_output(cls, obj: Mapping[str, Any], n_history: int) -> ExpertSummary:
        missing = [f for f in SUMMARY_FIELDS if f not in obj]
        if missing:
            raise UnparsableOutput(f"summary lacks fields {missing}", json.dumps(obj))
        rationales = []
        for item in obj.get("visit_rationales") or []:
            if not isinstance(item, Mapping):
                continue
            try:
                idx = int(item.get("visit_index", item.get("visitIndex")))
            except (TypeError, ValueError):
                continue
            if 1 <= idx <= n_history:
                rationales.append(VisitRationale(idx, _text(item.get("text"))))
            else:
                log.warning("dropping rationale for nonexistent visit %d", idx)
        return cls(*(_text(obj[f]) for f in SUMMARY_FIELDS), visit_rationales=tuple(rationales))


def summarize(expert: Expert, ctx: AgentContext) -> ExpertSummary:
    record = ctx.record
    user = ctx.prompts.render(
        "summarize_user",
        expert_name=expert.name,
        expert_id=expert.id,
        scope=", ".join(sorted(expert.chapter_scope)) or "all (always on)",
        vocab_size=len(ctx.vocab),
        playbook=expert.playbook.strip(),
        patient_text=ctx.patient_text,
    )
    payload = {
        "expert_id": expert.id,
        "expert_name": expert.name,
        "scope_diagnoses": [
            [d.text, ctx.ontology.describe_icd(d)] for d, _ in record.all_diagnoses() if _in_scope(expert, ctx, d)
        ],
        "prior_meds": list(record.prior_meds),
        "n_history": len(record.history),
    }
    text = ctx.call("summarize", ctx.prompts.get("summarize_system"), user, expert.id, payload)
    return ExpertSummary.from_output(parse_json_object(text), len(record.history))


# ---------------------------------------------------------------------------
# Generate


@dataclass(frozen=True)
class Proposal:
    code: str
    confidence: float
    reason: str
    expert_id: str

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True)
class GenerateResult:
    expert_id: str
    proposals: tuple[Proposal, ...] = ()
    candidates: tuple[str, ...] = ()
    dropped_malformed: int = 0
    dropped_out_of_vocab: int = 0

    @property
    def dropped(self) -> int:
        return self.dropped_malformed + self.dropped_out_of_vocab

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(p.code for p in self.proposals)

    def to_dict(self) -> dict[str, Any]:
        return {
            "expert_id": self.expert_id,
            "proposals": [p.to_dict() for p in self.proposals],
            "candidates": list(self.candidates),
            "dropped_malformed": self.dropped_malformed,
            "dropped_out_of_vocab": self.dropped_out_of_vocab,
        }


def _in_scope(expert: Expert, ctx: AgentContext, code: Any) -> bool:
    if expert.always_on or not expert.chapter_scope:
        return True
    return ctx.ontology.chapter(code) in expert.chapter_scope


def medi_candidates(expert: Expert, ctx: AgentContext, indications: IndicationMap | None) -> tuple[str, ...]:
    """Indicated medications for the target diagnoses inside the expert's scope."""
    if indications is None:
        return ()
    out: set[str] = set()
    for d in ctx.record.target.diagnoses:
        if _in_scope(expert, ctx, d):
            out |= indications.candidates(d.key)
    return tuple(sorted(c for c in out if c in ctx.vocab))


def _parse_proposals(obj: Mapping[str, Any], expert_id: str, vocab: MedVocab) -> GenerateResult:
    items = obj.get("predicted_drugs")
    if not isinstance(items, list):
        raise UnparsableOutput("predicted_drugs missing or not a list", json.dumps(obj))
    seen: dict[str, Proposal] = {}
    malformed = oov = 0
    for item in items:
        raw = item.get("code") if isinstance(item, Mapping) else item
        code = normalize_code(raw) if raw is not None else None
        if code is None:
            malformed += 1
            continue
        if code not in vocab:
            oov += 1
            continue
        if code in seen:
            continue
        conf = DEFAULT_CONFIDENCE
        reason = ""
        if isinstance(item, Mapping):
            try:
                conf = min(max(float(item["confidence"]), 0.0), 1.0)
            except (KeyError, TypeError, ValueError):
                conf = DEFAULT_CONFIDENCE
            reason = _text(item.get("reason"))
        seen[code] = Proposal(code, conf, reason, expert_id)
    if malformed or oov:
        log.info("%s: dropped %d malformed and %d out-of-vocabulary codes", expert_id, malformed, oov)
    return GenerateResult(expert_id, tuple(seen.values()), (), malformed, oov)


@dataclass(frozen=True)
class Removal:
    code: str
    reason: str = ""


def generate(
    expert: Expert,
    summary: ExpertSummary | None,
    ctx: AgentContext,
    indications: IndicationMap | None = None,
    revision: Sequence[Removal] = (),
) -> GenerateResult:
    """One expert's ATC-L4 proposals; with ``summary=None`` the raw record is passed through."""
    record = ctx.record
    candidates = medi_candidates(expert, ctx, indications)
    revision_block = ""
    if revision:
        lines = "\n".join(f"- {r.code}: {r.reason or 'no reason given'}" for r in revision)
        revision_block = f"\nRevision: the reviewer dropped these codes from your last answer.\n{lines}\n"
    if summary is None:
        summary_text = f"(no specialist summary; raw record follows)\n{ctx.patient_text}"
    else:
        summary_text = json.dumps(summary.to_dict(), ensure_ascii=False, indent=2)
    user = ctx.prompts.render(
        "generate_user",
        expert_name=expert.name,
        expert_id=expert.id,
        summary=summary_text,
        checklist=expert.checklist.strip(),
        prior_meds=ctx.describe(record.prior_meds),
        candidates=ctx.describe(candidates),
        revision=revision_block,
    )
    payload = {
        "expert_id": expert.id,
        "always_on": expert.always_on,
        "candidates": list(candidates),
        "prior_meds": list(record.prior_meds),
        "revision": [r.code for r in revision],
    }
    text = ctx.call("generate", ctx.prompts.get("generate_system"), user, expert.id, payload)
    parsed = _parse_proposals(parse_json_object(text), expert.id, ctx.vocab)
    return GenerateResult(expert.id, parsed.proposals, candidates, parsed.dropped_malformed, parsed.dropped_out_of_vocab)


def direct_predict(ctx: AgentContext) -> GenerateResult:
    """Single-call baseline: the serialized record straight to the model."""
    user = ctx.prompts.render("direct_user", patient_text=ctx.patient_text)
    payload = {"prior_meds": list(ctx.record.prior_meds)}
    text = ctx.call("direct", ctx.prompts.get("direct_system"), user, None, payload)
    return _parse_proposals(parse_json_object(text), "DIRECT", ctx.vocab)


# ---------------------------------------------------------------------------
# Critique


@dataclass(frozen=True)
class CritiqueResult:
    union: tuple[str, ...]
    retained: tuple[str, ...]
    removed: tuple[Removal, ...] = ()
    rationale: str = ""
    missing_info: tuple[str, ...] = ()
    discarded: tuple[str, ...] = ()  # codes the model tried to add
    fallback: bool = False  # backend failed; the whole union was kept

    @property
    def removed_codes(self) -> tuple[str, ...]:
        return tuple(r.code for r in self.removed)

    def to_dict(self) -> dict[str, Any]:
        return {
            "union": list(self.union),
            "retained": list(self.retained),
            "removed": [asdict(r) for r in self.removed],
            "rationale": self.rationale,
            "missing_info": list(self.missing_info),
            "discarded": list(self.discarded),
            "fallback": self.fallback,
        }


def support_counts(results: Iterable[GenerateResult]) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in results:
        for code in set(r.codes):
            counts[code] = counts.get(code, 0) + 1
    return dict(sorted(counts.items()))


def reconcile_critique(union: Sequence[str], obj: Mapping[str, Any]) -> CritiqueResult:
    """Force the model's answer into a partition of ``union``.

    Unmentioned codes are kept, a code listed as both retained and removed is
    kept, and codes outside the union are discarded.
    """
    members = set(union)
    outside: set[str] = set()

    def codes(values: Any) -> list[str]:
        out = []
        for v in values or []:
            raw = v.get("code") if isinstance(v, Mapping) else v
            code = normalize_code(raw) if raw is not None else None
            if code is None:
                continue
            if code in members:
                out.append(code)
            else:
                outside.add(code)
        return out

    kept = set(codes(obj.get("retained")))
    reasons: dict[str, str] = {}
    for item in obj.get("removed") or []:
        raw = item.get("code") if isinstance(item, Mapping) else item
        code = normalize_code(raw) if raw is not None else None
        if code is None:
            continue
        if code not in members:
            outside.add(code)
        elif code not in kept and code not in reasons:
            reasons[code] = _text(item.get("reason")) if isinstance(item, Mapping) else ""
    if outside:
        log.warning("critique tried to add codes outside the union: %s", sorted(outside))
    removed = tuple(Removal(c, reasons[c]) for c in sorted(reasons))
    retained = tuple(c for c in sorted(members) if c not in reasons)
    missing = obj.get("missing_info") or []
    if isinstance(missing, str):
        missing = [missing]
    return CritiqueResult(
        tuple(sorted(members)),
        retained,
        removed,
        _text(obj.get("rationale")),
        tuple(_text(m) for m in missing),
        tuple(sorted(outside)),
    )


def critique(
    results: Sequence[GenerateResult],
    summaries: Mapping[str, ExpertSummary],
    ctx: AgentContext,
) -> CritiqueResult:
    record = ctx.record
    support = support_counts(results)
    union = tuple(support)
    if not union:
        return CritiqueResult((), ())
    summaries_text = (
        "\n\n".join(
            f"[{eid}]\n{json.dumps(s.to_dict(), ensure_ascii=False, indent=2)}" for eid, s in summaries.items()
        )
        or "none"
    )
    proposal_lines = [
        f"{p.expert_id}: {p.code} (confidence {p.confidence:.2f}) {p.reason}".rstrip()
        for r in results
        for p in r.proposals
    ]
    user = ctx.prompts.render(
        "critique_user",
        summaries=summaries_text,
        patient_text=ctx.patient_text,
        proposals="\n".join(proposal_lines),
        prior_meds=ctx.describe(record.prior_meds),
        union_size=len(union),
        union=ctx.describe(union, record.prior_meds),
    )
    confidence: dict[str, float] = {}
    for r in results:
        for p in r.proposals:
            confidence[p.code] = max(confidence.get(p.code, 0.0), p.confidence)
    payload = {
        "union": list(union),
        "support": support,
        "prior_meds": list(record.prior_meds),
        "confidence": dict(sorted(confidence.items())),
    }
    try:
        text = ctx.call("critique", ctx.prompts.get("critique_system"), user, None, payload)
        return reconcile_critique(union, parse_json_object(text))
    except (BackendError, UnparsableOutput) as exc:
        log.error("case %s: critique failed (%s); keeping the full union", record.case_id, exc)
        return CritiqueResult(union, union, fallback=True)
