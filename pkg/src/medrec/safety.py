"""Deterministic safety flagging, LLM adjudication and the end-to-end per-case pipeline."""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable, Mapping, Sequence

from .agents.backend import CallRecord, LlmBackend, StageSettings
from .agents.operators import (
    AgentContext,
    CritiqueResult,
    ExpertSummary,
    GenerateResult,
    PromptSet,
    critique,
    direct_predict,
    generate,
    normalize_code,
    summarize,
)
from .agents.parsing import parse_json_object
from .ehr import PatientRecord
from .errors import BackendError, ConfigError, UnparsableOutput
from .knowledge import SafetyKB
from .ontology import Ontology, icd_category, l3_of
from .panel import Expert, Panel, RoutingResult, route

log = logging.getLogger(__name__)

STAGE_ORDER = ("route", "summarize", "generate", "critique", "findflags", "verify", "direct")


class Relation(str, enum.Enum):
    DDI = "DDI"
    CONTRA = "CONTRA"


class Action(str, enum.Enum):
    RET = "RET"
    REM = "REM"


@dataclass(frozen=True)
class Flag:
    med: str
    relation: Relation
    degree_self: int
    is_prior: bool
    partner: str | None = None
    degree_partner: int | None = None
    partner_is_prior: bool | None = None
    diag: str | None = None
    pair_id: str | None = None

    def __post_init__(self) -> None:
        if (self.partner is None) == (self.diag is None):
            raise ValueError("a flag carries exactly one of partner or diag")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["relation"] = self.relation.value
        return d


@dataclass(frozen=True)
class Verdict:
    flag: Flag
    action: Action
    reason: str = ""
    replacement: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "flag": self.flag.to_dict(),
            "action": self.action.value,
            "reason": self.reason,
            "replacement": self.replacement,
        }


def find_flags(
    candidates: Iterable[str],
    target_diags: Iterable[str],
    prior_meds: Iterable[str],
    kb: SafetyKB,
) -> list[Flag]:
    """Every flagged DDI pair (one flag per member) and every contraindicated (med, active diagnosis)."""
    meds = sorted(set(candidates))
    diags = sorted(set(target_diags))
    prior = set(prior_meds)
    degree = {m: kb.degree(m) for m in meds}
    flags: list[Flag] = []
    for i, a in enumerate(meds):
        for b in meds[i + 1 :]:
            if kb.ddi.flagged(a, b):
                pair = f"{a}|{b}"
                flags.append(Flag(a, Relation.DDI, degree[a], a in prior, b, degree[b], b in prior, pair_id=pair))
                flags.append(Flag(b, Relation.DDI, degree[b], b in prior, a, degree[a], a in prior, pair_id=pair))
    for m in meds:
        for d in diags:
            if kb.contra.value(m, d) > 0:
                flags.append(Flag(m, Relation.CONTRA, degree[m], m in prior, diag=d))
    flags.sort(key=lambda f: (f.med, f.relation.value, f.partner or f.diag or ""))
    return flags


@dataclass(frozen=True)
class VerifyOutcome:
    verdicts: tuple[Verdict, ...]
    removed: tuple[str, ...]
    replacements: tuple[str, ...]
    failed: bool = False
    rejected_replacements: tuple[str, ...] = ()


def valid_replacement(original: str, replacement: str, kb: SafetyKB) -> bool:
    return replacement != original and replacement in kb.vocab and l3_of(replacement) == l3_of(original)


def _verify_prompt(flags: Sequence[Flag], candidates: Sequence[str], ctx: AgentContext) -> tuple[str, dict[str, Any]]:
    prior = ctx.record.prior_meds
    ddi_lines, contra_lines = [], []
    ddi_payload, contra_payload = [], []
    for f in flags:
        if f.relation is Relation.DDI and f.pair_id and f.pair_id.startswith(f.med + "|"):
            tag_a = " [PRIOR]" if f.is_prior else ""
            tag_b = " [PRIOR]" if f.partner_is_prior else ""
            ddi_lines.append(f"{f.med} (degree={f.degree_self}){tag_a} <-> {f.partner} (degree={f.degree_partner}){tag_b}")
            ddi_payload.append([f.med, f.partner, f.degree_self, f.degree_partner])
        elif f.relation is Relation.CONTRA:
            contra_lines.append(f"{f.med} <-> diagnosis {f.diag}")
            contra_payload.append([f.med, f.diag])
    user = ctx.prompts.render(
        "verify_user",
        predicted=ctx.describe(candidates, prior),
        prior_meds=ctx.describe(prior),
        ddi_pairs="\n".join(ddi_lines) or "none",
        contra_pairs="\n".join(contra_lines) or "none",
    )
    payload = {
        "candidates": list(candidates),
        "prior_meds": list(prior),
        "ddi_pairs": ddi_payload,
        "contra_pairs": contra_payload,
    }
    return user, payload


def verify(
    flags: Sequence[Flag],
    candidates: Sequence[str],
    kb: SafetyKB,
    ctx: AgentContext,
    fail_closed: bool = False,
) -> VerifyOutcome:
    """One batched adjudication call for all flags of a case.

    Only flagged medications can be removed. On backend or parse failure every
    flag is retained, or removed when ``fail_closed`` is set.
    """
    if not flags:
        return VerifyOutcome((), (), ())
    flagged = {f.med for f in flags}
    user, payload = _verify_prompt(flags, candidates, ctx)
    try:
        text = ctx.call("verify", ctx.prompts.get("verify_system"), user, None, payload)
        obj = parse_json_object(text)
    except (BackendError, UnparsableOutput) as exc:
        action = Action.REM if fail_closed else Action.RET
        log.error("case %s: verify failed (%s); all flags default to %s", ctx.record.case_id, exc, action.value)
        verdicts = tuple(Verdict(f, action, "verifier unavailable") for f in flags)
        removed = tuple(sorted(flagged)) if fail_closed else ()
        return VerifyOutcome(verdicts, removed, (), failed=True)

    removals: dict[str, tuple[str, str | None]] = {}
    for item in obj.get("removed_drugs") or []:
        raw = item.get("code") if isinstance(item, Mapping) else item
        code = normalize_code(raw) if raw is not None else None
        if code is None or code in removals:
            continue
        if code not in flagged:
            log.warning("case %s: verifier removed unflagged %s; ignored", ctx.record.case_id, code)
            continue
        reason = str(item.get("reason") or "") if isinstance(item, Mapping) else ""
        rep_raw = item.get("replacement") if isinstance(item, Mapping) else None
        removals[code] = (reason, normalize_code(rep_raw) if rep_raw else None)

    accepted: list[str] = []
    rejected: list[str] = []
    first_rem: set[str] = set()
    verdicts = []
    for f in flags:
        if f.med not in removals:
            verdicts.append(Verdict(f, Action.RET))
            continue
        reason, rep = removals[f.med]
        if rep is not None and f.med not in first_rem:
            if valid_replacement(f.med, rep, kb):
                accepted.append(rep)
            else:
                log.warning("case %s: replacement %s for %s rejected", ctx.record.case_id, rep, f.med)
                rejected.append(rep)
                rep = None
        elif f.med in first_rem:
            rep = None
        first_rem.add(f.med)
        verdicts.append(Verdict(f, Action.REM, reason, rep))
    return VerifyOutcome(tuple(verdicts), tuple(sorted(removals)), tuple(dict.fromkeys(accepted)), False, tuple(rejected))


# ---------------------------------------------------------------------------
# Pipeline


@dataclass(frozen=True)
class PipelineConfig:
    use_experts: bool = True
    use_summarizer: bool = True
    use_medi: bool = True
    use_critique: bool = True
    use_safety: bool = True
    direct: bool = False
    drop_experts: tuple[str, ...] = ()
    theta: float | None = None
    include_replacements: bool = True
    fail_closed: bool = False
    revision_rounds: int = 0
    expert_workers: int = 1
    settings: StageSettings = field(default_factory=StageSettings)

    def __post_init__(self) -> None:
        if self.revision_rounds not in (0, 1):
            raise ConfigError("revision_rounds must be 0 or 1")

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["drop_experts"] = list(self.drop_experts)
        d["settings"] = {"temperatures": dict(self.settings.temperatures), "max_tokens": self.settings.max_tokens}
        return d


@dataclass(frozen=True)
class StageAccount:
    calls: int = 0
    in_tokens: int = 0
    out_tokens: int = 0
    seconds: float = 0.0

    def __add__(self, other: StageAccount) -> StageAccount:
        return StageAccount(
            self.calls + other.calls,
            self.in_tokens + other.in_tokens,
            self.out_tokens + other.out_tokens,
            self.seconds + other.seconds,
        )


def account(calls: Iterable[CallRecord], stages: Sequence[str] = STAGE_ORDER) -> dict[str, StageAccount]:
    out = {s: StageAccount() for s in stages}
    for c in calls:
        out[c.stage] = out.get(c.stage, StageAccount()) + StageAccount(1, c.in_tokens, c.out_tokens, c.seconds)
    return out


@dataclass
class PipelineTrace:
    case_id: str
    mode: str
    routing: RoutingResult | None
    summaries: dict[str, ExpertSummary]
    proposals: dict[str, GenerateResult]
    expert_failures: dict[str, str]
    critique: CritiqueResult | None
    flags: list[Flag]
    verdicts: list[Verdict]
    replacements: tuple[str, ...]
    verify_failed: bool
    final: tuple[str, ...]
    calls: list[CallRecord]
    config: dict[str, Any]
    empty_target: bool = False  # no target diagnoses or procedures; the case still runs

    @property
    def retained(self) -> tuple[str, ...]:
        if self.critique is not None:
            return self.critique.retained
        return tuple(sorted({c for r in self.proposals.values() for c in r.codes}))

    @property
    def accounting(self) -> dict[str, StageAccount]:
        return account(self.calls)

    def to_dict(self) -> dict[str, Any]:
        acc = self.accounting
        return {
            "caseId": self.case_id,
            "mode": self.mode,
            "routing": self.routing.to_dict() if self.routing else None,
            "summaries": {k: v.to_dict() for k, v in self.summaries.items()},
            "proposals": {k: v.to_dict() for k, v in self.proposals.items()},
            "expertFailures": dict(self.expert_failures),
            "critique": self.critique.to_dict() if self.critique else None,
            "retained": list(self.retained),
            "flags": [f.to_dict() for f in self.flags],
            "verdicts": [v.to_dict() for v in self.verdicts],
            "replacements": list(self.replacements),
            "verifyFailed": self.verify_failed,
            "final": list(self.final),
            "accounting": {s: asdict(a) for s, a in acc.items()},
            "calls": [c.to_dict() for c in self.calls],
            "config": self.config,
            "emptyTarget": self.empty_target,
        }


def _run_expert(
    expert: Expert,
    ctx: AgentContext,
    kb: SafetyKB,
    config: PipelineConfig,
) -> tuple[ExpertSummary | None, GenerateResult | None, str | None]:
    summary = None
    try:
        if config.use_summarizer:
            summary = summarize(expert, ctx)
        result = generate(expert, summary, ctx, kb.indications if config.use_medi else None)
    except (BackendError, UnparsableOutput) as exc:
        log.warning("case %s: expert %s failed: %s", ctx.record.case_id, expert.id, exc)
        return summary, None, f"{type(exc).__name__}: {exc}"
    return summary, result, None


def run_case(
    record: PatientRecord,
    panel: Panel,
    kb: SafetyKB,
    backend: LlmBackend,
    ontology: Ontology,
    config: PipelineConfig = PipelineConfig(),
    prompts: PromptSet | None = None,
) -> PipelineTrace:
    """Route, summarize and generate per expert, critique, then flag and verify."""
    ctx = AgentContext(backend, ontology, kb.vocab, record, config.settings, prompts=prompts or PromptSet())
    summaries: dict[str, ExpertSummary] = {}
    proposals: dict[str, GenerateResult] = {}
    failures: dict[str, str] = {}
    routing = None

    if config.direct:
        mode = "direct"
        try:
            proposals["DIRECT"] = direct_predict(ctx)
        except (BackendError, UnparsableOutput) as exc:
            failures["DIRECT"] = f"{type(exc).__name__}: {exc}"
        experts: list[Expert] = []
    elif config.use_experts:
        mode = "experts"
        active_panel = panel.without(*config.drop_experts) if config.drop_experts else panel
        routing = route(record, active_panel, ontology, config.theta)
        experts = [active_panel.get(eid) for eid in routing.activated]
    else:
        mode = "general"
        if panel.general_agent is None:
            raise ConfigError("panel has no general_agent for the no-experts ablation")
        experts = [panel.general_agent]

    if experts:
        if config.expert_workers > 1 and len(experts) > 1:
            with ThreadPoolExecutor(max_workers=config.expert_workers) as pool:
                outcomes = list(pool.map(lambda e: _run_expert(e, ctx, kb, config), experts))
        else:
            outcomes = [_run_expert(e, ctx, kb, config) for e in experts]
        for expert, (summary, result, err) in zip(experts, outcomes):
            if summary is not None:
                summaries[expert.id] = summary
            if result is not None:
                proposals[expert.id] = result
            if err is not None:
                failures[expert.id] = err
                proposals.setdefault(expert.id, GenerateResult(expert.id))

    results = list(proposals.values())
    crit = None
    if config.use_critique and not config.direct:
        crit = critique(results, summaries, ctx)
        if config.revision_rounds and crit.removed:
            crit = _revise(crit, experts, summaries, proposals, ctx, kb, config)
        retained = crit.retained
    else:
        retained = tuple(sorted({c for r in proposals.values() for c in r.codes}))

    flags: list[Flag] = []
    outcome = VerifyOutcome((), (), ())
    if config.use_safety and retained:
        target_diags = [icd_category(d) for d in record.target.diagnoses]
        flags = find_flags(retained, target_diags, record.prior_meds, kb)
        if flags:
            outcome = verify(flags, retained, kb, ctx, config.fail_closed)
    final_set = set(retained) - set(outcome.removed)
    if config.include_replacements:
        final_set |= set(outcome.replacements)

    return PipelineTrace(
        record.case_id,
        mode,
        routing,
        summaries,
        proposals,
        failures,
        crit,
        flags,
        list(outcome.verdicts),
        outcome.replacements,
        outcome.failed,
        tuple(sorted(final_set)),
        sorted(ctx.calls.records, key=_call_order(experts)),
        config.to_dict(),
        not record.target.diagnoses and not record.target.procedures,
    )


def _call_order(experts: Sequence[Expert]):
    """Stable call ordering independent of thread scheduling."""
    rank = {e.id: k for k, e in enumerate(experts)}
    stage_rank = {s: k for k, s in enumerate(STAGE_ORDER)}

    def key(c: CallRecord) -> tuple[int, int]:
        if c.stage in ("summarize", "generate"):
            return (0, rank.get(c.expert_id or "", 0) * 2 + (c.stage == "generate"))
        return (1 + stage_rank.get(c.stage, 0), 0)

    return key


def _revise(
    crit: CritiqueResult,
    experts: Sequence[Expert],
    summaries: Mapping[str, ExpertSummary],
    proposals: dict[str, GenerateResult],
    ctx: AgentContext,
    kb: SafetyKB,
    config: PipelineConfig,
) -> CritiqueResult:
    """One feedback round: experts whose codes were removed regenerate, then critique runs again."""
    removed = {r.code: r for r in crit.removed}
    for expert in experts:
        prev = proposals.get(expert.id)
        if prev is None:
            continue
        feedback = [removed[c] for c in prev.codes if c in removed]
        if not feedback:
            continue
        try:
            proposals[expert.id] = generate(
                expert, summaries.get(expert.id), ctx, kb.indications if config.use_medi else None, feedback
            )
        except (BackendError, UnparsableOutput) as exc:
            log.warning("case %s: revision for %s failed: %s", ctx.record.case_id, expert.id, exc)
    return critique(list(proposals.values()), summaries, ctx)

