from __future__ import annotations

import pytest

from medrec.agents import AgentContext, MockBackend
from medrec.ehr import record_from_json
from medrec.errors import ConfigError
from medrec.knowledge import SafetyKB, build_contra, build_ddi, load_indications
from medrec.metrics import score_accuracy
from medrec.ontology import MedVocab
from medrec.panel import panel_from_config
from medrec.safety import (
    Action,
    Flag,
    PipelineConfig,
    Relation,
    find_flags,
    run_case,
    valid_replacement,
    verify,
)

CASE_STUDY_REMOVED = {"C09AA", "C10AA", "A04AA"}


@pytest.fixture(scope="module")
def toy_kb():
    codes = ["A02BC", "B01AB", "B01AC", "C07AB", "C10AA", "N02BE", "M01AE"]
    vocab = MedVocab(codes)
    ids = {c: c for c in codes}
    # M01AE interacts with three drugs, B01AB with two
    ddi = build_ddi([("M01AE", "B01AB", 5), ("M01AE", "C07AB", 2), ("M01AE", "A02BC", 1), ("B01AB", "C10AA", 1)],
                    ids, vocab)
    labels = [{"rxcui": "M01AE", "contraText": "active peptic ulcer"}, {"rxcui": "C07AB", "contraText": "asthma"}]
    contra, _ = build_contra(labels, ids, {"peptic ulcer": "K27", "asthma": "J45"}, vocab)
    ind = load_indications([("I21", "B01AB"), ("I21", "C10AA"), ("I21", "M01AE"), ("K27", "A02BC")], ids, vocab)
    return SafetyKB(ddi, contra, ind)


def _ctx(kb, ontology, backend=None, prior=("B01AB",)):
    record = record_from_json({
        "caseId": "s1",
        "demographics": {},
        "visits": [{"diagnoses": ["I10"], "procedures": [], "medications": list(prior)}],
        "target": {"diagnoses": ["I21.4", "K27.9"], "procedures": []},
    })
    return AgentContext(backend or MockBackend(), ontology, kb.vocab, record)


def test_find_flags_pair_and_prior(toy_kb):
    flags = find_flags(["B01AB", "C10AA"], [], ["B01AB"], toy_kb)
    assert [(f.med, f.partner, f.is_prior, f.partner_is_prior) for f in flags] == [
        ("B01AB", "C10AA", True, False),
        ("C10AA", "B01AB", False, True),
    ]
    assert {f.relation for f in flags} == {Relation.DDI}
    assert flags[0].pair_id == flags[1].pair_id == "B01AB|C10AA"
    assert flags[0].degree_self == toy_kb.degree("B01AB") == 2


def test_find_flags_contra(toy_kb):
    flags = find_flags(["M01AE", "N02BE"], ["K27", "I21"], [], toy_kb)
    assert [(f.med, f.relation, f.diag) for f in flags] == [("M01AE", Relation.CONTRA, "K27")]
    assert find_flags(["N02BE", "A02BC"], ["J45"], [], toy_kb) == []
    assert find_flags([], ["K27"], [], toy_kb) == []


def test_flag_requires_one_target():
    with pytest.raises(ValueError):
        Flag("A02BC", Relation.DDI, 0, False)
    with pytest.raises(ValueError):
        Flag("A02BC", Relation.DDI, 0, False, partner="B01AB", diag="K27")


def test_verify_removes_higher_degree(toy_kb, ontology):
    ctx = _ctx(toy_kb, ontology, prior=())
    cands = ["B01AB", "C07AB", "M01AE"]
    flags = find_flags(cands, [], [], toy_kb)
    out = verify(flags, cands, toy_kb, ctx)
    assert out.removed == ("M01AE",)
    by_med = {(v.flag.med, v.flag.partner): v.action for v in out.verdicts}
    assert by_med[("M01AE", "B01AB")] is Action.REM and by_med[("B01AB", "M01AE")] is Action.RET
    assert [c.stage for c in ctx.calls.records] == ["verify"]


def test_verify_keeps_prior_med(toy_kb, ontology):
    ctx = _ctx(toy_kb, ontology, prior=("B01AB", "C10AA"))
    flags = find_flags(["B01AB", "C10AA"], [], ["B01AB", "C10AA"], toy_kb)
    out = verify(flags, ["B01AB", "C10AA"], toy_kb, ctx)
    assert out.removed == ()
    assert all(v.action is Action.RET for v in out.verdicts)


def test_verify_replacements(toy_kb, ontology):
    answer = {"removed_drugs": [
        {"code": "B01AB", "reason": "bleeding", "replacement": "B01AC"},
        {"code": "C10AA", "replacement": "N02BE"},
        {"code": "A02BC", "reason": "not flagged"},
    ]}
    ctx = _ctx(toy_kb, ontology, MockBackend({"verify/s1": answer}))
    flags = find_flags(["B01AB", "C10AA", "A02BC"], [], ["B01AB"], toy_kb)
    out = verify(flags, ["A02BC", "B01AB", "C10AA"], toy_kb, ctx)
    assert out.removed == ("B01AB", "C10AA")
    assert out.replacements == ("B01AC",)
    assert out.rejected_replacements == ("N02BE",)
    assert valid_replacement("B01AB", "B01AC", toy_kb)
    assert not valid_replacement("B01AB", "B01AB", toy_kb)


@pytest.mark.parametrize("fail_closed", [False, True])
def test_verify_failure_modes(toy_kb, ontology, fail_closed):
    ctx = _ctx(toy_kb, ontology, MockBackend({"verify/s1": "cannot comply"}))
    flags = find_flags(["B01AB", "C10AA"], [], [], toy_kb)
    out = verify(flags, ["B01AB", "C10AA"], toy_kb, ctx, fail_closed=fail_closed)
    assert out.failed
    assert out.removed == (("B01AB", "C10AA") if fail_closed else ())
    assert {v.action for v in out.verdicts} == {Action.REM if fail_closed else Action.RET}


def test_verify_without_flags_makes_no_call(toy_kb, ontology):
    ctx = _ctx(toy_kb, ontology)
    assert verify([], ["A02BC"], toy_kb, ctx).verdicts == ()
    assert ctx.calls.records == []


# -- pipeline ---------------------------------------------------------------


def test_case_study(case_study, kb, panel, ontology, case_study_backend):
    trace = run_case(case_study, panel, kb, case_study_backend, ontology)
    assert trace.routing.activated == ("SUP", "CVD", "ENDO")
    assert set(trace.critique.removed_codes) == CASE_STUDY_REMOVED
    assert len(trace.final) == 12
    acc = score_accuracy([trace.final], [case_study.ground_truth])
    assert (round(acc.precision, 3), round(acc.recall, 3), round(acc.f1, 3)) == (0.917, 0.733, 0.815)
    acc = trace.accounting
    assert acc["route"].calls == acc["findflags"].calls == 0
    assert acc["verify"].calls <= 1
    assert sum(a.calls for a in acc.values()) == len(trace.calls)


def test_safety_disabled(case_study, kb, panel, ontology, case_study_backend):
    trace = run_case(case_study, panel, kb, case_study_backend, ontology, PipelineConfig(use_safety=False))
    assert trace.flags == [] and trace.verdicts == []
    assert trace.final == trace.retained


def test_empty_union(kb, panel, ontology):
    record = record_from_json({"caseId": "e", "demographics": {}, "visits": [],
                               "target": {"diagnoses": [], "procedures": []}})
    trace = run_case(record, panel, kb, MockBackend(), ontology)
    assert trace.final == () and trace.empty_target
    stages = {c.stage for c in trace.calls}
    assert "critique" not in stages and "verify" not in stages
    assert trace.to_dict()["emptyTarget"] is True


def test_expert_failure_is_isolated(case_study, kb, panel, ontology):
    fixtures = {"generate/case-study/CVD": "no json here"}
    trace = run_case(case_study, panel, kb, MockBackend(fixtures), ontology)
    assert "CVD" in trace.expert_failures and "UnparsableOutput" in trace.expert_failures["CVD"]
    assert trace.proposals["CVD"].proposals == ()
    assert trace.final


def test_ablations(case_study, kb, panel, ontology):
    direct = run_case(case_study, panel, kb, MockBackend(), ontology, PipelineConfig(direct=True))
    assert direct.mode == "direct" and direct.critique is None
    assert direct.accounting["direct"].calls == 1
    no_sum = run_case(case_study, panel, kb, MockBackend(), ontology, PipelineConfig(use_summarizer=False))
    assert no_sum.accounting["summarize"].calls == 0 and no_sum.summaries == {}
    no_crit = run_case(case_study, panel, kb, MockBackend(), ontology, PipelineConfig(use_critique=False))
    assert no_crit.critique is None and no_crit.accounting["critique"].calls == 0
    dropped = run_case(case_study, panel, kb, MockBackend(), ontology, PipelineConfig(drop_experts=("CVD",)))
    assert "CVD" not in dropped.routing.activated
    general = run_case(case_study, panel, kb, MockBackend(), ontology, PipelineConfig(use_experts=False))
    assert general.mode == "general" and general.routing is None
    bare = panel_from_config({"experts": [{"id": "SUP", "always_on": True}]})
    with pytest.raises(ConfigError):
        run_case(case_study, bare, kb, MockBackend(), ontology, PipelineConfig(use_experts=False))
    with pytest.raises(ConfigError):
        PipelineConfig(revision_rounds=2)


def test_revision_round(case_study, kb, panel, ontology, case_study_backend):
    trace = run_case(case_study, panel, kb, case_study_backend, ontology, PipelineConfig(revision_rounds=1))
    assert trace.accounting["critique"].calls == 2
    assert any(c.stage == "generate" for c in trace.calls[6:])


def test_parallel_experts_match_serial(case_study, kb, panel, ontology, case_study_backend):
    a = run_case(case_study, panel, kb, case_study_backend, ontology)
    b = run_case(case_study, panel, kb, case_study_backend, ontology, PipelineConfig(expert_workers=4))
    da, db = a.to_dict(), b.to_dict()
    da.pop("config"), db.pop("config")
    assert da == db
