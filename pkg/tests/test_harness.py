from __future__ import annotations

import json

import pytest

from conftest import DEMO
from medrec.agents import MockBackend
from medrec.agents.mock_policy import DEFAULT_RESPONDERS
from medrec.errors import ConfigError, UnknownExpertId
from medrec.harness.config import RunConfig, config_from_mapping, load_config
from medrec.harness.efficiency import efficiency_from_traces
from medrec.harness.experiments import run_diagnostics, run_loo
from medrec.harness.runner import EXIT_OK, EXIT_PARTIAL, OutputFiles, read_traces, run_batch
from medrec.panel import route
from medrec.safety import PipelineConfig, run_case


def _config(tmp_path, kb_file, name="run", **kw):
    kw.setdefault("concurrency", 2)
    return RunConfig(cases=DEMO / "cases.jsonl", kb=kb_file, output=tmp_path / name, **kw)


def _report_bytes(files: OutputFiles) -> list[bytes]:
    return [p.read_bytes() for p in (files.traces, files.metrics_json, files.metrics_tsv, files.efficiency)]


def test_batch_is_deterministic(tmp_path, kb_file):
    a = run_batch(_config(tmp_path, kb_file, "a"))
    b = run_batch(_config(tmp_path, kb_file, "b", concurrency=1))
    assert a.exit_code == EXIT_OK and len(a.traces) == 10
    assert _report_bytes(a.files) == _report_bytes(b.files)
    assert a.metrics.n == 10


def test_batch_resumes(tmp_path, kb_file):
    cfg = _config(tmp_path, kb_file)
    first = run_batch(cfg, max_cases=5)
    assert len(first.traces) == 5 and first.pending == 5
    # a crash can leave a torn line that the sidecar never acknowledged
    with first.files.traces.open("a", encoding="utf-8") as fh:
        fh.write('{"caseId": "demo-06", "fin')
    second = run_batch(cfg)
    traces = read_traces(second.files.traces)
    assert len(traces) == 10
    assert len({t["caseId"] for t in traces}) == 10
    assert second.pending == 0
    full = run_batch(_config(tmp_path, kb_file, "full"))
    assert second.files.metrics_json.read_bytes() == full.files.metrics_json.read_bytes()


def test_failed_cases_are_counted_and_retried(tmp_path, kb_file):
    cfg = _config(tmp_path, kb_file)
    broken = MockBackend({"summarize/demo-03/SUP": {"error": "x"}, "critique/demo-04": {"error": "x"}})

    class Exploding(MockBackend):
        def complete(self, system, user, temperature=0.0, max_tokens=2048, meta=None):
            if meta and meta.get("case_id") == "demo-05":
                raise RuntimeError("socket closed")
            return broken.complete(system, user, temperature, max_tokens, meta)

    res = run_batch(cfg, backend=Exploding())
    assert res.exit_code == EXIT_PARTIAL
    assert set(res.failures) == {"demo-05"}
    assert res.metrics.excluded == 1 and res.metrics.n == 9
    assert json.loads(res.files.failures.read_text())["caseId"] == "demo-05"
    again = run_batch(cfg)
    assert again.exit_code == EXIT_OK and len(again.traces) == 10


def test_efficiency_accounting(tmp_path, kb_file):
    res = run_batch(_config(tmp_path, kb_file))
    eff = res.efficiency
    assert eff.stages["route"]["calls"] == 0 and eff.stages["findflags"]["calls"] == 0
    assert eff.stages["verify"]["calls"] <= 1
    for t in res.traces:
        assert sum(1 for c in t["calls"] if c["stage"] == "verify") <= 1
    total_calls = sum(len(t["calls"]) for t in res.traces) / len(res.traces)
    assert eff.totals["calls"] == pytest.approx(total_calls)
    for f in ("calls", "in_tokens", "out_tokens", "seconds"):
        assert sum(r[f] for r in eff.stages.values()) == pytest.approx(eff.totals[f])
    assert eff.table().splitlines()[-1].startswith("total\t")
    assert efficiency_from_traces([]).totals["calls"] == 0


def test_config_file(tmp_path, kb_file):
    (tmp_path / "run.yaml").write_text(
        f"cases: {DEMO / 'cases.jsonl'}\nkb: {kb_file}\noutput: out\n"
        "ablation: {safety: false}\nrouting: {theta: 0.5}\ntemperatures: {generate: 0.3}\n",
        encoding="utf-8",
    )
    cfg = load_config(tmp_path / "run.yaml")
    assert cfg.output == tmp_path / "out"
    pipe = cfg.pipeline()
    assert not pipe.use_safety and pipe.use_critique and pipe.settings.temperature("generate") == 0.3
    assert cfg.load_panel().routing.theta == 0.5
    for bad in ({"cases": "a"}, {"cases": "a", "kb": "b", "output": "c", "colour": 1},
                {"cases": "a", "kb": "b", "output": "c", "ablation": {"sparkle": True}},
                {"cases": "a", "kb": "b", "output": "c", "concurrency": 0}):
        with pytest.raises(ConfigError):
            config_from_mapping(bad)
    with pytest.raises(ConfigError):
        run_batch(RunConfig(cases=tmp_path / "missing.jsonl", kb=kb_file, output=tmp_path / "o"))
    with pytest.raises(ConfigError):
        _config(tmp_path, kb_file, routing={"gamma": 1}).load_panel()


def test_all_toggles_off_matches_module_composition(tmp_path, kb_file, kb, panel, ontology, demo_cases):
    ablation = {"experts": True, "summarizer": False, "medi": False, "critique": False, "safety": False,
                "direct": False}
    res = run_batch(_config(tmp_path, kb_file, ablation=ablation))
    pipe = PipelineConfig(use_summarizer=False, use_medi=False, use_critique=False, use_safety=False)
    for record, trace in zip(demo_cases, res.traces):
        direct = run_case(record, panel, kb, MockBackend(), ontology, pipe)
        assert trace["final"] == list(direct.final)
        assert trace["final"] == trace["retained"]


# -- leave-one-expert-out ---------------------------------------------------


def _cvd_oracle_backend(gts):
    """CVD proposes the ground truth; every other expert proposes nothing; critique keeps all."""

    def gen(meta, system, user):
        if meta.get("expert_id") == "CVD":
            return json.dumps({"predicted_drugs": sorted(gts[meta["case_id"]])})
        return json.dumps({"predicted_drugs": []})

    def keep(meta, system, user):
        return json.dumps({"retained": meta["payload"]["union"], "removed": []})

    return MockBackend(responders={**DEFAULT_RESPONDERS, "generate": gen, "critique": keep})


def test_loo_unique_expert(demo_cases, kb, panel, ontology):
    gts = {r.case_id: r.ground_truth for r in demo_cases}
    backend = _cvd_oracle_backend(gts)
    pipe = PipelineConfig(use_safety=False)
    # OB fires on one demo case; leave it out so OB is never activated
    records = [r for r in demo_cases if "OB" not in route(r, panel, ontology).activated]
    assert len(records) == len(demo_cases) - 1
    report = run_loo(records, ["CVD", "OB"], panel, kb, backend, ontology, pipe)
    cvd, ob = report.rows
    assert cvd.n > 0 and cvd.f1_with == pytest.approx(1.0) and cvd.f1_without == 0.0
    assert cvd.delta == pytest.approx(1.0)
    assert (ob.n, ob.delta, ob.f1_with) == (0, 0.0, None)
    assert json.loads(report.to_json())["rows"][1]["n"] == 0


def test_loo_identity_and_errors(demo_cases, kb, panel, ontology):
    base = run_loo(demo_cases, [], panel, kb, MockBackend(), ontology)
    assert base.rows == []
    full = [run_case(r, panel, kb, MockBackend(), ontology).to_dict() for r in demo_cases]
    assert base.baseline == full
    with pytest.raises(UnknownExpertId):
        run_loo(demo_cases, ["NEPH"], panel, kb, MockBackend(), ontology)


# -- diagnostics ------------------------------------------------------------


def test_diagnostics_case_study(case_study, kb, panel, ontology, case_study_backend):
    trace = run_case(case_study, panel, kb, case_study_backend, ontology).to_dict()
    gt = set(case_study.ground_truth)
    support = {}
    for res in trace["proposals"].values():
        for p in res["proposals"]:
            support[p["code"]] = support.get(p["code"], 0) + 1
    multi = [c for c in trace["retained"] if support[c] >= 2]
    assert len(multi) == 5 and all(c in gt for c in multi)
    false_pos = [c for c in trace["final"] if c not in gt]
    assert false_pos == ["A06AB"] and support["A06AB"] == 1

    diag = run_diagnostics([trace], {case_study.case_id: gt})
    assert diag["n"] == 1
    assert diag["postCritique"]["fp"] <= diag["preCritique"]["fp"]
    assert sum(diag["removedBySupport"].values()) == 3
    assert set(diag["experts"]) == {"SUP", "CVD", "ENDO"}


def test_diagnostics_small_and_empty():
    trace = {
        "caseId": "c",
        "proposals": {"A": {"proposals": [{"code": "X01AA"}, {"code": "Y01AA"}]}, "B": {"proposals": [{"code": "X01AA"}]}},
        "retained": ["X01AA"],
        "critique": {"removed": [{"code": "Y01AA", "reason": ""}]},
        "verdicts": [{"flag": {"relation": "DDI"}, "action": "RET"}],
    }
    diag = run_diagnostics([trace], {"c": {"X01AA"}})
    assert diag["removedBySupport"] == {"1": 1}
    assert diag["preCritique"] == {"tp": 1.0, "fp": 1.0, "fn": 0.0}
    assert diag["postCritique"] == {"tp": 1.0, "fp": 0.0, "fn": 0.0}
    assert diag["verdicts"] == {"DDI/RET": 1}
    empty = run_diagnostics([], {})
    assert empty["n"] == 0 and empty["preCritique"]["tp"] == 0.0
