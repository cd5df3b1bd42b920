"""``medrec`` command line. Reports go to stdout as tab-delimited tables; ``--figures DIR`` adds PNGs.

Exit codes: 0 success, 1 fatal configuration or input error, 2 some cases failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import yaml

from .errors import ConfigError, MedrecError

log = logging.getLogger("medrec")


def _print_tsv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    print("\t".join(header))
    for row in rows:
        print("\t".join(f"{v:.4f}" if isinstance(v, float) else str(v) for v in row))


def _figures(args: argparse.Namespace) -> Path | None:
    return Path(args.figures) if getattr(args, "figures", None) else None


# ---------------------------------------------------------------------------
# build-kb


def cmd_build_kb(args: argparse.Namespace) -> int:
    from .knowledge import build_kb, save_kb

    from .harness.config import demo_dir

    lexicon = args.lexicon
    if lexicon is None:
        lexicon = demo_dir() / "contra_lexicon.tsv"
        log.warning("no --lexicon given; using the small bundled demo lexicon %s", lexicon)
    kb, report = build_kb(args.twosides, args.openfda, args.medi, args.idmap, args.vocab, lexicon)
    save_kb(kb, args.out)
    _print_tsv(["stage", "count"], list(report.to_dict().items()))
    print()
    _print_tsv(
        ["matrix", "pairs"],
        [("ddi", kb.ddi.n_pairs), ("contra", kb.contra.n_pairs), ("indications", len(kb.indications))],
    )
    if not report.conserved():
        log.error("filter report does not conserve record counts")
        return 1
    return 0


# ---------------------------------------------------------------------------
# route


def cmd_route(args: argparse.Namespace) -> int:
    from .ehr import load_cases
    from .ontology import Ontology
    from .panel import load_panel, route

    ontology = Ontology.load(args.ontology)
    panel = load_panel(args.panel)
    records = load_cases(args.cases)
    out = open(args.out, "w", encoding="utf-8") if args.out else sys.stdout
    activations = []
    try:
        for r in records:
            res = route(r, panel, ontology, args.theta)
            activations.append(res.activated)
            out.write(json.dumps({"caseId": r.case_id, **res.to_dict()}, sort_keys=True) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    if (fig := _figures(args)) is not None:
        from .plotting import plot_activation

        plot_activation(activations, panel.ids, fig / "activation.png")
    return 0


# ---------------------------------------------------------------------------
# run


def _backend_cfg(value: str | None) -> dict[str, Any] | None:
    if value is None:
        return None
    if value == "mock":
        return {"kind": "mock"}
    path = Path(value)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read backend config {path}: {exc}") from exc
    data = data.get("backend", data)
    if data.get("fixtures") and not Path(data["fixtures"]).is_absolute():
        data["fixtures"] = str(path.parent.resolve() / data["fixtures"])
    return data


def _run_config(args: argparse.Namespace):
    from .harness.config import config_from_mapping, load_config

    if args.config:
        cfg = load_config(args.config)
    else:
        missing = [k for k in ("cases", "kb", "out") if not getattr(args, k)]
        if missing:
            raise ConfigError(f"need --config or all of {', '.join('--' + m for m in missing)}")
        cfg = config_from_mapping({"cases": args.cases, "kb": args.kb, "output": "."})
    if args.cases:
        cfg.cases = Path(args.cases)
    if args.kb:
        cfg.kb = Path(args.kb)
    if args.out:
        out = Path(args.out)
        if out.suffix == ".jsonl":
            cfg.output, cfg.traces = out.parent, out.name
        else:
            cfg.output = out
    for name in ("panel", "ontology", "prompts"):
        if getattr(args, name):
            setattr(cfg, name, Path(getattr(args, name)))
    if (backend := _backend_cfg(args.backend)) is not None:
        cfg.backend = backend
    for flag, key in (("no_experts", "experts"), ("no_summarizer", "summarizer"), ("no_medi", "medi"),
                      ("no_critique", "critique"), ("no_safety", "safety")):
        if getattr(args, flag):
            cfg.ablation[key] = False
    if args.direct:
        cfg.ablation["direct"] = True
    if args.drop_expert:
        cfg.drop_experts = tuple(cfg.drop_experts) + tuple(args.drop_expert)
    if args.theta is not None:
        cfg.routing["theta"] = args.theta
    if args.concurrency is not None:
        if args.concurrency < 1:
            raise ConfigError("--concurrency must be >= 1")
        cfg.concurrency = args.concurrency
    if args.fail_closed:
        cfg.fail_closed = True
    if args.no_replacements:
        cfg.include_replacements = False
    if args.revision_rounds is not None:
        if args.revision_rounds not in (0, 1):
            raise ConfigError("--revision-rounds must be 0 or 1")
        cfg.revision_rounds = args.revision_rounds
    return cfg


def _report_run(result, fig: Path | None) -> None:
    from .metrics import MetricsReport

    print("\t".join(MetricsReport.TSV_HEADER))
    print(result.metrics.tsv_row())
    print()
    print(result.efficiency.table(), end="")
    if result.failures:
        print()
        _print_tsv(["failedCase", "error"], sorted(result.failures.items()))
    if fig is not None:
        from .plotting import plot_efficiency, plot_metrics

        plot_metrics([result.metrics], fig / f"{result.metrics.label}_metrics.png")
        plot_efficiency(result.efficiency.stages, fig / f"{result.metrics.label}_efficiency.png")


def cmd_run(args: argparse.Namespace) -> int:
    from .harness.runner import run_batch

    cfg = _run_config(args)
    result = run_batch(cfg, max_cases=args.max_cases, label=args.label)
    _report_run(result, _figures(args))
    return result.exit_code


# ---------------------------------------------------------------------------
# evaluate / granularity / diagnostics


def _load_eval_inputs(args: argparse.Namespace):
    from .ehr import load_cases
    from .knowledge import load_kb

    kb = load_kb(args.kb)
    records = load_cases(args.cases, kb.vocab)
    return kb, {r.case_id: r for r in records}, records


def cmd_evaluate(args: argparse.Namespace) -> int:
    from .harness.runner import evaluate_traces, read_traces
    from .metrics import MetricsReport, write_table

    kb, by_id, _ = _load_eval_inputs(args)
    reports = []
    labels = args.label or []
    stems = [Path(p).stem for p in args.traces]
    for k, path in enumerate(args.traces):
        if k < len(labels):
            label = labels[k]
        else:
            # disambiguate same-named trace files by their directory
            label = stems[k] if stems.count(stems[k]) == 1 else f"{Path(path).parent.name}/{stems[k]}"
        reports.append(evaluate_traces(read_traces(path), by_id, kb, label=label))
    print("\t".join(MetricsReport.TSV_HEADER))
    for rep in reports:
        print(rep.tsv_row())
    if args.out:
        out = Path(args.out)
        if len(reports) == 1:
            reports[0].write(out)
        else:
            out.write_text(
                json.dumps({r.label: r.to_dict() for r in reports}, indent=2, sort_keys=True) + "\n",
                encoding="utf-8",
            )
    if args.tsv:
        write_table(Path(args.tsv), reports)
    if (fig := _figures(args)) is not None:
        from .plotting import plot_metrics

        plot_metrics(reports, fig / "metrics.png")
    return 0


def cmd_granularity(args: argparse.Namespace) -> int:
    from .harness.runner import read_traces, target_diag_keys
    from .metrics import granularity_compare

    kb, by_id, records = _load_eval_inputs(args)
    scored = [r for r in records if r.ground_truth is not None]
    gts = [set(r.ground_truth) for r in scored]
    diags = [target_diag_keys(r) for r in scored]
    if args.traces:
        finals = {t["caseId"]: set(t["final"]) for t in read_traces(args.traces)}
        keep = [k for k, r in enumerate(scored) if r.case_id in finals]
        sets = [finals[scored[k].case_id] for k in keep]
        rates = granularity_compare(sets, [diags[k] for k in keep], kb, [gts[k] for k in keep])
    else:
        rates = granularity_compare(gts, diags, kb)
    rows = [(lvl.upper(), r.ddi_b, r.ddi_w, r.contra_b, r.contra_w) for lvl, r in rates.items()]
    _print_tsv(["Level", "DDI-B", "DDI-W", "Contra-B", "Contra-W"], rows)
    if args.out:
        Path(args.out).write_text(
            json.dumps({k: vars(v) for k, v in rates.items()}, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    if (fig := _figures(args)) is not None:
        from .plotting import plot_granularity

        plot_granularity(rates, fig / "granularity.png")
    return 0


def cmd_diagnostics(args: argparse.Namespace) -> int:
    from .ehr import load_cases
    from .harness.experiments import run_diagnostics, write_json
    from .harness.runner import read_traces

    records = load_cases(args.cases)
    gts = {r.case_id: r.ground_truth for r in records if r.ground_truth is not None}
    diag = run_diagnostics(read_traces(args.traces), gts)
    rows = [(stage, *(diag[key][c] for c in ("tp", "fp", "fn"))) for stage, key in
            (("pre-critique", "preCritique"), ("post-critique", "postCritique"))]
    _print_tsv(["Stage", "TP", "FP", "FN"], rows)
    print()
    _print_tsv(["Support", "Removed"], list(diag["removedBySupport"].items()))
    print()
    cols = ("activated", "proposed", "proposed_tp", "retained", "retained_tp")
    _print_tsv(["Expert", *cols], [(e, *(c.get(k, 0) for k in cols)) for e, c in diag["experts"].items()])
    print()
    _print_tsv(["Verdict", "Count"], list(diag["verdicts"].items()))
    if args.out:
        write_json(diag, args.out)
    if (fig := _figures(args)) is not None:
        from .plotting import plot_diagnostics

        plot_diagnostics(diag, fig / "diagnostics.png")
    return 0


# ---------------------------------------------------------------------------
# loo


def cmd_loo(args: argparse.Namespace) -> int:
    from .agents.backend import BoundedBackend, backend_from_config
    from .agents.operators import PromptSet
    from .ehr import load_cases
    from .harness.experiments import run_loo
    from .harness.runner import read_traces
    from .knowledge import load_kb
    from .ontology import Ontology

    cfg = _run_config(args)
    cfg.check_paths()
    kb = load_kb(cfg.kb)
    panel = cfg.load_panel()
    records = load_cases(cfg.cases, kb.vocab)
    ids = args.experts or [e.id for e in panel.specialists]
    backend = BoundedBackend(backend_from_config(cfg.backend, cfg.base), cfg.concurrency)
    baseline = read_traces(args.baseline) if args.baseline else None
    report = run_loo(
        records, ids, panel, kb, backend, Ontology.load(cfg.ontology), cfg.pipeline(),
        PromptSet(cfg.prompts), cfg.concurrency, baseline,
    )
    rows = [(r.expert_id, r.n, "" if r.f1_with is None else r.f1_with,
             "" if r.f1_without is None else r.f1_without, r.delta) for r in report.rows]
    _print_tsv(["Expert", "n", "F1-with", "F1-without", "Delta"], rows)
    if args.loo_out:
        Path(args.loo_out).write_text(report.to_json(), encoding="utf-8")
    if (fig := _figures(args)) is not None:
        from .plotting import plot_loo

        plot_loo(report.to_dict()["rows"], fig / "loo.png")
    return 2 if report.failures else 0


# ---------------------------------------------------------------------------
# derive-panel / serialize


def cmd_derive_panel(args: argparse.Namespace) -> int:
    from .ehr import load_cases
    from .ontology import Ontology
    from .panel import DEFAULT_GROUPS, derive_panel, featurize

    ontology = Ontology.load(args.ontology)
    records = load_cases(args.cases)
    vectors = [featurize(r, ontology) for r in records]
    result = derive_panel(vectors, range(args.k_min, args.k_max + 1), args.seed)
    _print_tsv(["k", "silhouette"], [(k, v) for k, v in sorted(result.silhouettes.items())])
    print()
    _print_tsv(["cluster", *DEFAULT_GROUPS], [(k, *row) for k, row in enumerate(result.centroids.tolist())])
    if args.out:
        Path(args.out).write_text(json.dumps(result.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if (fig := _figures(args)) is not None:
        from .plotting import plot_silhouette

        plot_silhouette(result.silhouettes, result.chosen_k, fig / "silhouette.png")
    return 0


def cmd_serialize(args: argparse.Namespace) -> int:
    from .ehr import load_cases, serialize
    from .ontology import Ontology

    ontology = Ontology.load(args.ontology)
    chunks = []
    for r in load_cases(args.cases):
        chunks.append(f"### {r.case_id}\n{serialize(r, ontology).text}\n")
    text = "\n".join(chunks)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------------------
# demo


def cmd_demo(args: argparse.Namespace) -> int:
    """Copy the bundled synthetic inputs to ``--out``, build the KB, run and score both cohorts."""
    from .harness.config import config_from_mapping, demo_dir
    from .harness.runner import run_batch
    from .knowledge import build_kb, save_kb
    from .metrics import MetricsReport

    out = Path(args.out)
    src = demo_dir()
    data = out / "inputs"
    if data.exists():
        shutil.rmtree(data)
    shutil.copytree(src, data)
    fixtures = Path(str(resources.files("medrec").joinpath("assets", "fixtures", "case_study.json")))
    shutil.copy(fixtures, data / "case_study_fixtures.json")

    kb, report = build_kb(
        data / "twosides.tsv", data / "openfda_labels.jsonl", data / "medi.tsv",
        data / "rxcui_atc.tsv", data / "vocab.txt", data / "contra_lexicon.tsv",
    )
    save_kb(kb, out / "kb.zip")
    print(f"# kb: {kb.ddi.n_pairs} DDI pairs, {kb.contra.n_pairs} contraindication pairs, "
          f"{report.survivors} label survivors of {report.input}")
    runs = (
        ("demo", "cases.jsonl", {"kind": "mock"}),
        ("case_study", "case_study.jsonl", {"kind": "mock", "fixtures": "inputs/case_study_fixtures.json"}),
    )
    fig = _figures(args) or out / "figures"
    code = 0
    for label, cases, backend in runs:
        results = out / "runs" / label
        if results.exists():
            shutil.rmtree(results)
        cfg = config_from_mapping(
            {"cases": f"inputs/{cases}", "kb": "kb.zip", "ontology": "inputs/ontology",
             "output": f"runs/{label}", "backend": backend, "concurrency": args.concurrency},
            out.resolve(),
        )
        result = run_batch(cfg, label=label)
        print(f"\n# {label}")
        _report_run(result, fig)
        code = max(code, result.exit_code)
    print("\n# metrics columns: " + ", ".join(MetricsReport.TSV_HEADER[1:]))
    return code


# ---------------------------------------------------------------------------
# parser


def _add_run_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML run config; flags below override it")
    p.add_argument("--cases")
    p.add_argument("--kb")
    p.add_argument("--panel")
    p.add_argument("--ontology")
    p.add_argument("--prompts", help="directory of prompt templates overriding the packaged ones")
    p.add_argument("--backend", help="backend YAML, or 'mock'")
    p.add_argument("--out", help="trace file (*.jsonl) or output directory")
    p.add_argument("--no-experts", action="store_true", help="single general agent instead of the panel")
    p.add_argument("--no-summarizer", action="store_true")
    p.add_argument("--no-medi", action="store_true", help="no indication candidates in generation prompts")
    p.add_argument("--no-critique", action="store_true")
    p.add_argument("--no-safety", action="store_true")
    p.add_argument("--direct", action="store_true", help="one direct-prompting call per case")
    p.add_argument("--drop-expert", action="append", metavar="ID")
    p.add_argument("--theta", type=float)
    p.add_argument("--concurrency", type=int)
    p.add_argument("--fail-closed", action="store_true", help="remove all flagged codes if verification fails")
    p.add_argument("--no-replacements", action="store_true")
    p.add_argument("--revision-rounds", type=int)
    p.add_argument("--figures", metavar="DIR")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medrec", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-kb", help="compile DDI, contraindication and indication data into a KB archive")
    p.add_argument("--twosides", required=True)
    p.add_argument("--openfda", required=True, nargs="+")
    p.add_argument("--medi", required=True)
    p.add_argument("--idmap", required=True, help="source id -> ATC table")
    p.add_argument("--vocab", required=True)
    p.add_argument("--lexicon", help="contraindication term -> diagnosis category table (default: bundled demo lexicon)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_build_kb)

    p = sub.add_parser("route", help="per-case expert activation as JSONL")
    p.add_argument("--cases", required=True)
    p.add_argument("--panel")
    p.add_argument("--ontology", required=True)
    p.add_argument("--theta", type=float)
    p.add_argument("--out")
    p.add_argument("--figures", metavar="DIR")
    p.set_defaults(func=cmd_route)

    p = sub.add_parser("run", help="run the pipeline over a cohort (resumable)")
    _add_run_args(p)
    p.add_argument("--label", default="model")
    p.add_argument("--max-cases", type=int, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("evaluate", help="score trace files against ground truth")
    p.add_argument("--traces", required=True, nargs="+")
    p.add_argument("--label", nargs="+")
    p.add_argument("--cases", required=True)
    p.add_argument("--kb", required=True)
    p.add_argument("--out")
    p.add_argument("--tsv")
    p.add_argument("--figures", metavar="DIR")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("granularity", help="safety rates at ATC L4 and collapsed to L3")
    p.add_argument("--cases", required=True)
    p.add_argument("--kb", required=True)
    p.add_argument("--traces", help="score these predictions instead of the ground-truth sets")
    p.add_argument("--out")
    p.add_argument("--figures", metavar="DIR")
    p.set_defaults(func=cmd_granularity)

    p = sub.add_parser("loo", help="leave-one-expert-out subgroup F1 deltas")
    _add_run_args(p)
    p.add_argument("--experts", nargs="+", help="expert ids (default: every specialist)")
    p.add_argument("--baseline", help="existing full-system traces to reuse")
    p.add_argument("--loo-out", help="JSON report path")
    p.set_defaults(func=cmd_loo)

    p = sub.add_parser("diagnostics", help="critique and expert-support statistics")
    p.add_argument("--traces", required=True)
    p.add_argument("--cases", required=True)
    p.add_argument("--out")
    p.add_argument("--figures", metavar="DIR")
    p.set_defaults(func=cmd_diagnostics)

    p = sub.add_parser("derive-panel", help="k-means sweep over chapter-group histograms")
    p.add_argument("--cases", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--k-min", type=int, default=2)
    p.add_argument("--k-max", type=int, default=10)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out")
    p.add_argument("--figures", metavar="DIR")
    p.set_defaults(func=cmd_derive_panel)

    p = sub.add_parser("serialize", help="render cases as prompt text")
    p.add_argument("--cases", required=True)
    p.add_argument("--ontology", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_serialize)

    p = sub.add_parser("demo", help="end-to-end run on the bundled synthetic data")
    p.add_argument("--out", required=True)
    p.add_argument("--concurrency", type=int, default=2)
    p.add_argument("--figures", metavar="DIR")
    p.set_defaults(func=cmd_demo)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (MedrecError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
