"""Accuracy and ground-truth-normalized safety metrics, plus the L4 vs L3 granularity comparison."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Collection, Sequence

import numpy as np

from .errors import LengthMismatch
from .knowledge import ContraMatrix, DdiMatrix, SafetyKB, collapse_contra_to_l3, collapse_matrix_to_l3
from .ontology import l3_of


def _check_lengths(*seqs: Sequence[Any]) -> int:
    n = len(seqs[0])
    if any(len(s) != n for s in seqs[1:]):
        raise LengthMismatch(f"length mismatch: {[len(s) for s in seqs]}")
    return n


def jaccard(pred: Collection[str], gt: Collection[str], empty: float = 1.0) -> float:
    p, g = set(pred), set(gt)
    union = p | g
    return len(p & g) / len(union) if union else empty


@dataclass(frozen=True)
class AccuracyScores:
    jaccard: float
    precision: float
    recall: float
    f1: float
    avg_pred: float


def score_accuracy(
    preds: Sequence[Collection[str]],
    gts: Sequence[Collection[str]],
    empty_jaccard: float = 1.0,
) -> AccuracyScores:
    """Sample-averaged Jaccard with micro-pooled precision, recall and F1."""
    n = _check_lengths(preds, gts)
    if n == 0:
        raise LengthMismatch("need at least one case")
    tp = n_pred = n_gt = 0
    jac = 0.0
    for p, g in zip(preds, gts):
        p, g = set(p), set(g)
        tp += len(p & g)
        n_pred += len(p)
        n_gt += len(g)
        jac += jaccard(p, g, empty_jaccard)
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return AccuracyScores(jac / n, precision, recall, f1, n_pred / n)


def _indices(codes: Collection[str], index_of) -> list[int]:
    return sorted({i for i in (index_of(c) for c in codes) if i is not None})


def ddi_case(pred: Collection[str], gt: Collection[str], matrix: DdiMatrix, weighted: bool = False) -> float:
    """Interaction mass among predicted pairs over the pair count of the ground truth, capped at 1."""
    idx = _indices(pred, matrix.vocab.get)
    m = matrix.weighted if weighted else matrix.binary
    burden = float(np.triu(m[np.ix_(idx, idx)], k=1).sum()) if len(idx) > 1 else 0.0
    z = max(math.comb(len(set(gt)), 2), 1)
    return min(burden / z, 1.0)


def contra_case(
    pred: Collection[str],
    diags: Collection[str],
    gt: Collection[str],
    matrix: ContraMatrix,
    weighted: bool = False,
) -> float:
    """Contraindicated (med, diagnosis) mass over |gt| x |diagnoses|, capped at 1."""
    diags = set(diags)
    rows = _indices(pred, matrix.vocab.get)
    cols = _indices(diags, matrix.diag_index)
    m = matrix.weighted if weighted else matrix.binary
    burden = float(m[np.ix_(rows, cols)].sum()) if rows and cols else 0.0
    z = max(len(set(gt)) * len(diags), 1)
    return min(burden / z, 1.0)


def score_ddi(
    preds: Sequence[Collection[str]],
    gts: Sequence[Collection[str]],
    matrix: DdiMatrix,
    weighted: bool = False,
) -> float:
    n = _check_lengths(preds, gts)
    if n == 0:
        return 0.0
    return sum(ddi_case(p, g, matrix, weighted) for p, g in zip(preds, gts)) / n


def score_contra(
    preds: Sequence[Collection[str]],
    diags: Sequence[Collection[str]],
    gts: Sequence[Collection[str]],
    matrix: ContraMatrix,
    weighted: bool = False,
) -> float:
    n = _check_lengths(preds, diags, gts)
    if n == 0:
        return 0.0
    return sum(contra_case(p, d, g, matrix, weighted) for p, d, g in zip(preds, diags, gts)) / n


@dataclass(frozen=True)
class CaseScore:
    case_id: str
    jaccard: float
    tp: int
    fp: int
    fn: int
    ddi_b: float
    ddi_w: float
    contra_b: float
    contra_w: float
    pred_size: int


@dataclass
class MetricsReport:
    label: str
    n: int
    jaccard: float
    precision: float
    recall: float
    f1: float
    ddi_b: float
    ddi_w: float
    contra_b: float
    contra_w: float
    avg_pred: float
    excluded: int = 0
    per_case: list[CaseScore] = field(default_factory=list)

    SUMMARY_KEYS = ("jaccard", "precision", "recall", "f1", "ddi_b", "ddi_w", "contra_b", "contra_w", "avg_pred")
    TSV_HEADER = ("Method", "Jaccard", "Precision", "Recall", "F1", "DDI-B", "DDI-W", "Contra-B", "Contra-W", "Avg#Pred")

    def summary(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in self.SUMMARY_KEYS}

    def to_dict(self) -> dict[str, Any]:
        return {
            "label": self.label,
            "n": self.n,
            "excluded": self.excluded,
            **{k: round(v, 10) for k, v in self.summary().items()},
            "perCase": [asdict(c) for c in self.per_case],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def tsv_row(self) -> str:
        vals = [f"{getattr(self, k):.4f}" for k in self.SUMMARY_KEYS[:-1]] + [f"{self.avg_pred:.2f}"]
        return "\t".join([self.label, *vals])

    def write(self, json_path: str | Path, tsv_path: str | Path | None = None) -> None:
        Path(json_path).write_text(self.to_json(), encoding="utf-8")
        if tsv_path is not None:
            write_table(Path(tsv_path), [self])


def write_table(path: Path, reports: Sequence[MetricsReport]) -> None:
    lines = ["\t".join(MetricsReport.TSV_HEADER)] + [r.tsv_row() for r in reports]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def evaluate(
    case_ids: Sequence[str],
    preds: Sequence[Collection[str]],
    gts: Sequence[Collection[str]],
    diags: Sequence[Collection[str]],
    kb: SafetyKB,
    label: str = "model",
    excluded: int = 0,
    empty_jaccard: float = 1.0,
) -> MetricsReport:
    """Full metric row; ``diags`` are the target-visit contraindication keys of each case."""
    n = _check_lengths(case_ids, preds, gts, diags)
    per_case = []
    for cid, p, g, d in zip(case_ids, preds, gts, diags):
        p, g = set(p), set(g)
        per_case.append(
            CaseScore(
                cid,
                jaccard(p, g, empty_jaccard),
                len(p & g),
                len(p - g),
                len(g - p),
                ddi_case(p, g, kb.ddi),
                ddi_case(p, g, kb.ddi, weighted=True),
                contra_case(p, d, g, kb.contra),
                contra_case(p, d, g, kb.contra, weighted=True),
                len(p),
            )
        )
    if n == 0:
        return MetricsReport(label, 0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, excluded, [])
    acc = score_accuracy(preds, gts, empty_jaccard)

    def mean(attr: str) -> float:
        return sum(getattr(c, attr) for c in per_case) / n

    return MetricsReport(
        label,
        n,
        acc.jaccard,
        acc.precision,
        acc.recall,
        acc.f1,
        mean("ddi_b"),
        mean("ddi_w"),
        mean("contra_b"),
        mean("contra_w"),
        acc.avg_pred,
        excluded,
        per_case,
    )


@dataclass(frozen=True)
class SafetyRates:
    ddi_b: float
    ddi_w: float
    contra_b: float
    contra_w: float


def safety_rates(
    preds: Sequence[Collection[str]],
    gts: Sequence[Collection[str]],
    diags: Sequence[Collection[str]],
    ddi: DdiMatrix,
    contra: ContraMatrix,
) -> SafetyRates:
    return SafetyRates(
        score_ddi(preds, gts, ddi),
        score_ddi(preds, gts, ddi, weighted=True),
        score_contra(preds, diags, gts, contra),
        score_contra(preds, diags, gts, contra, weighted=True),
    )


def granularity_compare(
    sets: Sequence[Collection[str]],
    diags: Sequence[Collection[str]],
    kb: SafetyKB,
    gts: Sequence[Collection[str]] | None = None,
) -> dict[str, SafetyRates]:
    """Safety rates with L4 codes and matrices, then again after collapsing both to L3.

    With ``gts`` omitted the sets are scored against themselves, which is how a
    ground-truth cohort's own safety profile is measured.
    """
    gts = sets if gts is None else gts
    _check_lengths(sets, diags, gts)
    l4 = safety_rates(sets, gts, diags, kb.ddi, kb.contra)

    def up(groups: Sequence[Collection[str]]) -> list[set[str]]:
        return [{l3_of(c) for c in g} for g in groups]

    l3 = safety_rates(up(sets), up(gts), diags, collapse_matrix_to_l3(kb.ddi), collapse_contra_to_l3(kb.contra))
    return {"l4": l4, "l3": l3}
