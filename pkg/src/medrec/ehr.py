"""Longitudinal patient records, JSONL case files and EHR-to-text serialization."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping

from .errors import LevelTooShallow, MalformedCode, SchemaError
from .ontology import CodeKind, IcdCode, IcdVersion, MedVocab, Ontology, to_l4

log = logging.getLogger(__name__)

DEMOGRAPHIC_SLOTS = ("age", "gender", "insurance", "language", "admissionType", "maritalStatus", "race")
UNKNOWN = "unknown"


def _dedupe(codes: Iterable[str]) -> tuple[str, ...]:
    return tuple(dict.fromkeys(codes))


@dataclass(frozen=True)
class Visit:
    diagnoses: tuple[IcdCode, ...] = ()
    procedures: tuple[IcdCode, ...] = ()
    medications: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "diagnoses", tuple(self.diagnoses))
        object.__setattr__(self, "procedures", tuple(self.procedures))
        object.__setattr__(self, "medications", _dedupe(self.medications))


@dataclass(frozen=True)
class PatientRecord:
    case_id: str
    demographics: Mapping[str, Any]
    history: tuple[Visit, ...]
    target: Visit
    ground_truth: frozenset[str] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "history", tuple(self.history))
        object.__setattr__(self, "demographics", dict(self.demographics))
        if self.ground_truth is not None:
            object.__setattr__(self, "ground_truth", frozenset(self.ground_truth))

    @property
    def n_visits(self) -> int:
        return len(self.history) + 1

    def all_diagnoses(self) -> list[tuple[IcdCode, bool]]:
        """Every diagnosis with a flag telling whether it belongs to the target visit."""
        out = [(d, True) for d in self.target.diagnoses]
        for visit in self.history:
            out.extend((d, False) for d in visit.diagnoses)
        return out

    @property
    def prior_meds(self) -> tuple[str, ...]:
        """Medications of the most recent historical visit."""
        return self.history[-1].medications if self.history else ()

    @property
    def historical_meds(self) -> tuple[str, ...]:
        return _dedupe(m for v in self.history for m in v.medications)


# ---------------------------------------------------------------------------
# JSONL schema


def _code_to_json(code: IcdCode) -> dict[str, str]:
    return {"code": code.text, "version": code.version.value}


def _code_from_json(obj: Any, kind: CodeKind, default_version: IcdVersion) -> IcdCode:
    if isinstance(obj, str):
        return IcdCode(obj, default_version, kind)
    if isinstance(obj, Mapping) and "code" in obj:
        return IcdCode(str(obj["code"]), IcdVersion(obj.get("version", default_version)), kind)
    raise SchemaError(f"bad ICD code entry {obj!r}")


def record_to_json(record: PatientRecord) -> dict[str, Any]:
    def visit(v: Visit, with_meds: bool) -> dict[str, Any]:
        out: dict[str, Any] = {
            "diagnoses": [_code_to_json(c) for c in v.diagnoses],
            "procedures": [_code_to_json(c) for c in v.procedures],
        }
        if with_meds:
            out["medications"] = list(v.medications)
        return out

    obj: dict[str, Any] = {
        "caseId": record.case_id,
        "demographics": dict(record.demographics),
        "visits": [visit(v, True) for v in record.history],
        "target": visit(record.target, False),
    }
    if record.ground_truth is not None:
        obj["groundTruth"] = sorted(record.ground_truth)
    return obj


@dataclass
class LoadStats:
    records: int = 0
    schema_errors: list[str] = field(default_factory=list)
    dropped_out_of_vocab: int = 0
    dropped_malformed: int = 0


def _normalize_meds(raw: Iterable[Any], vocab: MedVocab | None, stats: LoadStats) -> list[str]:
    out = []
    for m in raw:
        try:
            code = to_l4(str(m)).text
        except (MalformedCode, LevelTooShallow):
            stats.dropped_malformed += 1
            continue
        if vocab is not None and code not in vocab:
            stats.dropped_out_of_vocab += 1
            continue
        out.append(code)
    return out


def record_from_json(obj: Mapping[str, Any], vocab: MedVocab | None = None, stats: LoadStats | None = None) -> PatientRecord:
    stats = stats if stats is not None else LoadStats()
    if not isinstance(obj, Mapping):
        raise SchemaError("record must be a JSON object")
    for key in ("caseId", "target"):
        if key not in obj:
            raise SchemaError(f"missing field {key!r}")
    default_version = IcdVersion(obj.get("icdVersion", IcdVersion.ICD10CM))

    def visit(v: Mapping[str, Any], with_meds: bool) -> Visit:
        if not isinstance(v, Mapping):
            raise SchemaError("visit must be an object")
        diags = [_code_from_json(c, CodeKind.DIAGNOSIS, default_version) for c in v.get("diagnoses", [])]
        procs = [_code_from_json(c, CodeKind.PROCEDURE, default_version) for c in v.get("procedures", [])]
        meds = _normalize_meds(v.get("medications", []), vocab, stats) if with_meds else []
        return Visit(tuple(diags), tuple(procs), tuple(meds))

    history = tuple(visit(v, True) for v in obj.get("visits", []))
    target = visit(obj["target"], False)
    gt = obj.get("groundTruth")
    ground_truth = frozenset(_normalize_meds(gt, vocab, stats)) if gt is not None else None
    return PatientRecord(str(obj["caseId"]), dict(obj.get("demographics", {})), history, target, ground_truth)


def load_cases(
    path: str | Path,
    vocab: MedVocab | None = None,
    strict: bool = False,
    stats: LoadStats | None = None,
) -> list[PatientRecord]:
    """One record per non-blank line. Bad lines raise in strict mode, otherwise are logged and skipped."""
    stats = stats if stats is not None else LoadStats()
    records = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(record_from_json(obj, vocab, stats))
            except (json.JSONDecodeError, SchemaError, MalformedCode, ValueError) as exc:
                err = SchemaError(str(exc), lineno)
                if strict:
                    raise err from exc
                stats.schema_errors.append(str(err))
                log.warning("%s: %s", path, err)
    stats.records = len(records)
    if stats.dropped_out_of_vocab:
        log.info("dropped %d out-of-vocabulary medications", stats.dropped_out_of_vocab)
    return records


def save_cases(records: Iterable[PatientRecord], path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for r in records:
            fh.write(json.dumps(record_to_json(r), ensure_ascii=False) + "\n")


# ---------------------------------------------------------------------------
# Serialization


@dataclass(frozen=True)
class CodeSpan:
    code: str
    section: str  # "visit 1", ..., "target"
    field: str  # diagnoses / procedures / drugs
    start: int  # UTF-8 byte offsets of the code text
    end: int


@dataclass(frozen=True)
class SerializedCase:
    text: str
    code_spans: tuple[CodeSpan, ...]
    empty_target: bool = False


class _Writer:
    def __init__(self) -> None:
        self.parts: list[str] = []
        self.nbytes = 0
        self.spans: list[CodeSpan] = []

    def put(self, s: str) -> None:
        self.parts.append(s)
        self.nbytes += len(s.encode("utf-8"))

    def items(self, pairs: list[tuple[str, str]], section: str, fld: str) -> None:
        if not pairs:
            self.put("none")
            return
        for k, (desc, code) in enumerate(pairs):
            if k:
                self.put(", ")
            self.put(f"{desc} (")
            start = self.nbytes
            self.put(code)
            self.spans.append(CodeSpan(code, section, fld, start, self.nbytes))
            self.put(")")


def _slot(demo: Mapping[str, Any], key: str) -> str:
    value = demo.get(key)
    return UNKNOWN if value is None or str(value).strip() == "" else str(value)


def serialize(record: PatientRecord, ontology: Ontology) -> SerializedCase:
    """Render a record as the three-part profile / history / target text."""
    w = _Writer()
    d = record.demographics
    w.put(
        f"The patient's age is {_slot(d, 'age')} and gender is {_slot(d, 'gender')}. "
        f"The patient's insurance type is {_slot(d, 'insurance')}, language is {_slot(d, 'language')}, "
        f"admission type is {_slot(d, 'admissionType')}, marital status is {_slot(d, 'maritalStatus')}, "
        f"and race is {_slot(d, 'race')}. The patient has {record.n_visits} ICU visits."
    )

    def icd_pairs(codes: Iterable[IcdCode]) -> list[tuple[str, str]]:
        return [(ontology.describe_icd(c), c.text) for c in codes]

    for t, visit in enumerate(record.history, start=1):
        section = f"visit {t}"
        w.put(f"\n\nIn visit {t}, the patient had diagnoses: ")
        w.items(icd_pairs(visit.diagnoses), section, "diagnoses")
        w.put("; procedures: ")
        w.items(icd_pairs(visit.procedures), section, "procedures")
        w.put(". The patient was prescribed drugs: ")
        w.items([(ontology.describe_atc(m), m) for m in visit.medications], section, "drugs")
        w.put(".")

    w.put("\n\nIn this visit, the patient has diagnoses: ")
    w.items(icd_pairs(record.target.diagnoses), "target", "diagnoses")
    w.put("; procedures: ")
    w.items(icd_pairs(record.target.procedures), "target", "procedures")
    w.put(". Then, the patient should be prescribed:")
    empty = not record.target.diagnoses and not record.target.procedures
    return SerializedCase("".join(w.parts), tuple(w.spans), empty)
