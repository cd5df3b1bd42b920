"""Safety matrices and the indication relation, compiled onto the closed ATC-L4 vocabulary.

Matrices are held dense in memory (the vocabulary is a few hundred codes) and
written to disk as coordinate lists.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import logging
import os
import re
import time
import zipfile
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping

import numpy as np

from .errors import (
    AllRecordsUnmapped,
    EmptyLexicon,
    EmptyVocab,
    MalformedCode,
    UnknownMedication,
)
from .ontology import LevelTooShallow, MedVocab, l3_of, normalize_icd, parse_atc, to_l4

log = logging.getLogger(__name__)

IdMap = Mapping[str, "str | Iterable[str]"]


def _map_to_l4(source_id: str, id_map: IdMap) -> set[str]:
    """All L4 codes a source identifier maps to; deeper ATC codes are truncated."""
    target = id_map.get(str(source_id).strip())
    if target is None:
        return set()
    targets = [target] if isinstance(target, str) else list(target)
    out = set()
    for t in targets:
        try:
            out.add(to_l4(t).text)
        except (MalformedCode, LevelTooShallow):
            continue
    return out


def load_id_map(path: str | Path) -> dict[str, list[str]]:
    """Read a ``source_id<TAB>atc_code`` table (optional header, one pair per row)."""
    mapping: dict[str, list[str]] = defaultdict(list)
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh, delimiter="\t")):
            if len(row) < 2 or row[0].startswith("#"):
                continue
            src, code = row[0].strip(), row[1].strip()
            if lineno == 0:
                try:
                    parse_atc(code)
                except MalformedCode:
                    continue
            if code not in mapping[src]:
                mapping[src].append(code)
    return dict(mapping)


# ---------------------------------------------------------------------------
# DDI


@dataclass
class DdiMatrix:
    vocab: MedVocab
    binary: np.ndarray
    weighted: np.ndarray
    stats: dict[str, int] = field(default_factory=dict)

    @classmethod
    def empty(cls, vocab: MedVocab) -> DdiMatrix:
        n = len(vocab)
        return cls(vocab, np.zeros((n, n), dtype=np.int8), np.zeros((n, n)))

    def value(self, a: str, b: str, weighted: bool = False) -> float:
        i, j = self.vocab.get(a), self.vocab.get(b)
        if i is None or j is None or i == j:
            return 0.0
        return float((self.weighted if weighted else self.binary)[i, j])

    def flagged(self, a: str, b: str) -> bool:
        return self.value(a, b) > 0

    def partners(self, code: str) -> list[str]:
        i = self.vocab.get(code)
        if i is None:
            raise UnknownMedication(code)
        return [self.vocab.codes[j] for j in np.flatnonzero(self.binary[i]) if j != i]

    def pairs(self) -> Iterator[tuple[str, str, int, float]]:
        """Flagged unordered pairs (i < j in vocabulary order)."""
        rows, cols = np.nonzero(np.triu(self.binary, k=1))
        for i, j in zip(rows, cols):
            yield self.vocab.codes[i], self.vocab.codes[j], int(self.binary[i, j]), float(self.weighted[i, j])

    @property
    def n_pairs(self) -> int:
        return int(np.triu(self.binary, k=1).sum())


def _read_field(rec: Any, names: tuple[str, ...], pos: int) -> Any:
    if isinstance(rec, Mapping):
        for name in names:
            if name in rec:
                return rec[name]
        return None
    return rec[pos] if len(rec) > pos else None


_DRUG_A = ("drug_a", "drugA", "drug1", "drug_1_rxnorn_id", "drug_1_rxnorm_id", "drug1_rxnorm")
_DRUG_B = ("drug_b", "drugB", "drug2", "drug_2_rxnorm_id", "drug_2_rxnorn_id", "drug2_rxnorm")
_FREQ = ("frequency", "freq", "count", "mean_reporting_frequency")


def build_ddi(records: Iterable[Any], id_map: IdMap, vocab: MedVocab) -> DdiMatrix:
    """Aggregate source drug-pair records onto L4 pairs.

    Each record is a mapping (``drug_a``, ``drug_b``, ``frequency``) or a tuple in
    that order. Frequencies of all records landing on the same unordered L4 pair
    are summed, then the whole weighted matrix is divided by its maximum.
    """
    if len(vocab) == 0:
        raise EmptyVocab("DDI matrix needs a non-empty vocabulary")
    n = len(vocab)
    binary = np.zeros((n, n), dtype=np.int8)
    weight = np.zeros((n, n))
    stats = {"records": 0, "unmapped": 0, "diagonal": 0, "out_of_vocab": 0, "mapped": 0}
    for rec in records:
        stats["records"] += 1
        a = _map_to_l4(_read_field(rec, _DRUG_A, 0), id_map)
        b = _map_to_l4(_read_field(rec, _DRUG_B, 1), id_map)
        if not a or not b:
            stats["unmapped"] += 1
            continue
        stats["mapped"] += 1
        freq = _read_field(rec, _FREQ, 2)
        freq = 1.0 if freq in (None, "") else float(freq)
        if freq < 0:
            raise ValueError(f"negative interaction frequency in record {rec!r}")
        pairs = {tuple(sorted((x, y))) for x in a for y in b}
        for x, y in pairs:
            if x == y:
                stats["diagonal"] += 1
                continue
            i, j = vocab.get(x), vocab.get(y)
            if i is None or j is None:
                stats["out_of_vocab"] += 1
                continue
            binary[i, j] = binary[j, i] = 1
            weight[i, j] += freq
            weight[j, i] += freq
    if stats["records"] and not stats["mapped"]:
        raise AllRecordsUnmapped(f"none of {stats['records']} DDI records mapped to ATC-L4")
    if stats["unmapped"]:
        log.info("skipped %d unmappable DDI records", stats["unmapped"])
    np.fill_diagonal(binary, 0)
    np.fill_diagonal(weight, 0.0)
    peak = weight.max() if weight.size else 0.0
    if peak > 0:
        weight = weight / peak
    return DdiMatrix(vocab, binary, weight, stats)


def ddi_degree(med: str, ddi: DdiMatrix) -> int:
    """Number of distinct interaction partners of ``med`` in the binary matrix."""
    i = ddi.vocab.get(str(med))
    if i is None:
        raise UnknownMedication(f"{med} not in vocabulary")
    row = ddi.binary[i]
    return int(row.sum() - row[i])


# ---------------------------------------------------------------------------
# Contraindications


@dataclass
class ContraMatrix:
    vocab: MedVocab
    diag_vocab: tuple[str, ...]
    binary: np.ndarray
    weighted: np.ndarray

    def __post_init__(self) -> None:
        self._diag_index = {d: k for k, d in enumerate(self.diag_vocab)}

    def diag_index(self, key: str) -> int | None:
        return self._diag_index.get(key)

    def value(self, med: str, diag: str, weighted: bool = False) -> float:
        i, d = self.vocab.get(med), self._diag_index.get(diag)
        if i is None or d is None:
            return 0.0
        return float((self.weighted if weighted else self.binary)[i, d])

    def pairs(self) -> Iterator[tuple[str, str, int, float]]:
        rows, cols = np.nonzero(self.binary)
        for i, d in zip(rows, cols):
            yield self.vocab.codes[i], self.diag_vocab[d], int(self.binary[i, d]), float(self.weighted[i, d])

    @property
    def n_pairs(self) -> int:
        return int(self.binary.sum())


@dataclass
class FilterReport:
    """Record counts removed at each stage of the label filter pipeline."""

    input: int = 0
    no_rxcui: int = 0
    no_contra_text: int = 0
    duplicate_single_rxcui: int = 0
    multi_rxcui: int = 0
    unmapped: int = 0
    survivors: int = 0
    single_rxcui_records: int = 0
    unique_single_rxcui: int = 0
    rxcui_atc_pairs: int = 0
    mapped_rxcui: int = 0
    mapped_atc_l4: int = 0
    out_of_vocab_pairs: int = 0
    mentions: int = 0

    REMOVAL_STAGES = ("no_rxcui", "no_contra_text", "duplicate_single_rxcui", "multi_rxcui", "unmapped")

    def removed_total(self) -> int:
        return sum(getattr(self, s) for s in self.REMOVAL_STAGES)

    def conserved(self) -> bool:
        return self.removed_total() + self.survivors == self.input

    def to_dict(self) -> dict[str, int]:
        return {k: v for k, v in self.__dict__.items()}


_SPLIT_IDS = re.compile(r"[\s,;|]+")


def _as_id_list(value: Any) -> list[str]:
    if value is None:
        return []
    if isinstance(value, str):
        return [v for v in _SPLIT_IDS.split(value.strip()) if v]
    out = []
    for v in value:
        out.extend(_as_id_list(v))
    return out


def _as_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, str):
        return value.strip()
    return "\n".join(str(v) for v in value).strip()


def _label_fields(rec: Mapping[str, Any]) -> tuple[list[str], str, str]:
    """(rxcui list, substance, contraindication text) from a simplified or raw openFDA record."""
    openfda = rec.get("openfda") or {}
    rxcui = rec.get("rxcui", rec.get("RxCUI", openfda.get("rxcui")))
    substance = rec.get("substance", rec.get("substance_name", openfda.get("substance_name")))
    text = rec.get("contraText", rec.get("contraindications"))
    return _as_id_list(rxcui), _as_text(substance), _as_text(text)


class Lexicon:
    """Case-insensitive, longest-match dictionary matcher from terms to diagnosis keys."""

    def __init__(self, terms: Mapping[str, str]):
        cleaned = {t.strip().lower(): k for t, k in terms.items() if t and t.strip()}
        if not cleaned:
            raise EmptyLexicon("contraindication lexicon has no terms")
        self.terms = cleaned
        ordered = sorted(cleaned, key=lambda t: (-len(t), t))
        self._pattern = re.compile(
            r"(?<!\w)(?:" + "|".join(re.escape(t) for t in ordered) + r")(?!\w)",
            re.IGNORECASE,
        )

    def keys(self) -> list[str]:
        return sorted(set(self.terms.values()))

    def find(self, text: str) -> list[str]:
        return [self.terms[m.group(0).lower()] for m in self._pattern.finditer(text)]


def load_lexicon(path: str | Path) -> dict[str, str]:
    """``term<TAB>diagnosis_key`` rows; keys are normalized to dotless uppercase."""
    terms: dict[str, str] = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh, delimiter="\t"):
            if len(row) < 2 or row[0].startswith("#") or row[0].lower() == "term":
                continue
            terms[row[0]] = normalize_icd(row[1])
    return terms


def build_contra(
    labels: Iterable[Mapping[str, Any]],
    rxcui_to_atc: IdMap,
    diag_lexicon: Mapping[str, str],
    vocab: MedVocab,
    diag_vocab: Iterable[str] | None = None,
) -> tuple[ContraMatrix, FilterReport]:
    lexicon = Lexicon(diag_lexicon)
    report = FilterReport()
    singles: dict[str, tuple[str, str]] = {}
    for rec in labels:
        report.input += 1
        ids, substance, text = _label_fields(rec)
        if not ids:
            report.no_rxcui += 1
            continue
        if not text:
            report.no_contra_text += 1
            continue
        if len(set(ids)) > 1:
            report.multi_rxcui += 1
            continue
        report.single_rxcui_records += 1
        rxcui = ids[0]
        kept = singles.get(rxcui)
        if kept is None or len(text) > len(kept[1]):
            singles[rxcui] = (substance, text)
        report.duplicate_single_rxcui += 1
    # every single-rxcui record except one survivor per rxcui counts as a duplicate
    report.duplicate_single_rxcui -= len(singles)
    report.unique_single_rxcui = len(singles)

    keys = list(diag_vocab) if diag_vocab is not None else lexicon.keys()
    diag_index = {k: i for i, k in enumerate(keys)}
    counts: dict[tuple[int, int], int] = defaultdict(int)
    pairs: set[tuple[str, str]] = set()
    for rxcui, (_, text) in sorted(singles.items()):
        codes = _map_to_l4(rxcui, rxcui_to_atc)
        if not codes:
            report.unmapped += 1
            continue
        report.survivors += 1
        mentions = [k for k in lexicon.find(text) if k in diag_index]
        report.mentions += len(mentions)
        for code in sorted(codes):
            pairs.add((rxcui, code))
            i = vocab.get(code)
            if i is None:
                report.out_of_vocab_pairs += 1
                continue
            for key in mentions:
                counts[(i, diag_index[key])] += 1
    report.rxcui_atc_pairs = len(pairs)
    report.mapped_rxcui = len({r for r, _ in pairs})
    report.mapped_atc_l4 = len({c for _, c in pairs})

    n, d = len(vocab), len(keys)
    binary = np.zeros((n, d), dtype=np.int8)
    weighted = np.zeros((n, d))
    for (i, k), c in counts.items():
        binary[i, k] = 1
        weighted[i, k] = c
    peak = weighted.max() if weighted.size else 0.0
    if peak > 0:
        weighted /= peak
    return ContraMatrix(vocab, tuple(keys), binary, weighted), report


# ---------------------------------------------------------------------------
# Indications


@dataclass
class IndicationMap:
    relation: dict[str, frozenset[str]] = field(default_factory=dict)
    dropped_out_of_vocab: int = 0
    dropped_unmapped: int = 0

    @property
    def dropped_count(self) -> int:
        return self.dropped_out_of_vocab

    def candidates(self, diag_key: str) -> set[str]:
        """Union of medications indicated for ``diag_key`` and each of its prefixes (length >= 3)."""
        key = normalize_icd(diag_key)
        out: set[str] = set()
        for end in range(len(key), 2, -1):
            out |= self.relation.get(key[:end], frozenset())
        return out

    def __len__(self) -> int:
        return sum(len(v) for v in self.relation.values())


def load_indications(rows: Iterable[Any], id_map: IdMap, vocab: MedVocab) -> IndicationMap:
    """Build the diagnosis -> L4 medications relation.

    ``rows`` are ``(diag_key, med_id)`` pairs; ``med_id`` is resolved via
    ``id_map`` or, failing that, read as an ATC code directly.
    """
    relation: dict[str, set[str]] = defaultdict(set)
    out = IndicationMap()
    for row in rows:
        diag = _read_field(row, ("diag", "icd", "icd_code", "ICD9", "ICD10", "diagnosis"), 0)
        med = _read_field(row, ("med", "rxcui", "RXCUI_IN", "med_id", "atc"), 1)
        if not diag or not med:
            out.dropped_unmapped += 1
            continue
        codes = _map_to_l4(med, id_map)
        if not codes:
            try:
                codes = {to_l4(str(med)).text}
            except (MalformedCode, LevelTooShallow):
                out.dropped_unmapped += 1
                continue
        for code in codes:
            if code in vocab:
                relation[normalize_icd(str(diag))].add(code)
            else:
                out.dropped_out_of_vocab += 1
    if out.dropped_out_of_vocab:
        log.warning("dropped %d out-of-vocabulary indication targets", out.dropped_out_of_vocab)
    out.relation = {k: frozenset(v) for k, v in sorted(relation.items())}
    return out


# ---------------------------------------------------------------------------
# Granularity collapse


def _l3_vocab(vocab: MedVocab) -> tuple[MedVocab, np.ndarray]:
    l3 = MedVocab(sorted({l3_of(c) for c in vocab}), level=3)
    parent = np.array([l3.index(l3_of(c)) for c in vocab], dtype=int)
    return l3, parent


def collapse_matrix_to_l3(matrix: DdiMatrix) -> DdiMatrix:
    """OR-collapse binary entries and max-collapse weights onto L3 parents; diagonal cleared."""
    l3, parent = _l3_vocab(matrix.vocab)
    n = len(l3)
    binary = np.zeros((n, n), dtype=np.int8)
    weighted = np.zeros((n, n))
    rows, cols = np.nonzero(matrix.binary)
    for i, j in zip(rows, cols):
        a, b = parent[i], parent[j]
        binary[a, b] = 1
        weighted[a, b] = max(weighted[a, b], matrix.weighted[i, j])
    np.fill_diagonal(binary, 0)
    np.fill_diagonal(weighted, 0.0)
    return DdiMatrix(l3, binary, weighted)


def collapse_contra_to_l3(matrix: ContraMatrix) -> ContraMatrix:
    l3, parent = _l3_vocab(matrix.vocab)
    binary = np.zeros((len(l3), len(matrix.diag_vocab)), dtype=np.int8)
    weighted = np.zeros(binary.shape)
    for i in range(len(matrix.vocab)):
        binary[parent[i]] |= matrix.binary[i]
        weighted[parent[i]] = np.maximum(weighted[parent[i]], matrix.weighted[i])
    return ContraMatrix(l3, matrix.diag_vocab, binary, weighted)


# ---------------------------------------------------------------------------
# Knowledge base bundle and archive


@dataclass
class SafetyKB:
    ddi: DdiMatrix
    contra: ContraMatrix
    indications: IndicationMap
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not (self.ddi.vocab == self.contra.vocab):
            raise ValueError("DDI and contraindication matrices must share one vocabulary")
        self.contra.vocab = self.ddi.vocab

    @property
    def vocab(self) -> MedVocab:
        return self.ddi.vocab

    def degree(self, med: str) -> int:
        return ddi_degree(med, self.ddi)


MATRIX_HEADER = ["rowCode", "colCode", "binary", "weighted"]


def _matrix_tsv(rows: Iterable[tuple[str, str, int, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(MATRIX_HEADER)
    for a, b, bin_, w in rows:
        writer.writerow([a, b, bin_, format(w, ".17g")])
    return buf.getvalue()


def _read_matrix_tsv(text: str) -> list[tuple[str, str, int, float]]:
    reader = csv.reader(io.StringIO(text), delimiter="\t")
    header = next(reader)
    if header != MATRIX_HEADER:
        raise ValueError(f"bad matrix header {header}")
    return [(a, b, int(bi), float(w)) for a, b, bi, w in reader]


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = time.gmtime(int(epoch)) if epoch else time.gmtime()
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", t)


def save_kb(kb: SafetyKB, path: str | Path) -> None:
    """Write the KB as a zip of coordinate-list TSVs plus ``manifest.json``."""
    ind_buf = io.StringIO()
    w = csv.writer(ind_buf, delimiter="\t", lineterminator="\n")
    w.writerow(["diagKey", "atcCode"])
    for diag, meds in kb.indications.relation.items():
        for med in sorted(meds):
            w.writerow([diag, med])
    manifest = dict(kb.provenance)
    manifest.setdefault("built_at", build_timestamp())
    manifest["counts"] = {
        "vocab": len(kb.vocab),
        "diag_vocab": len(kb.contra.diag_vocab),
        "ddi_pairs": kb.ddi.n_pairs,
        "contra_pairs": kb.contra.n_pairs,
        "indications": len(kb.indications),
    }
    # fixed zip timestamps keep archives reproducible for identical inputs
    stamp = (1980, 1, 1, 0, 0, 0)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        def put(name: str, text: str) -> None:
            zf.writestr(zipfile.ZipInfo(name, date_time=stamp), text)

        put("vocab.txt", "".join(c + "\n" for c in kb.vocab.codes))
        put("diag_vocab.txt", "".join(d + "\n" for d in kb.contra.diag_vocab))
        put("ddi.tsv", _matrix_tsv(kb.ddi.pairs()))
        put("contra.tsv", _matrix_tsv(kb.contra.pairs()))
        put("indications.tsv", ind_buf.getvalue())
        put("manifest.json", json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_kb(path: str | Path) -> SafetyKB:
    with zipfile.ZipFile(path) as zf:
        read = lambda name: zf.read(name).decode("utf-8")  # noqa: E731
        vocab = MedVocab(c for c in read("vocab.txt").splitlines() if c)
        diag_vocab = tuple(d for d in read("diag_vocab.txt").splitlines() if d)
        ddi = DdiMatrix.empty(vocab)
        for a, b, bi, wt in _read_matrix_tsv(read("ddi.tsv")):
            i, j = vocab.index(a), vocab.index(b)
            ddi.binary[i, j] = ddi.binary[j, i] = bi
            ddi.weighted[i, j] = ddi.weighted[j, i] = wt
        contra = ContraMatrix(
            vocab, diag_vocab, np.zeros((len(vocab), len(diag_vocab)), dtype=np.int8),
            np.zeros((len(vocab), len(diag_vocab))),
        )
        for med, diag, bi, wt in _read_matrix_tsv(read("contra.tsv")):
            i, d = vocab.index(med), contra.diag_index(diag)
            contra.binary[i, d] = bi
            contra.weighted[i, d] = wt
        relation: dict[str, set[str]] = defaultdict(set)
        rows = csv.reader(io.StringIO(read("indications.tsv")), delimiter="\t")
        next(rows)
        for diag, med in rows:
            relation[diag].add(med)
        indications = IndicationMap({k: frozenset(v) for k, v in relation.items()})
        manifest = json.loads(read("manifest.json"))
    return SafetyKB(ddi, contra, indications, manifest)


def read_delimited(path: str | Path) -> list[dict[str, str]]:
    """Rows of a CSV/TSV file with a header; the delimiter is sniffed from the extension."""
    path = Path(path)
    delim = "," if path.suffix.lower() == ".csv" else "\t"
    with path.open(encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh, delimiter=delim))


def read_labels(paths: Iterable[str | Path]) -> Iterator[dict[str, Any]]:
    """Yield label records from JSONL files or openFDA bulk JSON (``{"results": [...]}``)."""
    for p in paths:
        p = Path(p)
        files = sorted(p.glob("*.json*")) if p.is_dir() else [p]
        for f in files:
            text = f.read_text(encoding="utf-8")
            if f.suffix == ".jsonl":
                for line in text.splitlines():
                    if line.strip():
                        yield json.loads(line)
            else:
                doc = json.loads(text)
                yield from doc["results"] if isinstance(doc, dict) else doc


def build_kb(
    twosides: str | Path,
    openfda: Iterable[str | Path],
    medi: str | Path,
    idmap: str | Path,
    vocab: str | Path | MedVocab,
    lexicon: str | Path | Mapping[str, str],
) -> tuple[SafetyKB, FilterReport]:
    """File-level KB build used by the ``build-kb`` command."""
    from .ontology import load_vocab

    openfda = [openfda] if isinstance(openfda, (str, Path)) else list(openfda)
    med_vocab = vocab if isinstance(vocab, MedVocab) else load_vocab(vocab)
    id_map = load_id_map(idmap)
    terms = lexicon if isinstance(lexicon, Mapping) else load_lexicon(lexicon)
    ddi = build_ddi(read_delimited(twosides), id_map, med_vocab)
    contra, report = build_contra(read_labels(openfda), id_map, terms, med_vocab)
    indications = load_indications(read_delimited(medi), id_map, med_vocab)
    sources = {"twosides": twosides, "medi": medi, "idmap": idmap}
    if not isinstance(vocab, MedVocab):
        sources["vocab"] = vocab
    if not isinstance(lexicon, Mapping):
        sources["lexicon"] = lexicon
    digests = {k: sha256_file(v) for k, v in sources.items()}
    for k, p in enumerate(openfda):
        if Path(p).is_file():
            digests[f"openfda[{k}]"] = sha256_file(p)
    provenance = {
        "sources": digests,
        "built_at": build_timestamp(),
        "ddi_stats": ddi.stats,
        "contra_filter": report.to_dict(),
        "indications_dropped_out_of_vocab": indications.dropped_out_of_vocab,
        "indications_dropped_unmapped": indications.dropped_unmapped,
        "contra_diagnosis_linking": "lexicon term matching (stand-in; labels carry free text only)",
        "weight_normalization": "divide by global maximum",
    }
    return SafetyKB(ddi, contra, indications, provenance), report


def upper_pairs(codes: Iterable[str]) -> Iterator[tuple[str, str]]:
    return itertools.combinations(sorted(set(codes)), 2)
