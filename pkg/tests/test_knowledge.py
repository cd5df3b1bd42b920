from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medrec.errors import AllRecordsUnmapped, EmptyLexicon, EmptyVocab, UnknownMedication
from medrec.knowledge import (
    Lexicon,
    build_contra,
    build_ddi,
    collapse_contra_to_l3,
    collapse_matrix_to_l3,
    ddi_degree,
    load_id_map,
    load_indications,
    load_kb,
    save_kb,
)
from medrec.ontology import MedVocab, l3_of

from oracles import degree as oracle_degree

VOCAB = MedVocab(["A01AA", "A01AB", "B01AB", "C10AA", "C10AB", "N02BE"])
IDS = {"x": "C10AA05", "y": "B01AB01", "z": "N02BE01", "w": "C10AB02", "s1": "A01AA01", "s2": "A01AB01",
       "out": "L01EA01"}


def test_ddi_aggregates_both_directions():
    m = build_ddi([("x", "y", 3), ("y", "x", 2)], IDS, VOCAB)
    assert m.value("C10AA", "B01AB") == 1
    assert m.value("B01AB", "C10AA", weighted=True) == pytest.approx(1.0)
    assert m.n_pairs == 1


def test_ddi_rescales_by_global_max():
    m = build_ddi([("x", "y", 3), ("y", "x", 2), ("x", "z", 1)], IDS, VOCAB)
    assert m.value("C10AA", "N02BE", weighted=True) == pytest.approx(1 / 5)


def test_ddi_diagonal_and_unmapped():
    m = build_ddi([("x", "x", 4), ("x", "nope", 1), ("x", "out", 1), ("x", "y", 1)], IDS, VOCAB)
    assert np.all(np.diag(m.binary) == 0)
    assert m.stats == {"records": 4, "unmapped": 1, "diagonal": 1, "out_of_vocab": 1, "mapped": 3}
    assert m.n_pairs == 1


def test_ddi_edge_cases():
    m = build_ddi([], IDS, VOCAB)
    assert not m.binary.any() and not m.weighted.any()
    with pytest.raises(EmptyVocab):
        build_ddi([], IDS, MedVocab([]))
    with pytest.raises(AllRecordsUnmapped):
        build_ddi([("p", "q", 1)], IDS, VOCAB)
    # dict records with alternative column names
    m = build_ddi([{"drug1": "x", "drug2": "z", "count": "2"}], IDS, VOCAB)
    assert m.flagged("N02BE", "C10AA")


def test_degree_toy_matrix():
    vocab = MedVocab(["A01AA", "B01AB", "C10AA", "N02BE"])
    ids = {"a": "A01AA", "b": "B01AB", "c": "C10AA"}
    m = build_ddi([("a", "b", 1), ("a", "c", 1), ("b", "c", 1)], ids, vocab)
    pairs = {frozenset(p[:2]): p[2] for p in m.pairs()}
    assert ddi_degree("A01AA", m) == 2 == oracle_degree("A01AA", pairs)
    assert ddi_degree("N02BE", m) == 0
    with pytest.raises(UnknownMedication):
        ddi_degree("Z99ZZ", m)


def test_collapse_examples():
    m = build_ddi([("x", "y", 1)], IDS, VOCAB)
    l3 = collapse_matrix_to_l3(m)
    assert l3.value("C10A", "B01A") == 1
    sib = build_ddi([("s1", "s2", 1)], IDS, VOCAB)
    assert not collapse_matrix_to_l3(sib).binary.any()
    sib2 = build_ddi([("x", "w", 1)], IDS, VOCAB)
    assert collapse_matrix_to_l3(sib2).value("C10A", "C10A") == 0


def _contra_labels():
    return [
        {"rxcui": "x", "substance": "s", "contraText": "heart failure!"},  # len 14
        {"rxcui": ["x"], "substance": "s", "contraText": "heart failure and hypotension"},  # longest
        {"rxcui": ["y", "z"], "substance": "combo", "contraText": "pregnancy"},
        {"rxcui": [], "substance": "none", "contraText": "pregnancy"},
        {"rxcui": "z", "substance": "none", "contraText": ""},
        {"rxcui": "unmapped", "substance": "u", "contraText": "pregnancy"},
        {"openfda": {"rxcui": ["out"], "substance_name": ["o"]}, "contraindications": ["pregnancy"]},
        {"openfda": {"rxcui": ["y"]}, "contraindications": ["Pregnancy; HYPOTENSION, hypotension."]},
    ]


LEX = {"heart failure": "I50", "hypotension": "I95", "pregnancy": "Z33"}


def test_contra_filter_pipeline():
    contra, report = build_contra(_contra_labels(), IDS, LEX, VOCAB)
    assert report.input == 8
    assert (report.no_rxcui, report.no_contra_text, report.multi_rxcui) == (1, 1, 1)
    assert report.duplicate_single_rxcui == 1
    assert report.unmapped == 1
    assert report.survivors == 3
    assert report.conserved()
    # the longer of the two x labels survived
    assert contra.value("C10AA", "I95") == 1 and contra.value("C10AA", "I50") == 1
    assert contra.value("B01AB", "I95", weighted=True) == pytest.approx(1.0)
    assert contra.value("B01AB", "Z33", weighted=True) == pytest.approx(0.5)
    assert report.out_of_vocab_pairs == 1


def test_lexicon_longest_match_and_empty():
    lex = Lexicon({"heart failure": "I50", "decompensated heart failure": "I50X", "fail": "R99"})
    assert lex.find("Decompensated Heart Failure; failure") == ["I50X"]
    with pytest.raises(EmptyLexicon):
        Lexicon({" ": "I50"})


def test_indications():
    ind = load_indications([("D1", "x"), ("D1", "y"), ("D1", "y"), ("D2", "out"), ("E11", "w")], IDS, VOCAB)
    assert ind.relation["D1"] == {"C10AA", "B01AB"}
    assert ind.dropped_count == 1
    assert ind.candidates("E11.9") == {"C10AB"}
    assert ind.candidates("I21.4") == set()
    ind2 = load_indications([("I21", "x"), ("I214", "y")], IDS, VOCAB)
    assert ind2.candidates("I21.4") == {"C10AA", "B01AB"}
    assert len(load_indications([], IDS, VOCAB)) == 0


def test_id_map_file(tmp_path):
    p = tmp_path / "map.tsv"
    p.write_text("rxcui\tatc\n1\tC10AA05\n1\tB01AB01\n# note\n2\tN02BE01\n", encoding="utf-8")
    assert load_id_map(p) == {"1": ["C10AA05", "B01AB01"], "2": ["N02BE01"]}


def test_demo_kb_invariants(kb, kb_and_report):
    report = kb_and_report[1]
    for m in (kb.ddi.binary, kb.ddi.weighted):
        assert np.array_equal(m, m.T)
        assert np.all(np.diag(m) == 0)
    for w, b in ((kb.ddi.weighted, kb.ddi.binary), (kb.contra.weighted, kb.contra.binary)):
        assert w.min() >= 0 and w.max() == pytest.approx(1.0)
        assert np.all((w > 0) <= (b == 1))
    assert report.conserved()
    assert kb.contra.vocab is kb.ddi.vocab


def test_kb_archive_round_trip(kb, tmp_path):
    save_kb(kb, tmp_path / "kb.zip")
    again = load_kb(tmp_path / "kb.zip")
    assert again.vocab == kb.vocab
    assert np.array_equal(again.ddi.binary, kb.ddi.binary)
    assert np.array_equal(again.ddi.weighted, kb.ddi.weighted)
    assert np.array_equal(again.contra.weighted, kb.contra.weighted)
    assert again.contra.diag_vocab == kb.contra.diag_vocab
    assert again.indications.relation == kb.indications.relation
    assert again.provenance["counts"]["ddi_pairs"] == kb.ddi.n_pairs


def test_kb_archive_is_reproducible(kb, tmp_path, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    save_kb(kb, tmp_path / "a.zip")
    save_kb(kb, tmp_path / "b.zip")
    assert (tmp_path / "a.zip").read_bytes() == (tmp_path / "b.zip").read_bytes()


def test_manifest_records_sources(kb):
    prov = kb.provenance
    assert set(prov["sources"]) >= {"twosides", "medi", "idmap", "vocab", "lexicon", "openfda[0]"}
    assert "stand-in" in prov["contra_diagnosis_linking"]
    json.dumps(prov)


# -- properties -----------------------------------------------------------

CODES = ["A01AA", "A01AB", "A02BC", "B01AA", "B01AB", "C10AA", "C10AB", "C07AB"]
pair_records = st.lists(
    st.tuples(st.sampled_from(CODES), st.sampled_from(CODES), st.integers(0, 20)), max_size=25
)


@given(pair_records)
@settings(max_examples=200, deadline=None)
def test_ddi_matrix_properties(records):
    vocab = MedVocab(CODES)
    ids = {c: c for c in CODES}
    m = build_ddi(records, ids, vocab)
    assert np.array_equal(m.binary, m.binary.T) and np.array_equal(m.weighted, m.weighted.T)
    assert np.all(np.diag(m.binary) == 0)
    assert m.weighted.min() >= 0 and m.weighted.max() <= 1
    assert np.all((m.weighted > 0) <= (m.binary == 1))
    if m.weighted.any():
        assert m.weighted.max() == pytest.approx(1.0)
    collapsed = collapse_matrix_to_l3(m)
    for a, b, _, _ in m.pairs():
        if l3_of(a) != l3_of(b):
            assert collapsed.value(l3_of(a), l3_of(b)) == 1
    assert np.all(np.diag(collapsed.binary) == 0)


label_records = st.lists(
    st.fixed_dictionaries(
        {
            "rxcui": st.lists(st.sampled_from(["1", "2", "3", "9"]), max_size=3),
            "contraText": st.sampled_from(["", "pregnancy", "hypotension and pregnancy", "none here"]),
        }
    ),
    max_size=20,
)


@given(label_records)
@settings(max_examples=200, deadline=None)
def test_filter_report_conservation(labels):
    ids = {"1": "C10AA01", "2": "B01AB01", "3": "L01EA01"}
    contra, report = build_contra(labels, ids, {"pregnancy": "Z33", "hypotension": "I95"}, VOCAB)
    assert report.conserved()
    assert np.all((contra.weighted > 0) <= (contra.binary == 1))
    l3 = collapse_contra_to_l3(contra)
    assert l3.binary.sum() <= contra.binary.sum()
