from __future__ import annotations

from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medrec.errors import LevelTooShallow, MalformedCode, TaxonomyError, UnknownCode
from medrec.ontology import (
    IcdCode,
    IcdVersion,
    MedVocab,
    Taxonomy,
    atc_taxonomy,
    chapter_taxonomy,
    icd_category,
    icd_chapter,
    l3_of,
    load_taxonomy,
    load_vocab,
    parse_atc,
    save_taxonomy,
    save_vocab,
    to_l3,
    to_l4,
)

letters = st.sampled_from("ABCDEFGHIJKLMNOPQRSTUVWXYZ")
digits = st.sampled_from("0123456789")
l5_codes = st.tuples(letters, digits, digits, letters, letters, digits, digits).map("".join)


def test_parse_atc_levels():
    assert parse_atc("C10AA").level == 4
    code = parse_atc("c10aa05")
    assert (code.text, code.level) == ("C10AA05", 5)
    assert parse_atc("C").level == 1
    assert parse_atc("C10").level == 2
    assert parse_atc("C10A").level == 3


@pytest.mark.parametrize("bad", ["C1AA0", "", "C10AA0", "110AA", "C10A1", "CXXAA", 42, "C10ÄA"])
def test_parse_atc_rejects(bad):
    with pytest.raises(MalformedCode):
        parse_atc(bad)


def test_truncation():
    assert to_l4("C10AA05").text == "C10AA"
    assert to_l4("B01AB").text == "B01AB"
    assert to_l3("C10AA").text == "C10A"
    assert to_l3("B01AB").text == "B01A"
    assert to_l3("A06AB").text == "A06A"
    with pytest.raises(LevelTooShallow):
        to_l4("C10")
    with pytest.raises(LevelTooShallow):
        to_l4("C10A")
    with pytest.raises(LevelTooShallow):
        to_l3("C10")


@given(l5_codes)
@settings(max_examples=200)
def test_atc_round_trip_and_prefix_coherence(text):
    code = parse_atc(text)
    assert parse_atc(str(code)) == code
    assert to_l3(to_l4(code)) == to_l3(code)
    assert l3_of(to_l4(code).text) == to_l3(code).text


def test_icd_keys():
    assert IcdCode("I21.4").key == "I214"
    assert icd_category(IcdCode("I50.23")) == "I50"
    assert icd_category(IcdCode("E885.9", IcdVersion.ICD9CM)) == "E885"
    assert icd_category(IcdCode("428.0", IcdVersion.ICD9CM)) == "428"
    assert IcdCode("0SRR0J9", kind="procedure").system == "ICD10PCS"
    with pytest.raises(MalformedCode):
        IcdCode("  ")


def test_icd_chapter_examples(ontology):
    assert icd_chapter(IcdCode("I21.4"), ontology.icd) == "IX"
    assert icd_chapter(IcdCode("E11.9"), ontology.icd) == "IV"
    # undescribed code falls back to its category
    assert icd_chapter(IcdCode("I21.09"), ontology.icd) == "IX"
    assert icd_chapter(IcdCode("428.0", IcdVersion.ICD9CM), ontology.icd) == "IX"
    assert icd_chapter(IcdCode("E885.9", IcdVersion.ICD9CM), ontology.icd) == "XX"
    assert icd_chapter(IcdCode("250.00", IcdVersion.ICD9CM), ontology.icd) == "IV"
    with pytest.raises(UnknownCode):
        icd_chapter(IcdCode("ZZZ999"), ontology.icd)
    # a chapter label must not swallow codes that merely start with it
    with pytest.raises(UnknownCode):
        icd_chapter(IcdCode("IX9"), ontology.icd)
    assert ontology.chapter(IcdCode("ZZZ999")) is None


def test_level_counts_match_children(ontology):
    for tax in [ontology.atc, *ontology.icd.values()]:
        counts = Counter(n.level for n in tax)
        assert tax.level_counts == dict(sorted(counts.items()))
        # every non-root node is its parent's child exactly once
        n_children = sum(len(tax.children(n.code)) for n in tax)
        assert n_children == sum(1 for n in tax if n.parent is not None)


def test_taxonomy_file_round_trip(ontology, tmp_path):
    save_taxonomy(ontology.atc, tmp_path / "atc.tsv")
    again = load_taxonomy(tmp_path / "atc.tsv", "atc")
    assert again.nodes == ontology.atc.nodes


def test_taxonomy_validation(tmp_path):
    with pytest.raises(TaxonomyError):
        Taxonomy.from_rows([("A", None, 1, ""), ("A01", "B", 2, "")])
    with pytest.raises(TaxonomyError):
        Taxonomy.from_rows([("A", None, 1, ""), ("A01", "A", 3, "")])
    with pytest.raises(TaxonomyError):
        Taxonomy.from_rows([("A", None, 1, ""), ("A", None, 1, "")])
    bad = tmp_path / "bad.tsv"
    bad.write_text("code\tlevel\n", encoding="utf-8")
    with pytest.raises(TaxonomyError):
        load_taxonomy(bad)
    with pytest.raises(TaxonomyError):
        atc_taxonomy({"C10AA": "x"})  # parents missing


def test_chapter_taxonomy_icd9_maps_to_icd10_numbering():
    tax = chapter_taxonomy(IcdVersion.ICD9CM, {"428.0": "Congestive heart failure"})
    assert tax.root("4280") == "IX"
    assert tax.root("V58") == "XXI"
    assert tax.root("E885") == "XX"
    assert tax.description("4280") == "Congestive heart failure"


def test_vocab(tmp_path):
    v = MedVocab(["C10AA", "B01AB", "C10AA"])
    assert v.codes == ("C10AA", "B01AB")
    assert [v.index(c) for c in v] == [0, 1]
    assert v.get("A01AA") is None
    with pytest.raises(MalformedCode):
        MedVocab(["C10AA05"])
    save_vocab(v, tmp_path / "v.txt")
    assert load_vocab(tmp_path / "v.txt") == v


@given(st.lists(l5_codes, max_size=30))
@settings(max_examples=200)
def test_vocab_index_is_bijection(codes):
    v = MedVocab(to_l4(c) for c in codes)
    assert sorted(v.index(c) for c in v) == list(range(len(v)))
