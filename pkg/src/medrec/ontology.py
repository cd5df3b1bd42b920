"""ATC and ICD code handling, hierarchical taxonomies and the closed L4 vocabulary."""

from __future__ import annotations

import csv
import enum
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Mapping

from .errors import (
    LevelTooShallow,
    MalformedCode,
    TaxonomyError,
    UnknownCode,
)

# Length of an ATC code at each level (L1..L5).
ATC_LEVEL_LENGTH = {1: 1, 2: 3, 3: 4, 4: 5, 5: 7}
_LENGTH_TO_LEVEL = {v: k for k, v in ATC_LEVEL_LENGTH.items()}
# Character class required at each position of a full L5 code.
_ATC_GRAMMAR = "LDDLLDD"


@dataclass(frozen=True, order=True)
class AtcCode:
    text: str
    level: int

    def __str__(self) -> str:
        return self.text

    def prefix(self, level: int) -> AtcCode:
        if level > self.level:
            raise LevelTooShallow(f"{self.text} is L{self.level}, cannot produce L{level}")
        return AtcCode(self.text[: ATC_LEVEL_LENGTH[level]], level)


def parse_atc(text: str) -> AtcCode:
    """Validate an ATC code of any level and normalize it to uppercase."""
    if not isinstance(text, str):
        raise MalformedCode(f"ATC code must be a string, got {type(text).__name__}")
    norm = text.strip().upper()
    level = _LENGTH_TO_LEVEL.get(len(norm))
    if level is None:
        raise MalformedCode(f"{text!r}: ATC codes have 1, 3, 4, 5 or 7 characters")
    for pos, (ch, kind) in enumerate(zip(norm, _ATC_GRAMMAR)):
        ok = ("A" <= ch <= "Z") if kind == "L" else ch.isdigit() and ch.isascii()
        if not ok:
            expected = "letter" if kind == "L" else "digit"
            raise MalformedCode(f"{text!r}: position {pos + 1} must be a {expected}")
    return AtcCode(norm, level)


def to_l4(code: AtcCode | str) -> AtcCode:
    code = parse_atc(code) if isinstance(code, str) else code
    if code.level < 4:
        raise LevelTooShallow(f"{code.text} (L{code.level}) has no unique L4 parent")
    return code.prefix(4)


def to_l3(code: AtcCode | str) -> AtcCode:
    code = parse_atc(code) if isinstance(code, str) else code
    if code.level < 3:
        raise LevelTooShallow(f"{code.text} (L{code.level}) has no L3 parent")
    return code.prefix(3)


def l3_of(code: str) -> str:
    """String shortcut for ``to_l3`` on already validated codes."""
    return code[:4]


# ---------------------------------------------------------------------------
# ICD codes


class IcdVersion(str, enum.Enum):
    ICD9CM = "ICD9CM"
    ICD10CM = "ICD10CM"


class CodeKind(str, enum.Enum):
    DIAGNOSIS = "diagnosis"
    PROCEDURE = "procedure"


@dataclass(frozen=True)
class IcdCode:
    text: str
    version: IcdVersion = IcdVersion.ICD10CM
    kind: CodeKind = CodeKind.DIAGNOSIS

    def __post_init__(self) -> None:
        if not self.text or not self.text.strip():
            raise MalformedCode("ICD code text must be non-empty")
        object.__setattr__(self, "version", IcdVersion(self.version))
        object.__setattr__(self, "kind", CodeKind(self.kind))

    @property
    def key(self) -> str:
        """Lookup key: dots stripped, uppercased."""
        return normalize_icd(self.text)

    @property
    def system(self) -> str:
        if self.kind is CodeKind.DIAGNOSIS:
            return self.version.value
        return self.version.value.replace("CM", "PCS")

    def __str__(self) -> str:
        return self.text


def normalize_icd(text: str) -> str:
    return text.replace(".", "").strip().upper()


def icd_category(code: IcdCode) -> str:
    """Pre-decimal category of a diagnosis code (the contraindication key space)."""
    key = code.key
    if code.version is IcdVersion.ICD9CM and key.startswith("E"):
        return key[:4]
    return key[:3]


# ---------------------------------------------------------------------------
# Taxonomy


@dataclass(frozen=True)
class Node:
    code: str
    parent: str | None
    level: int
    description: str


@dataclass
class Taxonomy:
    nodes: dict[str, Node] = field(default_factory=dict)
    name: str = ""

    def __post_init__(self) -> None:
        self._children: dict[str, list[str]] = {}
        for node in self.nodes.values():
            if node.parent is not None:
                self._children.setdefault(node.parent, []).append(node.code)

    @classmethod
    def from_rows(cls, rows: Iterable[tuple[str, str | None, int, str]], name: str = "") -> Taxonomy:
        nodes: dict[str, Node] = {}
        for code, parent, level, desc in rows:
            if code in nodes:
                raise TaxonomyError(f"duplicate taxonomy code {code!r}")
            nodes[code] = Node(code, parent or None, int(level), desc)
        tax = cls(nodes, name=name)
        tax.validate()
        return tax

    def validate(self) -> None:
        for node in self.nodes.values():
            if node.parent is None:
                continue
            parent = self.nodes.get(node.parent)
            if parent is None:
                raise TaxonomyError(f"{node.code}: parent {node.parent!r} not in taxonomy")
            if parent.level != node.level - 1:
                raise TaxonomyError(
                    f"{node.code} (level {node.level}) has parent {parent.code} at level {parent.level}"
                )

    @property
    def level_counts(self) -> dict[int, int]:
        return dict(sorted(Counter(n.level for n in self.nodes.values()).items()))

    def __contains__(self, code: str) -> bool:
        return code in self.nodes

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self) -> Iterator[Node]:
        return iter(self.nodes.values())

    def get(self, code: str) -> Node | None:
        return self.nodes.get(code)

    def children(self, code: str) -> list[str]:
        return list(self._children.get(code, ()))

    def ancestors(self, code: str) -> list[str]:
        """Path from ``code`` up to its root, inclusive."""
        path = []
        cur: str | None = code
        while cur is not None:
            node = self.nodes[cur]
            path.append(cur)
            cur = node.parent
        return path

    def root(self, code: str) -> str:
        return self.ancestors(code)[-1]

    def description(self, code: str) -> str | None:
        node = self.nodes.get(code)
        return node.description if node else None

    def lookup(self, key: str, root_prefixes: bool = True) -> str | None:
        """Longest taxonomy prefix of ``key`` (itself included).

        With ``root_prefixes=False`` a root only matches the whole key, so chapter
        labels such as ``"I"`` do not swallow codes that merely start with them.
        """
        for end in range(len(key), 0, -1):
            node = self.nodes.get(key[:end])
            if node is None:
                continue
            if root_prefixes or node.parent is not None or end == len(key):
                return node.code
        return None


TAXONOMY_HEADER = ["code", "parent", "level", "description"]


def load_taxonomy(path: str | Path, name: str | None = None) -> Taxonomy:
    path = Path(path)
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh, delimiter="\t")
        header = next(reader, None)
        if header != TAXONOMY_HEADER:
            raise TaxonomyError(f"{path}: expected header {TAXONOMY_HEADER}, got {header}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise TaxonomyError(f"{path}:{lineno}: expected 4 columns, got {len(row)}")
            code, parent, level, desc = row
            rows.append((code, parent, int(level), desc))
    return Taxonomy.from_rows(rows, name=name or path.stem)


def save_taxonomy(tax: Taxonomy, path: str | Path) -> None:
    with Path(path).open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, delimiter="\t", lineterminator="\n")
        writer.writerow(TAXONOMY_HEADER)
        for node in sorted(tax.nodes.values(), key=lambda n: (n.level, n.code)):
            writer.writerow([node.code, node.parent or "", node.level, node.description])


def atc_taxonomy(codes: Mapping[str, str]) -> Taxonomy:
    """Build an ATC taxonomy from ``code -> description``; parents are implied by prefixes.

    Every parent prefix must itself be present in ``codes``.
    """
    rows = []
    for text, desc in codes.items():
        code = parse_atc(text)
        parent = code.prefix(code.level - 1).text if code.level > 1 else None
        rows.append((code.text, parent, code.level, desc))
    return Taxonomy.from_rows(rows, name="atc")


# ---------------------------------------------------------------------------
# ICD chapters

# Letter-range table for ICD-10-CM chapters.
ICD10_CHAPTERS: list[tuple[str, str, str, str]] = [
    ("A00", "B99", "I", "Certain infectious and parasitic diseases"),
    ("C00", "D49", "II", "Neoplasms"),
    ("D50", "D89", "III", "Diseases of the blood and blood-forming organs"),
    ("E00", "E89", "IV", "Endocrine, nutritional and metabolic diseases"),
    ("F01", "F99", "V", "Mental, behavioral and neurodevelopmental disorders"),
    ("G00", "G99", "VI", "Diseases of the nervous system"),
    ("H00", "H59", "VII", "Diseases of the eye and adnexa"),
    ("H60", "H95", "VIII", "Diseases of the ear and mastoid process"),
    ("I00", "I99", "IX", "Diseases of the circulatory system"),
    ("J00", "J99", "X", "Diseases of the respiratory system"),
    ("K00", "K95", "XI", "Diseases of the digestive system"),
    ("L00", "L99", "XII", "Diseases of the skin and subcutaneous tissue"),
    ("M00", "M99", "XIII", "Diseases of the musculoskeletal system and connective tissue"),
    ("N00", "N99", "XIV", "Diseases of the genitourinary system"),
    ("O00", "O9A", "XV", "Pregnancy, childbirth and the puerperium"),
    ("P00", "P96", "XVI", "Certain conditions originating in the perinatal period"),
    ("Q00", "Q99", "XVII", "Congenital malformations and chromosomal abnormalities"),
    ("R00", "R99", "XVIII", "Symptoms, signs and abnormal findings"),
    ("S00", "T88", "XIX", "Injury, poisoning and other consequences of external causes"),
    ("V00", "Y99", "XX", "External causes of morbidity"),
    ("Z00", "Z99", "XXI", "Factors influencing health status"),
    ("U00", "U85", "XXII", "Codes for special purposes"),
]

# ICD-9-CM category ranges mapped onto the ICD-10 chapter numbering so one panel
# scope definition covers both revisions.
ICD9_CHAPTERS: list[tuple[str, str, str, str]] = [
    ("001", "139", "I", "Infectious and parasitic diseases"),
    ("140", "239", "II", "Neoplasms"),
    ("240", "279", "IV", "Endocrine, nutritional and metabolic diseases, and immunity disorders"),
    ("280", "289", "III", "Diseases of the blood and blood-forming organs"),
    ("290", "319", "V", "Mental disorders"),
    ("320", "359", "VI", "Diseases of the nervous system"),
    ("360", "379", "VII", "Diseases of the eye and adnexa"),
    ("380", "389", "VIII", "Diseases of the ear and mastoid process"),
    ("390", "459", "IX", "Diseases of the circulatory system"),
    ("460", "519", "X", "Diseases of the respiratory system"),
    ("520", "579", "XI", "Diseases of the digestive system"),
    ("580", "629", "XIV", "Diseases of the genitourinary system"),
    ("630", "679", "XV", "Complications of pregnancy, childbirth, and the puerperium"),
    ("680", "709", "XII", "Diseases of the skin and subcutaneous tissue"),
    ("710", "739", "XIII", "Diseases of the musculoskeletal system and connective tissue"),
    ("740", "759", "XVII", "Congenital anomalies"),
    ("760", "779", "XVI", "Certain conditions originating in the perinatal period"),
    ("780", "799", "XVIII", "Symptoms, signs, and ill-defined conditions"),
    ("800", "999", "XIX", "Injury and poisoning"),
    ("V01", "V91", "XXI", "Supplementary classification of factors influencing health status"),
    ("E000", "E999", "XX", "Supplementary classification of external causes"),
]

_ROMAN_ORDER = [
    "I", "II", "III", "IV", "V", "VI", "VII", "VIII", "IX", "X", "XI",
    "XII", "XIII", "XIV", "XV", "XVI", "XVII", "XVIII", "XIX", "XX", "XXI", "XXII",
]


def chapter_sort_key(chapter: str) -> int:
    return _ROMAN_ORDER.index(chapter) if chapter in _ROMAN_ORDER else len(_ROMAN_ORDER)


def _range_chapter(category: str, table: list[tuple[str, str, str, str]]) -> str | None:
    for lo, hi, chapter, _ in table:
        if len(lo) == len(category) and lo <= category <= hi:
            return chapter
    return None


def _icd10_categories() -> Iterator[str]:
    digits = "0123456789"
    third = digits + "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    for letter in "ABCDEFGHIJKLMNOPQRSTUVWXYZ":
        for d in digits:
            for t in third:
                yield letter + d + t


def _icd9_categories() -> Iterator[str]:
    for i in range(1, 1000):
        yield f"{i:03d}"
    for i in range(1, 92):
        yield f"V{i:02d}"
    for i in range(0, 1000):
        yield f"E{i:03d}"


def chapter_taxonomy(
    version: IcdVersion | str,
    descriptions: Mapping[str, str] | None = None,
) -> Taxonomy:
    """Two/three-level diagnosis taxonomy: chapter -> category -> (described) full codes.

    ``descriptions`` maps dotless full codes to text; categories covering them are
    created on demand, other categories are included undescribed.
    """
    version = IcdVersion(version)
    table = ICD10_CHAPTERS if version is IcdVersion.ICD10CM else ICD9_CHAPTERS
    cats = _icd10_categories() if version is IcdVersion.ICD10CM else _icd9_categories()
    rows: list[tuple[str, str | None, int, str]] = []
    for _, _, chapter, desc in table:
        if not any(r[0] == chapter for r in rows):
            rows.append((chapter, None, 1, desc))
    known: set[str] = set()
    descriptions = {normalize_icd(k): v for k, v in (descriptions or {}).items()}
    for cat in cats:
        chapter = _range_chapter(cat, table)
        if chapter is None:
            continue
        rows.append((cat, chapter, 2, descriptions.get(cat, "")))
        known.add(cat)
    for code, desc in sorted(descriptions.items()):
        cat = icd_category(IcdCode(code, version))
        if code == cat or cat not in known:
            continue
        rows.append((code, cat, 3, desc))
    return Taxonomy.from_rows(rows, name=version.value)


def icd_chapter(code: IcdCode, taxonomy: Taxonomy | Mapping[str, Taxonomy]) -> str:
    """Chapter (root) ancestor of a diagnosis code; prefixes are tried when the full code is absent."""
    if not isinstance(taxonomy, Taxonomy):
        tax = taxonomy.get(code.system)
        if tax is None:
            raise UnknownCode(f"no taxonomy loaded for {code.system}")
        taxonomy = tax
    hit = taxonomy.lookup(code.key, root_prefixes=False)
    if hit is None:
        raise UnknownCode(f"{code.text} ({code.system}) not found in taxonomy {taxonomy.name!r}")
    return taxonomy.root(hit)


# ---------------------------------------------------------------------------
# Vocabulary


class MedVocab:
    """Ordered closed set of ATC codes of one level (L4 by default) with a dense integer index."""

    def __init__(self, codes: Iterable[str | AtcCode], level: int = 4):
        seen: dict[str, int] = {}
        for c in codes:
            code = c if isinstance(c, AtcCode) else parse_atc(c)
            if code.level != level:
                raise MalformedCode(f"vocabulary members must be L{level}, got {code.text}")
            if code.text not in seen:
                seen[code.text] = len(seen)
        self.level = level
        self._index = seen
        self.codes: tuple[str, ...] = tuple(seen)

    def __len__(self) -> int:
        return len(self.codes)

    def __contains__(self, code: object) -> bool:
        return str(code) in self._index

    def __iter__(self) -> Iterator[str]:
        return iter(self.codes)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, MedVocab) and self.codes == other.codes

    def __hash__(self) -> int:
        return hash(self.codes)

    def __repr__(self) -> str:
        return f"MedVocab({len(self)} L{self.level} codes)"

    def index(self, code: str | AtcCode) -> int:
        return self._index[str(code)]

    def get(self, code: str) -> int | None:
        return self._index.get(code)


def load_vocab(path: str | Path) -> MedVocab:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return MedVocab(line.strip() for line in lines if line.strip() and not line.startswith("#"))


def save_vocab(vocab: MedVocab, path: str | Path) -> None:
    Path(path).write_text("".join(c + "\n" for c in vocab.codes), encoding="utf-8")


# ---------------------------------------------------------------------------
# Bundle used by serialization and routing


_TAX_FILES = {
    "ATC": "atc.tsv",
    "ICD10CM": "icd10cm.tsv",
    "ICD9CM": "icd9cm.tsv",
    "ICD10PCS": "icd10pcs.tsv",
    "ICD9PCS": "icd9pcs.tsv",
}


@dataclass
class Ontology:
    """All taxonomies needed for one cohort, keyed by coding system."""

    atc: Taxonomy
    icd: dict[str, Taxonomy] = field(default_factory=dict)

    @classmethod
    def load(cls, directory: str | Path) -> Ontology:
        directory = Path(directory)
        atc_path = directory / _TAX_FILES["ATC"]
        atc = load_taxonomy(atc_path, "atc") if atc_path.exists() else Taxonomy(name="atc")
        icd = {}
        for system, fname in _TAX_FILES.items():
            if system != "ATC" and (directory / fname).exists():
                icd[system] = load_taxonomy(directory / fname, system)
        return cls(atc, icd)

    def describe_icd(self, code: IcdCode) -> str:
        tax = self.icd.get(code.system)
        desc = tax.description(code.key) if tax else None
        return desc or code.text

    def describe_atc(self, code: str) -> str:
        return self.atc.description(code) or code

    def chapter(self, code: IcdCode) -> str | None:
        try:
            return icd_chapter(code, self.icd)
        except UnknownCode:
            return None
