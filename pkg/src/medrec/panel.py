"""Expert panel definition, offline panel derivation and the sparse router."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np
import yaml

from .ehr import PatientRecord
from .errors import ConfigError, DegenerateClustering, TooFewPatients, UnknownExpertId
from .ontology import Ontology

log = logging.getLogger(__name__)

# Specialty chapter groups of the default panel, in feature-vector order.
DEFAULT_GROUPS: dict[str, frozenset[str]] = {
    "ONC": frozenset({"II", "III"}),
    "ENDO": frozenset({"IV"}),
    "CVD": frozenset({"IX"}),
    "RESP": frozenset({"X"}),
    "GI": frozenset({"XI"}),
    "MSK": frozenset({"XII", "XIII", "XIX", "XX"}),
    "OB": frozenset({"XV", "XVI", "XVII"}),
}


@dataclass(frozen=True)
class Expert:
    id: str
    name: str
    chapter_scope: frozenset[str] = frozenset()
    playbook: str = ""
    checklist: str = ""
    always_on: bool = False
    keywords: tuple[str, ...] = ()


@dataclass(frozen=True)
class RoutingParams:
    theta: float = 0.1
    w_current: float = 2.0
    w_history: float = 1.0
    keyword_weight: float = 0.0


@dataclass(frozen=True)
class Panel:
    experts: tuple[Expert, ...]
    routing: RoutingParams = RoutingParams()
    general_agent: Expert | None = None
    dropped: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if not self.experts:
            raise ConfigError("panel has no experts")
        ids = [e.id for e in self.experts]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate expert ids in {ids}")
        if not self.dropped:
            self.validate()

    def validate(self) -> None:
        always = [e for e in self.experts if e.always_on]
        if len(always) != 1:
            raise ConfigError(f"panel needs exactly one always-on expert, found {len(always)}")
        if always[0].chapter_scope:
            raise ConfigError("the always-on expert must have an empty chapter scope")
        seen: dict[str, str] = {}
        for e in self.experts:
            for ch in e.chapter_scope:
                if ch in seen:
                    raise ConfigError(f"chapter {ch} claimed by both {seen[ch]} and {e.id}")
                seen[ch] = e.id

    @property
    def ids(self) -> tuple[str, ...]:
        return tuple(e.id for e in self.experts)

    @property
    def specialists(self) -> tuple[Expert, ...]:
        return tuple(e for e in self.experts if not e.always_on)

    @property
    def always_on(self) -> tuple[Expert, ...]:
        return tuple(e for e in self.experts if e.always_on)

    def get(self, expert_id: str) -> Expert:
        for e in self.experts:
            if e.id == expert_id:
                return e
        if self.general_agent is not None and self.general_agent.id == expert_id:
            return self.general_agent
        raise UnknownExpertId(expert_id)

    def without(self, *expert_ids: str) -> Panel:
        """Copy of the panel with experts removed (leave-one-expert-out)."""
        for eid in expert_ids:
            self.get(eid)
        kept = tuple(e for e in self.experts if e.id not in expert_ids)
        return replace(self, experts=kept, dropped=self.dropped + tuple(expert_ids))


# ---------------------------------------------------------------------------
# Config loading


def _asset_text(ref: str, base: Path | None) -> str:
    if not ref:
        return ""
    if ref.startswith("asset:"):
        return resources.files("medrec").joinpath("assets", ref[len("asset:"):]).read_text(encoding="utf-8")
    path = Path(ref)
    if not path.is_absolute() and base is not None:
        path = base / path
    return path.read_text(encoding="utf-8")


def _expert_from_config(cfg: Mapping[str, Any], base: Path | None) -> Expert:
    try:
        return Expert(
            id=str(cfg["id"]),
            name=str(cfg.get("name", cfg["id"])),
            chapter_scope=frozenset(str(c) for c in cfg.get("chapters", [])),
            playbook=_asset_text(cfg.get("playbook", ""), base),
            checklist=_asset_text(cfg.get("checklist", ""), base),
            always_on=bool(cfg.get("always_on", False)),
            keywords=tuple(str(k).lower() for k in cfg.get("keywords", [])),
        )
    except KeyError as exc:
        raise ConfigError(f"expert entry missing {exc}") from exc


def panel_from_config(cfg: Mapping[str, Any], base: Path | None = None) -> Panel:
    experts = tuple(_expert_from_config(e, base) for e in cfg.get("experts", []))
    r = cfg.get("routing", {}) or {}
    routing = RoutingParams(
        theta=float(r.get("theta", 0.1)),
        w_current=float(r.get("w_current", 2.0)),
        w_history=float(r.get("w_history", 1.0)),
        keyword_weight=float(r.get("keyword_weight", 0.0)),
    )
    general = cfg.get("general_agent")
    return Panel(experts, routing, _expert_from_config(general, base) if general else None)


def load_panel(path: str | Path | None = None) -> Panel:
    """Load a YAML panel config; with no path, the shipped default panel."""
    if path is None:
        text = resources.files("medrec").joinpath("assets", "panel.yaml").read_text(encoding="utf-8")
        return panel_from_config(yaml.safe_load(text))
    path = Path(path)
    return panel_from_config(yaml.safe_load(path.read_text(encoding="utf-8")), path.parent)


# ---------------------------------------------------------------------------
# Routing


@dataclass(frozen=True)
class RoutingResult:
    scores: dict[str, float]
    activated: tuple[str, ...]  # panel order

    def to_dict(self) -> dict[str, Any]:
        return {"scores": dict(self.scores), "activated": list(self.activated)}


def route(record: PatientRecord, panel: Panel, ontology: Ontology, theta: float | None = None) -> RoutingResult:
    """Score each specialist by the weighted share of diagnosis codes in its chapter scope.

    Current-visit codes weigh ``w_current``, historical ones ``w_history``. Every
    diagnosis enters the denominator, including unknown codes and chapters outside
    all scopes, so specialist scores sum to at most 1. Always-on experts score 1.0
    and are always activated.
    """
    params = panel.routing
    theta = params.theta if theta is None else theta
    mass = {e.id: 0.0 for e in panel.specialists}
    total = 0.0
    kw = params.keyword_weight
    for code, current in record.all_diagnoses():
        w = params.w_current if current else params.w_history
        total += w
        chapter = ontology.chapter(code)
        hits: set[str] = set()
        if chapter is not None:
            hits |= {e.id for e in panel.specialists if chapter in e.chapter_scope}
        if kw > 0:
            desc = ontology.describe_icd(code).lower()
            for e in panel.specialists:
                if e.id not in hits and any(k in desc for k in e.keywords):
                    mass[e.id] += kw * w
        for eid in hits:
            mass[eid] += w
    scores: dict[str, float] = {}
    spec_sum = sum(mass.values())
    norm = max(total, spec_sum)
    for e in panel.experts:
        if e.always_on:
            scores[e.id] = 1.0
        else:
            scores[e.id] = mass[e.id] / norm if norm > 0 else 0.0
    activated = tuple(e.id for e in panel.experts if e.always_on or scores[e.id] >= theta)
    return RoutingResult(scores, activated)


# ---------------------------------------------------------------------------
# Panel derivation


def featurize(
    record: PatientRecord,
    ontology: Ontology,
    groups: Mapping[str, frozenset[str]] = DEFAULT_GROUPS,
) -> np.ndarray:
    """L1-normalized histogram of all diagnosis codes over the specialty chapter groups."""
    vec = np.zeros(len(groups))
    index = {ch: k for k, chapters in enumerate(groups.values()) for ch in chapters}
    for code, _ in record.all_diagnoses():
        chapter = ontology.chapter(code)
        if chapter in index:
            vec[index[chapter]] += 1
    s = vec.sum()
    return vec / s if s > 0 else vec


@dataclass
class PanelDerivation:
    k_range: tuple[int, ...]
    silhouettes: dict[int, float]
    chosen_k: int
    centroids: np.ndarray  # chosen_k x n_features, cluster-by-domain loadings
    labels: np.ndarray
    feature_names: tuple[str, ...] = ()
    inertia: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "k_range": list(self.k_range),
            "silhouettes": {str(k): v for k, v in self.silhouettes.items()},
            "chosen_k": self.chosen_k,
            "feature_names": list(self.feature_names),
            "centroids": self.centroids.round(6).tolist(),
            "cluster_sizes": np.bincount(self.labels, minlength=self.chosen_k).tolist(),
        }


def derive_panel(
    vectors: Sequence[Sequence[float]] | np.ndarray,
    k_range: Iterable[int] = range(2, 11),
    seed: int = 42,
    feature_names: Sequence[str] = tuple(DEFAULT_GROUPS),
) -> PanelDerivation:
    """Sweep k-means over ``k_range`` and keep the k with the highest mean silhouette.

    Cluster-to-chapter naming is left to the caller; the centroid loadings are
    returned for that inspection.
    """
    from sklearn.cluster import KMeans
    from sklearn.metrics import silhouette_score

    X = np.asarray(vectors, dtype=float)
    ks = tuple(sorted(set(k_range)))
    if not ks or min(ks) < 2:
        raise ValueError("k_range must contain integers >= 2")
    if X.ndim != 2 or len(X) < max(ks) + 1:
        raise TooFewPatients(f"need at least {max(ks) + 1} vectors for k up to {max(ks)}, got {len(X)}")
    if len(np.unique(X, axis=0)) < 2:
        raise DegenerateClustering("all feature vectors are identical; silhouette is undefined")
    sil: dict[int, float] = {}
    inertia: dict[int, float] = {}
    fits: dict[int, tuple[np.ndarray, np.ndarray]] = {}
    n_distinct = len(np.unique(X, axis=0))
    for k in ks:
        if k > n_distinct:
            continue
        km = KMeans(n_clusters=k, init="k-means++", n_init=10, random_state=seed).fit(X)
        labels = km.labels_
        if len(np.unique(labels)) < 2:
            continue
        sil[k] = float(silhouette_score(X, labels))
        inertia[k] = float(km.inertia_)
        fits[k] = (km.cluster_centers_, labels)
    if not sil:
        raise DegenerateClustering("no k in range produced at least two clusters")
    best = max(sil, key=lambda k: (sil[k], -k))
    centers, labels = fits[best]
    return PanelDerivation(ks, sil, best, centers, labels, tuple(feature_names), inertia)
