"""Rule-based stand-ins for each LLM stage, used by the mock backend when no fixture matches.

They read only the structured payload that operators attach to each call, so the
output is a pure function of the case. The rules mirror the prompt policies in
their simplest checkable form.
"""

from __future__ import annotations

import json
from typing import Any, Mapping

MAX_SPECIALIST_CODES = 8
MAX_SUPPORTIVE_CODES = 12


def _dump(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True)


def summarize(meta: Mapping[str, Any], system: str, user: str) -> str:
    p = meta.get("payload", {})
    diags = p.get("scope_diagnoses", [])
    problems = "; ".join(f"{desc} ({code})" for code, desc in diags) or "no in-scope diagnoses"
    prior = ", ".join(p.get("prior_meds", [])) or "none"
    n_hist = int(p.get("n_history", 0))
    return _dump(
        {
            "expertise": p.get("expert_name", p.get("expert_id", "")),
            "current_admission": problems,
            "medication_relevant_history": f"prior medications: {prior}",
            "expertise_focus": f"{len(diags)} diagnoses in scope",
            "risks_to_watch": "interactions with continued prior medications" if prior != "none" else "none documented",
            "visit_rationales": [{"visit_index": n_hist, "text": "most recent visit"}] if n_hist else [],
        }
    )


def generate(meta: Mapping[str, Any], system: str, user: str) -> str:
    """Specialists echo their indication candidates; the supportive expert adds prior medications."""
    p = meta.get("payload", {})
    candidates = list(p.get("candidates", []))
    drugs: list[dict[str, Any]] = []
    if p.get("always_on"):
        prior = list(p.get("prior_meds", []))
        codes = list(dict.fromkeys(prior + candidates))[:MAX_SUPPORTIVE_CODES]
        for c in codes:
            conf = 0.8 if c in prior else 0.6
            drugs.append({"code": c, "confidence": conf, "reason": "prior medication" if c in prior else "indicated"})
    else:
        for c in candidates[:MAX_SPECIALIST_CODES]:
            drugs.append({"code": c, "confidence": 0.7, "reason": "indicated for an in-scope diagnosis"})
    return _dump({"predicted_drugs": drugs, "assumptions": [], "alternatives": []})


def critique(meta: Mapping[str, Any], system: str, user: str) -> str:
    """Drop codes that one expert proposed and that were not taken before; keep everything else."""
    p = meta.get("payload", {})
    prior = set(p.get("prior_meds", []))
    support = p.get("support", {})
    removed = [c for c in p.get("union", []) if support.get(c, 0) < 2 and c not in prior]
    retained = [c for c in p.get("union", []) if c not in removed]
    return _dump(
        {
            "retained": retained,
            "removed": [{"code": c, "reason": "single-expert proposal without prior use"} for c in removed],
            "rationale": "kept corroborated and continued medications",
            "missing_info": [],
        }
    )


def verify(meta: Mapping[str, Any], system: str, user: str) -> str:
    """Remove the higher-degree member of each new-new interacting pair and new contraindicated drugs."""
    p = meta.get("payload", {})
    prior = set(p.get("prior_meds", []))
    removed: dict[str, str] = {}
    for a, b, deg_a, deg_b in p.get("ddi_pairs", []):
        if a in removed or b in removed:
            continue
        new = [(deg, code) for code, deg in ((a, deg_a), (b, deg_b)) if code not in prior]
        if len(new) == 2:
            _, code = max(new)
            removed[code] = "interaction; higher interaction degree"
    for med, diag in p.get("contra_pairs", []):
        if med not in prior and med not in removed:
            removed[med] = f"contraindicated with {diag}"
    kept = [c for c in p.get("candidates", []) if c not in removed]
    return _dump(
        {
            "kept_drugs": kept,
            "removed_drugs": [{"code": c, "reason": r, "replacement": None} for c, r in sorted(removed.items())],
        }
    )


def direct(meta: Mapping[str, Any], system: str, user: str) -> str:
    p = meta.get("payload", {})
    return _dump(
        {"reasoning": "continue prior medications", "predicted_drugs": [{"code": c} for c in p.get("prior_meds", [])]}
    )


DEFAULT_RESPONDERS = {
    "summarize": summarize,
    "generate": generate,
    "critique": critique,
    "verify": verify,
    "direct": direct,
}
