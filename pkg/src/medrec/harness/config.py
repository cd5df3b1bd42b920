"""YAML run configuration. Relative paths resolve against the config file's directory.

Example::

    cases: cases.jsonl
    kb: kb.zip
    ontology: ontology/          # omitted -> packaged demo ontology
    panel: null                  # omitted -> packaged default panel
    prompts: null                # directory overriding packaged prompt assets
    output: run/
    traces: traces.jsonl         # trace file name inside output; reports share its stem
    backend: {kind: mock, fixtures: fixtures.json}
    temperatures: {summarize: 0.0, generate: 0.2, critique: 0.0, verify: 0.0, direct: 0.0}
    max_tokens: 2048
    ablation: {experts: true, summarizer: true, medi: true, critique: true, safety: true, direct: false}
    drop_experts: []
    routing: {theta: 0.1, w_current: 2, w_history: 1, keyword_weight: 0}
    concurrency: 4
    expert_workers: 1
    seed: 42
    include_replacements: true
    fail_closed: false
    revision_rounds: 0
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from ..agents.backend import StageSettings
from ..errors import ConfigError
from ..panel import Panel, RoutingParams, load_panel
from ..safety import PipelineConfig

ABLATION_KEYS = ("experts", "summarizer", "medi", "critique", "safety", "direct")
_KNOWN_KEYS = {
    "cases", "kb", "ontology", "panel", "prompts", "output", "traces", "backend", "temperatures", "max_tokens",
    "ablation", "drop_experts", "routing", "concurrency", "expert_workers", "seed",
    "include_replacements", "fail_closed", "revision_rounds",
}


def demo_dir() -> Path:
    return Path(str(resources.files("medrec").joinpath("assets", "demo")))


@dataclass
class RunConfig:
    cases: Path
    kb: Path
    output: Path
    ontology: Path = field(default_factory=lambda: demo_dir() / "ontology")
    panel: Path | None = None
    prompts: Path | None = None
    traces: str = "traces.jsonl"
    backend: dict[str, Any] = field(default_factory=lambda: {"kind": "mock"})
    temperatures: dict[str, float] = field(default_factory=lambda: dict(StageSettings().temperatures))
    max_tokens: int = 2048
    ablation: dict[str, bool] = field(
        default_factory=lambda: {k: k != "direct" for k in ABLATION_KEYS}
    )
    drop_experts: tuple[str, ...] = ()
    routing: dict[str, float] = field(default_factory=dict)
    concurrency: int = 4
    expert_workers: int = 1
    seed: int = 42
    include_replacements: bool = True
    fail_closed: bool = False
    revision_rounds: int = 0
    base: Path = field(default_factory=Path.cwd)

    def pipeline(self) -> PipelineConfig:
        a = self.ablation
        return PipelineConfig(
            use_experts=a["experts"],
            use_summarizer=a["summarizer"],
            use_medi=a["medi"],
            use_critique=a["critique"],
            use_safety=a["safety"],
            direct=a["direct"],
            drop_experts=tuple(self.drop_experts),
            theta=None,
            include_replacements=self.include_replacements,
            fail_closed=self.fail_closed,
            revision_rounds=self.revision_rounds,
            expert_workers=self.expert_workers,
            settings=StageSettings(dict(self.temperatures), self.max_tokens),
        )

    def load_panel(self) -> Panel:
        panel = load_panel(self.panel)
        if self.routing:
            params = panel.routing
            unknown = set(self.routing) - set(params.__dataclass_fields__)
            if unknown:
                raise ConfigError(f"unknown routing keys {sorted(unknown)}")
            panel = replace(panel, routing=RoutingParams(**{**params.__dict__, **{k: float(v) for k, v in self.routing.items()}}))
        return panel

    def check_paths(self) -> None:
        for name in ("cases", "kb", "ontology"):
            if not getattr(self, name).exists():
                raise ConfigError(f"{name} path does not exist: {getattr(self, name)}")
        for name in ("panel", "prompts"):
            p = getattr(self, name)
            if p is not None and not p.exists():
                raise ConfigError(f"{name} path does not exist: {p}")

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {}
        for k in sorted(_KNOWN_KEYS):
            v = getattr(self, k)
            if isinstance(v, Path):
                v = str(v)
            elif isinstance(v, tuple):
                v = list(v)
            out[k] = v
        return out


def _resolve(base: Path, value: Any) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(str(value)).expanduser()
    return p if p.is_absolute() else base / p


def config_from_mapping(cfg: Mapping[str, Any], base: Path | None = None) -> RunConfig:
    base = base or Path.cwd()
    unknown = set(cfg) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys {sorted(unknown)}")
    for key in ("cases", "kb", "output"):
        if not cfg.get(key):
            raise ConfigError(f"config is missing {key!r}")
    ablation = {k: k != "direct" for k in ABLATION_KEYS}
    extra = set(cfg.get("ablation") or {}) - set(ABLATION_KEYS)
    if extra:
        raise ConfigError(f"unknown ablation toggles {sorted(extra)}")
    ablation.update({k: bool(v) for k, v in (cfg.get("ablation") or {}).items()})
    temps = dict(StageSettings().temperatures)
    temps.update({k: float(v) for k, v in (cfg.get("temperatures") or {}).items()})
    backend = dict(cfg.get("backend") or {"kind": "mock"})
    if backend.get("fixtures"):
        backend["fixtures"] = str(_resolve(base, backend["fixtures"]))
    try:
        run = RunConfig(
            cases=_resolve(base, cfg["cases"]),
            kb=_resolve(base, cfg["kb"]),
            output=_resolve(base, cfg["output"]),
            ontology=_resolve(base, cfg.get("ontology")) or demo_dir() / "ontology",
            panel=_resolve(base, cfg.get("panel")),
            prompts=_resolve(base, cfg.get("prompts")),
            traces=str(cfg.get("traces", "traces.jsonl")),
            backend=backend,
            temperatures=temps,
            max_tokens=int(cfg.get("max_tokens", 2048)),
            ablation=ablation,
            drop_experts=tuple(str(e) for e in cfg.get("drop_experts") or ()),
            routing=dict(cfg.get("routing") or {}),
            concurrency=int(cfg.get("concurrency", 4)),
            expert_workers=int(cfg.get("expert_workers", 1)),
            seed=int(cfg.get("seed", 42)),
            include_replacements=bool(cfg.get("include_replacements", True)),
            fail_closed=bool(cfg.get("fail_closed", False)),
            revision_rounds=int(cfg.get("revision_rounds", 0)),
            base=base,
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    if run.concurrency < 1:
        raise ConfigError("concurrency must be >= 1")
    if run.revision_rounds not in (0, 1):
        raise ConfigError("revision_rounds must be 0 or 1")
    return run


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return config_from_mapping(data, path.parent.resolve())
