"""Effective run configuration: backends per role, retriever, loop constants.

Config files are YAML (JSON also parses)::

    profiles:
      fixture: {kind: scripted, script_path: episodes.yaml}
      gpt: {kind: remote, endpoint: https://host/v1/chat/completions,
            model: gpt-4o-mini, api_key_env: OPENAI_API_KEY}
    backends:
      default: fixture          # decompose, extract_fact, replan, synthesize
      replan: gpt               # per-role override, name or inline mapping
      judge: fixture            # judge is only enabled when listed here
    retriever: {kind: lexical, corpus: corpus.jsonl}
    engine: {max_iterations: 5, top_k: 5, fork_cap: 4, refine_cap: 2}

Relative paths resolve against the config file's directory.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Iterable, Mapping

import yaml

from .errors import ConfigError
from .llm.backends import Backend, BackendConfig, build_backend
from .llm.gateway import Gateway
from .llm.prompts import PROMPT_VERSION, Role
from .plan import DEFAULT_FORK_CAP, DEFAULT_REFINE_CAP
from .retrieval import DEFAULT_TOP_K, CorpusIndex, LexicalRetriever, RemoteRetriever, Retriever, ingest_corpus

DEFAULT_MAX_ITERATIONS = 5
CORE_ROLES = (Role.DECOMPOSE, Role.EXTRACT_FACT, Role.REPLAN, Role.SYNTHESIZE)


@dataclass(frozen=True)
class EngineSettings:
    max_iterations: int = DEFAULT_MAX_ITERATIONS
    top_k: int = DEFAULT_TOP_K
    fork_cap: int = DEFAULT_FORK_CAP
    refine_cap: int = DEFAULT_REFINE_CAP
    action_workers: int = 1

    def __post_init__(self) -> None:
        if self.max_iterations < 1 or self.top_k < 1:
            raise ConfigError("max_iterations and top_k must be >= 1")
        if self.fork_cap < 2 or self.refine_cap < 0 or self.action_workers < 1:
            raise ConfigError("fork_cap >= 2, refine_cap >= 0, action_workers >= 1 required")


@dataclass(frozen=True)
class RetrieverSettings:
    kind: str = "lexical"
    corpus: str | None = None
    index: str | None = None
    endpoint: str | None = None
    retries: int = 2
    timeout: float = 30.0

    def __post_init__(self) -> None:
        if self.kind not in ("lexical", "remote"):
            raise ConfigError(f"retriever kind must be 'lexical' or 'remote', got {self.kind!r}")
        if self.kind == "remote" and not self.endpoint:
            raise ConfigError("remote retriever needs an endpoint")


@dataclass(frozen=True)
class Config:
    backends: Mapping[str, BackendConfig] = field(default_factory=dict)
    retriever: RetrieverSettings = field(default_factory=RetrieverSettings)
    engine: EngineSettings = field(default_factory=EngineSettings)
    profiles: Mapping[str, BackendConfig] = field(default_factory=dict)
    base_dir: str = "."

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_dict(self) -> dict[str, Any]:
        """Snapshot echoed into traces; paths stay as written."""
        return {
            "backends": {role: cfg.to_dict() for role, cfg in sorted(self.backends.items())},
            "retriever": {k: v for k, v in asdict(self.retriever).items() if v is not None},
            "engine": asdict(self.engine),
            "prompt_version": PROMPT_VERSION,
            "iteration_semantics": "batch",
        }

    def with_overrides(self, *, max_iterations: int | None = None, top_k: int | None = None,
                       index: str | None = None,
                       backend_assignments: Iterable[str] = ()) -> "Config":
        engine = self.engine
        if max_iterations is not None:
            engine = replace(engine, max_iterations=max_iterations)
        if top_k is not None:
            engine = replace(engine, top_k=top_k)
        retriever = self.retriever
        if index is not None:
            retriever = replace(retriever, kind="lexical", index=str(Path(index).resolve()), corpus=None)
        backends = dict(self.backends)
        for item in backend_assignments:
            role, sep, name = item.partition("=")
            if not sep or not name:
                raise ConfigError(f"--backend expects <role>=<profile>, got {item!r}")
            if name not in self.profiles:
                raise ConfigError(f"unknown backend profile {name!r}")
            roles = [r.value for r in CORE_ROLES] if role == "default" else [_role_name(role)]
            for r in roles:
                backends[r] = self.profiles[name]
        return replace(self, engine=engine, retriever=retriever, backends=backends)


def _role_name(name: str) -> str:
    try:
        return Role(name).value
    except ValueError:
        raise ConfigError(f"unknown role {name!r}") from None


def config_from_dict(data: Mapping[str, Any], base_dir: str | Path = ".") -> Config:
    if not isinstance(data, Mapping):
        raise ConfigError("config must be a mapping")
    unknown = set(data) - {"profiles", "backends", "retriever", "engine"}
    if unknown:
        raise ConfigError(f"unknown config sections {sorted(unknown)}")
    profiles = {name: BackendConfig.from_dict(spec) for name, spec in (data.get("profiles") or {}).items()}

    def lookup(spec: Any) -> BackendConfig:
        if isinstance(spec, str):
            if spec not in profiles:
                raise ConfigError(f"unknown backend profile {spec!r}")
            return profiles[spec]
        return BackendConfig.from_dict(spec)

    backends: dict[str, BackendConfig] = {}
    raw = dict(data.get("backends") or {})
    if "default" in raw:
        default = lookup(raw.pop("default"))
        for role in CORE_ROLES:
            backends[role.value] = default
    for role, spec in raw.items():
        backends[_role_name(role)] = lookup(spec)
    try:
        retriever = RetrieverSettings(**(data.get("retriever") or {}))
        engine = EngineSettings(**(data.get("engine") or {}))
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    return Config(backends, retriever, engine, profiles, str(base_dir))


def load_config(path: str | Path) -> Config:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from None
    return config_from_dict(data, base_dir=path.parent)


def build_gateway(config: Config) -> Gateway:
    missing = [r.value for r in CORE_ROLES if r.value not in config.backends]
    if missing:
        raise ConfigError(f"no backend configured for roles {missing}")
    cache: dict[BackendConfig, Backend] = {}
    backends = {}
    for role, cfg in config.backends.items():
        if cfg not in cache:
            cache[cfg] = build_backend(cfg, config.base_dir)
        backends[Role(role)] = cache[cfg]
    return Gateway(backends)


def build_retriever(config: Config) -> Retriever:
    settings = config.retriever
    if settings.kind == "remote":
        return RemoteRetriever(settings.endpoint, settings.retries, settings.timeout)  # type: ignore[arg-type]
    if settings.index:
        return LexicalRetriever(CorpusIndex.load(config.resolve(settings.index)))
    if settings.corpus:
        return LexicalRetriever(ingest_corpus(config.resolve(settings.corpus)))
    raise ConfigError("lexical retriever needs 'index' or 'corpus'")
