"""Chat-completion backends: a remote HTTP endpoint and a scripted replay fixture."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Protocol

import httpx
import yaml

from ..errors import BackendUnavailable, ConfigError
from ..eval.metrics import normalize
from .prompts import SCRIPT_KEY_SECTIONS, Role, RoleRequest

log = logging.getLogger(__name__)


class BackendKind(str, Enum):
    REMOTE = "remote"
    SCRIPTED = "scripted"


@dataclass(frozen=True)
class BackendConfig:
    kind: BackendKind
    endpoint: str | None = None
    model: str | None = None
    api_key_env: str | None = None
    script_path: str | None = None
    max_retries: int = 2
    timeout: float = 60.0
    http_retries: int = 2

    def __post_init__(self) -> None:
        if self.kind is BackendKind.REMOTE and not (self.endpoint and self.model):
            raise ConfigError("remote backend needs endpoint and model")
        if self.kind is BackendKind.SCRIPTED and not self.script_path:
            raise ConfigError("scripted backend needs script_path")
        if self.max_retries < 0 or self.http_retries < 0:
            raise ConfigError("retry counts must be >= 0")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "BackendConfig":
        if not isinstance(data, dict):
            raise ConfigError(f"backend config must be a mapping, got {data!r}")
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ConfigError(f"unknown backend config keys {sorted(unknown)}")
        try:
            kind = BackendKind(data.get("kind", ""))
        except ValueError:
            raise ConfigError(f"backend kind must be 'remote' or 'scripted', got {data.get('kind')!r}") from None
        return cls(**{**data, "kind": kind})

    def to_dict(self) -> dict[str, Any]:
        out = asdict(self)
        out["kind"] = self.kind.value
        return {k: v for k, v in out.items() if v is not None}


class Backend(Protocol):
    max_retries: int

    def complete(self, request: RoleRequest, messages: list[dict[str, str]]) -> str: ...


class RemoteBackend:
    """OpenAI-style chat completion over HTTP."""

    def __init__(self, config: BackendConfig, client: httpx.Client | None = None,
                 backoff: float = 1.0):
        self.config = config
        self.max_retries = config.max_retries
        self.client = client
        self.backoff = backoff

    def _headers(self) -> dict[str, str]:
        headers = {"Content-Type": "application/json"}
        env = self.config.api_key_env
        if env:
            key = os.environ.get(env)
            if not key:
                raise BackendUnavailable(f"environment variable {env} is not set")
            headers["Authorization"] = f"Bearer {key}"
        return headers

    def complete(self, request: RoleRequest, messages: list[dict[str, str]]) -> str:
        body = {
            "model": self.config.model,
            "messages": messages,
            "temperature": request.temperature,
            "max_tokens": request.budget,
        }
        headers = self._headers()
        client = self.client or httpx.Client(timeout=self.config.timeout)
        last, retry_after = "", None
        try:
            for attempt in range(self.config.http_retries + 1):
                if attempt:
                    time.sleep(retry_after if retry_after is not None else self.backoff * attempt)
                retry_after = None
                try:
                    resp = client.post(self.config.endpoint, json=body, headers=headers)
                except httpx.HTTPError as exc:
                    last = f"{type(exc).__name__}: {exc}"
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last = f"HTTP {resp.status_code}"
                    retry_after = _retry_after(resp)
                    continue
                if resp.status_code >= 400:
                    raise BackendUnavailable(f"HTTP {resp.status_code}: {resp.text[:200]}")
                try:
                    content = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError):
                    raise BackendUnavailable("response has no choices[0].message.content") from None
                return content if isinstance(content, str) else ""
        finally:
            if self.client is None:
                client.close()
        raise BackendUnavailable(
            f"{self.config.endpoint} unavailable after {self.config.http_retries + 1} attempts ({last})",
            retry_after=retry_after,
        )


def _retry_after(resp: httpx.Response) -> float | None:
    value = resp.headers.get("retry-after")
    try:
        return float(value) if value is not None else None
    except ValueError:
        return None


def script_key(role: Role | str, context: dict[str, str]) -> str:
    """Stable request key: role plus a hash of its key context sections."""
    role = Role(role)
    sections = {name: context.get(name, "") for name in SCRIPT_KEY_SECTIONS[role]}
    blob = json.dumps({"role": role.value, "sections": sections}, sort_keys=True, ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def _as_completion(response: Any) -> str:
    if isinstance(response, str):
        return response
    return "```json\n" + json.dumps(response, ensure_ascii=False, indent=2) + "\n```"


class ScriptedBackend:
    """Replays canned completions keyed by ``(role, hash of key sections)``.

    Fixture layout (YAML or JSON)::

        entries:
          - role: decompose
            match: {question: "..."}      # hashed with script_key on load
            responses: [<attempt 0>, <attempt 1>, ...]
          - role: extract_fact
            key: 0123abcd...              # or a precomputed key
            response: {...}
        fallbacks:
          extract_fact: {...}             # wildcard per role

    Attempt ``n`` gets ``responses[min(n, len - 1)]``, so the backend holds
    no state between calls. Mapping responses are wrapped in a fenced JSON
    block. A judge request with no entry falls back to comparing normalized
    token sequences.
    """

    def __init__(self, script: dict[str, Any], max_retries: int = 2, name: str = "<inline>"):
        self.name = name
        self.max_retries = max_retries
        self.table: dict[str, list[Any]] = {}
        self.fallbacks: dict[Role, list[Any]] = {}
        for n, entry in enumerate(script.get("entries") or []):
            try:
                role = Role(entry["role"])
            except (KeyError, ValueError):
                raise ConfigError(f"{name}: entries[{n}] has no valid role") from None
            if "key" in entry:
                key = str(entry["key"])
            elif "match" in entry:
                key = script_key(role, {k: str(v) for k, v in entry["match"].items()})
            else:
                raise ConfigError(f"{name}: entries[{n}] needs 'key' or 'match'")
            self.table[key] = _responses(entry, f"{name}: entries[{n}]")
        for role_name, response in (script.get("fallbacks") or {}).items():
            try:
                role = Role(role_name)
            except ValueError:
                raise ConfigError(f"{name}: unknown fallback role {role_name!r}") from None
            self.fallbacks[role] = response if isinstance(response, list) else [response]

    @classmethod
    def from_file(cls, path: str | Path, max_retries: int = 2) -> "ScriptedBackend":
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        except OSError as exc:
            raise ConfigError(f"cannot read script {path}: {exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse script {path}: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"script {path} must be a mapping")
        return cls(data, max_retries=max_retries, name=str(path))

    def complete(self, request: RoleRequest, messages: list[dict[str, str]]) -> str:
        key = script_key(request.role, request.context)
        choices = self.table.get(key) or self.fallbacks.get(request.role)
        if choices is None:
            if request.role is Role.JUDGE:
                same = normalize(request.section("gold")) == normalize(request.section("prediction"))
                return _as_completion({"correct": same})
            raise BackendUnavailable(
                f"scripted backend {self.name} has no response for role={request.role.value} key={key}"
            )
        return _as_completion(choices[min(request.attempt, len(choices) - 1)])


def _responses(entry: dict[str, Any], where: str) -> list[Any]:
    if "responses" in entry:
        responses = entry["responses"]
        if not isinstance(responses, list) or not responses:
            raise ConfigError(f"{where}: 'responses' must be a non-empty list")
        return responses
    if "response" in entry:
        return [entry["response"]]
    raise ConfigError(f"{where}: needs 'response' or 'responses'")


def build_backend(config: BackendConfig, base_dir: str | Path | None = None) -> Backend:
    if config.kind is BackendKind.SCRIPTED:
        path = Path(config.script_path)  # type: ignore[arg-type]
        if base_dir is not None and not path.is_absolute():
            path = Path(base_dir) / path
        return ScriptedBackend.from_file(path, max_retries=config.max_retries)
    return RemoteBackend(config)
