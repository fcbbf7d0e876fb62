from .backends import BackendConfig, BackendKind, RemoteBackend, ScriptedBackend, build_backend, script_key
from .gateway import Gateway
from .parsing import ReplanDecision, Verdict
from .prompts import PROMPT_VERSION, Role, RoleRequest

__all__ = [
    "BackendConfig", "BackendKind", "Gateway", "PROMPT_VERSION", "RemoteBackend", "ReplanDecision",
    "Role", "RoleRequest", "ScriptedBackend", "Verdict", "build_backend", "script_key",
]
