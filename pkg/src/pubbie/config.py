"""Flat key-value configuration.

A config file is UTF-8 lines of ``key = value``; ``#`` starts a comment.
Every key has a default, so the file (and any key in it) is optional.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

from .errors import ConfigError

logger = logging.getLogger(__name__)

_MIN_UPLOAD_BYTES = 1024 * 1024


@dataclass
class Config:
    store_path: str = "pubbie.db"
    llm_endpoint: str = "http://127.0.0.1:8080/v1"
    llm_api_key_env: str = "PUBBIE_API_KEY"
    llm_model: str = "gpt-3.5-turbo"
    llm_embed_model: str = "text-embedding"
    llm_timeout_ms: int = 30_000
    llm_retries: int = 2
    llm_mock_script: str = ""  # when set, the scripted mock provider is used
    templates_dir: str = ""  # empty -> shipped defaults
    history_window: int = 6
    server_bind_addr: str = "127.0.0.1:8000"
    server_max_upload_bytes: int = 16 * 1024 * 1024
    server_static_dir: str = ""  # optional web UI bundle to serve at /
    classifier_model_path: str = ""
    retrieval_k: int = 5
    session_busy_policy: str = "wait"  # wait | reject


_KEY_MAP = {
    "store.path": "store_path",
    "llm.endpoint": "llm_endpoint",
    "llm.api_key_env": "llm_api_key_env",
    "llm.model": "llm_model",
    "llm.embed_model": "llm_embed_model",
    "llm.timeout_ms": "llm_timeout_ms",
    "llm.retries": "llm_retries",
    "llm.mock_script": "llm_mock_script",
    "templates.dir": "templates_dir",
    "history.window": "history_window",
    "server.bind_addr": "server_bind_addr",
    "server.max_upload_bytes": "server_max_upload_bytes",
    "server.static_dir": "server_static_dir",
    "classifier.model_path": "classifier_model_path",
    "retrieval.k": "retrieval_k",
    "session.busy_policy": "session_busy_policy",
}

_INT_FIELDS = {
    "llm_timeout_ms", "llm_retries", "history_window",
    "server_max_upload_bytes", "retrieval_k",
}


def load_config(path: Optional[str] = None) -> Config:
    config = Config()
    if path is not None:
        try:
            lines = Path(path).read_text(encoding="utf-8").splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        for line_num, raw in enumerate(lines, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{line_num}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            attr = _KEY_MAP.get(key)
            if attr is None:
                logger.warning("%s:%d: unknown config key %r ignored", path, line_num, key)
                continue
            if attr in _INT_FIELDS:
                try:
                    setattr(config, attr, int(value))
                except ValueError:
                    raise ConfigError(
                        f"{path}:{line_num}: {key} must be an integer, got {value!r}"
                    ) from None
            else:
                setattr(config, attr, value)
    validate_config(config)
    return config


def validate_config(config: Config) -> None:
    if config.server_max_upload_bytes < _MIN_UPLOAD_BYTES:
        raise ConfigError("server.max_upload_bytes must be at least 1 MiB")
    if config.history_window < 1:
        raise ConfigError("history.window must be >= 1")
    if config.retrieval_k < 1:
        raise ConfigError("retrieval.k must be >= 1")
    if config.session_busy_policy not in ("wait", "reject"):
        raise ConfigError("session.busy_policy must be wait or reject")
    if config.templates_dir and not Path(config.templates_dir).is_dir():
        raise ConfigError(f"templates.dir does not exist: {config.templates_dir}")
    if config.llm_mock_script and not Path(config.llm_mock_script).is_file():
        raise ConfigError(f"llm.mock_script does not exist: {config.llm_mock_script}")


def dump_config(config: Config) -> str:
    """Render a config back to file syntax (defaults included)."""
    reverse = {attr: key for key, attr in _KEY_MAP.items()}
    lines = []
    for f in fields(config):
        lines.append(f"{reverse[f.name]} = {getattr(config, f.name)}")
    return "\n".join(lines) + "\n"
