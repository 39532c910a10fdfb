"""Service configuration: YAML file -> typed config objects.

Everything has a workable default so a bare config with just a data_dir and
an admin token runs the service against the offline mock backends.
Credentials never live here; backends read API keys from the environment.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .embeddings import (
    DEFAULT_BATCH_SIZE,
    DEFAULT_INTER_BATCH_WAIT,
    DEFAULT_MOCK_DIMENSION,
)
from .metering import dollars_to_micro
from .retrieval import (
    DEFAULT_K,
    DEFAULT_MIN_SIMILARITY,
    DEFAULT_RRF_K,
    MODES,
)

ADMIN_TOKEN_ENV = "COURSERAG_ADMIN_TOKEN"

MOCK_ENDPOINT = "mock://"


@dataclass(frozen=True)
class EmbeddingConfig:
    backend: str = "mock"
    endpoint: str = ""
    model: str = ""
    dimension: int = DEFAULT_MOCK_DIMENSION
    batch_size: int = DEFAULT_BATCH_SIZE
    inter_batch_wait: float = DEFAULT_INTER_BATCH_WAIT
    price_per_1k_micro: int = 0
    cache: bool = True

    def __post_init__(self) -> None:
        if self.backend not in ("mock", "http"):
            raise ValueError(f"unknown embedding backend {self.backend!r}")
        if self.backend == "http" and not self.endpoint:
            raise ValueError("http embedding backend needs an endpoint")


@dataclass(frozen=True)
class RetrievalDefaults:
    mode: str = "hybrid"
    k: int = DEFAULT_K
    min_similarity: float = DEFAULT_MIN_SIMILARITY
    rrf_k: int = DEFAULT_RRF_K

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown retrieval mode {self.mode!r}")


@dataclass(frozen=True)
class ProfileConfig:
    profile_id: str
    display_name: str
    endpoint: str
    context_budget_tokens: int
    price_in_per_1k_micro: int = 0
    price_out_per_1k_micro: int = 0
    supports_streaming: bool = True
    model: str = ""

    @property
    def is_mock(self) -> bool:
        return self.endpoint.startswith("mock://")


@dataclass(frozen=True)
class ScrubConfig:
    id_patterns: tuple[tuple[str, str], ...] = ()

    @property
    def patterns(self) -> list[str]:
        return [pattern for _, pattern in self.id_patterns]


@dataclass(frozen=True)
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 8000


_DEFAULT_PROFILE = ProfileConfig(
    profile_id="mock-chat",
    display_name="Offline mock model",
    endpoint=MOCK_ENDPOINT,
    context_budget_tokens=8192,
    price_in_per_1k_micro=dollars_to_micro("0.005"),
    price_out_per_1k_micro=dollars_to_micro("0.015"),
)


@dataclass(frozen=True)
class AppConfig:
    data_dir: Path
    admin_token: str
    embedding: EmbeddingConfig = field(default_factory=EmbeddingConfig)
    retrieval: RetrievalDefaults = field(default_factory=RetrievalDefaults)
    profiles: tuple[ProfileConfig, ...] = (_DEFAULT_PROFILE,)
    default_profile_id: str = "mock-chat"
    scrub: ScrubConfig = field(default_factory=ScrubConfig)
    server: ServerConfig = field(default_factory=ServerConfig)

    def __post_init__(self) -> None:
        if not self.admin_token:
            raise ValueError(
                f"admin token required (config admin_token or ${ADMIN_TOKEN_ENV})"
            )
        ids = [p.profile_id for p in self.profiles]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate profile_id in models list")
        if self.default_profile_id not in ids:
            raise ValueError(
                f"default_profile_id {self.default_profile_id!r} not in models list"
            )


def _price(raw: Mapping[str, Any], key: str) -> int:
    return dollars_to_micro(raw.get(key, 0))


def _embedding_from(raw: Mapping[str, Any]) -> EmbeddingConfig:
    return EmbeddingConfig(
        backend=raw.get("backend", "mock"),
        endpoint=raw.get("endpoint", ""),
        model=raw.get("model", ""),
        dimension=int(raw.get("dimension", DEFAULT_MOCK_DIMENSION)),
        batch_size=int(raw.get("batch_size", DEFAULT_BATCH_SIZE)),
        inter_batch_wait=float(raw.get("inter_batch_wait", DEFAULT_INTER_BATCH_WAIT)),
        price_per_1k_micro=_price(raw, "price_per_1k"),
        cache=bool(raw.get("cache", True)),
    )


def _retrieval_from(raw: Mapping[str, Any]) -> RetrievalDefaults:
    return RetrievalDefaults(
        mode=raw.get("mode", "hybrid"),
        k=int(raw.get("k", DEFAULT_K)),
        min_similarity=float(raw.get("min_similarity", DEFAULT_MIN_SIMILARITY)),
        rrf_k=int(raw.get("rrf_k", DEFAULT_RRF_K)),
    )


def _profile_from(raw: Mapping[str, Any]) -> ProfileConfig:
    return ProfileConfig(
        profile_id=str(raw["profile_id"]),
        display_name=str(raw.get("display_name", raw["profile_id"])),
        endpoint=str(raw.get("endpoint", MOCK_ENDPOINT)),
        context_budget_tokens=int(raw.get("context_budget_tokens", 8192)),
        price_in_per_1k_micro=_price(raw, "price_in_per_1k"),
        price_out_per_1k_micro=_price(raw, "price_out_per_1k"),
        supports_streaming=bool(raw.get("supports_streaming", True)),
        model=str(raw.get("model", "")),
    )


def _scrub_from(raw: Mapping[str, Any]) -> ScrubConfig:
    patterns = []
    for entry in raw.get("id_patterns", []):
        if isinstance(entry, str):
            patterns.append(("id", entry))
        else:
            patterns.append((str(entry.get("name", "id")), str(entry["pattern"])))
    return ScrubConfig(id_patterns=tuple(patterns))


def config_from_dict(raw: Mapping[str, Any], base_dir: Path | None = None) -> AppConfig:
    data_dir = Path(raw.get("data_dir", "data"))
    if base_dir is not None and not data_dir.is_absolute():
        data_dir = base_dir / data_dir
    admin_token = os.environ.get(ADMIN_TOKEN_ENV) or str(raw.get("admin_token", ""))
    profiles_raw = raw.get("models") or []
    profiles = tuple(_profile_from(p) for p in profiles_raw) or (_DEFAULT_PROFILE,)
    default_profile = str(raw.get("default_model", profiles[0].profile_id))
    server_raw = raw.get("server", {})
    return AppConfig(
        data_dir=data_dir,
        admin_token=admin_token,
        embedding=_embedding_from(raw.get("embedding", {})),
        retrieval=_retrieval_from(raw.get("retrieval", {})),
        profiles=profiles,
        default_profile_id=default_profile,
        scrub=_scrub_from(raw.get("scrub", {})),
        server=ServerConfig(
            host=str(server_raw.get("host", "127.0.0.1")),
            port=int(server_raw.get("port", 8000)),
        ),
    )


def load_config(path: str | Path) -> AppConfig:
    path = Path(path)
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(raw, Mapping):
        raise ValueError(f"config root must be a mapping: {path}")
    return config_from_dict(raw, base_dir=path.parent)
