"""Pipeline configuration: one YAML file, secrets from the environment, flag overrides."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import yaml

from .ingest import DEFAULT_HOST_DELAY, DEFAULT_MAX_HOPS

PROVIDER_KINDS = ("mock", "anthropic")


class ConfigError(ValueError):
    pass


def bundled(name: str) -> Path:
    """Path of a file shipped in the package ``data`` directory."""
    return Path(str(resources.files("newsinsight") / "data" / name))


@dataclass(frozen=True)
class FeedSource:
    url: str | None = None
    path: Path | None = None
    params: Mapping[str, str] = field(default_factory=dict)


@dataclass(frozen=True)
class ProviderSettings:
    kind: str = "mock"
    model: str | None = None
    endpoint: str = "https://api.anthropic.com"
    api_key_env: str = "ANTHROPIC_API_KEY"
    requests_per_minute: float | None = None
    max_tokens: int = 2048


@dataclass(frozen=True)
class PipelineConfig:
    feeds: tuple[FeedSource, ...] = ()
    transport: str = "http"
    fixtures_dir: Path | None = None
    reference: Path = field(default_factory=lambda: bundled("reference.csv"))
    overrides: Path | None = field(default_factory=lambda: bundled("overrides.csv"))
    junk_words: Path | None = field(default_factory=lambda: bundled("junk_words.txt"))
    provider: ProviderSettings = field(default_factory=ProviderSettings)
    work_dir: Path = Path("work")
    store: Path = Path("work/insights.jsonl")
    max_hops: int = DEFAULT_MAX_HOPS
    host_delay: float = DEFAULT_HOST_DELAY
    fetch_workers: int = 4
    max_chars: int = 24_000
    audit_log: Path | None = None
    discard_log: Path | None = None
    misses_export: Path | None = None

    def check(self) -> PipelineConfig:
        """Raise :class:`ConfigError` naming the first referenced path that does not exist."""
        paths = [("reference", self.reference), ("overrides", self.overrides), ("junk_words", self.junk_words)]
        if self.transport == "fixtures":
            paths.append(("fixtures_dir", self.fixtures_dir))
        paths += [("feeds", f.path) for f in self.feeds if f.path is not None]
        for name, path in paths:
            if path is not None and not Path(path).exists():
                raise ConfigError(f"{name}: path does not exist: {path}")
        if self.transport == "fixtures" and self.fixtures_dir is None:
            raise ConfigError("transport 'fixtures' needs fixtures_dir")
        if self.provider.kind not in PROVIDER_KINDS:
            raise ConfigError(f"provider.kind must be one of {', '.join(PROVIDER_KINDS)}")
        if self.provider.kind == "mock" and self.provider.model:
            raise ConfigError("provider.model is set but provider.kind is 'mock'; choose one provider")
        if self.provider.kind != "mock" and not self.provider.model:
            raise ConfigError(f"provider.model is required for provider.kind '{self.provider.kind}'")
        return self


def _path(base: Path, value: Any) -> Path | None:
    if value in (None, ""):
        return None
    p = Path(str(value)).expanduser()
    return p if p.is_absolute() else base / p


def from_mapping(data: Mapping[str, Any], base: Path = Path(".")) -> PipelineConfig:
    known = set(PipelineConfig.__dataclass_fields__)
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    cfg = PipelineConfig()
    updates: dict[str, Any] = {}
    for key in ("reference", "overrides", "junk_words", "fixtures_dir", "work_dir", "store", "audit_log", "discard_log", "misses_export"):
        if key in data:
            updates[key] = _path(base, data[key])
    if "work_dir" in data and "store" not in data:
        updates["store"] = updates["work_dir"] / "insights.jsonl"
    for key in ("transport", "max_hops", "host_delay", "fetch_workers", "max_chars"):
        if key in data:
            updates[key] = data[key]
    if "feeds" in data:
        feeds = []
        for entry in data["feeds"] or ():
            if isinstance(entry, str):
                entry = {"url": entry} if "://" in entry else {"path": entry}
            if not isinstance(entry, Mapping) or ("url" in entry) == ("path" in entry):
                raise ConfigError(f"feed entry needs exactly one of url/path: {entry!r}")
            feeds.append(FeedSource(url=entry.get("url"), path=_path(base, entry.get("path")), params=dict(entry.get("params") or {})))
        updates["feeds"] = tuple(feeds)
    if "provider" in data:
        prov = data["provider"] or {}
        bad = sorted(set(prov) - set(ProviderSettings.__dataclass_fields__))
        if bad:
            raise ConfigError(f"unknown provider key(s): {', '.join(bad)}")
        updates["provider"] = ProviderSettings(**prov)
    if updates.get("transport", cfg.transport) not in ("http", "fixtures"):
        raise ConfigError("transport must be 'http' or 'fixtures'")
    return replace(cfg, **updates)


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file does not exist: {path}")
    data = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    if not isinstance(data, Mapping):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_mapping(data, base=path.parent)
