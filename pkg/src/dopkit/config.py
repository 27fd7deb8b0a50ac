"""Run configuration: one TOML file, overridable from the command line."""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Any, Literal, Mapping

import tomli_w
from pydantic import BaseModel, ConfigDict, Field

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .agent import AgentOptions
from .ingest import CommandOcr, DocumentAdapters
from .llm.backends import Gateway, HttpBackend, LlmBackend, ScriptedBackend
from .llm.ledger import Pricing, UsageLedger
from .tools import ToolRegistry, register_default_tools


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class BackendSettings(_Section):
    kind: Literal["scripted", "http"] = "scripted"
    script: str | None = None
    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o"
    api_key_env: str = "OPENAI_API_KEY"
    timeout: float = 120.0
    temperature: float = 0.0
    max_tokens: int = 4096


class PricingSettings(_Section):
    input_per_1m: float = 2.50
    output_per_1m: float = 10.00


class AgentSettings(_Section):
    max_steps: int = Field(default=25, ge=1)
    loop_window: int = Field(default=2, ge=2)
    misuse_retries: int = Field(default=1, ge=0)
    excerpt_chars: int = Field(default=4000, ge=1)
    history_entries: int = Field(default=5, ge=0)


class IngestSettings(_Section):
    ocr_command: str | None = None
    cache_text: bool = False
    page_workers: int = Field(default=1, ge=1)


class RunConfig(_Section):
    backend: BackendSettings = Field(default_factory=BackendSettings)
    pricing: PricingSettings = Field(default_factory=PricingSettings)
    agent: AgentSettings = Field(default_factory=AgentSettings)
    ingest: IngestSettings = Field(default_factory=IngestSettings)
    seed: int = 0
    user_language: Literal["en", "de"] = "en"
    schema_file: str | None = None
    workers: int = Field(default=4, ge=1)

    @classmethod
    def load(cls, path: str | Path) -> RunConfig:
        with open(path, "rb") as fh:
            return cls.model_validate(tomllib.load(fh))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(tomli_w.dumps(self.model_dump(exclude_none=True)), encoding="utf-8")

    def with_overrides(self, overrides: Mapping[str, Any]) -> RunConfig:
        """Apply dotted overrides such as ``{"agent.max_steps": 10}``;
        ``None`` values are skipped so unset CLI flags keep file values."""
        data = self.model_dump()
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = data
            *parents, leaf = dotted.split(".")
            for part in parents:
                node = node[part]
            node[leaf] = value
        return type(self).model_validate(data)

    # -- factories --------------------------------------------------------------

    def agent_options(self) -> AgentOptions:
        return AgentOptions(**self.agent.model_dump())

    def price_table(self) -> Pricing:
        return Pricing(self.pricing.input_per_1m, self.pricing.output_per_1m)

    def build_backend(self) -> LlmBackend:
        if self.backend.kind == "scripted":
            if not self.backend.script:
                raise ValueError("backend.kind = 'scripted' needs backend.script")
            return ScriptedBackend.from_file(self.backend.script)
        return HttpBackend(
            self.backend.base_url,
            self.backend.model,
            api_key_env=self.backend.api_key_env,
            timeout=self.backend.timeout,
        )

    def build_gateway(self, ledger: UsageLedger | None = None) -> Gateway:
        return Gateway(
            self.build_backend(),
            ledger if ledger is not None else UsageLedger(pricing=self.price_table()),
            temperature=self.backend.temperature,
            max_tokens=self.backend.max_tokens,
        )

    def build_adapters(self) -> DocumentAdapters:
        ocr = CommandOcr(self.ingest.ocr_command) if self.ingest.ocr_command else None
        return DocumentAdapters(ocr_extractor=ocr, cache=self.ingest.cache_text, max_workers=self.ingest.page_workers)

    def build_registry(self, gateway: Gateway) -> ToolRegistry:
        return register_default_tools(gateway, self.build_adapters())

    @property
    def effective_workers(self) -> int:
        """Scripted replies are consumed in order, so scripted runs are
        kept single-threaded to stay deterministic."""
        return 1 if self.backend.kind == "scripted" else self.workers
