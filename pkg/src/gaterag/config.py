"""Pipeline configuration: one JSON document, every default in one place.

Only credentials come from the environment (``GATERAG_API_KEY`` by default);
everything else is in the file so it can be embedded verbatim in outputs.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, is_dataclass
from pathlib import Path

from .errors import ConfigError
from .graph import EdgeKind
from .hierarchy import HierarchyConfig
from .providers import EndpointConfig
from .retrieval import DEFAULT_EDGE_WEIGHTS, ExpansionConfig, HybridScoreConfig

PROVIDER_MODES = ("mock", "replay", "live")
EMBEDDERS = ("hash", "http")
SELECTION_MODES = ("spurious", "standard")


@dataclass
class ProviderConfig:
    mode: str = "mock"
    script: str | None = None  # MockChat script (mock mode)
    transcript: str | None = None  # replay source, or recording target in mock/live mode
    embedder: str = "hash"
    embedding_dimension: int = 64
    max_inflight: int = 8
    endpoint: EndpointConfig = field(default_factory=EndpointConfig)


@dataclass
class ChunkingConfig:
    chunk_chars: int = 1200
    overlap_chars: int = 100


@dataclass
class DedupConfig:
    fuzzy_threshold: float = 0.85
    embed_threshold: float = 0.92


@dataclass
class GateConfig:
    tau: float = 0.5


@dataclass
class RetrievalConfig:
    alpha: float = 0.7
    gamma: float = 0.85
    edge_weights: dict[str, float] = field(default_factory=lambda: {k.value: v for k, v in DEFAULT_EDGE_WEIGHTS.items()})
    hop_limit: int = 4
    gain_floor: float = 0.05
    budget_chars: int | None = 12000
    entity_seeds: int = 3
    top_seeds: int = 3
    intermediate_seeds: int = 0
    mmr_lambda: float = 0.7

    def expansion(self) -> ExpansionConfig:
        try:
            weights = {EdgeKind(k): float(v) for k, v in self.edge_weights.items()}
            return ExpansionConfig(
                gamma=self.gamma,
                edge_weights=weights,
                hop_limit=self.hop_limit,
                gain_floor=self.gain_floor,
                budget_chars=self.budget_chars,
                entity_seeds=self.entity_seeds,
                top_seeds=self.top_seeds,
                intermediate_seeds=self.intermediate_seeds,
                mmr_lambda=self.mmr_lambda,
            )
        except ValueError as exc:
            raise ConfigError(f"retrieval: {exc}") from exc

    def scoring(self) -> HybridScoreConfig:
        try:
            return HybridScoreConfig(self.alpha)
        except ValueError as exc:
            raise ConfigError(f"retrieval: {exc}") from exc


@dataclass
class ReasoningConfig:
    mode: str = "spurious"
    selection_max_tokens: int = 1024
    answer_max_tokens: int = 512


@dataclass
class EvalConfig:
    bootstrap_resamples: int = 1000
    bootstrap_seed: int = 0
    gate_sample_seed: int = 0


@dataclass
class PipelineConfig:
    provider: ProviderConfig = field(default_factory=ProviderConfig)
    chunking: ChunkingConfig = field(default_factory=ChunkingConfig)
    dedup: DedupConfig = field(default_factory=DedupConfig)
    hierarchy: HierarchyConfig = field(default_factory=HierarchyConfig)
    gates: GateConfig = field(default_factory=GateConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    reasoning: ReasoningConfig = field(default_factory=ReasoningConfig)
    evaluation: EvalConfig = field(default_factory=EvalConfig)
    extraction_retry: bool = False

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> PipelineConfig:
        p = self.provider
        if p.mode not in PROVIDER_MODES:
            raise ConfigError(f"provider.mode must be one of {PROVIDER_MODES}, got {p.mode!r}")
        if p.embedder not in EMBEDDERS:
            raise ConfigError(f"provider.embedder must be one of {EMBEDDERS}, got {p.embedder!r}")
        if p.mode == "replay" and not p.transcript:
            raise ConfigError("replay mode needs provider.transcript")
        if p.embedding_dimension < 1 or p.max_inflight < 1:
            raise ConfigError("embedding_dimension and max_inflight must be positive")
        c = self.chunking
        if not c.chunk_chars > c.overlap_chars >= 0:
            raise ConfigError("chunking needs chunk_chars > overlap_chars >= 0")
        for name in ("fuzzy_threshold", "embed_threshold"):
            if not 0.0 < getattr(self.dedup, name) <= 1.0:
                raise ConfigError(f"dedup.{name} must lie in (0, 1]")
        if self.hierarchy.context_budget < 1 or self.hierarchy.max_levels < 1:
            raise ConfigError("hierarchy.context_budget and max_levels must be positive")
        if not 0.0 <= self.gates.tau <= 1.0:
            raise ConfigError("gates.tau must lie in [0, 1]")
        if self.reasoning.mode not in SELECTION_MODES:
            raise ConfigError(f"reasoning.mode must be one of {SELECTION_MODES}")
        if self.evaluation.bootstrap_resamples < 1:
            raise ConfigError("evaluation.bootstrap_resamples must be positive")
        self.retrieval.expansion()
        self.retrieval.scoring()
        return self


def _build(cls, data, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    defaults = cls()
    kwargs = {}
    for name, value in data.items():
        current = getattr(defaults, name)
        path = f"{where}.{name}" if where else name
        kwargs[name] = _build(type(current), value, path) if is_dataclass(current) else value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from exc


def config_from_dict(data: dict) -> PipelineConfig:
    return _build(PipelineConfig, data, "").validate()


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig().validate()
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)
