"""Hierarchical knowledge-graph retrieval with LLM-verified causal gates."""

from .config import PipelineConfig, load_config
from .errors import ConfigError, DataError, GateRAGError, ProviderError
from .graph import CausalGate, Chunk, EdgeKind, EntityNode, KnowledgeGraph, ModuleNode, RelationEdge
from .storage import load_graph, save_graph

__version__ = "0.1.0"

__all__ = [
    "CausalGate",
    "Chunk",
    "ConfigError",
    "DataError",
    "EdgeKind",
    "EntityNode",
    "GateRAGError",
    "KnowledgeGraph",
    "ModuleNode",
    "PipelineConfig",
    "ProviderError",
    "RelationEdge",
    "load_config",
    "load_graph",
    "save_graph",
]
