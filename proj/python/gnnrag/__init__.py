"""GNN-RAG: graph neural retrieval for knowledge-graph question answering."""

from ._gnnrag import (
    ConfigError,
    DataError,
    Error,
    KnowledgeGraph,
    Pipeline,
    ServiceError,
    build_prompt,
    count_tokens,
    f1,
    h1,
    hit,
    load_kg,
    median,
    normalize_answer,
    parse_answers,
    select_candidates,
    theorem_campaign,
)

__all__ = [
    "ConfigError",
    "DataError",
    "Error",
    "KnowledgeGraph",
    "Pipeline",
    "ServiceError",
    "build_prompt",
    "count_tokens",
    "f1",
    "h1",
    "hit",
    "load_kg",
    "median",
    "normalize_answer",
    "parse_answers",
    "select_candidates",
    "theorem_campaign",
]
