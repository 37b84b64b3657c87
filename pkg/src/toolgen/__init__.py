"""Tool virtualization, trie-constrained decoding and agent evaluation at desk scale."""

from .agent import AgentConfig, hallucination_rate, retry_guard, run_session
from .decoder import CountScorer, DecodeConfig, constrained_beam_search, nll, sample_free, train_count_scorer
from .indexer import IndexScheme, Scheme, ToolIndex, build_index, decode_tool, make_index, token_length_stats
from .registry import ApiDocument, ApiParameter, ToolId, ToolRegistry, doc_text, load_registry
from .retrieval import bm25_retrieve, evaluate, ndcg_at, retrieve
from .tokenizer import EmbeddingTable, Vocabulary, init_embedding
from .trie import DisjunctiveTrie, build_trie

__version__ = "0.1.0"

__all__ = [
    "AgentConfig", "ApiDocument", "ApiParameter", "CountScorer", "DecodeConfig", "DisjunctiveTrie",
    "EmbeddingTable", "IndexScheme", "Scheme", "ToolId", "ToolIndex", "ToolRegistry", "Vocabulary",
    "bm25_retrieve", "build_index", "build_trie", "constrained_beam_search", "decode_tool", "doc_text",
    "evaluate", "hallucination_rate", "init_embedding", "load_registry", "make_index", "ndcg_at", "nll",
    "retrieve", "retry_guard", "run_session", "sample_free", "token_length_stats", "train_count_scorer",
]
