"""Compressed memory for frozen language models."""

from ._cmt import (
    Config,
    ConfigError,
    Error,
    FormatError,
    InvalidArgument,
    MemoryBank,
    Model,
    ShapeError,
    Tokenizer,
    em_f1,
    gen_irrelevant,
    gen_synthetic,
    load_corpus,
    memory_aware_adjust,
    normalize_answer,
    rope_rotate,
    save_corpus,
)

__all__ = [
    "Config",
    "ConfigError",
    "Error",
    "FormatError",
    "InvalidArgument",
    "MemoryBank",
    "Model",
    "ShapeError",
    "Tokenizer",
    "em_f1",
    "gen_irrelevant",
    "gen_synthetic",
    "load_corpus",
    "memory_aware_adjust",
    "normalize_answer",
    "rope_rotate",
    "save_corpus",
]
