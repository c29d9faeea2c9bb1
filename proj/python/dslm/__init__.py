"""Python bindings for the dslm C++ core."""

from ._dslm import (
    DecodeParams,
    Model,
    Tokenizer,
    __version__,
    bleu,
    config_hash,
    extract_choice,
    minhash_signature,
    minhash_similarity,
    normalize_answer,
    qa_match,
    rouge_l,
    rouge_n,
    validate_config,
    word_shingles,
)

__all__ = [
    "DecodeParams",
    "Model",
    "Tokenizer",
    "__version__",
    "bleu",
    "config_hash",
    "extract_choice",
    "minhash_signature",
    "minhash_similarity",
    "normalize_answer",
    "qa_match",
    "rouge_l",
    "rouge_n",
    "validate_config",
    "word_shingles",
]
