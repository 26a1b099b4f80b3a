"""Nepali GPT-2 toolkit: corpus cleaning, BPE tokenizer, token shards,
training, evaluation and sampling."""

from ._core import (
    NepgptError,
    Vocab,
    __version__,
    clean_text,
    is_permitted,
    list_shards,
    load_vocab,
    lr_at,
    param_count,
    perplexity,
    read_shard,
    run_cli,
    train_bpe,
    verify_shard,
    write_shards,
)

__all__ = [
    "NepgptError",
    "Vocab",
    "__version__",
    "clean_text",
    "is_permitted",
    "list_shards",
    "load_vocab",
    "lr_at",
    "param_count",
    "perplexity",
    "read_shard",
    "run_cli",
    "train_bpe",
    "verify_shard",
    "write_shards",
]
