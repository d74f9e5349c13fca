"""Python access to the qanbench core: corpus reading, metrics, prompts and the CLI."""

from ._core import (
    QanError,
    build_prompt,
    corpus_stats,
    map_score,
    parse_selection,
    porter_stem,
    preprocess,
    read_corpus,
    run_cli,
    sha256_hex,
)

__all__ = [
    "QanError",
    "build_prompt",
    "corpus_stats",
    "map_score",
    "parse_selection",
    "porter_stem",
    "preprocess",
    "read_corpus",
    "run_cli",
    "sha256_hex",
]
