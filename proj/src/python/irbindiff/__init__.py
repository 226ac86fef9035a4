"""Binary code similarity detection over decompiled LLVM IR."""

import json

from ._core import (
    Error,
    InputError,
    auc,
    cosine_similarity,
    default_config,
    mrr,
    normalize_config,
    normalize_instruction,
    recall_at_k,
    synth_corpus,
    tokenize,
)
from . import _core

__all__ = [
    "Error",
    "InputError",
    "auc",
    "cosine_similarity",
    "default_config",
    "mrr",
    "normalize_config",
    "normalize_instruction",
    "parse_module",
    "recall_at_k",
    "run_stage",
    "synth_corpus",
    "tokenize",
]


def parse_module(text):
    """Parse `.ll` text into function records (dicts with name, meta, blocks, edges)."""
    return json.loads(_core.parse_module_json(text))


def run_stage(stage, config, ablate="", seed=None):
    """Run one pipeline stage. `prepare` and `eval` return their summaries."""
    if isinstance(ablate, (list, tuple)):
        ablate = ",".join(ablate)
    return json.loads(_core.run_stage(stage, str(config), ablate, seed))
