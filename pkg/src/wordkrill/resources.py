"""Bundled data: output schemas and the toy corpus."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

SCHEMA_NAMES = ("fit", "uncertainty", "truth", "recovery", "ingest_report", "manifest")


def load_schema(name: str) -> dict:
    """JSON schema for one of the CLI outputs (see ``SCHEMA_NAMES``)."""
    if name not in SCHEMA_NAMES:
        raise KeyError(f"unknown schema {name!r}; expected one of {SCHEMA_NAMES}")
    text = resources.files("wordkrill").joinpath("data", "schemas", f"{name}.schema.json").read_text("utf-8")
    return json.loads(text)


def toy_corpus_dir() -> Path:
    """Directory holding the 20 bundled toy manifestos."""
    return Path(str(resources.files("wordkrill").joinpath("data", "toy_corpus")))
