"""Embedding sidecar: face, grounded-prop, and full-frame descriptors served
over a newline-delimited JSON protocol."""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def fixture_path(name: str) -> Path:
    """Absolute path of a bundled fixture file."""
    return Path(str(resources.files("embed_sidecar").joinpath(f"fixtures/{name}")))
