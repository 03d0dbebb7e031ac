"""Script-to-multi-shot video pipeline with an entity memory bank."""

__version__ = "0.1.0"
