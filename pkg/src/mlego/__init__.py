"""Interactive topic-modeling analytics through model materialization and reuse."""

__version__ = "0.1.0"
