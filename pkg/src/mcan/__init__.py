"""Multi-level conflict-aware network for multimodal sentiment regression."""

__version__ = "0.1.0"
