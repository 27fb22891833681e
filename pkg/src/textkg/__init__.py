"""Two-stream knowledge-augmented transformer for video captioning."""

__version__ = "0.1.0"
