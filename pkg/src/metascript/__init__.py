"""Few-shot handwritten Chinese character generation and page composition."""

__version__ = "0.1.0"
