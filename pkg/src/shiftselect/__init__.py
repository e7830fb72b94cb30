"""Video-text retrieval with temporal token shift and learned token selection."""

__version__ = "0.1.0"
