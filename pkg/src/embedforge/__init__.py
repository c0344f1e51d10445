"""Entity embeddings from sparse interaction data."""
__version__ = "0.1.0"
