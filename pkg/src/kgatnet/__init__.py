"""Batch text classification over pruned knowledge graphs with a multi-head
graph attention network, optionally enriched by random-walk node embeddings."""

__version__ = "0.1.0"
