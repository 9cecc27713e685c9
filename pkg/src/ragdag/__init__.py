"""ragdag: gated, graph-decomposed retrieval-augmented answering.

A question first passes a self-knowledge gate; unknown territory is
split into a dependency graph of subtasks, each answered with two-stage
retrieval (approximate search, then reranking) before a final synthesis
step. Every model call goes through a pluggable gateway, so the whole
flow runs against scripted backends in tests.
"""

__version__ = "0.1.0"

__all__ = ["__version__"]
