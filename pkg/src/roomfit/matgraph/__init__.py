"""Differentiable procedural material graphs."""

from .graph import MaterialGraphDef, eval_graph, eval_uv, grad_graph, validate_graph
from .library import GraphLibrary, default_library, library_for_assets, load_graphs_json

__all__ = [
    "GraphLibrary",
    "MaterialGraphDef",
    "default_library",
    "eval_graph",
    "eval_uv",
    "grad_graph",
    "library_for_assets",
    "load_graphs_json",
    "validate_graph",
]
