"""Differentiable direct-lighting renderer with silhouette boundary gradients."""

from .backward import RenderAdjoint, render_backward
from .edges import SilhouetteEdge, mesh_silhouette_edges, project_points
from .geometry import SceneGeometry, build_geometry
from .renderer import RenderConfig, RenderOutput, render

__all__ = [
    "RenderAdjoint",
    "RenderConfig",
    "RenderOutput",
    "SceneGeometry",
    "SilhouetteEdge",
    "build_geometry",
    "mesh_silhouette_edges",
    "project_points",
    "render",
    "render_backward",
]
