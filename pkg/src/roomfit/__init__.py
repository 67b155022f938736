"""roomfit: fit an editable 3D indoor scene to a photograph by gradient
descent through a differentiable renderer."""

__version__ = "0.1.0"
