"""Pipeline: bundles, scene files, fitting orchestration, CLI and serve mode."""

from .bundle import Bundle, load_bundle, validate_bundle
from .fit import FitConfig, FitSession, write_outputs
from .scenefile import load_scene, save_scene

__all__ = ["Bundle", "FitConfig", "FitSession", "load_bundle", "load_scene",
           "save_scene", "validate_bundle", "write_outputs"]
