"""Built-in procedural material graphs and the graph registry.

Twelve graphs cover common indoor surfaces; users can add more through a
graphs.json file in the assets directory without engine changes.
"""

from __future__ import annotations

import json
from pathlib import Path

import torch

from ..errors import GraphSchemaError
from .graph import MaterialGraphDef, eval_graph, eval_uv, grad_graph, validate_graph


def _ramp(nid: str, t_ref: str, stops):
    positions = [p for p, _c in stops]
    params = {}
    for i, (_p, col) in enumerate(stops):
        for ch, val in zip("rgb", col):
            params[f"c{i}_{ch}"] = [0.0, 1.0, float(val)]
    return {"id": nid, "kind": "color_ramp", "inputs": {"t": t_ref},
            "structural": {"positions": positions}, "params": params}


def _levels(nid: str, src: str, lo: float, hi: float, gamma: float = 1.0):
    return {"id": nid, "kind": "levels", "inputs": {"input": src},
            "params": {"out_lo": [0.0, 1.0, lo], "out_hi": [0.0, 1.0, hi],
                       "gamma": [0.2, 5.0, gamma]}}


def _nfh(nid: str, src: str, strength: float):
    return {"id": nid, "kind": "normal_from_height", "inputs": {"input": src},
            "params": {"strength": [0.0, 2.0, strength]}}


def _perlin(nid: str, freq: int, octaves: int, amp: float = 0.5, pers: float = 0.5):
    return {"id": nid, "kind": "perlin",
            "structural": {"frequency": freq, "octaves": octaves},
            "params": {"amplitude": [0.05, 1.0, amp], "persistence": [0.2, 0.8, pers]}}


def _stretch(nid: str, src: str, su: int, sv: int):
    return {"id": nid, "kind": "transform_uv", "inputs": {"input": src},
            "structural": {"scale_u": su, "scale_v": sv}}


_BUILTINS = [
    {
        "id": "wood_01",
        "nodes": [
            _perlin("grain", 2, 4, amp=0.5, pers=0.55),
            _stretch("stretch", "grain", 6, 1),
            _ramp("albedo", "stretch",
                  [(0.0, (0.34, 0.20, 0.11)), (0.5, (0.52, 0.33, 0.18)), (1.0, (0.70, 0.48, 0.28))]),
            _levels("rough", "stretch", 0.45, 0.75),
            _nfh("bump", "stretch", 0.3),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "brick_01",
        "nodes": [
            {"id": "pattern", "kind": "brick",
             "structural": {"rows": 4, "cols": 2},
             "params": {"mortar": [0.01, 0.2, 0.06], "variation": [0.0, 1.0, 0.35]}},
            _ramp("albedo", "pattern",
                  [(0.0, (0.62, 0.60, 0.57)), (0.55, (0.48, 0.19, 0.13)), (1.0, (0.66, 0.30, 0.20))]),
            _levels("rough", "pattern", 0.92, 0.6),
            _nfh("bump", "pattern", 0.6),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "checker_tile_01",
        "nodes": [
            {"id": "pattern", "kind": "checker", "structural": {"tiles": 4},
             "params": {"softness": [0.005, 0.25, 0.02]}},
            _ramp("albedo", "pattern",
                  [(0.0, (0.90, 0.88, 0.82)), (1.0, (0.16, 0.19, 0.23))]),
            _levels("rough", "pattern", 0.20, 0.32),
            _nfh("bump", "pattern", 0.15),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "plaster_01",
        "nodes": [
            _perlin("noise", 3, 4, amp=0.3),
            _ramp("albedo", "noise",
                  [(0.0, (0.80, 0.78, 0.72)), (1.0, (0.92, 0.90, 0.86))]),
            _levels("rough", "noise", 0.75, 0.95),
            _nfh("bump", "noise", 0.25),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "fabric_weave_01",
        "nodes": [
            {"id": "weave", "kind": "checker", "structural": {"tiles": 24},
             "params": {"softness": [0.005, 0.25, 0.12]}},
            _perlin("wear", 4, 3, amp=0.4),
            {"id": "mixed", "kind": "blend", "inputs": {"a": "weave", "b": "wear"},
             "params": {"factor": [0.0, 1.0, 0.35]}},
            _ramp("albedo", "mixed",
                  [(0.0, (0.22, 0.26, 0.38)), (1.0, (0.42, 0.47, 0.60))]),
            _levels("rough", "mixed", 0.80, 0.95),
            _nfh("bump", "mixed", 0.2),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "marble_01",
        "nodes": [
            _perlin("veins_raw", 2, 5, amp=0.6, pers=0.6),
            _levels("veins", "veins_raw", 0.0, 1.0, gamma=2.2),
            _ramp("albedo", "veins",
                  [(0.0, (0.92, 0.92, 0.90)), (0.7, (0.78, 0.78, 0.76)), (1.0, (0.42, 0.44, 0.46))]),
            _levels("rough", "veins", 0.12, 0.30),
            _nfh("bump", "veins", 0.1),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "concrete_01",
        "nodes": [
            _perlin("noise", 5, 5, amp=0.35),
            _ramp("albedo", "noise",
                  [(0.0, (0.48, 0.48, 0.47)), (1.0, (0.66, 0.66, 0.64))]),
            _levels("rough", "noise", 0.82, 0.95),
            _nfh("bump", "noise", 0.3),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "wood_floor_02",
        "nodes": [
            {"id": "planks", "kind": "brick", "structural": {"rows": 6, "cols": 1},
             "params": {"mortar": [0.01, 0.2, 0.02], "variation": [0.0, 1.0, 0.4]}},
            _perlin("grain", 4, 3, amp=0.3),
            _stretch("sgrain", "grain", 8, 1),
            {"id": "mixed", "kind": "blend", "inputs": {"a": "planks", "b": "sgrain"},
             "params": {"factor": [0.0, 1.0, 0.3]}},
            _ramp("albedo", "mixed",
                  [(0.0, (0.30, 0.18, 0.10)), (0.5, (0.48, 0.30, 0.17)), (1.0, (0.62, 0.42, 0.25))]),
            _levels("rough", "mixed", 0.40, 0.65),
            _nfh("bump", "planks", 0.35),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "tile_02",
        "nodes": [
            {"id": "pattern", "kind": "checker", "structural": {"tiles": 8},
             "params": {"softness": [0.005, 0.25, 0.015]}},
            _ramp("albedo", "pattern",
                  [(0.0, (0.85, 0.89, 0.92)), (1.0, (0.25, 0.42, 0.55))]),
            _levels("rough", "pattern", 0.08, 0.2),
            _nfh("bump", "pattern", 0.12),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "carpet_01",
        "nodes": [
            _perlin("pile", 8, 5, amp=0.4),
            _ramp("albedo", "pile",
                  [(0.0, (0.40, 0.16, 0.14)), (1.0, (0.58, 0.28, 0.24))]),
            _levels("rough", "pile", 0.90, 0.99),
            _nfh("bump", "pile", 0.2),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "brushed_01",
        "nodes": [
            _perlin("streaks_raw", 2, 3, amp=0.45),
            _stretch("streaks", "streaks_raw", 1, 12),
            _ramp("albedo", "streaks",
                  [(0.0, (0.52, 0.52, 0.54)), (1.0, (0.74, 0.74, 0.76))]),
            _levels("rough", "streaks", 0.22, 0.38),
            _nfh("bump", "streaks", 0.1),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough", "height": "bump"},
    },
    {
        "id": "paper_01",
        "nodes": [
            _perlin("fiber", 6, 2, amp=0.15),
            _ramp("albedo", "fiber",
                  [(0.0, (0.84, 0.83, 0.78)), (1.0, (0.93, 0.92, 0.88))]),
            _levels("rough", "fiber", 0.55, 0.70),
        ],
        "outputs": {"albedo": "albedo", "roughness": "rough"},
    },
]


class GraphLibrary:
    """Immutable registry of validated material graphs."""

    def __init__(self, defs: list[MaterialGraphDef]):
        self._graphs: dict[str, MaterialGraphDef] = {}
        for d in defs:
            if d.graph_id in self._graphs:
                raise GraphSchemaError(f"duplicate graph id {d.graph_id!r}")
            self._graphs[d.graph_id] = d

    def ids(self) -> list[str]:
        return sorted(self._graphs)

    def get(self, graph_id: str) -> MaterialGraphDef:
        if graph_id not in self._graphs:
            raise KeyError(f"unknown material graph {graph_id!r}")
        return self._graphs[graph_id]

    def bounds(self, graph_id: str) -> dict[str, tuple[float, float]]:
        return self.get(graph_id).param_bounds()

    def defaults(self, graph_id: str) -> dict[str, float]:
        return self.get(graph_id).param_defaults()

    def eval_uv(self, graph_id: str, params: dict, uv: torch.Tensor) -> dict:
        return eval_uv(self.get(graph_id), params, uv)

    def eval_graph(self, graph_id: str, params: dict, transform, res: int) -> dict:
        return eval_graph(self.get(graph_id), params, transform, res)

    def grad_graph(self, graph_id: str, params: dict, transform, res: int,
                   adjoints: dict) -> dict[str, float]:
        return grad_graph(self.get(graph_id), params, transform, res, adjoints)

    def merged_with(self, other: "GraphLibrary") -> "GraphLibrary":
        return GraphLibrary(list(self._graphs.values()) + list(other._graphs.values()))


_DEFAULT: GraphLibrary | None = None


def default_library() -> GraphLibrary:
    global _DEFAULT
    if _DEFAULT is None:
        _DEFAULT = GraphLibrary([validate_graph(raw) for raw in _BUILTINS])
    return _DEFAULT


def load_graphs_json(path) -> GraphLibrary:
    """Parse a graphs.json file ({"graphs": [...]}) into a library."""
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict) or not isinstance(raw.get("graphs"), list):
        raise GraphSchemaError("graphs.json must contain a 'graphs' list")
    return GraphLibrary([validate_graph(g) for g in raw["graphs"]])


def library_for_assets(assets_dir) -> GraphLibrary:
    """Built-ins plus any graphs.json found in the assets directory."""
    lib = default_library()
    if assets_dir is None:
        return lib
    p = Path(assets_dir) / "materials" / "graphs.json"
    if p.exists():
        lib = lib.merged_with(load_graphs_json(p))
    return lib
