"""Material graph definition, validation and evaluation.

A graph is a DAG of texture nodes producing albedo, roughness and an optional
height field. Evaluation happens at arbitrary UV points (the renderer shades
hit points directly) or over a res x res grid for texture export.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from ..errors import GraphSchemaError, ParamOutOfBounds
from . import nodes as N

DTYPE = torch.float64

_KINDS = {"uniform_color", "checker", "brick", "perlin", "color_ramp",
          "blend", "levels", "normal_from_height", "transform_uv"}


@dataclass
class NodeDef:
    id: str
    kind: str
    inputs: dict[str, str] = field(default_factory=dict)
    structural: dict = field(default_factory=dict)
    params: dict[str, tuple[float, float, float]] = field(default_factory=dict)


@dataclass
class MaterialGraphDef:
    graph_id: str
    nodes: dict[str, NodeDef]
    outputs: dict[str, str]  # albedo / roughness / height -> node id
    order: list[str] = field(default_factory=list)

    def param_bounds(self) -> dict[str, tuple[float, float]]:
        out = {}
        for node in self.nodes.values():
            for pname, (lo, hi, _d) in node.params.items():
                out[f"{node.id}.{pname}"] = (lo, hi)
        return out

    def param_defaults(self) -> dict[str, float]:
        out = {}
        for node in self.nodes.values():
            for pname, (_lo, _hi, d) in node.params.items():
                out[f"{node.id}.{pname}"] = d
        return out


def _topo_order(nodes: dict[str, NodeDef], graph_id: str) -> list[str]:
    state: dict[str, int] = {}
    order: list[str] = []

    def visit(nid: str):
        st = state.get(nid, 0)
        if st == 1:
            raise GraphSchemaError(f"{graph_id}: cycle through node {nid!r}")
        if st == 2:
            return
        state[nid] = 1
        for ref in nodes[nid].inputs.values():
            if ref not in nodes:
                raise GraphSchemaError(f"{graph_id}: node {nid!r} references unknown {ref!r}")
            visit(ref)
        state[nid] = 2
        order.append(nid)

    for nid in sorted(nodes):
        visit(nid)
    return order


def validate_graph(raw: dict) -> MaterialGraphDef:
    """Build a MaterialGraphDef from the declarative description."""
    if not isinstance(raw.get("id"), str) or not raw["id"]:
        raise GraphSchemaError("graph needs a non-empty string 'id'")
    gid = raw["id"]
    nodes: dict[str, NodeDef] = {}
    for nd in raw.get("nodes", []):
        nid, kind = nd.get("id"), nd.get("kind")
        if not nid or nid in nodes:
            raise GraphSchemaError(f"{gid}: missing or duplicate node id {nid!r}")
        if kind not in _KINDS:
            raise GraphSchemaError(f"{gid}: unknown node kind {kind!r}")
        structural = dict(nd.get("structural", {}))
        base = N.NODE_PARAM_BOUNDS[kind]
        if kind == "color_ramp":
            positions = structural.get("positions")
            if (not isinstance(positions, list) or len(positions) < 2
                    or sorted(positions) != positions):
                raise GraphSchemaError(f"{gid}:{nid}: color_ramp needs sorted positions")
            base = N.ramp_param_bounds(len(positions))
        params: dict[str, tuple[float, float, float]] = {}
        for pname, spec in (base or {}).items():
            lo, hi, d = spec
            params[pname] = (lo, hi, d)
        for pname, spec in nd.get("params", {}).items():
            if base is not None and pname not in params and kind != "color_ramp":
                raise GraphSchemaError(f"{gid}:{nid}: unknown param {pname!r}")
            lo, hi, d = spec if isinstance(spec, (list, tuple)) else params[pname][:2] + (spec,)
            if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
                raise GraphSchemaError(f"{gid}:{nid}.{pname}: bad bounds")
            if not lo <= d <= hi:
                raise GraphSchemaError(f"{gid}:{nid}.{pname}: default outside bounds")
            params[pname] = (float(lo), float(hi), float(d))
        nodes[nid] = NodeDef(nid, kind, dict(nd.get("inputs", {})), structural, params)
    outputs = dict(raw.get("outputs", {}))
    for key in ("albedo", "roughness"):
        if outputs.get(key) not in nodes:
            raise GraphSchemaError(f"{gid}: outputs.{key} must name a node")
    if "height" in outputs and outputs["height"] not in nodes:
        raise GraphSchemaError(f"{gid}: outputs.height must name a node")
    order = _topo_order(nodes, gid)
    return MaterialGraphDef(gid, nodes, outputs, order)


def _resolve_params(graph: MaterialGraphDef, node: NodeDef, params: dict) -> dict:
    out = {}
    for pname, (lo, hi, d) in node.params.items():
        key = f"{node.id}.{pname}"
        v = params.get(key, d)
        if not isinstance(v, torch.Tensor):
            if not lo - 1e-9 <= float(v) <= hi + 1e-9:
                raise ParamOutOfBounds(f"{graph.graph_id}:{key}={v} outside [{lo}, {hi}]")
            v = torch.as_tensor(float(v), dtype=DTYPE)
        out[pname] = v
    return out


def eval_nodes(graph: MaterialGraphDef, params: dict, uv: torch.Tensor) -> dict[str, torch.Tensor]:
    """Evaluate every node at the given UV points (torch, differentiable)."""
    values: dict[str, torch.Tensor] = {}

    def eval_node(nid: str, uv_cur: torch.Tensor) -> torch.Tensor:
        node = graph.nodes[nid]
        p = _resolve_params(graph, node, params)
        kind = node.kind
        if kind == "transform_uv":
            s_u = float(node.structural.get("scale_u", 1))
            s_v = float(node.structural.get("scale_v", 1))
            rot = float(node.structural.get("rotation_deg", 0.0))
            a = math.radians(rot)
            c, s = math.cos(a), math.sin(a)
            x = uv_cur[:, 0] * c - uv_cur[:, 1] * s
            y = uv_cur[:, 0] * s + uv_cur[:, 1] * c
            uv2 = torch.stack([x * s_u, y * s_v], dim=1)
            return eval_node(node.inputs["input"], uv2)
        if kind == "uniform_color":
            return N.uniform_color(uv_cur, p)
        if kind == "checker":
            return N.checker(uv_cur, p, node.structural)
        if kind == "brick":
            return N.brick(uv_cur, p, node.structural, N.node_seed(graph.graph_id, nid))
        if kind == "perlin":
            return N.perlin(uv_cur, p, node.structural, N.node_seed(graph.graph_id, nid))
        if kind == "color_ramp":
            t = eval_node(node.inputs["t"], uv_cur)
            if t.dim() == 2:
                t = t.mean(dim=1)
            return N.color_ramp(t, p, node.structural)
        if kind == "blend":
            a = eval_node(node.inputs["a"], uv_cur)
            b = eval_node(node.inputs["b"], uv_cur)
            factor = (eval_node(node.inputs["factor"], uv_cur)
                      if "factor" in node.inputs else p["factor"])
            return N.blend(a, b, factor, node.structural)
        if kind == "levels":
            x = eval_node(node.inputs["input"], uv_cur)
            return N.levels(x, p)
        if kind == "normal_from_height":
            return eval_node(node.inputs["input"], uv_cur)
        raise GraphSchemaError(f"unhandled node kind {kind}")

    # evaluation is demand-driven from the outputs (transform nodes change UV,
    # so a simple per-node cache keyed on id alone would be wrong)
    for out_name, nid in graph.outputs.items():
        values[out_name] = eval_node(nid, uv)
    return values


def eval_uv(graph: MaterialGraphDef, params: dict, uv: torch.Tensor) -> dict:
    """Shading-facing evaluation: albedo (N,3), roughness (N,), height (N,)|None."""
    raw = eval_nodes(graph, params, uv)
    albedo = raw["albedo"]
    if albedo.dim() == 1:
        albedo = albedo.unsqueeze(-1).expand(-1, 3)
    albedo = albedo.clamp(0.0, 1.0)
    rough = raw["roughness"]
    if rough.dim() == 2:
        rough = rough.mean(dim=1)
    rough = rough.clamp(0.0, 1.0)
    out = {"albedo": albedo, "roughness": rough, "height": None, "normal_strength": None}
    if "height" in graph.outputs:
        h = raw["height"]
        if h.dim() == 2:
            h = h.mean(dim=1)
        out["height"] = h
        hnode = graph.nodes[graph.outputs["height"]]
        if hnode.kind == "normal_from_height":
            p = _resolve_params(graph, hnode, params)
            out["normal_strength"] = p["strength"]
    return out


def uv_grid(res: int) -> torch.Tensor:
    """Pixel-center UV grid, row-major, v increasing downward in the image."""
    idx = (torch.arange(res, dtype=DTYPE) + 0.5) / res
    vv, uu = torch.meshgrid(idx, idx, indexing="ij")
    return torch.stack([uu.reshape(-1), vv.reshape(-1)], dim=1)


def eval_graph(graph: MaterialGraphDef, params: dict, transform, res: int) -> dict[str, np.ndarray]:
    """Grid evaluation to numpy textures; normal map from height by central
    differences with wraparound (tileable)."""
    uv = uv_grid(res)
    if transform is not None:
        a = math.radians(float(transform.rotation_deg))
        c, s = math.cos(a), math.sin(a)
        x = uv[:, 0] * c - uv[:, 1] * s
        y = uv[:, 0] * s + uv[:, 1] * c
        uv = torch.stack([x, y], dim=1) * float(transform.scale)
        uv = uv + torch.as_tensor(np.asarray(transform.offset, dtype=np.float64))
    with torch.no_grad():
        tex = eval_uv(graph, params, uv)
    out = {
        "albedo": tex["albedo"].reshape(res, res, 3).numpy(),
        "roughness": tex["roughness"].reshape(res, res).numpy(),
    }
    if tex["height"] is not None:
        h = tex["height"].reshape(res, res).numpy()
        out["height"] = h
        strength = float(tex["normal_strength"]) if tex["normal_strength"] is not None else 1.0
        dx = (np.roll(h, -1, axis=1) - np.roll(h, 1, axis=1)) * (res / 2.0)
        dy = (np.roll(h, -1, axis=0) - np.roll(h, 1, axis=0)) * (res / 2.0)
        n = np.stack([-strength * dx, -strength * dy, np.ones_like(h)], axis=-1)
        out["normal"] = n / np.linalg.norm(n, axis=-1, keepdims=True)
    return out


def grad_graph(graph: MaterialGraphDef, params: dict, transform, res: int,
               adjoints: dict[str, np.ndarray]) -> dict[str, float]:
    """Back-propagate texture-space adjoints to graph parameter gradients."""
    defaults = graph.param_defaults()
    leaves = {}
    for name in defaults:
        leaves[name] = torch.tensor(float(params.get(name, defaults[name])),
                                    dtype=DTYPE, requires_grad=True)
    uv = uv_grid(res)
    if transform is not None:
        a = math.radians(float(transform.rotation_deg))
        c, s = math.cos(a), math.sin(a)
        x = uv[:, 0] * c - uv[:, 1] * s
        y = uv[:, 0] * s + uv[:, 1] * c
        uv = torch.stack([x, y], dim=1) * float(transform.scale)
        uv = uv + torch.as_tensor(np.asarray(transform.offset, dtype=np.float64))
    tex = eval_uv(graph, leaves, uv)
    total = None
    for key, adj in adjoints.items():
        if adj is None or tex.get(key) is None:
            continue
        t = tex[key]
        a_t = torch.as_tensor(np.asarray(adj, dtype=np.float64)).reshape(t.shape)
        term = (t * a_t).sum()
        total = term if total is None else total + term
    if total is None:
        from ..errors import MissingForward
        raise MissingForward("no overlapping adjoint channels")
    total.backward()
    return {name: float(leaf.grad) if leaf.grad is not None else 0.0
            for name, leaf in leaves.items()}
