"""scene.json: lossless serialized form of a Scene.

Floats go through Python's repr (shortest exact round trip), so
parse(serialize(scene)) reproduces every parameter bit-for-bit.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import SceneFileError
from ..mesh import TriMesh
from ..scene import (
    AreaLight, Camera, Emissive, Homogeneous, ObjectInstance, Pose, Procedural,
    RoomBox, RoomPose, Scene, Support, UVTransform,
)
from .assets import load_asset_mesh

FORMAT_VERSION = 1


def _mat_to_json(mat) -> dict:
    if isinstance(mat, Homogeneous):
        return {"type": "homogeneous", "albedo": list(mat.albedo),
                "roughness": mat.roughness, "specular": mat.specular}
    if isinstance(mat, Procedural):
        return {"type": "procedural", "graph_id": mat.graph_id,
                "params": dict(sorted(mat.params.items())),
                "uv_transform": {"scale": mat.uv_transform.scale,
                                 "rotation_deg": mat.uv_transform.rotation_deg,
                                 "offset": list(mat.uv_transform.offset)}}
    if isinstance(mat, Emissive):
        return {"type": "emissive", "radiance": list(mat.radiance)}
    raise SceneFileError(f"unknown material {mat!r}")


def _mat_from_json(d: dict):
    t = d.get("type")
    if t == "homogeneous":
        return Homogeneous(albedo=np.array(d["albedo"]), roughness=d["roughness"],
                           specular=d["specular"])
    if t == "procedural":
        uv = d.get("uv_transform", {})
        return Procedural(graph_id=d["graph_id"], params=dict(d.get("params", {})),
                          uv_transform=UVTransform(scale=uv.get("scale", 1.0),
                                                   rotation_deg=uv.get("rotation_deg", 0.0),
                                                   offset=np.array(uv.get("offset", [0.0, 0.0]))))
    if t == "emissive":
        return Emissive(radiance=np.array(d["radiance"]))
    raise SceneFileError(f"unknown material type {t!r}")


def scene_to_json(scene: Scene) -> dict:
    out = {
        "version": FORMAT_VERSION,
        "assets_dir": scene.assets_dir,
        "camera": {"vfov_deg": scene.camera.vfov_deg, "width": scene.camera.width,
                   "height": scene.camera.height},
        "objects": [],
        "lights": [],
    }
    if scene.room is not None:
        p = scene.room.pose
        out["room"] = {
            "pose": {"translation": list(p.translation), "yaw_deg": p.yaw_deg,
                     "scale": list(p.scale)},
            "materials": {f: _mat_to_json(m) for f, m in scene.room.materials.items()},
        }
    for obj in scene.objects:
        p = obj.pose
        entry = {
            "id": obj.id,
            "asset_id": obj.asset_id,
            "pose": {"translation": list(p.translation), "yaw_deg": p.yaw_deg,
                     "scale": p.scale},
            "matrix": [float(x) for x in p.matrix().reshape(-1)],
            "support": {"kind": obj.support.kind, "ref": obj.support.ref},
            "materials": {g: _mat_to_json(m) for g, m in obj.materials.items()},
        }
        if obj.asset_id.startswith("__"):
            entry["mesh"] = {
                "vertices": [list(v) for v in obj.mesh.vertices],
                "faces": [list(map(int, f)) for f in obj.mesh.faces],
                "uv_faces": None if obj.mesh.uv_faces is None
                else [[list(c) for c in f] for f in obj.mesh.uv_faces],
                "groups": [[g, int(s), int(e)] for g, s, e in obj.mesh.groups],
            }
        out["objects"].append(entry)
    for light in scene.lights:
        out["lights"].append({"id": light.id, "quad": [list(q) for q in light.quad],
                              "radiance": list(light.radiance), "enabled": light.enabled})
    return out


def save_scene(path, scene: Scene) -> None:
    Path(path).write_text(json.dumps(scene_to_json(scene), indent=1))


def scene_from_json(data: dict, assets_dir=None) -> Scene:
    try:
        if data.get("version") != FORMAT_VERSION:
            raise SceneFileError(f"unsupported version {data.get('version')!r}")
        assets = assets_dir or data.get("assets_dir")
        cam = data["camera"]
        scene = Scene(camera=Camera(cam["vfov_deg"], cam["width"], cam["height"]),
                      assets_dir=assets)
        if "room" in data:
            rp = data["room"]["pose"]
            scene.room = RoomBox(
                pose=RoomPose(translation=np.array(rp["translation"]),
                              yaw_deg=rp["yaw_deg"], scale=np.array(rp["scale"])),
                materials={f: _mat_from_json(m)
                           for f, m in data["room"]["materials"].items()})
        for entry in data.get("objects", []):
            if "mesh" in entry:
                m = entry["mesh"]
                mesh = TriMesh(np.array(m["vertices"]), np.array(m["faces"]),
                               None if m["uv_faces"] is None else np.array(m["uv_faces"]),
                               [(g, s, e) for g, s, e in m["groups"]])
            else:
                if assets is None:
                    raise SceneFileError("scene references assets but no assets_dir")
                mesh = load_asset_mesh(assets, entry["asset_id"])
            p = entry["pose"]
            sup = entry.get("support", {"kind": "free", "ref": None})
            scene.objects.append(ObjectInstance(
                id=entry["id"], asset_id=entry["asset_id"], mesh=mesh,
                pose=Pose(translation=np.array(p["translation"]),
                          yaw_deg=p["yaw_deg"], scale=p["scale"]),
                support=Support(sup["kind"], sup.get("ref")),
                materials={g: _mat_from_json(m)
                           for g, m in entry.get("materials", {}).items()}))
        for entry in data.get("lights", []):
            scene.lights.append(AreaLight(id=entry["id"], quad=np.array(entry["quad"]),
                                          radiance=np.array(entry["radiance"]),
                                          enabled=entry.get("enabled", True)))
        return scene
    except (KeyError, TypeError, ValueError) as exc:
        raise SceneFileError(f"malformed scene.json: {exc}") from exc


def load_scene(path, assets_dir=None) -> Scene:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise SceneFileError(str(exc)) from exc
    return scene_from_json(data, assets_dir)
