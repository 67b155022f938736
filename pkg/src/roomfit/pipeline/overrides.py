"""--set overrides: small path grammar for scene edits before rendering.

    object.<id>.yaw=30            object.<id>.scale=1.4
    object.<id>.translation=x,y,z object.<id>.tx|ty|tz=v
    room.yaw=10                   room.scale=x,y,z     room.translation=x,y,z
    material.<face>.<field>       (room faces: floor, ceiling, wall0..3)
    material.<obj>.<group>.<field>
        fields: graph=<id>  albedo=r,g,b  roughness=v  specular=v
                params.<name>=v  uv.scale=v  uv.rotation=v  uv.offset=u,v
                emissive=r,g,b
    light.<id>.radiance=r,g,b     light.<id>.enabled=true|false
    light.*.radiance*=2           ("*=": multiply; the id * targets all lights)
"""

from __future__ import annotations

import numpy as np

from ..errors import UnknownPath
from ..primitives import ROOM_FACES
from ..scene import Emissive, Homogeneous, Procedural, Scene, UVTransform


def _floats(value: str, n: int | None = None) -> np.ndarray:
    try:
        parts = [float(x) for x in value.split(",")]
    except ValueError as exc:
        raise UnknownPath(f"expected numbers, got {value!r}") from exc
    if n is not None and len(parts) not in (1, n):
        raise UnknownPath(f"expected {n} numbers, got {value!r}")
    if n is not None and len(parts) == 1:
        parts = parts * n
    return np.array(parts)


def parse_set_arg(arg: str) -> tuple[str, str, bool]:
    """Split 'path=value'; 'path*=value' and 'path×=value' mean multiply."""
    if "=" not in arg:
        raise UnknownPath(f"--set needs path=value, got {arg!r}")
    path, value = arg.split("=", 1)
    multiply = False
    if path.endswith("*") or path.endswith("×"):
        multiply = True
        path = path[:-1]
    return path.strip(), value.strip(), multiply


def apply_override(scene: Scene, path: str, value: str, multiply: bool = False,
                   graphs=None) -> None:
    parts = path.split(".")
    if not parts:
        raise UnknownPath(path)
    head = parts[0]
    if head == "object":
        _apply_object(scene, parts, value)
    elif head == "room":
        _apply_room(scene, parts, value)
    elif head == "material":
        _apply_material(scene, parts, value, graphs)
    elif head == "light":
        _apply_light(scene, parts, value, multiply)
    else:
        raise UnknownPath(path)


def apply_overrides(scene: Scene, args: list[str], graphs=None) -> Scene:
    out = scene.clone()
    for arg in args:
        path, value, multiply = parse_set_arg(arg)
        apply_override(out, path, value, multiply, graphs)
    out.project_supports()
    return out


def _apply_object(scene: Scene, parts, value):
    if len(parts) != 3:
        raise UnknownPath(".".join(parts))
    _, oid, field = parts
    try:
        obj = scene.object_by_id(oid)
    except KeyError as exc:
        raise UnknownPath(f"no object {oid!r}") from exc
    if field == "yaw":
        obj.pose.yaw_deg = float(_floats(value, 1)[0])
    elif field == "scale":
        obj.pose.scale = float(_floats(value, 1)[0])
    elif field == "translation":
        obj.pose.translation = _floats(value, 3)
    elif field in ("tx", "ty", "tz"):
        obj.pose.translation["xyz".index(field[1])] = float(_floats(value, 1)[0])
    else:
        raise UnknownPath(f"object field {field!r}")


def _apply_room(scene: Scene, parts, value):
    if scene.room is None or len(parts) != 2:
        raise UnknownPath(".".join(parts))
    field = parts[1]
    if field == "yaw":
        scene.room.pose.yaw_deg = float(_floats(value, 1)[0])
    elif field == "scale":
        scene.room.pose.scale = _floats(value, 3)
    elif field == "translation":
        scene.room.pose.translation = _floats(value, 3)
    else:
        raise UnknownPath(f"room field {field!r}")


def _material_store(scene: Scene, parts):
    if len(parts) >= 3 and parts[1] in ROOM_FACES and scene.room is not None:
        return scene.room.materials, parts[1], parts[2:]
    if len(parts) >= 4:
        try:
            obj = scene.object_by_id(parts[1])
        except KeyError as exc:
            raise UnknownPath(f"no object {parts[1]!r}") from exc
        if parts[2] not in obj.materials:
            raise UnknownPath(f"no material group {parts[2]!r} on {parts[1]!r}")
        return obj.materials, parts[2], parts[3:]
    raise UnknownPath(".".join(parts))


def _apply_material(scene: Scene, parts, value, graphs):
    store, group, field = _material_store(scene, parts)
    mat = store[group]
    key = field[0] if field else ""
    if key == "graph":
        if graphs is not None:
            defaults = graphs.defaults(value)  # raises KeyError for unknown ids
        else:
            defaults = {}
        store[group] = Procedural(graph_id=value, params=defaults,
                                  uv_transform=UVTransform())
    elif key == "albedo":
        if not isinstance(mat, Homogeneous):
            mat = Homogeneous(albedo=np.array([0.5, 0.5, 0.5]))
        mat.albedo = np.clip(_floats(value, 3), 0, 1)
        store[group] = mat
    elif key in ("roughness", "specular"):
        if not isinstance(mat, Homogeneous):
            raise UnknownPath(f"{key} only applies to homogeneous materials")
        setattr(mat, key, float(_floats(value, 1)[0]))
    elif key == "emissive":
        store[group] = Emissive(radiance=_floats(value, 3))
    elif key == "params" and len(field) == 2 and isinstance(mat, Procedural):
        mat.params[field[1]] = float(_floats(value, 1)[0])
    elif key == "uv" and len(field) == 2 and isinstance(mat, Procedural):
        sub = field[1]
        if sub == "scale":
            mat.uv_transform.scale = float(_floats(value, 1)[0])
        elif sub == "rotation":
            mat.uv_transform.rotation_deg = float(_floats(value, 1)[0])
        elif sub == "offset":
            mat.uv_transform.offset = _floats(value, 2)
        else:
            raise UnknownPath(f"uv field {sub!r}")
    else:
        raise UnknownPath(".".join(parts))


def _apply_light(scene: Scene, parts, value, multiply):
    if len(parts) != 3:
        raise UnknownPath(".".join(parts))
    _, lid, field = parts
    targets = scene.lights if lid == "*" else [l for l in scene.lights if l.id == lid]
    if not targets:
        raise UnknownPath(f"no light {lid!r}")
    for light in targets:
        if field == "radiance":
            if multiply:
                light.radiance = light.radiance * float(_floats(value, 1)[0])
            else:
                light.radiance = _floats(value, 3)
        elif field == "enabled":
            if value.lower() not in ("true", "false", "0", "1"):
                raise UnknownPath(f"enabled must be true/false, got {value!r}")
            light.enabled = value.lower() in ("true", "1")
        else:
            raise UnknownPath(f"light field {field!r}")
    if multiply and field == "radiance":
        # emissive materials scale with the same multiplier under light.*
        if lid == "*":
            m = float(_floats(value, 1)[0])
            for obj in scene.objects:
                for g, mat in obj.materials.items():
                    if isinstance(mat, Emissive):
                        obj.materials[g] = Emissive(radiance=mat.radiance * m)
