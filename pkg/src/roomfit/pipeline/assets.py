"""Asset directory layout:

    assets/
      embeddings.bin                  # retrieval index (models + material graphs)
      models/<asset_id>/model.obj     # plus parts.json face ranges, thumbnail.png
      materials/graphs.json           # optional user material graphs
      materials/<graph_id>.png        # optional thumbnails
"""

from __future__ import annotations

from pathlib import Path

from ..errors import MissingInput
from ..mesh import TriMesh, load_obj
from ..retrieval import AssetIndex, load_index


def model_dir(assets_dir, asset_id: str) -> Path:
    return Path(assets_dir) / "models" / asset_id


def load_asset_mesh(assets_dir, asset_id: str) -> TriMesh:
    obj_path = model_dir(assets_dir, asset_id) / "model.obj"
    if not obj_path.exists():
        raise MissingInput(f"asset mesh not found: {obj_path}")
    return load_obj(obj_path)


def thumbnail_path(assets_dir, asset_id: str, kind: str) -> Path | None:
    if kind == "model":
        p = model_dir(assets_dir, asset_id) / "thumbnail.png"
    else:
        p = Path(assets_dir) / "materials" / f"{asset_id}.png"
    return p if p.exists() else None


def load_asset_index(assets_dir) -> AssetIndex | None:
    p = Path(assets_dir) / "embeddings.bin"
    if not p.exists():
        return None
    return load_index(p)
