"""Texture-transform grid search for a retrieved material graph.

Candidates are rendered in-scene under the current (initial) lighting and
scored by texture-descriptor distance to the target crop; a homogeneous
median-color material competes and wins on strictly smaller loss.
"""

from __future__ import annotations

import numpy as np

from ..scene import Homogeneous, Procedural, UVTransform

SEARCH_SCALES = (0.5, 1.0, 2.0, 4.0, 8.0)
SEARCH_ROTATIONS = (-45.0, 0.0, 45.0, 90.0)


def search_transform(graph_id: str, params: dict, render_crop_fn, score_fn,
                     median_color: np.ndarray):
    """Best (scale, rotation) for `graph_id`, or a homogeneous fallback.

    render_crop_fn(material) -> rendered crop rgb array; score_fn(rgb) ->
    descriptor distance to the target crop. Returns (material, evaluations).
    """
    best = None
    best_score = None
    evaluations = 0
    for scale in SEARCH_SCALES:
        for rot in SEARCH_ROTATIONS:
            mat = Procedural(graph_id=graph_id, params=dict(params),
                             uv_transform=UVTransform(scale=scale, rotation_deg=rot))
            score = score_fn(render_crop_fn(mat))
            evaluations += 1
            if best_score is None or score < best_score:
                best_score, best = score, mat
    homog = Homogeneous(albedo=np.clip(np.asarray(median_color, dtype=np.float64), 0, 1),
                        roughness=0.5, specular=0.04)
    score = score_fn(render_crop_fn(homog))
    evaluations += 1
    if score < best_score:
        best = homog
    return best, evaluations
