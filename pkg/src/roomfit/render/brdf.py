"""GGX microfacet BRDF with a diffuse lobe weighted by the Fresnel remainder."""

from __future__ import annotations

import math

import torch

MIN_ROUGHNESS = 0.03  # alpha floor keeps D/G finite for mirror-smooth inputs


def ggx_eval(n: torch.Tensor, wo: torch.Tensor, wi: torch.Tensor,
             albedo: torch.Tensor, roughness: torch.Tensor,
             specular: torch.Tensor) -> torch.Tensor:
    """BRDF value (N, 3) for unit vectors n, wo, wi; `specular` is F0."""
    h = torch.nn.functional.normalize(wo + wi, dim=-1, eps=1e-12)
    ndl = (n * wi).sum(-1).clamp_min(0.0)
    ndv = (n * wo).sum(-1).clamp_min(1e-6)
    ndh = (n * h).sum(-1).clamp_min(0.0)
    vdh = (wo * h).sum(-1).clamp_min(0.0)
    alpha = roughness.clamp(MIN_ROUGHNESS, 1.0) ** 2
    a2 = alpha * alpha
    denom = ndh * ndh * (a2 - 1.0) + 1.0
    d_term = a2 / (math.pi * denom * denom)

    def g1(x):
        return 2.0 * x / (x + torch.sqrt(a2 + (1.0 - a2) * x * x))

    g_term = g1(ndl.clamp_min(1e-6)) * g1(ndv)
    fres = specular + (1.0 - specular) * (1.0 - vdh) ** 5
    spec_lobe = d_term * g_term * fres / (4.0 * ndv * ndl.clamp_min(1e-6))
    diff_lobe = (1.0 - fres).unsqueeze(-1) * albedo / math.pi
    return diff_lobe + spec_lobe.unsqueeze(-1)
