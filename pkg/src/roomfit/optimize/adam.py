"""Adam with per-slot learning rates, box bounds and log-space slots."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch

BETA1, BETA2 = 0.9, 0.999
EPS = 1e-8


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @staticmethod
    def zeros(n: int) -> "AdamState":
        return AdamState(np.zeros(n), np.zeros(n), 0)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray,
              lr: np.ndarray | float, lower: np.ndarray, upper: np.ndarray,
              log_mask: np.ndarray | None = None) -> tuple[AdamState, np.ndarray]:
    """One bias-corrected Adam update; results are clamped to slot bounds.

    Slots flagged in log_mask are stepped in log-space: the incoming gradient
    is d/d(raw value) and gets the chain factor, and the exp/clamp keeps the
    parameter positive.
    """
    if params.shape != grads.shape or state.m.shape != params.shape:
        raise ShapeMismatch(f"params {params.shape} vs grads {grads.shape}")
    work = params.astype(np.float64).copy()
    g = grads.astype(np.float64).copy()
    if log_mask is not None and log_mask.any():
        g[log_mask] = g[log_mask] * work[log_mask]
        work[log_mask] = np.log(work[log_mask])
    t = state.t + 1
    m = BETA1 * state.m + (1 - BETA1) * g
    v = BETA2 * state.v + (1 - BETA2) * g * g
    m_hat = m / (1 - BETA1 ** t)
    v_hat = v / (1 - BETA2 ** t)
    work = work - lr * m_hat / (np.sqrt(v_hat) + EPS)
    if log_mask is not None and log_mask.any():
        work[log_mask] = np.exp(work[log_mask])
    np.clip(work, lower, upper, out=work)
    return AdamState(m, v, t), work
