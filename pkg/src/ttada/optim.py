"""Adam with decoupled weight decay, operating in place on tensors."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericError
from .tensor import Tensor


@dataclass
class AdamState:
    """First/second moment buffers plus the update counter for one tensor."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def for_tensor(cls, t: Tensor) -> "AdamState":
        return cls(m=np.zeros_like(t.data), v=np.zeros_like(t.data))


def adamw_update(
    param: Tensor,
    grad: np.ndarray,
    state: AdamState,
    lr: float,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected AdamW step; mutates ``param.data`` and ``state``.

    Weight decay is decoupled: the parameter is shrunk by ``lr * wd``
    before the Adam delta is applied. A non-finite gradient raises and
    leaves both the parameter and the state untouched.
    """
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != param.data.shape:
        raise NumericError(
            f"adamw_update: grad shape {grad.shape} != param shape {param.data.shape}"
        )
    if not np.all(np.isfinite(grad)):
        raise NumericError("adamw_update: non-finite gradient; no update applied")
    b1, b2 = betas
    if weight_decay != 0.0:
        param.data *= 1.0 - lr * weight_decay
    state.step += 1
    state.m = b1 * state.m + (1.0 - b1) * grad
    state.v = b2 * state.v + (1.0 - b2) * grad * grad
    m_hat = state.m / (1.0 - b1**state.step)
    v_hat = state.v / (1.0 - b2**state.step)
    param.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
