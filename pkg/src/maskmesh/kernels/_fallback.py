"""Pure-numpy kernel implementations (reference semantics for the compiled core)."""

from __future__ import annotations

import numpy as np


def masked_weight(w: np.ndarray, s: np.ndarray) -> np.ndarray:
    """Effective weight: backbone gated by the thresholded scores (s > 0)."""
    return np.where(s > 0.0, w, 0.0)


def affine_fwd(x: np.ndarray, w_eff: np.ndarray, b: np.ndarray) -> np.ndarray:
    """y = x @ w_eff.T + b for x (batch, fan_in), w_eff (fan_out, fan_in)."""
    return x @ w_eff.T + b


def affine_tanh_fwd(x: np.ndarray, w_eff: np.ndarray, b: np.ndarray) -> np.ndarray:
    """tanh(x @ w_eff.T + b)."""
    return np.tanh(x @ w_eff.T + b)


def affine_bwd(
    x: np.ndarray,
    w_eff: np.ndarray,
    d_y: np.ndarray,
    tanh_out: np.ndarray | None = None,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Gradients of an affine (optionally tanh-wrapped) layer.

    If `tanh_out` is the forward tanh output, d_y is first pulled back
    through the nonlinearity. Returns (d_x, d_w_eff, d_b).
    """
    if tanh_out is not None:
        d_y = d_y * (1.0 - tanh_out * tanh_out)
    d_x = d_y @ w_eff
    d_w = d_y.T @ x
    d_b = d_y.sum(axis=0)
    return d_x, d_w, d_b


def rmsprop_step(
    param: np.ndarray,
    grad: np.ndarray,
    sq_avg: np.ndarray,
    lr: float,
    alpha: float,
    eps: float,
) -> None:
    """In-place RMSprop: sq <- a*sq + (1-a)*g^2; p -= lr * g / (sqrt(sq) + eps)."""
    sq_avg *= alpha
    sq_avg += (1.0 - alpha) * grad * grad
    param -= lr * grad / (np.sqrt(sq_avg) + eps)


def gae(
    rewards: np.ndarray,
    values: np.ndarray,
    dones: np.ndarray,
    bootstrap: np.ndarray,
    gamma: float,
    tau: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Generalized advantage estimation over (T, workers) arrays.

    delta_t = r_t + gamma * (1-done_t) * V_{t+1} - V_t
    A_t     = delta_t + gamma * tau * (1-done_t) * A_{t+1}
    with V_T = bootstrap. Returns (advantages, returns = A + V).
    """
    t_len, n = rewards.shape
    adv = np.zeros((t_len, n), dtype=np.float64)
    next_value = bootstrap.astype(np.float64)
    running = np.zeros(n, dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        not_done = 1.0 - dones[t]
        delta = rewards[t] + gamma * not_done * next_value - values[t]
        running = delta + gamma * tau * not_done * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values
