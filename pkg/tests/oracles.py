"""Independent reference implementations used to check the real ones.

Everything here is deliberately naive — plain loops and textbook formulas —
and stays independent of the library code paths it validates.
"""
from __future__ import annotations

import math

import numpy as np


def conv2d_naive(x: np.ndarray, w: np.ndarray, b: np.ndarray, pad: int, stride: int) -> np.ndarray:
    """Quadruple-loop cross-correlation on a single (C,H,W) image, float64."""
    x = np.asarray(x, dtype=np.float64)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    c_in, h, win = x.shape
    c_out, _, k, _ = w.shape
    xp = np.zeros((c_in, h + 2 * pad, win + 2 * pad))
    xp[:, pad:pad + h, pad:pad + win] = x
    ho = (h + 2 * pad - k) // stride + 1
    wo = (win + 2 * pad - k) // stride + 1
    out = np.zeros((c_out, ho, wo))
    for co in range(c_out):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for ci in range(c_in):
                    for ki in range(k):
                        for kj in range(k):
                            acc += xp[ci, i * stride + ki, j * stride + kj] * w[co, ci, ki, kj]
                out[co, i, j] = acc + b[co]
    return out


def mse_loop(a: np.ndarray, b: np.ndarray) -> float:
    """Scalar-loop sum of squared differences."""
    total = 0.0
    for x, y in zip(np.asarray(a, dtype=np.float64).ravel(),
                    np.asarray(b, dtype=np.float64).ravel()):
        total += (x - y) ** 2
    return total


def finite_diff_grad(loss_fn, param, h: float = 1e-3) -> np.ndarray:
    """Central finite differences of loss_fn() w.r.t. param.data, in place."""
    flat = param.data.ravel()
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = loss_fn()
        flat[i] = orig - h
        lo = loss_fn()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * h)
    return grad.reshape(param.data.shape)


def finite_diff_grad_piecewise(eval_fn, param, h: float = 1e-3) -> np.ndarray:
    """Central differences for piecewise-linear graphs (relu kinks).

    eval_fn() returns (loss_value, activation_pattern). A coordinate whose
    +-h stencil crosses a kink (pattern change) has no classical derivative
    there; it is reported as NaN and must be excluded from comparison.
    """
    flat = param.data.ravel()
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi, pat_hi = eval_fn()
        flat[i] = orig - h
        lo, pat_lo = eval_fn()
        flat[i] = orig
        grad[i] = (hi - lo) / (2.0 * h) if pat_hi == pat_lo else np.nan
    return grad.reshape(param.data.shape)


def adam_trajectory(theta0: float, grads, lr: float, beta1: float = 0.9,
                    beta2: float = 0.999, eps: float = 1e-8):
    """Scalar Adam recurrence, returning theta after each step."""
    theta, m, v = float(theta0), 0.0, 0.0
    out = []
    for t, g in enumerate(grads, start=1):
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        theta -= lr * m_hat / (math.sqrt(v_hat) + eps)
        out.append(theta)
    return out


def knn_full_sort(vectors: np.ndarray, ids, query: np.ndarray, k: int):
    """Exact K-NN by fully sorting (squared distance, id) pairs."""
    pairs = []
    for row, sid in zip(vectors, ids):
        d = np.sum((np.asarray(query) - row) ** 2)
        pairs.append((float(d), sid))
    pairs.sort(key=lambda p: (p[0], p[1]))
    return [sid for _, sid in pairs[:k]]


def heatmap_loop(level: np.ndarray) -> np.ndarray:
    """Per-pixel sum of squared channels via explicit loops."""
    c, h, w = level.shape
    out = np.zeros((h, w), dtype=np.float64)
    for i in range(h):
        for j in range(w):
            for ch in range(c):
                out[i, j] += float(level[ch, i, j]) ** 2
    return out
