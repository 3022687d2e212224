"""Independent brute-force oracles for small transport problems."""

import itertools

import numpy as np


def grid_plans_3x3(step_den: int = 60) -> np.ndarray:
    """All 3x3 plans with uniform marginals whose entries are multiples of 1/step_den."""
    g = np.arange(step_den // 3 + 1) / step_den
    t11, t12, t21, t22 = np.meshgrid(g, g, g, g, indexing="ij")
    third = 1.0 / 3.0
    t13, t23 = third - t11 - t12, third - t21 - t22
    t31, t32 = third - t11 - t21, third - t12 - t22
    t33 = third - t13 - t23
    T = np.stack([t11, t12, t13, t21, t22, t23, t31, t32, t33], -1).reshape(-1, 3, 3)
    return T[(T >= -1e-12).all(axis=(1, 2))]


def brute_gw(Ca, Cb, T):
    """Quadruple loop, vectorised over a stack of plans."""
    n, m = Ca.shape[0], Cb.shape[0]
    out = np.zeros(len(T))
    for i, j, k, l in itertools.product(range(n), range(m), range(n), range(m)):
        out += T[:, i, j] * T[:, k, l] * abs(Ca[i, k] - Cb[j, l])
    return out
