"""Central finite differences for array-valued parameters."""
from __future__ import annotations

import numpy as np

H = 1e-5


def numeric_grads(f, arrays, h: float = H) -> list[np.ndarray]:
    """d f / d a for every array in ``arrays`` (perturbed in place)."""
    out = []
    for a in arrays:
        g = np.zeros_like(a, dtype=float)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            fp = f()
            a[i] = old - h
            fm = f()
            a[i] = old
            g[i] = (fp - fm) / (2 * h)
        out.append(g)
    return out


def rel_error(analytic, numeric) -> float:
    """Largest per-array ``||a - n|| / max(||a||, ||n||)``."""
    worst = 0.0
    for a, n in zip(analytic, numeric):
        scale = max(np.linalg.norm(a), np.linalg.norm(n))
        if scale > 1e-12:
            worst = max(worst, float(np.linalg.norm(a - n) / scale))
    return worst
