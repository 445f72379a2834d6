"""Dense MLP algebra with hand-written reverse-mode gradients.

Weights are stored output-major (``W[l]`` has shape ``(out, in)``) so that a
batch ``X`` of shape ``(n, in)`` maps to ``X @ W.T + b``.  Path-dependency
matrices are reported input-major: entry ``[i, o]`` is the path mass from
input unit ``i`` to output unit ``o``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

ACTIVATIONS = ("relu", "tanh", "linear")
ACT_CODES = {"linear": 0, "relu": 1, "tanh": 2}


class NonFiniteLossError(FloatingPointError):
    """A loss term evaluated to NaN/inf."""

    def __init__(self, term: str, value=None):
        self.term = term
        msg = f"non-finite value in loss term {term!r}"
        if value is not None:
            msg += f" ({value})"
        super().__init__(msg)


@dataclass
class MlpParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: tuple[str, ...]

    def __post_init__(self):
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float).reshape(-1) for b in self.biases]
        self.activations = tuple(self.activations)
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must have equal length")
        for a in self.activations:
            if a not in ACTIVATIONS:
                raise ValueError(f"unknown activation {a!r}")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"layer {l}: weight {w.shape} and bias {b.shape} disagree")
            if l and w.shape[1] != self.weights[l - 1].shape[0]:
                raise ValueError(f"layer {l}: expects {w.shape[1]} inputs, previous layer "
                                 f"produces {self.weights[l - 1].shape[0]}")

    @property
    def n_layers(self) -> int:
        return len(self.weights)

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]

    @property
    def act_codes(self) -> np.ndarray:
        return np.array([ACT_CODES[a] for a in self.activations], dtype=np.int64)

    def arrays(self) -> list[np.ndarray]:
        """Flat parameter list, weights first then biases."""
        return self.weights + self.biases

    def with_arrays(self, arrays: Sequence[np.ndarray]) -> "MlpParams":
        n = self.n_layers
        return MlpParams(list(arrays[:n]), list(arrays[n:]), self.activations)

    def copy(self) -> "MlpParams":
        return self.with_arrays([a.copy() for a in self.arrays()])

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


def layer_activations(n_layers: int, activation: str = "relu", final_linear: bool = True):
    acts = [activation] * n_layers
    if final_linear:
        acts[-1] = "linear"
    return tuple(acts)


def init_mlp(dims: Sequence[int], rng: np.random.Generator, activation: str = "relu",
             final_linear: bool = True, activations=None) -> MlpParams:
    """Uniform fan-in init, ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``."""
    ws, bs = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        ws.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        bs.append(rng.uniform(-bound, bound, size=fan_out))
    if activations is None:
        activations = layer_activations(len(ws), activation, final_linear)
    return MlpParams(ws, bs, activations)


def _act(z, name):
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z, h, name):
    if name == "relu":
        return (z > 0.0).astype(float)
    if name == "tanh":
        return 1.0 - h * h
    return None


def mlp_forward(p: MlpParams, x: np.ndarray) -> np.ndarray:
    """Apply the network to one vector or a row batch."""
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    h = np.atleast_2d(x)
    if h.shape[1] != p.in_dim:
        raise ValueError(f"input has {h.shape[1]} units, network expects {p.in_dim}")
    for w, b, a in zip(p.weights, p.biases, p.activations):
        h = _act(h @ w.T + b, a)
    return h[0] if single else h


def mlp_forward_cache(p: MlpParams, x: np.ndarray):
    """Forward pass keeping pre-activations for :func:`mlp_backward`."""
    hs, zs = [x], []
    h = x
    for w, b, a in zip(p.weights, p.biases, p.activations):
        z = h @ w.T + b
        h = _act(z, a)
        zs.append(z)
        hs.append(h)
    return h, (hs, zs)


def mlp_backward(p: MlpParams, cache, d_out: np.ndarray, need_input: bool = False):
    """Backprop ``d_out`` (dL/d output) to weight, bias and optionally input grads."""
    hs, zs = cache
    dws = [None] * p.n_layers
    dbs = [None] * p.n_layers
    g = d_out
    for l in range(p.n_layers - 1, -1, -1):
        ga = _act_grad(zs[l], hs[l + 1], p.activations[l])
        if ga is not None:
            g = g * ga
        dws[l] = g.T @ hs[l]
        dbs[l] = g.sum(axis=0)
        if l or need_input:
            g = g @ p.weights[l]
    return dws, dbs, (g if need_input else None)


# -- path dependencies -----------------------------------------------------

NORMALIZATIONS = ("row", "frobenius")
NORMALIZATION = "row"


def _norms(w, how):
    if how == "frobenius":
        return np.full((w.shape[0], 1), np.linalg.norm(w))
    return np.linalg.norm(w, axis=1, keepdims=True)


def _normalized(ws, normalize):
    if not normalize:
        return [np.asarray(w) for w in ws], None
    how = NORMALIZATION if normalize is True else normalize
    if how not in NORMALIZATIONS:
        raise ValueError(f"unknown normalization {how!r}")
    norms = [_norms(np.asarray(w), how) for w in ws]
    out = [np.divide(w, n, out=np.zeros_like(w, dtype=float), where=n > 0)
           for w, n in zip(ws, norms)]
    return out, (norms, how)


def path_dependency(p, normalize: bool = False) -> np.ndarray:
    """Product of absolute layer weights, input-major.

    ``p`` is an :class:`MlpParams` or a plain list of weight matrices (a
    segment of a larger network).  ``normalize=True`` scales each neuron's
    incoming weight row to unit l2 norm first; ``"frobenius"`` scales whole
    matrices instead.
    """
    ws = p.weights if isinstance(p, MlpParams) else list(p)
    ws, _ = _normalized(ws, normalize)
    q = np.abs(ws[0])
    for w in ws[1:]:
        q = np.abs(w) @ q
    return q.T


def path_penalty(ws: Sequence[np.ndarray], s_complement: np.ndarray, norm: str = "l2",
                 eps_log: float = 1e-12, normalize: bool = True, need_grad: bool = True):
    """``log(eps + ||path_dependency(ws) * Sc||)`` and its gradient per matrix.

    ``norm`` is ``"l1"`` (sum of entries) or ``"l2"`` (Frobenius norm).
    Subgradient of ``|w|`` at 0 is taken as 0.
    """
    ws = [np.asarray(w) for w in ws]
    sc = np.asarray(s_complement, dtype=float)
    wn, norms = _normalized(ws, normalize)
    absw = [np.abs(w) for w in wn]
    # prefix products: pre[l] = A_{l-1} ... A_0   (out_l-1 x in)
    pre = [None] * len(absw)
    acc = None
    for l, a in enumerate(absw):
        pre[l] = acc
        acc = a if acc is None else a @ acc
    q = acc  # output-major
    if q.T.shape != sc.shape:
        raise ValueError(f"mask shape {sc.shape} does not match path matrix {q.T.shape}")
    masked = q.T * sc
    if norm == "l1":
        n = float(masked.sum())
    elif norm == "l2":
        n = float(np.sqrt((masked * masked).sum()))
    else:
        raise ValueError(f"unknown norm {norm!r}")
    value = float(np.log(eps_log + n))
    if not need_grad:
        return value, None
    if norm == "l1":
        dn_dq = sc.T
    else:
        dn_dq = (masked / n).T if n > 0 else np.zeros_like(q)
    gq = dn_dq / (eps_log + n)
    grads = []
    suf = None  # A_L ... A_{l+1}
    for l in range(len(absw) - 1, -1, -1):
        g = gq if suf is None else suf.T @ gq
        g = g if pre[l] is None else g @ pre[l].T
        g = g * np.sign(wn[l])
        if norms is not None:
            g = _normalize_back(ws[l], g, norms[0][l], norms[1])
        grads.append(g)
        suf = absw[l] if suf is None else suf @ absw[l]
    grads.reverse()
    return value, grads


def _normalize_back(w, g, n, how):
    """Chain rule through ``w / n(w)`` for either normalization."""
    safe = np.where(n > 0, n, 1.0)
    if how == "frobenius":
        dot = np.sum(g * w)
    else:
        dot = np.sum(g * w, axis=1, keepdims=True)
    out = g / safe - w * dot / safe ** 3
    return np.where(n > 0, out, 0.0)


def masked_path_norm(ws, s_complement, norm: str = "l2", normalize: bool = True) -> float:
    m = path_dependency(ws, normalize=normalize) * np.asarray(s_complement)
    return float(m.sum()) if norm == "l1" else float(np.sqrt((m * m).sum()))


def masked_path_ratio(ws, s_complement) -> float:
    """``||P * Sc||_1 / ||P||_1``: share of path mass on forbidden entries."""
    p = path_dependency(ws, normalize=True)
    total = p.sum()
    return float((p * np.asarray(s_complement)).sum() / total) if total > 0 else 0.0


# -- Adam ------------------------------------------------------------------

@dataclass
class OptimizerState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, arrays: Sequence[np.ndarray], lr: float = 1e-3, beta1: float = 0.9,
                   beta2: float = 0.999, eps: float = 1e-8) -> "OptimizerState":
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays],
                   0, lr, beta1, beta2, eps)


def adam_step(arrays: Sequence[np.ndarray], grads: Sequence[np.ndarray],
              st: OptimizerState) -> list[np.ndarray]:
    """One bias-corrected Adam update; ``arrays`` and the state are updated in place."""
    st.t += 1
    c1 = 1.0 - st.beta1 ** st.t
    c2 = 1.0 - st.beta2 ** st.t
    for a, g, m, v in zip(arrays, grads, st.m, st.v):
        if a.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {a.shape}")
        m *= st.beta1
        m += (1.0 - st.beta1) * g
        v *= st.beta2
        v += (1.0 - st.beta2) * g * g
        a -= st.lr * (m / c1) / (np.sqrt(v / c2) + st.eps)
    return list(arrays)
