"""Hot loops of inference and sampling.

Each kernel exists twice: a vectorised numpy version (``np_*``) and a
numba ``@njit`` version (``nb_*``) that runs the whole iteration loop in
compiled code.  The public names dispatch on :data:`USE_NUMBA`, which is
off when the environment variable ``NGM_DISABLE_NUMBA`` is set to a truthy
value or numba cannot be imported.

Shared conventions for a network with weights ``ws`` (tuple of ``(out, in)``
matrices), biases ``bs`` and integer activation codes ``acts``
(0 linear, 1 relu, 2 tanh):

* learnable inputs are parameterised by ``z``; units with ``group[j] >= 0``
  belong to a softmax block ``gstart[g]:gend[g]`` and their input value is
  the block softmax of ``z``, all other units use ``z`` directly;
* the per-row objective is ``sum_o ow[r, o] * (f(x)[r, o] - (x @ dec)[r, o])**2``
  with 0/1 weights ``ow`` and ``dec`` mapping input units to the output
  unit they should reproduce.
"""
from __future__ import annotations

import os

import numpy as np

_FALSY = ("", "0", "false", "no", "off")


def _numba_requested() -> bool:
    return os.environ.get("NGM_DISABLE_NUMBA", "").strip().lower() in _FALSY


try:
    from numba import njit
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _numba_requested()


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"


# -- numpy -----------------------------------------------------------------

def _np_forward(ws, bs, acts, x):
    hs, zs = [x], []
    h = x
    for w, b, a in zip(ws, bs, acts):
        z = h @ w.T + b
        if a == 1:
            h = np.maximum(z, 0.0)
        elif a == 2:
            h = np.tanh(z)
        else:
            h = z
        zs.append(z)
        hs.append(h)
    return h, hs, zs


def _np_input_grad(ws, acts, hs, zs, g):
    for l in range(len(ws) - 1, -1, -1):
        if acts[l] == 1:
            g = g * (zs[l] > 0.0)
        elif acts[l] == 2:
            g = g * (1.0 - hs[l + 1] ** 2)
        g = g @ ws[l]
    return g


def _np_expand(z, gstart, gend):
    x = z.copy()
    for s, e in zip(gstart, gend):
        blk = z[:, s:e]
        blk = np.exp(blk - blk.max(axis=1, keepdims=True))
        x[:, s:e] = blk / blk.sum(axis=1, keepdims=True)
    return x


def _np_softmax_back(x, dx, gstart, gend):
    dz = dx.copy()
    for s, e in zip(gstart, gend):
        p = x[:, s:e]
        d = dx[:, s:e]
        dz[:, s:e] = p * (d - (p * d).sum(axis=1, keepdims=True))
    return dz


def np_input_loss_grad(ws, bs, acts, z, gstart, gend, dec, ow):
    """Per-row inference loss and its gradient with respect to ``z``.

    Returns ``(x, loss, dz)`` where ``x`` is the expanded input.
    """
    x = _np_expand(z, gstart, gend)
    out, hs, zs = _np_forward(ws, bs, acts, x)
    r = ow * (out - x @ dec)
    loss = (r * r).sum(axis=1)
    dx = _np_input_grad(ws, acts, hs, zs, 2.0 * r) - 2.0 * r @ dec.T
    return x, loss, _np_softmax_back(x, dx, gstart, gend)


def np_map_descent(ws, bs, acts, z0, learn, gstart, gend, dec, ow, lr, max_iter, tol,
                   beta1=0.9, beta2=0.999, eps=1e-8):
    z = np.array(z0, dtype=float, copy=True)
    learn = np.asarray(learn, dtype=bool)
    n = z.shape[0]
    m = np.zeros_like(z)
    v = np.zeros_like(z)
    best_x = _np_expand(z, gstart, gend)
    best_z = z.copy()
    best = np.full(n, np.inf)
    first = np.zeros(n)
    active = np.ones(n, dtype=bool)
    it = 0
    t = 0
    while True:
        x, loss, dz = np_input_loss_grad(ws, bs, acts, z, gstart, gend, dec, ow)
        if it == 0:
            first = loss.copy()
        better = loss < best
        best[better] = loss[better]
        best_x[better] = x[better]
        best_z[better] = z[better]
        active &= loss > tol
        if not active.any() or it >= max_iter:
            break
        dz *= learn & active[:, None]
        t += 1
        m = beta1 * m + (1.0 - beta1) * dz
        v = beta2 * v + (1.0 - beta2) * dz * dz
        step = lr * (m / (1.0 - beta1 ** t)) / (np.sqrt(v / (1.0 - beta2 ** t)) + eps)
        z -= step * (learn & active[:, None])
        it += 1
    return best_x, best_z, best, first, it


def np_fixed_point(ws, bs, acts, x0, learn, enc, max_iter, tol):
    x = np.array(x0, dtype=float, copy=True)
    learn = np.asarray(learn, dtype=bool)
    n = x.shape[0]
    converged = np.zeros(n, dtype=bool)
    trace = np.zeros(max_iter)
    it = 0
    while it < max_iter and not converged.all():
        out, _, _ = _np_forward(ws, bs, acts, x)
        new = np.where(learn, out @ enc, x)
        delta = ((new - x) ** 2).sum(axis=1)
        x = np.where(converged[:, None], x, new)
        trace[it] = delta[~converged].max()
        converged |= delta <= tol
        it += 1
    return x, converged, trace[:it], it


def np_forward(ws, bs, acts, x):
    return _np_forward(ws, bs, acts, np.asarray(x, dtype=float))[0]


# -- numba -----------------------------------------------------------------

if HAVE_NUMBA:

    @njit(cache=True)
    def _nb_activate(z, code):
        if code == 1:
            return np.maximum(z, 0.0)
        if code == 2:
            return np.tanh(z)
        return z.copy()

    @njit(cache=True)
    def _nb_forward(ws, bs, acts, x, hs, zs):
        h = x
        hs[0] = x
        for l in range(len(ws)):
            z = h @ ws[l].T
            for j in range(z.shape[1]):
                z[:, j] += bs[l][j]
            h = _nb_activate(z, acts[l])
            zs[l] = z
            hs[l + 1] = h
        return h

    @njit(cache=True)
    def _nb_expand(z, gstart, gend):
        x = z.copy()
        n = z.shape[0]
        for g in range(gstart.shape[0]):
            s, e = gstart[g], gend[g]
            for r in range(n):
                mx = z[r, s]
                for j in range(s + 1, e):
                    if z[r, j] > mx:
                        mx = z[r, j]
                tot = 0.0
                for j in range(s, e):
                    x[r, j] = np.exp(z[r, j] - mx)
                    tot += x[r, j]
                for j in range(s, e):
                    x[r, j] /= tot
        return x

    @njit(cache=True)
    def nb_map_descent(ws, bs, acts, z0, learn, gstart, gend, dec, ow, lr, max_iter, tol,
                       beta1=0.9, beta2=0.999, eps=1e-8):
        z = z0.copy()
        n, d = z.shape
        nl = len(ws)
        m = np.zeros_like(z)
        v = np.zeros_like(z)
        best_x = _nb_expand(z, gstart, gend)
        best_z = z.copy()
        best = np.full(n, np.inf)
        first = np.zeros(n)
        active = np.ones(n, dtype=np.bool_)
        hs = [z for _ in range(nl + 1)]
        zs = [z for _ in range(nl)]
        decT = np.ascontiguousarray(dec.T)
        it = 0
        t = 0
        while True:
            x = _nb_expand(z, gstart, gend)
            out = _nb_forward(ws, bs, acts, x, hs, zs)
            r = ow * (out - x @ dec)
            n_active = 0
            for i in range(n):
                li = 0.0
                for o in range(r.shape[1]):
                    li += r[i, o] * r[i, o]
                if it == 0:
                    first[i] = li
                if li < best[i]:
                    best[i] = li
                    best_x[i] = x[i]
                    best_z[i] = z[i]
                if li <= tol:
                    active[i] = False
                if active[i]:
                    n_active += 1
            if n_active == 0 or it >= max_iter:
                break
            g = 2.0 * r
            for l in range(nl - 1, -1, -1):
                if acts[l] == 1:
                    zl = zs[l]
                    for i in range(n):
                        for j in range(g.shape[1]):
                            if zl[i, j] <= 0.0:
                                g[i, j] = 0.0
                elif acts[l] == 2:
                    hl = hs[l + 1]
                    for i in range(n):
                        for j in range(g.shape[1]):
                            g[i, j] *= 1.0 - hl[i, j] * hl[i, j]
                g = g @ ws[l]
            dx = g - 2.0 * (r @ decT)
            # softmax blocks
            for gi in range(gstart.shape[0]):
                s, e = gstart[gi], gend[gi]
                for i in range(n):
                    acc = 0.0
                    for j in range(s, e):
                        acc += x[i, j] * dx[i, j]
                    for j in range(s, e):
                        dx[i, j] = x[i, j] * (dx[i, j] - acc)
            t += 1
            c1 = 1.0 - beta1 ** t
            c2 = 1.0 - beta2 ** t
            for i in range(n):
                if not active[i]:
                    continue
                for j in range(d):
                    if not learn[i, j]:
                        continue
                    gij = dx[i, j]
                    m[i, j] = beta1 * m[i, j] + (1.0 - beta1) * gij
                    v[i, j] = beta2 * v[i, j] + (1.0 - beta2) * gij * gij
                    z[i, j] -= lr * (m[i, j] / c1) / (np.sqrt(v[i, j] / c2) + eps)
            it += 1
        return best_x, best_z, best, first, it

    @njit(cache=True)
    def nb_fixed_point(ws, bs, acts, x0, learn, enc, max_iter, tol):
        x = x0.copy()
        n, d = x.shape
        nl = len(ws)
        converged = np.zeros(n, dtype=np.bool_)
        trace = np.zeros(max_iter)
        hs = [x for _ in range(nl + 1)]
        zs = [x for _ in range(nl)]
        it = 0
        while it < max_iter:
            n_open = 0
            for i in range(n):
                if not converged[i]:
                    n_open += 1
            if n_open == 0:
                break
            out = _nb_forward(ws, bs, acts, x, hs, zs)
            prop = out @ enc
            worst = 0.0
            for i in range(n):
                if converged[i]:
                    continue
                delta = 0.0
                for j in range(d):
                    if learn[i, j]:
                        diff = prop[i, j] - x[i, j]
                        delta += diff * diff
                        x[i, j] = prop[i, j]
                if delta > worst:
                    worst = delta
                if delta <= tol:
                    converged[i] = True
            trace[it] = worst
            it += 1
        return x, converged, trace[:it], it

    @njit(cache=True)
    def nb_forward(ws, bs, acts, x):
        nl = len(ws)
        hs = [x for _ in range(nl + 1)]
        zs = [x for _ in range(nl)]
        return _nb_forward(ws, bs, acts, x, hs, zs)


# -- dispatch --------------------------------------------------------------

def _prep(ws, bs, acts):
    ws = tuple(np.ascontiguousarray(w, dtype=np.float64) for w in ws)
    bs = tuple(np.ascontiguousarray(b, dtype=np.float64) for b in bs)
    return ws, bs, np.asarray(acts, dtype=np.int64)


def _groups(gstart, gend):
    return (np.asarray(gstart, dtype=np.int64).reshape(-1),
            np.asarray(gend, dtype=np.int64).reshape(-1))


def map_descent(ws, bs, acts, z0, learn, gstart, gend, dec, ow, lr=1e-2, max_iter=2000,
                tol=1e-6, use_numba=None):
    """Adam on the learnable inputs, weights frozen; see module docstring.

    Returns ``(x_best, z_best, loss_best, loss_initial, iterations)``.
    """
    ws, bs, acts = _prep(ws, bs, acts)
    gstart, gend = _groups(gstart, gend)
    args = (ws, bs, acts, np.ascontiguousarray(z0, dtype=np.float64),
            np.ascontiguousarray(learn, dtype=np.bool_), gstart, gend,
            np.ascontiguousarray(dec, dtype=np.float64), np.ascontiguousarray(ow, dtype=np.float64),
            float(lr), int(max_iter), float(tol))
    if USE_NUMBA if use_numba is None else use_numba:
        return nb_map_descent(*args)
    return np_map_descent(*args)


def fixed_point(ws, bs, acts, x0, learn, enc, max_iter=2000, tol=1e-6, use_numba=None):
    """Iterate ``x[learn] <- (f(x) @ enc)[learn]``.

    Returns ``(x, converged_rows, max_sq_step_per_iteration, iterations)``.
    """
    ws, bs, acts = _prep(ws, bs, acts)
    args = (ws, bs, acts, np.ascontiguousarray(x0, dtype=np.float64),
            np.ascontiguousarray(learn, dtype=np.bool_),
            np.ascontiguousarray(enc, dtype=np.float64), int(max_iter), float(tol))
    if USE_NUMBA if use_numba is None else use_numba:
        return nb_fixed_point(*args)
    return np_fixed_point(*args)


def forward(ws, bs, acts, x, use_numba=None):
    ws, bs, acts = _prep(ws, bs, acts)
    x = np.ascontiguousarray(np.atleast_2d(x), dtype=np.float64)
    if USE_NUMBA if use_numba is None else use_numba:
        return nb_forward(ws, bs, acts, x)
    return np_forward(ws, bs, acts, x)
