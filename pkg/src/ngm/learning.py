"""Fitting the neural view: regression + soft-graph path penalty.

The network maps every (encoded) feature to a reconstruction of every
feature.  A binary mask ``S`` says which input units may reach which output
units; the penalty ``log(eps + ||P * S^c||)`` on the normalised path product
``P`` pushes forbidden paths to zero while the regression term fits data.
"""
from __future__ import annotations

import dataclasses
import logging
from dataclasses import dataclass, field

import numpy as np

from .graph import DependencyGraph, DependencyMask, complement_mask, expand_mask
from .data import FeatureSchema
from .numerics import (MlpParams, NonFiniteLossError, OptimizerState, adam_step, init_mlp,
                       masked_path_ratio, mlp_backward, mlp_forward, mlp_forward_cache,
                       path_dependency, path_penalty)

log = logging.getLogger(__name__)

LAMBDA_FLOOR = 1e-8
FALLBACK_LAMBDA = 1.0


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    hidden: int | None = None          # None -> 2 x input units
    layers: int = 2
    epochs_init: int = 100
    epochs: int = 400
    batch_size: int = 128
    lambda_mode: str = "fixed"         # "fixed" | "adaptive"
    lambda_value: float = 1.0
    norm: str = "l2"
    eps_log: float = 1e-12
    seed: int = 0
    val_split: float = 0.1
    lr: float = 1e-3
    activation: str = "relu"
    final_linear: bool = True
    self_dependency: bool = False      # allow x_i -> x_i paths
    enc_layers: int = 1                # projection models only
    dec_layers: int = 1

    def __post_init__(self):
        if self.hidden is not None and self.hidden < 1:
            raise ValueError("hidden size must be >= 1")
        if self.layers < 1:
            raise ValueError("need at least one layer")
        if self.epochs_init < 1 or self.epochs < 1:
            raise ValueError("epochs_init and epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lambda_mode not in ("fixed", "adaptive"):
            raise ValueError(f"unknown lambda mode {self.lambda_mode!r}")
        if self.lambda_mode == "fixed" and not 1e-2 <= self.lambda_value <= 1e2:
            raise ValueError("fixed lambda must lie in [1e-2, 1e2]")
        if self.norm not in ("l1", "l2"):
            raise ValueError(f"unknown structure norm {self.norm!r}")
        if not 0.0 <= self.val_split < 1.0:
            raise ValueError("val_split must be in [0, 1)")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unknown activation {self.activation!r}")
        if self.enc_layers < 0 or self.dec_layers < 0:
            raise ValueError("projection depths must be >= 0")

    def to_json(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class NgmModel:
    """A trained neural view plus everything needed to query it.

    ``segments`` counts encoder, core and decoder layers of ``params``;
    plain models have no encoder/decoder.  Masks are input-major and already
    expanded to units; ``mask`` is the core mask actually enforced.
    """

    params: MlpParams
    schema: FeatureSchema
    mask: DependencyMask
    config: TrainConfig
    binned: bool = False
    segments: tuple[int, int, int] = (0, 2, 0)
    enc_mask: DependencyMask | None = None
    dec_mask: DependencyMask | None = None
    lambda_trace: list[float] = field(default_factory=list)
    history: dict = field(default_factory=dict)
    final_losses: dict = field(default_factory=dict)
    graph: DependencyGraph | None = None
    variant: "NgmModel | None" = None

    @property
    def core_weights(self) -> list[np.ndarray]:
        ne, nc, _ = self.segments
        return self.params.weights[ne:ne + nc]

    @property
    def enc_weights(self) -> list[np.ndarray]:
        return self.params.weights[:self.segments[0]]

    @property
    def dec_weights(self) -> list[np.ndarray]:
        ne, nc, _ = self.segments
        return self.params.weights[ne + nc:]

    def predict(self, x_units: np.ndarray) -> np.ndarray:
        return mlp_forward(self.params, x_units)

    def path_matrix(self) -> np.ndarray:
        """End-to-end normalised path product, input units x output units."""
        return path_dependency(self.params.weights, normalize=True)

    def structure_ratio(self) -> float:
        return masked_path_ratio(self.core_weights, complement_mask(self.mask).matrix)

    def decode_matrix(self) -> np.ndarray:
        """Input units -> output units map used to compare inputs with outputs."""
        return decode_matrix(self.schema, self.binned)


def decode_matrix(schema: FeatureSchema, binned: bool) -> np.ndarray:
    din = sum(schema.input_widths(binned))
    dout = sum(schema.output_widths())
    dec = np.zeros((din, dout))
    for col, si, so in zip(schema, schema.slices(binned), schema.slices(False)):
        if binned and col.is_numeric:
            dec[si, so.start] = col.centers()
        else:
            dec[si, so] = np.eye(so.stop - so.start)
    return dec


def feature_mask(s: DependencyMask, schema: FeatureSchema, binned: bool = False,
                 self_dependency: bool = False) -> DependencyMask:
    """Expand a feature-level mask to units and optionally cut self paths."""
    m = np.array(s.matrix)
    if not self_dependency:
        np.fill_diagonal(m, 0)
    s = DependencyMask(m, s.row_labels, s.col_labels)
    return expand_mask(s, schema.input_widths(binned), schema.output_widths())


# -- losses ----------------------------------------------------------------

def regression_loss(model_or_params, x_in: np.ndarray, y: np.ndarray | None = None) -> float:
    """Mean squared reconstruction error per sample and output unit."""
    p = model_or_params.params if isinstance(model_or_params, NgmModel) else model_or_params
    x_in = np.asarray(x_in, dtype=float)
    y = x_in if y is None else np.asarray(y, dtype=float)
    if not (np.isfinite(x_in).all() and np.isfinite(y).all()):
        raise NonFiniteLossError("regression", "non-finite input")
    r = y - mlp_forward(p, x_in)
    return float(np.mean(r * r))


def structure_penalty(params, s_complement, norm_kind: str = "l2", eps_log: float = 1e-12) -> float:
    ws = params.weights if isinstance(params, MlpParams) else params
    sc = s_complement.matrix if isinstance(s_complement, DependencyMask) else s_complement
    return path_penalty(ws, sc, norm_kind, eps_log, normalize=True, need_grad=False)[0]


def lambda_init(params, s_complement) -> float:
    """Squared l2 norm of the masked, normalised path product."""
    ws = params.weights if isinstance(params, MlpParams) else params
    sc = s_complement.matrix if isinstance(s_complement, DependencyMask) else s_complement
    m = path_dependency(ws, normalize=True) * np.asarray(sc, dtype=float)
    return float((m * m).sum())


def objective_and_grad(params: MlpParams, x: np.ndarray, y: np.ndarray, segments, lambdas,
                       norm: str = "l2", eps_log: float = 1e-12, need_grad: bool = True):
    """Regression + sum of lambda-weighted path penalties.

    ``segments`` lists ``(first_layer, n_layers, s_complement, name)``;
    returns ``(total, terms, grads)`` with ``grads`` aligned to
    ``params.arrays()``.
    """
    out, cache = mlp_forward_cache(params, x)
    r = out - y
    reg = float(np.mean(r * r))
    if not np.isfinite(reg):
        raise NonFiniteLossError("regression", reg)
    terms = {"regression": reg}
    total = reg
    gws = gbs = None
    if need_grad:
        gws, gbs, _ = mlp_backward(params, cache, 2.0 * r / r.size)
    for (first, n, sc, name), lam in zip(segments, lambdas):
        ws = params.weights[first:first + n]
        val, g = path_penalty(ws, sc, norm, eps_log, normalize=True, need_grad=need_grad)
        if not np.isfinite(val):
            raise NonFiniteLossError(name, val)
        terms[name] = val
        total += lam * val
        if need_grad:
            for k, gk in enumerate(g):
                gws[first + k] = gws[first + k] + lam * gk
    return total, terms, (gws + gbs if need_grad else None)


# -- training --------------------------------------------------------------

def _split(n: int, frac: float, rng: np.random.Generator):
    perm = rng.permutation(n)
    n_val = int(round(frac * n))
    if n_val == 0 or n - n_val < 1:
        return perm, perm[:0]
    return perm[n_val:], perm[:n_val]


def _run_epochs(params, x, y, segments, lambdas_fn, cfg, epochs, rng, on_epoch=None):
    arrays = params.arrays()
    st = OptimizerState.for_params(arrays, lr=cfg.lr)
    n = len(x)
    bs = min(cfg.batch_size, n)
    for e in range(epochs):
        lambdas = lambdas_fn()
        order = rng.permutation(n)
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            _, _, grads = objective_and_grad(params, x[idx], y[idx], segments, lambdas,
                                             cfg.norm, cfg.eps_log)
            adam_step(arrays, grads, st)
        if not params.is_finite():
            raise NonFiniteLossError("parameters", f"epoch {e + 1}")
        if on_epoch is not None:
            on_epoch(e + 1)
    return params


def _dims(n_in, n_out, cfg):
    h = cfg.hidden if cfg.hidden is not None else 2 * n_in
    return [n_in] + [h] * (cfg.layers - 1) + [n_out]


def proximal_init(x_in, s_mask: DependencyMask, cfg: TrainConfig, y=None,
                  rng: np.random.Generator | None = None, layer_dims=None,
                  activations=None) -> MlpParams:
    """Fit the regression term alone for ``cfg.epochs_init`` epochs.

    ``s_mask`` only fixes the input/output unit counts here.
    """
    x_in = np.asarray(x_in, dtype=float)
    y = x_in if y is None else np.asarray(y, dtype=float)
    if cfg.epochs_init < 1:
        raise ValueError("epochs_init must be >= 1")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    n_in, n_out = s_mask.shape
    if x_in.shape[1] != n_in or y.shape[1] != n_out:
        raise ValueError(f"data has {x_in.shape[1]} inputs / {y.shape[1]} outputs, mask is "
                         f"{s_mask.shape}")
    dims = layer_dims or _dims(n_in, n_out, cfg)
    params = init_mlp(dims, rng, cfg.activation, cfg.final_linear, activations=activations)
    try:
        _run_epochs(params, x_in, y, [], lambda: [], cfg, cfg.epochs_init, rng)
    except NonFiniteLossError as exc:
        raise TrainingDivergedError(
            f"proximal initialisation diverged ({exc}); try a smaller step size (lr)") from exc
    return params


def _segments_for(model_segments, masks):
    """Penalty segments ``(first, n, S^c, name)`` for non-empty layer groups."""
    out = []
    ne, nc, nd = model_segments
    core_mask, enc_mask, dec_mask = masks
    out.append((ne, nc, complement_mask(core_mask).matrix.astype(float), "structure"))
    if ne and enc_mask is not None:
        out.append((0, ne, complement_mask(enc_mask).matrix.astype(float), "encoder"))
    if nd and dec_mask is not None:
        out.append((ne + nc, nd, complement_mask(dec_mask).matrix.astype(float), "decoder"))
    return out


def train(x_in, y, core_mask: DependencyMask, cfg: TrainConfig, *, segments=(0, None, 0),
          enc_mask=None, dec_mask=None, layer_dims=None, activations=None, fixed_lambdas=()):
    """Shared driver: proximal init, lambda rule, penalised epochs, best-iterate.

    ``fixed_lambdas`` pins the encoder/decoder constants (``None`` entries
    follow the core rule).  Returns ``(params, info)`` where ``info``
    carries traces and losses.
    """
    x_in = np.asarray(x_in, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(x_in) != len(y):
        raise ValueError("inputs and targets have different row counts")
    if not (np.isfinite(x_in).all() and np.isfinite(y).all()):
        raise NonFiniteLossError("regression", "non-finite input data")
    rng = np.random.default_rng(cfg.seed)
    tr, va = _split(len(x_in), cfg.val_split, rng)
    xt, yt = x_in[tr], y[tr]
    xv, yv = (x_in[va], y[va]) if len(va) else (xt, yt)

    ne, nc, nd = segments
    nc = cfg.layers if nc is None else nc
    segs = (ne, nc, nd)
    if layer_dims is None:
        n_in, n_out = core_mask.shape
        layer_dims = _dims(n_in, n_out, cfg)
    params0 = init_mlp(layer_dims, rng, cfg.activation, cfg.final_linear, activations=activations)
    reg_epoch0 = regression_loss(params0, xt, yt)

    # proximal initialisation
    try:
        _run_epochs(params0, xt, yt, [], lambda: [], cfg, cfg.epochs_init, rng)
    except NonFiniteLossError as exc:
        raise TrainingDivergedError(
            f"proximal initialisation diverged ({exc}); try a smaller step size (lr)") from exc
    params = params0
    reg_init = regression_loss(params, xt, yt)

    pen_segments = _segments_for(segs, (core_mask, enc_mask, dec_mask))
    adaptive = cfg.lambda_mode == "adaptive"

    def rule(seg):
        first, n, sc, _ = seg
        return lambda_init(params.weights[first:first + n], sc)

    pinned = dict(zip(("encoder", "decoder"), tuple(fixed_lambdas) + (None, None)))
    # per segment: a pinned value, or None to follow the lambda rule
    fixed = []
    lambdas = []
    fallback = False
    for seg in pen_segments:
        lam = pinned.get(seg[3])
        if lam is None and adaptive:
            lam = rule(seg)
            if lam < LAMBDA_FLOOR:
                log.info("adaptive %s lambda below %.0e; falling back to fixed lambda %.1f",
                         seg[3], LAMBDA_FLOOR, FALLBACK_LAMBDA)
                fallback = True
                fixed.append(FALLBACK_LAMBDA)
                lambdas.append(FALLBACK_LAMBDA)
                continue
            fixed.append(None)
        elif lam is None:
            lam = cfg.lambda_value
            fixed.append(lam)
        else:
            fixed.append(float(lam))
        lambdas.append(float(lam))
    adaptive = any(f is None for f in fixed)

    state = {"lambdas": list(lambdas)}
    trace = [state["lambdas"][0]]
    proj_trace = [state["lambdas"][1:]]
    hist = {"regression": [], "structure": [], "val_objective": [], "ratio": []}
    core_sc = pen_segments[0][2]

    def score(p):
        tot, terms, _ = objective_and_grad(p, xv, yv, pen_segments, state["lambdas"], cfg.norm,
                                           cfg.eps_log, need_grad=False)
        return tot, terms

    best_score, _ = score(params)
    best = params.copy()

    def on_epoch(e):
        nonlocal best_score, best
        if adaptive:
            state["lambdas"] = [rule(seg) if f is None else f
                                for seg, f in zip(pen_segments, fixed)]
        trace.append(state["lambdas"][0])
        proj_trace.append(state["lambdas"][1:])
        s, terms = score(params)
        _, tterms, _ = objective_and_grad(params, xt, yt, pen_segments, state["lambdas"],
                                          cfg.norm, cfg.eps_log, need_grad=False)
        hist["regression"].append(tterms["regression"])
        hist["structure"].append(tterms["structure"])
        hist["val_objective"].append(s)
        hist["ratio"].append(masked_path_ratio(params.weights[ne:ne + nc], core_sc))
        if s <= best_score:
            best_score = s
            best = params.copy()

    _run_epochs(params, xt, yt, pen_segments, lambda: state["lambdas"], cfg, cfg.epochs, rng,
                on_epoch)

    _, final_terms, _ = objective_and_grad(best, xt, yt, pen_segments, state["lambdas"],
                                           cfg.norm, cfg.eps_log, need_grad=False)
    info = {
        "lambda_trace": trace,
        "projection_lambda_trace": proj_trace,
        "history": hist,
        "final_losses": {
            **final_terms,
            "regression_epoch0": reg_epoch0,
            "regression_after_init": reg_init,
            "structure_ratio": masked_path_ratio(best.weights[ne:ne + nc], core_sc),
            "lambda_fallback": fallback,
        },
        "segments": segs,
    }
    return best, info


def fit_ngm(x, s: DependencyMask, cfg: TrainConfig, schema: FeatureSchema | None = None,
            y=None, graph: DependencyGraph | None = None, binned: bool = False) -> NgmModel:
    """Fit a plain neural view.

    ``x`` is the encoded (scaled, one-hot) data matrix.  ``s`` is either a
    feature-level mask (expanded through ``schema``) or already unit-level.
    """
    x = np.asarray(x, dtype=float)
    if schema is not None and s.shape == (len(schema), len(schema)):
        unit_mask = feature_mask(s, schema, binned, cfg.self_dependency)
    else:
        m = np.array(s.matrix)
        if not cfg.self_dependency and m.shape[0] == m.shape[1]:
            np.fill_diagonal(m, 0)
        unit_mask = DependencyMask(m, s.row_labels, s.col_labels)
    y = x if y is None else np.asarray(y, dtype=float)
    if unit_mask.shape != (x.shape[1], y.shape[1]):
        raise ValueError(f"mask {unit_mask.shape} does not match data "
                         f"({x.shape[1]} inputs, {y.shape[1]} outputs)")
    params, info = train(x, y, unit_mask, cfg)
    return NgmModel(params=params, schema=schema, mask=unit_mask, config=cfg, binned=binned,
                    segments=info["segments"], lambda_trace=info["lambda_trace"],
                    history=info["history"], final_losses=info["final_losses"], graph=graph)
