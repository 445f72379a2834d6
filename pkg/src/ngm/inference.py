"""Conditional queries against a trained model.

Two point-estimate procedures share one setup: observed features are
clamped, every other feature becomes a learnable input.

* :func:`gradient_map` freezes the weights and runs Adam on the learnable
  inputs until the network's reconstruction agrees with them.
* :func:`message_passing` repeatedly overwrites the unknown inputs with the
  network's outputs.

Categorical and binned blocks are kept on the probability simplex through a
softmax parameterisation.  :func:`conditional_distribution` turns the
result into a clipped, normalised distribution over categories or bins.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import kernels
from .data import CATEGORICAL, Column, FeatureSchema, encode_value

log = logging.getLogger(__name__)

OBJECTIVES = ("unknown", "known", "all")
EPS_CLIP = 1e-4
_NEG = -1e30


class InferenceError(ValueError):
    pass


@dataclass(frozen=True)
class InferenceQuery:
    """Observed raw values plus the features to report.

    Features that are neither known nor targets are still inferred (they are
    learnable), just not reported.
    """

    known: Mapping[str, object] = field(default_factory=dict)
    targets: Sequence[str] = ()
    max_iter: int = 2000
    eps: float = 1e-6
    lr: float = 1e-2
    objective: str = "unknown"

    def __post_init__(self):
        object.__setattr__(self, "known", dict(self.known))
        object.__setattr__(self, "targets", tuple(self.targets))
        overlap = set(self.known) & set(self.targets)
        if overlap:
            raise InferenceError(f"features both known and targeted: {sorted(overlap)}")
        if self.eps <= 0:
            raise InferenceError("convergence eps must be positive")
        if self.max_iter < 0:
            raise InferenceError("max_iter must be >= 0")
        if self.objective not in OBJECTIVES:
            raise InferenceError(f"objective must be one of {OBJECTIVES}")

    def check(self, schema: FeatureSchema):
        names = set(schema.names)
        extra = (set(self.known) | set(self.targets)) - names
        if extra:
            raise InferenceError(f"features not in schema: {sorted(extra)}")


def _finite_or_none(v):
    v = float(v)
    return v if np.isfinite(v) else None


@dataclass
class InferenceResult:
    assignment: dict
    loss: float
    initial_loss: float
    iterations: int
    converged: bool
    units: np.ndarray = field(repr=False, default=None)     # scaled input units
    outputs: np.ndarray = field(repr=False, default=None)   # network output units
    status: str = "ok"

    def to_json(self) -> dict:
        return {
            "assignment": {k: (v if isinstance(v, str) else float(v))
                           for k, v in self.assignment.items()},
            "loss": _finite_or_none(self.loss),
            "initial_loss": _finite_or_none(self.initial_loss),
            "iterations": int(self.iterations),
            "converged": bool(self.converged),
            "status": self.status,
        }


@dataclass(frozen=True)
class ConditionalDistribution:
    feature: str
    support: tuple
    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if len(p) != len(self.support):
            raise ValueError("support and probabilities differ in length")
        object.__setattr__(self, "probs", p)

    def to_json(self) -> dict:
        sup = [list(s) if isinstance(s, tuple) else s for s in self.support]
        return {"feature": self.feature, "support": sup, "probs": self.probs.tolist()}


def clip_normalize(v, eps: float = EPS_CLIP) -> np.ndarray:
    """Clip entries into ``[eps, 1]`` and rescale to sum to one."""
    v = np.clip(np.asarray(v, dtype=float), eps, 1.0)
    return v / v.sum(axis=-1, keepdims=True)


# -- unit layout -----------------------------------------------------------

@dataclass(frozen=True)
class Layout:
    """Where each feature lives in a model's input and output units."""

    schema: FeatureSchema
    binned: bool

    @property
    def in_slices(self) -> list[slice]:
        return self.schema.slices(self.binned)

    @property
    def out_slices(self) -> list[slice]:
        return self.schema.slices(False)

    @property
    def n_in(self) -> int:
        return sum(self.schema.input_widths(self.binned))

    def is_group(self, col: Column) -> bool:
        return col.kind == CATEGORICAL or (self.binned and col.is_numeric)

    def groups(self):
        starts, ends = [], []
        for col, sl in zip(self.schema, self.in_slices):
            if self.is_group(col):
                starts.append(sl.start)
                ends.append(sl.stop)
        return np.array(starts, dtype=np.int64), np.array(ends, dtype=np.int64)

    def prior_params(self) -> np.ndarray:
        """Learnable-parameter values for a fully unknown row."""
        z = np.zeros(self.n_in)
        for col, sl in zip(self.schema, self.in_slices):
            if col.kind == CATEGORICAL:
                z[sl] = 0.0  # uniform point of the simplex
            elif self.binned:
                marg = np.asarray(col.marginal if col.marginal is not None
                                  else np.full(col.bins, 1.0 / col.bins))
                z[sl] = np.log(np.maximum(marg, 1e-6))
            else:
                z[sl] = _scaled_mean(col)
        return z

    def known_params(self, col: Column, value) -> np.ndarray:
        """Parameter block pinning ``col`` to a raw ``value``."""
        u = encode_value(col, value, self.binned)
        if self.is_group(col):
            return np.where(u > 0.5, 0.0, _NEG)
        return u


def _scaled_mean(col: Column) -> float:
    if not col.constant:
        return 0.0
    # constant columns are stored unscaled
    return float(col.constant_value())


def layout_of(model) -> Layout:
    return Layout(model.schema, bool(model.binned))


def solve_units(model, z0: np.ndarray, known_feat: np.ndarray, objective: str = "unknown",
                lr: float = 1e-2, max_iter: int = 2000, tol: float = 1e-6):
    """Batched gradient descent on learnable inputs.

    ``z0`` holds per-row parameters (from :meth:`Layout.prior_params` /
    :meth:`Layout.known_params`), ``known_feat`` is a rows x features bool
    matrix.  Returns ``(x_best, outputs, loss_best, loss_initial, iterations)``.
    """
    lay = layout_of(model)
    known_feat = np.atleast_2d(np.asarray(known_feat, dtype=bool))
    n = len(z0)
    learn = np.zeros((n, lay.n_in), dtype=bool)
    ow = np.zeros((n, sum(model.schema.output_widths())))
    for f, (si, so) in enumerate(zip(lay.in_slices, lay.out_slices)):
        unk = ~known_feat[:, f]
        learn[:, si] = unk[:, None]
        if objective == "unknown":
            sel = unk
        elif objective == "known":
            sel = ~unk
        else:
            sel = np.ones(n, dtype=bool)
        ow[:, so] = sel[:, None]
    gs, ge = lay.groups()
    p = model.params
    x, _, loss, first, it = kernels.map_descent(
        p.weights, p.biases, p.act_codes, z0, learn, gs, ge, model.decode_matrix(), ow,
        lr=lr, max_iter=max_iter, tol=tol)
    out = kernels.forward(p.weights, p.biases, p.act_codes, x)
    return x, out, loss, first, it


def _rows_for(model, queries):
    lay = layout_of(model)
    prior = lay.prior_params()
    schema = model.schema
    z0 = np.tile(prior, (len(queries), 1))
    known = np.zeros((len(queries), len(schema)), dtype=bool)
    for r, q in enumerate(queries):
        q.check(schema)
        for name, value in q.known.items():
            f = schema.index(name)
            z0[r, lay.in_slices[f]] = lay.known_params(schema[f], value)
            known[r, f] = True
    return z0, known


def _decode_target(model, col: Column, f: int, x_row, out_row):
    lay = layout_of(model)
    if col.kind == CATEGORICAL:
        probs = clip_normalize(out_row[lay.out_slices[f]])
        return col.categories[int(np.argmax(probs))]
    block = x_row[lay.in_slices[f]]
    z = float(block @ col.centers()) if lay.binned else float(block[0])
    return float(col.unscale(z))


def _as_list(queries):
    if isinstance(queries, InferenceQuery):
        return [queries], True
    return list(queries), False


def gradient_map(model, queries):
    """Point estimates for one query or a batch (one Adam run for the batch).

    Known entries are returned as given; the reported loss is the best one
    reached, never above the loss at initialisation.
    """
    qs, single = _as_list(queries)
    if not qs:
        return []
    for q in qs:
        q.check(model.schema)
    groups = {}
    for r, q in enumerate(qs):
        groups.setdefault((q.objective, q.lr, q.max_iter, q.eps), []).append(r)
    results = [None] * len(qs)
    z0, known = _rows_for(model, qs)
    for (objective, lr, max_iter, eps), rows in groups.items():
        x, out, loss, first, it = solve_units(model, z0[rows], known[rows], objective, lr,
                                              max_iter, eps)
        for k, r in enumerate(rows):
            results[r] = _result(model, qs[r], x[k], out[k], loss[k], first[k], it, eps)
    return results[0] if single else results


def _result(model, q, x_row, out_row, loss, first, it, eps):
    schema = model.schema
    if not q.targets:
        return InferenceResult({}, 0.0, 0.0, 0, True, x_row, out_row)
    assignment = {}
    for t in q.targets:
        f = schema.index(t)
        assignment[t] = _decode_target(model, schema[f], f, x_row, out_row)
    converged = bool(loss <= eps)
    return InferenceResult(assignment, float(loss), float(first), int(it), converged, x_row,
                           out_row, "ok" if converged else "max_iter")


def message_passing(model, queries):
    """Fixed-point iteration ``x[U] <- f(x)[U]`` with known entries clamped.

    A row that has not settled after ``max_iter`` sweeps is returned with
    ``status == "not_converged"`` and a logged warning.
    """
    qs, single = _as_list(queries)
    if not qs:
        return []
    if model.binned:
        raise InferenceError("message passing needs matching input/output layouts; "
                             "use gradient_map on binned models")
    lay = layout_of(model)
    z0, known = _rows_for(model, qs)
    # simplex-parameterised blocks start from their softmax value
    x0 = z0.copy()
    for col, sl in zip(model.schema, lay.in_slices):
        if lay.is_group(col):
            blk = x0[:, sl]
            blk = np.exp(blk - blk.max(axis=1, keepdims=True))
            x0[:, sl] = blk / blk.sum(axis=1, keepdims=True)
    learn = np.zeros_like(x0, dtype=bool)
    for f, si in enumerate(lay.in_slices):
        learn[:, si] = ~known[:, f][:, None]
    enc = model.decode_matrix().T
    p = model.params
    results = [None] * len(qs)
    by_settings = {}
    for r, q in enumerate(qs):
        by_settings.setdefault((q.max_iter, q.eps), []).append(r)
    for (max_iter, eps), rows in by_settings.items():
        x, conv, trace, it = kernels.fixed_point(p.weights, p.biases, p.act_codes, x0[rows],
                                                 learn[rows], enc, max_iter=max_iter, tol=eps)
        out = kernels.forward(p.weights, p.biases, p.act_codes, x)
        for k, r in enumerate(rows):
            q = qs[r]
            assignment = {t: _decode_target(model, model.schema[t], model.schema.index(t),
                                            x[k], out[k]) for t in q.targets}
            ok = bool(conv[k]) or not learn[rows[k]].any()
            if not ok:
                log.warning("message passing did not converge in %d iterations", max_iter)
            resid = (out[k] @ enc - x[k])[learn[rows[k]]]
            res = InferenceResult(assignment, float(np.sum(resid ** 2)),
                                  float("nan"), int(it) if learn[rows[k]].any() else 0, ok,
                                  x[k], out[k], "ok" if ok else "not_converged")
            res.trace = trace
            results[r] = res
    return results[0] if single else results


# -- distributions ---------------------------------------------------------

def _binned_model(model):
    if model.binned:
        return model
    if getattr(model, "variant", None) is not None:
        return model.variant
    return None


def conditional_distribution(model, query: InferenceQuery, target: str,
                             eps_clip: float = EPS_CLIP) -> ConditionalDistribution:
    """Distribution of ``target`` given the query's observed values.

    Categorical targets read the network's one-hot output block; numeric
    targets need a binned variant and read the inferred bin block.
    """
    return conditional_distributions(model, [query], target, eps_clip)[0]


def conditional_distributions(model, queries, target: str, eps_clip: float = EPS_CLIP):
    qs = list(queries)
    col = model.schema[target]
    if col.kind == CATEGORICAL:
        use = model
    else:
        use = _binned_model(model)
        if use is None:
            raise InferenceError(f"numeric target {target!r} needs a binned variant of the model")
    qs = [q if target in q.targets else InferenceQuery(q.known, tuple(q.targets) + (target,),
                                                       q.max_iter, q.eps, q.lr, q.objective)
          for q in qs]
    results = gradient_map(use, qs)
    f = use.schema.index(target)
    lay = layout_of(use)
    dists = []
    for res in results:
        if col.kind == CATEGORICAL:
            raw = res.outputs[lay.out_slices[f]]
            support = tuple(col.categories)
        else:
            raw = res.units[lay.in_slices[f]]
            support = bin_support(use.schema[f])
        dists.append(ConditionalDistribution(target, support, clip_normalize(raw, eps_clip)))
    return dists


def bin_support(col: Column) -> tuple:
    """Bin intervals in raw units."""
    e = col.unscale(np.asarray(col.bin_edges))
    return tuple((float(a), float(b)) for a, b in zip(e[:-1], e[1:]))


def train_binned_variant(x_scaled, s, cfg, schema: FeatureSchema, graph=None):
    """Second network whose numeric inputs are bin one-hots.

    ``x_scaled`` is a scaled :class:`~ngm.data.Dataset`.  Outputs keep the
    plain layout, so the bin block of a numeric input is compared with the
    scalar output through bin centres.
    """
    from .data import Dataset, encode
    from .learning import fit_ngm

    for col in schema:
        if col.is_numeric and col.bins < 2:
            raise InferenceError(f"column {col.name!r}: binned variant needs >= 2 bins")
    if isinstance(x_scaled, Dataset):
        x_in = encode(x_scaled, schema, binned=True)
        y = encode(x_scaled, schema, binned=False)
    else:
        raise InferenceError("train_binned_variant expects a scaled Dataset")
    return fit_ngm(x_in, s, cfg, schema, y=y, graph=graph, binned=True)
