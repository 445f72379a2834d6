"""Draw synthetic rows by conditioning feature after feature.

Each sample walks an ordering of the features.  The first feature comes from
its empirical marginal; every later one is drawn from the model's conditional
distribution given all features fixed so far.  Samples at the same depth are
solved together in one batched inference run.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data import CATEGORICAL, Column, Dataset, FeatureSchema
from .graph import DependencyGraph, bfs_order, moralize, topological_order
from .inference import (EPS_CLIP, InferenceError, clip_normalize, layout_of, solve_units)

log = logging.getLogger(__name__)

ORDERINGS = ("bfs", "topological")


@dataclass(frozen=True)
class SamplerConfig:
    """``presets`` maps feature names to raw values fixed in every sample."""

    count: int = 1000
    ordering: str = "bfs"
    seed: int = 0
    presets: Mapping[str, object] = field(default_factory=dict)
    max_iter: int = 500
    lr: float = 5e-2
    eps: float = 1e-6
    eps_clip: float = EPS_CLIP

    def __post_init__(self):
        if int(self.count) < 1:
            raise ValueError("sample count must be >= 1")
        if self.ordering not in ORDERINGS:
            raise ValueError(f"ordering must be one of {ORDERINGS}")
        if self.max_iter < 0 or self.lr <= 0 or self.eps <= 0:
            raise ValueError("max_iter must be >= 0; lr and eps positive")
        object.__setattr__(self, "presets", dict(self.presets))


def sampling_model(model):
    """The network that provides conditionals: the binned variant if needed."""
    if model.binned:
        return model
    if getattr(model, "variant", None) is not None:
        return model.variant
    if any(c.is_numeric for c in model.schema):
        raise InferenceError("sampling numeric features needs a binned variant of the model")
    return model


def feature_orderings(graph: DependencyGraph | None, names, ordering: str = "bfs") -> dict:
    """Ordering per start feature (BFS) or a single fixed order under ``None``."""
    if graph is None:
        return {None: list(names)}
    if set(graph.nodes) != set(names):
        raise ValueError("graph nodes do not match the model's features")
    if ordering == "topological":
        return {None: topological_order(graph)}
    g = graph if graph.is_undirected else moralize(graph)
    return {s: bfs_order(g, s) for s in names}


def draw_marginal(col: Column, rng: np.random.Generator):
    """One raw value from a column's stored empirical marginal."""
    probs = np.asarray(col.marginal, dtype=float)
    k = int(rng.choice(len(probs), p=probs / probs.sum()))
    return _value_from_bin(col, k, rng)


def _value_from_bin(col: Column, k: int, rng: np.random.Generator):
    if col.kind == CATEGORICAL:
        return col.categories[k]
    if col.constant:
        return float(col.constant_value())
    lo, hi = col.bin_edges[k], col.bin_edges[k + 1]
    return float(col.unscale(rng.uniform(lo, hi)))


def _draw(col: Column, probs: np.ndarray, rng: np.random.Generator):
    k = int(rng.choice(len(probs), p=probs))
    return _value_from_bin(col, k, rng)


def _order_for(orders: dict, names, rng, presets) -> list[int]:
    if None in orders:
        seq = orders[None]
    else:
        seq = orders[names[int(rng.integers(len(names)))]]
    return [names.index(n) for n in seq if n not in presets]


def sample_batch(model, graph: DependencyGraph | None, cfg: SamplerConfig) -> Dataset:
    """``cfg.count`` samples in raw units.

    Sample ``r`` draws from its own stream ``default_rng([seed, r])``, used
    for its start feature and every conditional draw.
    """
    graph = graph if graph is not None else getattr(model, "graph", None)
    orders = feature_orderings(graph, sampling_model(model).schema.names, cfg.ordering)
    return _sample_rows(model, orders, cfg)


def _sample_rows(model, orders: dict, cfg: SamplerConfig) -> Dataset:
    net = sampling_model(model)
    schema: FeatureSchema = net.schema
    names = schema.names
    for p in cfg.presets:
        if p not in names:
            raise ValueError(f"preset feature {p!r} not in schema")
    n, d = int(cfg.count), len(names)
    lay = layout_of(net)
    rngs = [np.random.default_rng([int(cfg.seed), r]) for r in range(n)]
    order = [_order_for(orders, names, g, cfg.presets) for g in rngs]

    z = np.tile(lay.prior_params(), (n, 1))
    known = np.zeros((n, d), dtype=bool)
    values = np.empty((n, d), dtype=object)

    def fix(r, f, value):
        z[r, lay.in_slices[f]] = lay.known_params(schema[f], value)
        known[r, f] = True
        values[r, f] = value

    for name, value in cfg.presets.items():
        f = names.index(name)
        for r in range(n):
            fix(r, f, value)

    depth = 0
    if not cfg.presets and d:
        for r in range(n):
            f = order[r][0]
            fix(r, f, draw_marginal(schema[f], rngs[r]))
        depth = 1
    n_free = d - len(cfg.presets)
    warned = 0
    while depth < n_free:
        x, out, loss, _, _ = solve_units(net, z, known, "unknown", cfg.lr, cfg.max_iter, cfg.eps)
        for r in range(n):
            f = order[r][depth]
            col = schema[f]
            if col.kind == CATEGORICAL:
                raw = out[r, lay.out_slices[f]]
            else:
                raw = x[r, lay.in_slices[f]]
            fix(r, f, _draw(col, clip_normalize(raw, cfg.eps_clip), rngs[r]))
        warned += int(np.sum(~np.isfinite(loss)))
        depth += 1
    if warned:
        log.warning("%d conditional solves returned non-finite losses", warned)
    cols = []
    for f, col in enumerate(schema):
        v = values[:, f]
        cols.append(v.astype(object) if col.kind == CATEGORICAL else v.astype(float))
    return Dataset(schema, tuple(cols))


def get_sample(model, ordering, rng: np.random.Generator, presets=None, **kw) -> dict:
    """One sample following an explicit feature ``ordering`` (names).

    The first non-preset feature comes from its marginal unless presets are
    given, in which case it is conditioned on them.
    """
    net = sampling_model(model)
    names = net.schema.names
    presets = dict(presets or {})
    if sorted(ordering) != sorted(names):
        raise ValueError("ordering must be a permutation of the model's features")
    seed = int(rng.integers(2 ** 63 - 1))
    cfg = SamplerConfig(count=1, seed=seed, presets=presets, **kw)
    ds = _sample_rows(model, {None: list(ordering)}, cfg)
    return {name: ds.column(name)[0] for name in names}
