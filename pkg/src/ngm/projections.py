"""Per-feature encoder/decoder wrappers around the neural view.

The network becomes ``encoder -> core -> decoder`` in a single MLP.  Encoder
and decoder connectivity is itself soft-constrained: each feature's input
units may only reach its own encoder units, and each feature's decoder units
only its own output units.  Both masks are block diagonal.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import FeatureSchema
from .graph import DependencyMask, expand_mask
from .learning import NgmModel, TrainConfig, train
from .numerics import path_dependency


class ProjectionError(ValueError):
    pass


@dataclass(frozen=True)
class ProjectionSpec:
    """Unit widths per feature plus the block-diagonal wrapper masks.

    ``lambda_enc`` / ``lambda_dec`` of ``None`` follow the core lambda rule.
    """

    names: tuple
    in_widths: tuple
    enc_widths: tuple
    out_widths: tuple
    enc_mask: DependencyMask
    dec_mask: DependencyMask
    lambda_enc: float | None = None
    lambda_dec: float | None = None

    def __post_init__(self):
        if not self.names:
            raise ProjectionError("projection needs at least one feature")
        for ws in (self.in_widths, self.enc_widths, self.out_widths):
            if len(ws) != len(self.names) or min(ws) < 1:
                raise ProjectionError("every feature needs widths >= 1")
        if self.enc_mask.shape != (sum(self.in_widths), sum(self.enc_widths)):
            raise ProjectionError("encoder mask shape does not match widths")
        if self.dec_mask.shape != (sum(self.enc_widths), sum(self.out_widths)):
            raise ProjectionError("decoder mask shape does not match widths")

    @property
    def n_in(self) -> int:
        return sum(self.in_widths)

    @property
    def n_enc(self) -> int:
        return sum(self.enc_widths)

    @property
    def n_out(self) -> int:
        return sum(self.out_widths)


def _block_identity(names, rows, cols) -> DependencyMask:
    eye = DependencyMask(np.eye(len(names), dtype=np.int8), tuple(names), tuple(names))
    return expand_mask(eye, list(rows), list(cols))


def build_projection(schema: FeatureSchema, binned: bool = False, lambda_enc=None,
                     lambda_dec=None) -> ProjectionSpec:
    """Block-diagonal encoder/decoder masks with encoder width = input width."""
    if schema is None or len(schema) == 0:
        raise ProjectionError("cannot build a projection for an empty schema")
    names = tuple(schema.names)
    ins = tuple(schema.input_widths(binned))
    outs = tuple(schema.output_widths())
    enc = ins
    return ProjectionSpec(names, ins, enc, outs, _block_identity(names, ins, enc),
                          _block_identity(names, enc, outs), lambda_enc, lambda_dec)


def _layer_plan(spec: ProjectionSpec, cfg: TrainConfig):
    hidden = cfg.hidden if cfg.hidden is not None else 2 * spec.n_enc
    ne, nd = cfg.enc_layers, cfg.dec_layers
    if ne < 1 or nd < 1:
        raise ProjectionError("encoder and decoder need at least one layer each")
    dims = [spec.n_in] + [spec.n_enc] * ne
    dims += [hidden] * (cfg.layers - 1) + [spec.n_enc]
    dims += [spec.n_enc] * (nd - 1) + [spec.n_out]
    core_acts = [cfg.activation] * (cfg.layers - 1) + ["linear"]
    if not cfg.final_linear:
        core_acts[-1] = cfg.activation
    acts = ["linear"] * ne + core_acts + ["linear"] * nd
    return dims, tuple(acts)


def fit_ngm_generic(x, s: DependencyMask, spec: ProjectionSpec, cfg: TrainConfig,
                    schema: FeatureSchema | None = None, y=None, graph=None,
                    binned: bool = False) -> NgmModel:
    """Train encoder + core + decoder end to end under all three soft masks.

    ``s`` is the feature-level dependency mask; it is expanded over the
    encoder widths for the core.
    """
    x = np.asarray(x, dtype=float)
    y = x if y is None else np.asarray(y, dtype=float)
    if x.shape[1] != spec.n_in or y.shape[1] != spec.n_out:
        raise ProjectionError(f"data has {x.shape[1]} inputs / {y.shape[1]} outputs, projection "
                              f"expects {spec.n_in} / {spec.n_out}")
    if s.shape != (len(spec.names), len(spec.names)):
        raise ProjectionError(f"feature mask {s.shape} does not match {len(spec.names)} features")
    core = np.array(s.matrix)
    if not cfg.self_dependency:
        np.fill_diagonal(core, 0)
    core_mask = expand_mask(DependencyMask(core, s.row_labels, s.col_labels),
                            list(spec.enc_widths), list(spec.enc_widths))
    dims, acts = _layer_plan(spec, cfg)
    segs = (cfg.enc_layers, cfg.layers, cfg.dec_layers)
    params, info = train(x, y, core_mask, cfg, segments=segs,
                         enc_mask=spec.enc_mask, dec_mask=spec.dec_mask, layer_dims=dims,
                         activations=acts, fixed_lambdas=(spec.lambda_enc, spec.lambda_dec))
    return NgmModel(params=params, schema=schema, mask=core_mask, config=cfg, binned=binned,
                    segments=info["segments"], enc_mask=spec.enc_mask, dec_mask=spec.dec_mask,
                    lambda_trace=info["lambda_trace"], history=info["history"],
                    final_losses=info["final_losses"], graph=graph)


def feature_block_paths(model: NgmModel) -> np.ndarray:
    """End-to-end normalised path mass summed into feature x feature blocks."""
    p = path_dependency(model.params.weights, normalize=True)
    ins = model.schema.slices(model.binned)
    outs = model.schema.slices(False)
    return np.array([[p[si, so].sum() for so in outs] for si in ins])


def feature_block_ratio(model: NgmModel, s: DependencyMask | None = None) -> float:
    """Share of end-to-end path mass between feature pairs that ``s`` forbids.

    Defaults to the feature-level pattern of the model's own core mask.
    """
    blocks = feature_block_paths(model)
    if s is None:
        allowed = _feature_allowed(model)
    else:
        allowed = np.asarray(s.matrix, dtype=bool).copy()
        if not model.config.self_dependency:
            np.fill_diagonal(allowed, False)
    total = blocks.sum()
    return float(blocks[~allowed].sum() / total) if total > 0 else 0.0


def _feature_allowed(model: NgmModel) -> np.ndarray:
    """Read the feature pattern off the first unit of each block of the core mask."""
    in_w = model.schema.input_widths(model.binned)
    out_w = in_w if model.enc_mask is not None else model.schema.output_widths()
    rows = np.cumsum([0] + list(in_w))[:-1]
    cols = np.cumsum([0] + list(out_w))[:-1]
    return np.asarray(model.mask.matrix, dtype=bool)[np.ix_(rows, cols)]
