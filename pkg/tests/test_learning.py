from dataclasses import replace

import numpy as np
import pytest

from chain_fixture import CHAIN_CFG
from ngm.graph import DependencyMask, complement_mask
from ngm.learning import (TrainConfig, TrainingDivergedError, _split, feature_mask, fit_ngm,
                          lambda_init, proximal_init, regression_loss, structure_penalty, train)
from ngm.numerics import MlpParams, init_mlp

QUICK = TrainConfig(hidden=8, epochs_init=20, epochs=40)


def eye_mask(d):
    names = tuple(f"f{i}" for i in range(d))
    return DependencyMask(np.eye(d), names, names)


def full_mask(d):
    names = tuple(f"f{i}" for i in range(d))
    return DependencyMask(np.ones((d, d)), names, names)


def linear(w, b=None):
    w = np.asarray(w, float)
    return MlpParams([w], [np.zeros(w.shape[0]) if b is None else b], ("linear",))


# -- config -----------------------------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(hidden=0), dict(epochs_init=0), dict(epochs=0),
                                dict(lambda_value=1e-3), dict(lambda_value=1e3),
                                dict(val_split=1.0), dict(norm="l3"), dict(lambda_mode="auto"),
                                dict(activation="gelu"), dict(batch_size=0)])
def test_config_invariants(kw):
    with pytest.raises(ValueError):
        TrainConfig(**kw)


def test_config_json_roundtrip():
    cfg = TrainConfig(hidden=5, lambda_mode="adaptive", norm="l1")
    assert TrainConfig.from_json(cfg.to_json()) == cfg


# -- losses --------------------------------------------------------------------------------

def test_regression_identity_is_zero(rng):
    assert regression_loss(linear(np.eye(3)), rng.normal(size=(10, 3))) == 0.0


def test_regression_zero_map_unit_normalised():
    assert regression_loss(linear(np.zeros((2, 2))), np.array([[1.0, -1.0]])) == 1.0


def test_regression_rejects_non_finite():
    with pytest.raises(FloatingPointError):
        regression_loss(linear(np.eye(2)), np.array([[np.nan, 0.0]]))


def test_structure_penalty_examples():
    assert structure_penalty(linear(np.eye(2)), np.zeros((2, 2))) == pytest.approx(np.log(1e-12))
    assert structure_penalty(linear(np.zeros((2, 2))), np.ones((2, 2))) == pytest.approx(
        np.log(1e-12))
    w = np.array([[0.6, 0.8], [0.0, 1.0]])
    assert structure_penalty(linear(w), np.array([[0, 0], [1, 0]]), "l1") == pytest.approx(
        np.log(1e-12 + 0.8))


def test_lambda_init_examples():
    assert lambda_init(linear(np.eye(2)), np.zeros((2, 2))) == 0.0
    w = np.array([[0.6, 0.8], [0.0, 1.0]])
    assert lambda_init(linear(w), np.array([[0, 0], [1, 0]])) == pytest.approx(0.64)


# -- proximal init ---------------------------------------------------------------------------

def test_proximal_init_improves_on_random_init():
    r = np.random.default_rng(0)
    x1 = r.normal(size=500)
    x = np.column_stack([x1, 0.5 * x1 + 0.1 * r.normal(size=500)])
    cfg = TrainConfig(hidden=4, epochs_init=30)
    p0 = init_mlp([2, 4, 2], np.random.default_rng(0))
    p = proximal_init(x, full_mask(2), cfg)
    assert regression_loss(p, x) < regression_loss(p0, x)


def test_proximal_init_shape_check(rng):
    with pytest.raises(ValueError):
        proximal_init(rng.normal(size=(10, 3)), full_mask(2), QUICK)


def test_proximal_init_diverges_loudly(rng):
    with np.errstate(over="ignore", invalid="ignore"), \
            pytest.raises(TrainingDivergedError, match="smaller step size"):
        fit_ngm(rng.normal(size=(50, 3)), eye_mask(3), replace(QUICK, lr=1e200))


def test_proximal_init_near_full_graph_bound(chain, full_model):
    # oracle: a model trained against the complete graph bounds what init can reach
    cfg = replace(CHAIN_CFG, epochs_init=200)
    p = proximal_init(chain.x, full_mask(10), cfg)
    assert regression_loss(p, chain.x) <= 1.2 * full_model.final_losses["regression"]


# -- lambda rules -------------------------------------------------------------------------------

def _init_params(x, cfg, n_out):
    """Replays the trainer's random stream up to the end of proximal init."""
    rng = np.random.default_rng(cfg.seed)
    tr, _ = _split(len(x), cfg.val_split, rng)
    return proximal_init(x[tr], full_mask(n_out), cfg, rng=rng)


def _standalone_lambda(ws, sc):
    q = None
    for w in ws:
        a = np.abs(w / np.linalg.norm(w, axis=1, keepdims=True))
        q = a if q is None else a @ q
    m = q.T * sc
    return float(np.sum(m ** 2))


def test_adaptive_lambda_recomputed_independently(chain):
    cfg = replace(CHAIN_CFG, epochs_init=20, epochs=2, lambda_mode="adaptive")
    s = feature_mask(chain.s, chain.schema)
    _, info = train(chain.x, chain.x, s, cfg)
    p = _init_params(chain.x, cfg, 10)
    want = _standalone_lambda(p.weights, complement_mask(s).matrix)
    assert info["lambda_trace"][0] == pytest.approx(want, rel=1e-12)


def test_lambda_trace_lengths(rng):
    x = rng.normal(size=(200, 3))
    m = fit_ngm(x, eye_mask(3), replace(QUICK, lambda_mode="adaptive", self_dependency=True))
    assert len(m.lambda_trace) == QUICK.epochs + 1
    assert len(set(m.lambda_trace)) > 1
    m = fit_ngm(x, eye_mask(3), replace(QUICK, lambda_value=0.5))
    assert m.lambda_trace == [0.5] * (QUICK.epochs + 1)


def test_adaptive_falls_back_when_nothing_is_forbidden(rng):
    m = fit_ngm(rng.normal(size=(100, 3)), full_mask(3),
                replace(QUICK, lambda_mode="adaptive", self_dependency=True))
    assert m.final_losses["lambda_fallback"]
    assert set(m.lambda_trace) == {1.0}


# -- fitting ---------------------------------------------------------------------------------------

def test_full_graph_structure_term_constant(rng):
    m = fit_ngm(rng.normal(size=(100, 3)), full_mask(3), replace(QUICK, self_dependency=True))
    np.testing.assert_allclose(m.history["structure"], np.log(1e-12))


def test_identity_mask_off_diagonal_mass_shrinks():
    x = np.random.default_rng(0).normal(size=(500, 3))
    m = fit_ngm(x, eye_mask(3), TrainConfig(hidden=8, epochs_init=20, epochs=60,
                                            self_dependency=True))
    r = m.history["ratio"]
    spots = [r[k] for k in (0, 14, 29, 44, 59)]
    assert all(b <= a for a, b in zip(spots, spots[1:]))
    assert spots[-1] < 0.5 * spots[0]


def test_self_dependency_removed_by_default(chain):
    m = feature_mask(chain.s, chain.schema)
    assert np.all(np.diag(m.matrix) == 0)
    m = feature_mask(chain.s, chain.schema, self_dependency=True)
    assert np.all(np.diag(m.matrix) == 1)


def test_training_reproducible(rng):
    x = rng.normal(size=(150, 4))
    a = fit_ngm(x, eye_mask(4), replace(QUICK, seed=3, self_dependency=True))
    b = fit_ngm(x, eye_mask(4), replace(QUICK, seed=3, self_dependency=True))
    for k in ("regression", "structure"):
        assert abs(a.final_losses[k] - b.final_losses[k]) <= 1e-10
    for wa, wb in zip(a.params.arrays(), b.params.arrays()):
        assert wa.tobytes() == wb.tobytes()


def test_mask_data_mismatch(rng):
    with pytest.raises(ValueError, match="does not match"):
        fit_ngm(rng.normal(size=(20, 3)), eye_mask(4), QUICK)


def test_chain_fit_respects_structure(chain_model, full_model):
    assert chain_model.structure_ratio() < 0.05
    assert len(chain_model.lambda_trace) >= 1
    fl = chain_model.final_losses
    assert fl["regression"] <= fl["regression_epoch0"]
    assert fl["regression"] <= 1.5 * full_model.final_losses["regression"]


def test_binned_variant_loss_close_to_plain(chain_model):
    v = chain_model.variant
    assert v.binned and v.params.in_dim == 10 * 20
    assert v.final_losses["regression"] <= 1.5 * chain_model.final_losses["regression"]
