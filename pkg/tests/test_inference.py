import numpy as np
import pytest

from chain_fixture import gaussian_queries, standardized
from gradcheck import numeric_grads, rel_error
from mixed_fixture import empirical_conditional, make_coupled
from ngm import data, graph, kernels
from ngm.data import CATEGORICAL, DataError, Column, FeatureSchema, from_array
from ngm.graph import DependencyMask
from ngm.inference import (InferenceError, InferenceQuery, bin_support, clip_normalize,
                           conditional_distribution, conditional_distributions, gradient_map,
                           message_passing)
from ngm.learning import NgmModel, TrainConfig, fit_ngm
from ngm.numerics import MlpParams


def linear_model(w, schema):
    w = np.asarray(w, float)
    d = len(schema)
    eye = DependencyMask(np.ones((d, d)), tuple(schema.names), tuple(schema.names))
    p = MlpParams([w], [np.zeros(w.shape[0])], ("linear",))
    return NgmModel(p, schema, eye, TrainConfig(), segments=(0, 1, 0))


def continuous_schema(d, rng):
    _, schema = data.fit_schema(from_array(rng.normal(size=(50, d)), [f"f{i}" for i in range(d)]))
    return schema


@pytest.fixture(scope="module")
def coupled():
    scaled, schema, g, a, b = make_coupled(0)
    cfg = TrainConfig(seed=0, activation="tanh", eps_log=1.0, epochs_init=50, epochs=150)
    m = fit_ngm(data.encode(scaled, schema), graph.dependency_mask(g), cfg, schema, graph=g)
    return m, a, b


# -- clip-normalise ------------------------------------------------------------------------

def test_clip_normalize_examples():
    np.testing.assert_allclose(clip_normalize([0.7, 0.2, 0.1], 1e-3), [0.7, 0.2, 0.1])
    np.testing.assert_allclose(clip_normalize([1.0, 0.0], 1e-3), np.array([1.0, 1e-3]) / 1.001)
    np.testing.assert_allclose(clip_normalize([-3.0, 5.0], 1e-3), np.array([1e-3, 1.0]) / 1.001)


def test_clip_normalize_rows_sum_to_one(rng):
    p = clip_normalize(rng.normal(size=(20, 4)))
    np.testing.assert_allclose(p.sum(axis=1), 1.0, atol=1e-12)
    assert np.all(p > 0)


# -- queries ---------------------------------------------------------------------------------

def test_query_validation():
    with pytest.raises(InferenceError, match="both known and targeted"):
        InferenceQuery(known={"a": 1.0}, targets=("a",))
    with pytest.raises(InferenceError):
        InferenceQuery(eps=0.0)
    with pytest.raises(InferenceError):
        InferenceQuery(objective="everything")


def test_unknown_feature_rejected(rng):
    m = linear_model(np.eye(2), continuous_schema(2, rng))
    with pytest.raises(InferenceError, match="not in schema"):
        gradient_map(m, InferenceQuery(known={"zz": 1.0}))


def test_empty_targets_zero_loss(rng):
    m = linear_model(np.eye(2), continuous_schema(2, rng))
    res = gradient_map(m, InferenceQuery(known={"f0": 0.3}))
    assert res.assignment == {} and res.loss == 0.0 and res.converged


def test_empty_batch(rng):
    m = linear_model(np.eye(2), continuous_schema(2, rng))
    assert gradient_map(m, []) == [] and message_passing(m, []) == []


# -- gradient MAP ------------------------------------------------------------------------------

def test_swap_model_copies_known_value(rng):
    schema = continuous_schema(2, rng)
    m = linear_model([[0.0, 1.0], [1.0, 0.0]], schema)
    v = schema[0].mean + 0.7 * schema[0].std
    res = gradient_map(m, InferenceQuery(known={"f0": v}, targets=("f1",), max_iter=5000))
    z = (res.assignment["f1"] - schema[1].mean) / schema[1].std
    assert z == pytest.approx(0.7, abs=1e-2)
    assert res.loss <= res.initial_loss


def test_known_entries_untouched(chain, chain_model):
    qs, _, _ = gaussian_queries(chain, np.random.default_rng(2), 5)
    for q, res in zip(qs, gradient_map(chain_model, qs)):
        for name, v in q.known.items():
            f = chain.schema.index(name)
            assert res.units[f] == chain.schema[f].scale(v)


def test_loss_never_above_initial(chain, chain_model):
    qs, _, _ = gaussian_queries(chain, np.random.default_rng(3), 10)
    for res in gradient_map(chain_model, qs):
        assert res.loss <= res.initial_loss


def test_batch_equals_single(chain, chain_model):
    qs, tg, _ = gaussian_queries(chain, np.random.default_rng(4), 3)
    batch = gradient_map(chain_model, qs)
    for q, b in zip(qs, batch):
        s = gradient_map(chain_model, q)
        assert s.assignment == pytest.approx(b.assignment, abs=1e-9)


def test_conditional_means_match_gaussian(chain, chain_model):
    qs, tg, want = gaussian_queries(chain, np.random.default_rng(1000), 20)
    got = standardized(chain, gradient_map(chain_model, qs), tg)
    assert np.abs(got - want).max() < 0.15


def test_conditional_mean_slope_sign(chain, chain_model):
    # raising the first feature moves the second in the direction of -theta_01
    a, b = chain.names[:2]
    sd, mu = chain.schema[0].std, chain.schema[0].mean
    outs = []
    for v in (-1.0, 0.0, 1.0):
        known = {n: chain.schema[n].mean for n in chain.names if n != b}
        known[a] = mu + v * sd
        res = gradient_map(chain_model, InferenceQuery(known=known, targets=(b,)))
        outs.append(res.assignment[b])
    assert np.all(np.sign(np.diff(outs)) == np.sign(-chain.theta[0, 1]))


def test_input_loss_gradient_matches_fd():
    r = np.random.default_rng(8)
    schema = FeatureSchema((Column("a"), Column("k", CATEGORICAL, ("x", "y", "z")),
                            Column("b"), Column("c")))
    n_in = 6
    gs, ge = np.array([1]), np.array([4])
    dec = np.eye(n_in)
    for _ in range(5):
        ws = [r.normal(size=(8, n_in)), r.normal(size=(8, 8)), r.normal(size=(n_in, 8))]
        bs = [r.normal(size=8), r.normal(size=8), r.normal(size=n_in)]
        acts = (2, 2, 0)
        z = r.normal(size=(1, n_in))
        ow = (r.random((1, n_in)) < 0.7).astype(float)
        ow[0, 0] = 1.0
        _, _, dz = kernels.np_input_loss_grad(ws, bs, acts, z, gs, ge, dec, ow)
        num = numeric_grads(lambda: kernels.np_input_loss_grad(ws, bs, acts, z, gs, ge, dec,
                                                               ow)[1].sum(), [z])
        assert rel_error([dz], num) < 1e-4
    assert len(schema.slices(False)) == 4


# -- message passing ----------------------------------------------------------------------------

def test_identity_model_converges_immediately(rng):
    m = linear_model(np.eye(3), continuous_schema(3, rng))
    res = message_passing(m, InferenceQuery(known={"f0": 1.0}, targets=("f1",)))
    assert res.converged and res.iterations == 1


def test_all_known_no_iterations(rng):
    schema = continuous_schema(2, rng)
    m = linear_model(np.eye(2), schema)
    res = message_passing(m, InferenceQuery(known={"f0": 1.0, "f1": 2.0}))
    assert res.iterations == 0 and res.converged


def test_message_passing_not_converged_status(rng, caplog):
    schema = continuous_schema(2, rng)
    m = linear_model([[0.0, 0.0], [0.0, 2.0]], schema)
    m.params.biases[0][1] = 1.0  # x <- 2x + 1 runs away from its start
    res = message_passing(m, InferenceQuery(known={"f0": 0.0}, targets=("f1",), max_iter=3))
    assert res.status == "not_converged" and not res.converged
    assert "did not converge" in caplog.text


def test_message_passing_agrees_with_gradient(chain, chain_model):
    qs, tg, _ = gaussian_queries(chain, np.random.default_rng(1000), 20)
    a = standardized(chain, gradient_map(chain_model, qs), tg)
    b = standardized(chain, message_passing(chain_model, qs), tg)
    assert np.abs(a - b).max() < 0.1


def test_message_passing_rejects_binned(chain_model):
    with pytest.raises(InferenceError, match="binned"):
        message_passing(chain_model.variant, InferenceQuery(targets=("x0",)))


# -- distributions -------------------------------------------------------------------------------

def test_numeric_target_needs_variant(rng):
    m = linear_model(np.eye(2), continuous_schema(2, rng))
    with pytest.raises(InferenceError, match="binned variant"):
        conditional_distribution(m, InferenceQuery(known={"f0": 0.0}), "f1")


def test_one_bin_schema_rejected():
    with pytest.raises(DataError, match="2 bins"):
        Column("x", bins=1)


def test_numeric_distribution_over_bins(chain, chain_model):
    known = {n: chain.schema[n].mean for n in chain.names if n != "x4"}
    d = conditional_distribution(chain_model, InferenceQuery(known=known), "x4")
    assert len(d.probs) == 20 and d.support == bin_support(chain.schema["x4"])
    assert abs(d.probs.sum() - 1.0) < 1e-9 and np.all(d.probs > 0)


def test_categorical_distributions_normalised(coupled):
    m, _, _ = coupled
    qs = [InferenceQuery(known={"A": v}) for v in "01"] + [InferenceQuery()]
    for d in conditional_distributions(m, qs, "B"):
        assert d.support == ("0", "1")
        assert abs(d.probs.sum() - 1.0) < 1e-9 and np.all(d.probs > 0)


@pytest.mark.parametrize("av", [0, 1])
def test_coupled_binary_matches_counts(coupled, av):
    m, a, b = coupled
    d = conditional_distribution(m, InferenceQuery(known={"A": str(av)}), "B")
    assert abs(d.probs[1] - empirical_conditional(a, b, av)) < 0.1


def test_result_json_handles_nan(rng):
    m = linear_model(np.eye(2), continuous_schema(2, rng))
    res = message_passing(m, InferenceQuery(known={"f0": 0.0}, targets=("f1",)))
    js = res.to_json()
    assert js["initial_loss"] is None and isinstance(js["assignment"]["f1"], float)
