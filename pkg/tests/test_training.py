import math

import jax
import jax.numpy as jnp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from xlstm_pinn import autodiff as ad
from xlstm_pinn import model as mdl
from xlstm_pinn import problems as pb
from xlstm_pinn import training as tr

SMALL = dict(depth=1, width=5, micro_steps=2)


def _numpy_adam(theta, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    """Independent scalar Adam oracle."""
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        theta = theta - lr * (m / (1 - b1**t)) / (math.sqrt(v / (1 - b2**t)) + eps)
    return theta


class TestLoss:
    @pytest.mark.parametrize("name", pb.PDE_PROBLEMS)
    def test_reference_field_zero_terms(self, name):
        spec = pb.get_problem(name)
        br = tr.assemble_loss(spec, None, None, pb.sample(spec, 0), field=spec.reference)
        assert all(v < 1e-18 for v in br.terms.values())

    def test_zero_weights(self):
        spec = pb.get_problem("laplace2d")
        cfg = mdl.ModelConfig(in_dim=2, **SMALL)
        weights = {n: 0.0 for n in spec.term_names}
        br = tr.assemble_loss(spec, mdl.init(cfg, 0), cfg, pb.sample(spec, 0), weights)
        assert br.total == 0.0 and any(v > 0 for v in br.terms.values())

    def test_one_point_hand_assembled(self):
        spec = pb.get_problem("advection1d")
        sets = pb.SampleSets(np.array([[0.8, 0.0]]), {"t=0": np.zeros((0, 2)), "x=2": np.zeros((0, 2))})
        weights = {"residual": 2.5, "t=0": 0.0, "x=2": 0.0}
        br = tr.assemble_loss(spec, None, None, sets, weights, field=lambda p: p[..., 1])
        assert br.terms["residual"] == 1.0
        assert br.total == 2.5

    def test_empty_set_with_weight(self):
        spec = pb.get_problem("advection1d")
        sets = pb.SampleSets(np.array([[0.8, 0.0]]), {"t=0": np.zeros((0, 2)), "x=2": np.zeros((0, 2))})
        with pytest.raises(tr.ConfigurationError):
            tr.assemble_loss(spec, None, None, sets, field=lambda p: p[..., 1])

    def test_bad_weights(self):
        spec = pb.get_problem("laplace2d")
        with pytest.raises(tr.ConfigurationError):
            tr.resolve_weights(spec, {"nosuch": 1.0})
        with pytest.raises(tr.ConfigurationError):
            tr.resolve_weights(spec, {"y=0": -1.0})

    @settings(max_examples=50, deadline=None)
    @given(terms=st.lists(st.floats(0, 1e3), min_size=3, max_size=3),
           weights=st.lists(st.floats(0, 10), min_size=3, max_size=3))
    def test_total_recomputable(self, terms, weights):
        names = ("residual", "t=0", "x=2")
        br = tr.LossBreakdown.build(names, terms, dict(zip(names, weights)))
        again = 0.0
        for n in names:
            again += br.weights[n] * br.terms[n]
        assert br.total == again

    def test_reference_has_zero_gradient(self):
        # reference embedded as a "network" s * u* + c at s = 1, c = 0
        spec = pb.get_problem("poisson-beam")
        arrays = tr._sets_arrays(pb.sample(spec, 0), spec)
        w = jnp.ones(len(spec.term_names))

        def loss(p):
            field = lambda x: spec.reference(x) * p["s"] + p["c"]  # noqa: E731
            return jnp.sum(w * tr.term_values(spec, field, arrays))

        g = ad.param_grad(loss, {"s": jnp.asarray(1.0), "c": jnp.asarray(0.0)})
        assert np.linalg.norm(g) < 1e-9


class TestAdam:
    def test_first_step_is_lr(self):
        params = {"x": jnp.asarray([1.0, -2.0])}
        new, state = tr.adam_step(params, {"x": jnp.asarray([0.3, -5.0])}, tr.OptimState.zeros(params),
                                  tr.AdamConfig(lr=0.01))
        np.testing.assert_allclose(np.asarray(new["x"]), [0.99, -1.99], rtol=1e-9)
        assert int(state.step) == 1

    def test_zero_gradient(self):
        params = {"x": jnp.asarray([1.0, -2.0])}
        new, _ = tr.adam_step(params, {"x": jnp.zeros(2)}, tr.OptimState.zeros(params))
        assert np.array_equal(np.asarray(new["x"]), [1.0, -2.0])

    def test_quadratic_convergence(self):
        params = {"t": jnp.asarray(0.0)}
        state = tr.OptimState.zeros(params)
        cfg = tr.AdamConfig(lr=0.1)
        grads = []
        for _ in range(100):
            g = 2.0 * (float(params["t"]) - 3.0)
            grads.append(g)
            params, state = tr.adam_step(params, {"t": jnp.asarray(g)}, state, cfg)
        assert abs(float(params["t"]) - 3.0) < 0.05
        assert float(params["t"]) == pytest.approx(_numpy_adam(0.0, grads, 0.1), rel=1e-12)

    def test_step_count_increasing(self):
        params = {"x": jnp.ones(1)}
        state = tr.OptimState.zeros(params)
        steps = []
        for _ in range(3):
            params, state = tr.adam_step(params, {"x": jnp.ones(1)}, state)
            steps.append(int(state.step))
        assert steps == [1, 2, 3]

    def test_nonfinite_gradient(self):
        params = {"x": jnp.ones(2)}
        with pytest.raises(FloatingPointError):
            tr.adam_step(params, {"x": jnp.asarray([1.0, math.nan])}, tr.OptimState.zeros(params))

    def test_structure_mismatch(self):
        params = {"x": jnp.ones(2)}
        with pytest.raises(ValueError):
            tr.adam_step(params, {"x": jnp.ones(3)}, tr.OptimState.zeros(params))


class TestTrain:
    @pytest.fixture(scope="class")
    @classmethod
    def pair(cls):
        spec = pb.get_problem("advection1d")
        return tr.train_pair(spec, mdl.ModelConfig(in_dim=2, **SMALL), 3, 7)

    def test_budget_one(self):
        spec = pb.get_problem("laplace2d")
        rec = tr.train(spec, mdl.ModelConfig(in_dim=2, arch="baseline", depth=1, width=5), 1, 0)
        assert rec.iterations == 1 and rec.history.shape == (1, len(spec.term_names))

    def test_bad_budget(self):
        with pytest.raises(tr.ConfigurationError):
            tr.train(pb.get_problem("laplace2d"), mdl.ModelConfig(in_dim=2, **SMALL), 0, 0)

    def test_dimension_mismatch(self):
        with pytest.raises(tr.ConfigurationError):
            tr.train(pb.get_problem("laplace2d"), mdl.ModelConfig(in_dim=1, **SMALL), 1, 0)

    def test_paired_fairness(self, pair):
        x, b = pair["xlstm"], pair["baseline"]
        assert x.sample_digest == b.sample_digest
        assert abs(x.param_count - b.param_count) / x.param_count <= 0.02
        assert x.config["seed"] == b.config["seed"] and x.config["budget"] == b.config["budget"]
        assert b.model_config.arch == "baseline"

    def test_deterministic(self, pair):
        spec = pb.get_problem("advection1d")
        again = tr.train(spec, mdl.ModelConfig(in_dim=2, **SMALL), 3, 7)
        for a, b in zip(jax.tree_util.tree_leaves(pair["xlstm"].params), jax.tree_util.tree_leaves(again.params)):
            assert np.asarray(a).tobytes() == np.asarray(b).tobytes()
        assert again.history.tobytes() == pair["xlstm"].history.tobytes()

    def test_history_totals(self, pair):
        rec = pair["xlstm"]
        for i in range(rec.iterations):
            assert rec.breakdown(i).total == rec.totals[i]

    def test_record_round_trip(self, pair, tmp_path):
        rec = pair["baseline"]
        rec.save(tmp_path)
        back = tr.RunRecord.load(tmp_path)
        assert back.history.tobytes() == rec.history.tobytes()
        assert back.totals.tobytes() == rec.totals.tobytes()
        assert back.config == rec.config and back.sample_digest == rec.sample_digest
        for a, b in zip(jax.tree_util.tree_leaves(rec.params), jax.tree_util.tree_leaves(back.params)):
            assert np.asarray(a).tobytes() == np.asarray(b).tobytes()

    def test_nonfinite_stops(self):
        spec = pb.get_problem("laplace2d")
        cfg = mdl.ModelConfig(in_dim=2, arch="baseline", depth=1, width=5)
        rec = tr.train(spec, cfg, 5, 0, weights={"residual": 1e308, "y=1": 1e308})
        assert rec.status == "non-finite"
        assert rec.iterations < 5 and len(rec.totals) == rec.iterations
        assert all(np.all(np.isfinite(np.asarray(x))) for x in jax.tree_util.tree_leaves(rec.params))

    def test_predict_batches(self):
        cfg = mdl.ModelConfig(in_dim=2, **SMALL)
        p = mdl.init(cfg, 0)
        pts = np.random.default_rng(0).uniform(size=(50, 2))
        # batch shape changes XLA's kernel choice, so agreement is to rounding only
        np.testing.assert_allclose(tr.predict(p, cfg, pts, batch=7), tr.predict(p, cfg, pts), rtol=1e-13, atol=1e-16)


class TestTrend:
    @pytest.mark.parametrize("name", pb.PDE_PROBLEMS)
    def test_smoothed_loss_decreases(self, name):
        spec = pb.get_problem(name)
        rec = tr.train(spec, mdl.ModelConfig(in_dim=2, arch="baseline", depth=1, width=16), 200, 0)
        smooth = np.convolve(rec.totals, np.ones(100) / 100, mode="valid")
        assert smooth[-1] < smooth[0]
