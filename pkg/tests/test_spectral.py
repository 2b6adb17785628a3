import math

import jax.numpy as jnp
import jax.scipy.linalg as jsl
import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from xlstm_pinn import model as mdl
from xlstm_pinn import spectral as sp
from xlstm_pinn import verify as vf


def _probe_block(seed, width=5, scale=0.8):
    cfg = sp.probe_config(width=width, depth=1, micro_steps=1)
    rng = np.random.default_rng(seed)
    block = {k: jnp.asarray(rng.normal(0.0, scale, np.shape(v))) for k, v in mdl.init(cfg, 0)["blocks"][0].items()}
    return block, cfg


class TestComputeA:
    def test_zero_weights(self):
        cfg = sp.probe_config(width=4)
        block = {k: jnp.zeros_like(v) for k, v in mdl.init(cfg, 0)["blocks"][0].items()}
        assert np.all(sp.compute_A(block, cfg) == 0.0)

    def test_zero_candidate_bias_kills_input_term(self):
        block, cfg = _probe_block(1)
        w = cfg.width
        block = dict(block)
        block["b"] = block["b"].at[3 * w:].set(0.0)  # b_z = 0, so z = 0 at u = 0
        no_input_gate = dict(block)
        no_input_gate["W"] = block["W"].at[:, :w].set(0.0)
        np.testing.assert_array_equal(sp.compute_A(block, cfg), sp.compute_A(no_input_gate, cfg))

    def test_matches_finite_differences(self):
        d = vf.check_compute_A(n_draws=10)
        assert d["max_abs_entry_error"] < 1e-6

    def test_matches_autodiff_jacobian(self):
        import jax

        block, cfg = _probe_block(3)
        u0 = np.random.default_rng(0).normal(0.0, 0.5, cfg.width)

        def disp(u):
            nxt, _ = mdl.micro_step(u, mdl.BlockState.zeros(u), block, cfg)
            return nxt - u

        J = np.asarray(jax.jacfwd(disp)(jnp.asarray(u0)))
        np.testing.assert_allclose(sp.compute_A(block, cfg, u0), J, rtol=1e-12, atol=1e-13)

    def test_requires_sigmoid_lstm(self):
        cfg = mdl.ModelConfig(in_dim=1, depth=1, width=4)
        with pytest.raises(ValueError):
            sp.compute_A(mdl.init(cfg, 0)["blocks"][0], cfg)


class TestEffectiveMap:
    def test_zero(self):
        M, smin, smax = sp.effective_map(np.zeros((3, 3)), 4)
        assert np.array_equal(M, np.eye(3)) and smin == smax == 1.0

    def test_diagonal(self):
        _, smin, smax = sp.effective_map(np.diag([0.1] * 4), 1)
        assert smin == pytest.approx(1.1) and smax == pytest.approx(1.1)

    def test_s_must_be_positive(self):
        with pytest.raises(ValueError):
            sp.effective_map(np.zeros((2, 2)), 0)

    def test_exponential_gap_shrinks(self):
        A = np.random.default_rng(0).normal(0.0, 0.3, (5, 5))
        S = 3
        gaps = []
        for scale in (1.0, 0.5, 0.25):
            M, _, _ = sp.effective_map(scale * A, S)
            gaps.append(np.linalg.norm(M - np.asarray(jsl.expm(S * scale * jnp.asarray(A))), 2))
        # the gap is O(||A||^2): each halving cuts it by roughly four
        assert gaps[0] > gaps[1] > gaps[2]
        assert gaps[1] / gaps[2] > 3.0


class TestKernelPair:
    def _phi(self, n=64, w=6, seed=0):
        x = np.linspace(-1, 1, n)
        W = np.random.default_rng(seed).normal(size=(1, w))
        return np.tanh(x[:, None] @ W + 0.1)

    def test_zero_A(self):
        probe = sp.kernel_pair(self._phi(), np.zeros((6, 6)), 3, [1, 2, 3])
        np.testing.assert_allclose(probe.ratio, 1.0, rtol=1e-15)

    def test_lambda_base_two_ways(self):
        Phi = self._phi()
        probe = sp.kernel_pair(Phi, np.zeros((6, 6)), 1, [1, 2, 5])
        n = Phi.shape[0]
        x = np.linspace(-1, 1, n)
        for k, lb in zip(probe.ks, probe.lam_base):
            phi_k = np.sin(2 * math.pi * k * x)
            quad = phi_k @ Phi @ Phi.T @ phi_k / n
            assert lb == pytest.approx(quad, rel=1e-12)

    def test_symmetric_eigenvector(self):
        rng = np.random.default_rng(1)
        Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
        betas = np.array([0.1, 0.3, 0.6, 1.2])
        A = Q @ np.diag(betas) @ Q.T
        lb, lx, rho, _ = sp.lift_eigenvalues(Q.T, A, 1)
        np.testing.assert_allclose(lx / lb, (1 + betas) ** 2, rtol=1e-12)
        np.testing.assert_allclose(rho, betas, rtol=1e-12)

    @settings(max_examples=200, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), w=st.integers(2, 8))
    def test_s1_bound_property(self, seed, w):
        rng = np.random.default_rng(seed)
        A = rng.normal(0.0, 1.0 / math.sqrt(w), (w, w))
        v = rng.normal(size=(3, w))
        lb, lx, rho, _ = sp.lift_eigenvalues(v, A, 1)
        # identity: lx = lb (1 + 2 rho) + ||A^T v||^2, so the slack is the nonnegative last term
        slack = lx - lb * (1 + 2 * rho)
        np.testing.assert_allclose(slack, np.sum((v @ A) ** 2, axis=1), rtol=1e-9, atol=1e-12)
        assert np.all(lx / lb >= 1 + 2 * rho - 1e-12)

    def test_degenerate(self):
        probe = sp.kernel_pair(np.zeros((32, 4)), np.eye(4) * 0.1, 2, [1, 2])
        assert probe.degenerate.all() and np.all(np.isnan(probe.ratio))
        assert math.isnan(probe.bound_pass_rate())

    def test_probe_from_network(self):
        cfg = sp.probe_config(width=8)
        probe = sp.build_probe(mdl.init(cfg, 0), cfg, ks=[1, 2, 3], n=128)
        assert probe.Phi.shape == (128, 8) and probe.S == 3
        assert len(probe.rows()) == 3
        assert np.all(probe.lam_base > 0)


class TestModal:
    def test_lambda_doubled_halves_tau(self):
        t1 = sp.time_to_threshold(2.0, 0.01, 1.0, 1e-3)
        t2 = sp.time_to_threshold(4.0, 0.01, 1.0, 1e-3)
        assert t2 == t1 / 2

    def test_at_threshold(self):
        assert sp.time_to_threshold(3.0, 0.1, 0.05, 0.05) == 0.0

    def test_zero_lambda_censored(self):
        assert sp.time_to_threshold(0.0, 0.1, 1.0, 0.05) == math.inf

    def test_endpoint_ratio_identity(self):
        lb, lx, eta, T = 0.7, 1.9, 0.01, 123.0
        expected = math.exp(eta * (lx - lb) * T)
        assert float(sp.endpoint_ratio(lb, lx, eta, T)) == pytest.approx(expected, rel=1e-14)

    def test_euler_matches_closed_form(self):
        d = vf.check_ntk(n_modes=20, n_steps=20000)
        assert d["decay_max_rel_error"] < 1e-3

    @settings(max_examples=100, deadline=None)
    @given(l1=st.floats(1e-3, 10.0), l2=st.floats(1e-3, 10.0), e0=st.floats(0.2, 5.0))
    def test_monotone_link(self, l1, l2, e0):
        assume(l1 < l2 * (1 - 1e-9))
        t1 = sp.time_to_threshold(l1, 0.05, e0, 0.1)
        t2 = sp.time_to_threshold(l2, 0.05, e0, 0.1)
        assert t1 > t2

    @settings(max_examples=50, deadline=None)
    @given(l=st.floats(1e-3, 10.0), eta=st.floats(1e-4, 0.1), e0=st.floats(0.5, 5.0))
    def test_decay_reaches_threshold_at_tau(self, l, eta, e0):
        tau = sp.time_to_threshold(l, eta, e0, 0.1)
        assert float(sp.modal_decay(l, eta, e0, tau)) == pytest.approx(0.1, rel=1e-10)


class TestBandwidth:
    def test_cumulative(self):
        ks = [1, 2, 3, 4]
        assert sp.resolvable_bandwidth(ks, [0.05, 0.05, 0.05, 0.2], 0.1) == 3.0
        assert sp.resolvable_bandwidth(ks, [0.2, 0.0, 0.0, 0.0], 0.1) == 0.0
        assert sp.resolvable_bandwidth(ks, [0.0, 0.0, 0.0, 0.0], 0.1) == 4.0

    def test_order_independent(self):
        assert sp.resolvable_bandwidth([3, 1, 2], [0.2, 0.01, 0.02], 0.1) == 2.0


def _report(err_x, err_b, ks=(1.0, 2.0), eps=0.1):
    ks = np.asarray(ks)
    n_s = np.shape(err_x)[1]
    tau = {t: np.full((len(ks), n_s), 10.0) for t in ("xlstm", "baseline")}
    errs = {"xlstm": np.asarray(err_x, float), "baseline": np.asarray(err_b, float)}
    return sp.FrequencyReport(ks, eps, tuple(range(n_s)), 100, 10, {"xlstm": 1, "baseline": 1}, errs, errs, tau)


class TestFrequencyReport:
    def test_identical_pair_gain_one(self):
        e = [[0.1, 0.2], [0.3, 0.4]]
        g, sd = _report(e, e).gain_mean_sd()
        assert np.all(g == 1.0) and np.all(sd == 0.0)

    def test_k_star_both_models(self):
        rep = _report([[0.01, 0.01], [0.05, 0.05]], [[0.01, 0.01], [0.5, 0.5]])
        assert rep.summary()["k_star"] == {"xlstm": 2.0, "baseline": 1.0}

    def test_json_round_trip(self):
        rep = _report([[0.01, 0.02], [0.05, 0.06]], [[0.03, 0.01], [0.5, 0.4]])
        rep.tau["xlstm"][1, 0] = np.inf
        back = sp.FrequencyReport.from_json(rep.to_json())
        assert np.array_equal(back.errors["xlstm"], rep.errors["xlstm"])
        assert np.isinf(back.tau["xlstm"][1, 0])
        assert back.k_star("baseline") == rep.k_star("baseline")

    def test_small_benchmark(self):
        cfg = mdl.ModelConfig(in_dim=1, depth=1, width=6, micro_steps=2)
        rep = sp.frequency_benchmark(cfg, ks=(0, 1), budget=40, seeds=(0, 1), eval_every=10, n_grid=257)
        assert rep.errors["xlstm"].shape == (2, 2)
        assert np.all(rep.gain() > 0)
        assert set(rep.summary()["k_star"]) == {"xlstm", "baseline"}
        # the constant target is degenerate: relative error falls back to the absolute one
        np.testing.assert_array_equal(rep.rel_errors["xlstm"][0], rep.errors["xlstm"][0])
        assert abs(rep.param_counts["xlstm"] - rep.param_counts["baseline"]) <= 0.02 * rep.param_counts["xlstm"]

    def test_budget_multiple(self):
        with pytest.raises(ValueError):
            sp.frequency_benchmark(mdl.ModelConfig(in_dim=1, depth=1, width=6), budget=15, eval_every=10)
