"""Frequency-domain probes: block linearization, kernel lifting, modal decay.

Two halves live here.  The *linear* half takes one block of the classic
all-sigmoid cell, computes the Jacobian ``A`` of a single micro-step
displacement at zero memory, and compares the kernel eigenvalues
``||v_k||^2`` and ``||((I+A)^S)^T v_k||^2`` along plane-wave feature
directions.  The *empirical* half trains both architectures on plane waves
of increasing wavenumber and reports endpoint error, gain, time-to-threshold
and the resolvable bandwidth.
"""

from __future__ import annotations

import dataclasses
import json
import math
import time
from dataclasses import dataclass, field as dc_field

import jax
import jax.numpy as jnp
import numpy as np

from . import model as mdl
from . import problems as pb
from . import training as tr

DEGENERATE_NORM = 1e-12


# --- linearization -----------------------------------------------------------------


def _dsigmoid(x):
    s = 1.0 / (1.0 + np.exp(-x))
    return s * (1.0 - s)


def _column_blocks(block: dict, width: int):
    W = np.asarray(block["W"])
    b = np.asarray(block["b"])
    cols = {name: W[:, k * width:(k + 1) * width].T for k, name in enumerate("ifoz")}
    bias = {name: b[k * width:(k + 1) * width] for k, name in enumerate("ifoz")}
    return cols, bias


def compute_A(block: dict, config: mdl.ModelConfig, u=None) -> np.ndarray:
    """Jacobian of the micro-step displacement tanh(P h(u, 0, 0)) with respect to u.

    ``A[i, j] = d(delta u)_i / d u_j`` in column convention, assembled from
    the gate derivatives at zero hidden and cell state.
    """
    if config.cell != "lstm" or config.input_gate != "sigmoid" or config.forget_gate != "sigmoid":
        raise ValueError("compute_A needs the classic all-sigmoid cell (cell='lstm', sigmoid gates)")
    w = config.width
    u = np.zeros(w) if u is None else np.asarray(u, dtype=np.float64)
    cols, bias = _column_blocks(block, w)
    g = {name: cols[name] @ u + bias[name] for name in "ifoz"}
    i = 1.0 / (1.0 + np.exp(-g["i"]))
    o = 1.0 / (1.0 + np.exp(-g["o"]))
    z = np.tanh(g["z"])
    c = i * z
    h = o * np.tanh(c)
    D_o = _dsigmoid(g["o"]) * np.tanh(c)
    D_c = o * (1.0 - np.tanh(c) ** 2)
    D_i = _dsigmoid(g["i"])
    D_z = 1.0 - z**2
    dc_du = (z * D_i)[:, None] * cols["i"] + (i * D_z)[:, None] * cols["z"]
    J_h = D_o[:, None] * cols["o"] + D_c[:, None] * dc_du
    P_col = np.asarray(block["P"]).T
    J_psi = 1.0 - np.tanh(P_col @ h) ** 2
    return J_psi[:, None] * (P_col @ J_h)


def effective_map(A: np.ndarray, S: int):
    """``(I + A)^S`` and its extreme singular values."""
    if S < 1:
        raise ValueError("S must be >= 1")
    M = np.linalg.matrix_power(np.eye(A.shape[0]) + A, S)
    sv = np.linalg.svd(M, compute_uv=False)
    return M, float(sv.min()), float(sv.max())


@dataclass
class LinearizationProbe:
    Phi: np.ndarray
    A: np.ndarray
    S: int
    ks: np.ndarray
    v: np.ndarray  # (len(ks), W)
    lam_base: np.ndarray
    lam_xlstm: np.ndarray
    rho: np.ndarray
    alpha: np.ndarray
    degenerate: np.ndarray

    @property
    def B(self) -> np.ndarray:
        return 0.5 * (self.A + self.A.T)

    @property
    def ratio(self) -> np.ndarray:
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(self.degenerate, np.nan, self.lam_xlstm / self.lam_base)

    @property
    def bound(self) -> np.ndarray:
        return (1.0 + self.alpha) ** self.S

    def bound_pass_rate(self) -> float:
        ok = ~self.degenerate
        return float(np.mean(self.ratio[ok] >= self.bound[ok])) if ok.any() else float("nan")

    def rows(self) -> list:
        return [
            {"k": float(k), "lam_base": float(lb), "lam_xlstm": float(lx), "ratio": float(r),
             "rho_B": float(rh), "alpha": float(a), "bound": float(bd), "degenerate": bool(dg)}
            for k, lb, lx, r, rh, a, bd, dg in zip(self.ks, self.lam_base, self.lam_xlstm, self.ratio,
                                                  self.rho, self.alpha, self.bound, self.degenerate)
        ]


def kernel_pair(Phi: np.ndarray, A: np.ndarray, S: int, ks, phase: float = 0.0, points=None) -> LinearizationProbe:
    """Base and lifted kernel eigenvalues along plane-wave feature directions.

    ``Phi`` is ``(N, W)`` evaluated at ``points`` (default: N uniform points
    on [-1, 1]); plane waves are sampled at the same points and scaled by
    ``1/sqrt(N)`` so that ``v_k`` approximates the L2(mu) projection.
    """
    Phi = np.asarray(Phi, dtype=np.float64)
    n = Phi.shape[0]
    if points is None:
        points = np.linspace(-1.0, 1.0, n)[:, None]
    ks = np.asarray(ks, dtype=np.float64)
    waves = np.stack([np.asarray(pb.plane_wave_target(k, phase)(points)) for k in ks])  # (K, N)
    v = waves @ Phi / math.sqrt(n)
    lam_base, lam_x, rho, degenerate = lift_eigenvalues(v, A, S)
    return LinearizationProbe(Phi, A, S, ks, v, lam_base, lam_x, rho, 2.0 * rho, degenerate)


def lift_eigenvalues(v: np.ndarray, A: np.ndarray, S: int):
    """``(lam_base, lam_xlstm, rho_B, degenerate)`` for feature directions ``v`` (rows).

    ``lam_base = ||v||^2``, ``lam_xlstm = ||((I+A)^S)^T v||^2`` and ``rho_B``
    is the Rayleigh quotient of ``B = (A + A^T)/2``; directions with
    ``||v|| < 1e-12`` are flagged degenerate and get ``rho = nan``.
    """
    v = np.atleast_2d(np.asarray(v, dtype=np.float64))
    M = np.linalg.matrix_power(np.eye(A.shape[0]) + A, S)
    B = 0.5 * (A + A.T)
    lam_base = np.sum(v * v, axis=1)
    lifted = v @ M  # rows are (M^T v)^T
    lam_x = np.sum(lifted * lifted, axis=1)
    degenerate = np.sqrt(lam_base) < DEGENERATE_NORM
    with np.errstate(divide="ignore", invalid="ignore"):
        rho = np.where(degenerate, np.nan, np.einsum("ki,ij,kj->k", v, B, v) / lam_base)
    return lam_base, lam_x, rho, degenerate


def feature_matrix(params: dict, config: mdl.ModelConfig, n: int = 512, layer: int = 0) -> tuple:
    """Input features of block ``layer`` at ``n`` uniform points on [-1, 1]."""
    points = np.linspace(-1.0, 1.0, n)[:, None]
    u = mdl.embed(jnp.asarray(points), params)
    for block in params["blocks"][:layer]:
        u = mdl.block_forward(u, block, config)
    return np.asarray(u), points


def probe_config(width: int = 16, depth: int = 1, micro_steps: int = 3) -> mdl.ModelConfig:
    return mdl.ModelConfig(arch="xlstm", in_dim=1, depth=depth, width=width, micro_steps=micro_steps,
                           input_gate="sigmoid", forget_gate="sigmoid", cell="lstm")


def build_probe(params: dict, config: mdl.ModelConfig, ks, n: int = 512, layer: int = 0,
                phase: float = 0.0, u=None) -> LinearizationProbe:
    Phi, points = feature_matrix(params, config, n, layer)
    A = compute_A(params["blocks"][layer], config, u)
    return kernel_pair(Phi, A, config.micro_steps, ks, phase, points)


# --- closed-form modal dynamics -------------------------------------------------------


def modal_decay(lam, eta: float, e0, T):
    """Mode error after time T under linearized gradient flow."""
    return np.asarray(e0) * np.exp(-eta * np.asarray(lam) * T)


def time_to_threshold(lam, eta: float, e0, eps: float):
    """ln(e0/eps)/(eta*lam); zero when already below eps, +inf when lam == 0."""
    lam = np.asarray(lam, dtype=np.float64)
    e0 = np.broadcast_to(np.asarray(e0, dtype=np.float64), lam.shape)
    with np.errstate(divide="ignore"):
        tau = np.log(e0 / eps) / (eta * lam)
    tau = np.where(e0 <= eps, 0.0, tau)
    return np.where((lam == 0) & (e0 > eps), np.inf, tau)


def endpoint_ratio(lam_base, lam_xlstm, eta: float, T: float):
    """e_base(T) / e_xlstm(T) from the closed-form decays (equal e0)."""
    return modal_decay(lam_base, eta, 1.0, T) / modal_decay(lam_xlstm, eta, 1.0, T)


def resolvable_bandwidth(ks, errors, eps: float) -> float:
    """Largest |k| whose cumulative squared error over |j| <= |k| stays within eps^2."""
    ks = np.abs(np.asarray(ks, dtype=np.float64))
    errors = np.asarray(errors, dtype=np.float64)
    order = np.argsort(ks, kind="stable")
    cum = np.cumsum(errors[order] ** 2)
    ok = np.nonzero(cum <= eps**2)[0]
    return float(ks[order][ok[-1]]) if ok.size else 0.0


# --- empirical plane-wave benchmark ---------------------------------------------------


@dataclass
class FrequencyReport:
    ks: np.ndarray
    eps: float
    seeds: tuple
    budget: int
    eval_every: int
    param_counts: dict
    errors: dict  # tag -> (n_k, n_seed) endpoint L2(mu) error
    rel_errors: dict  # tag -> (n_k, n_seed)
    tau: dict  # tag -> (n_k, n_seed), inf where censored
    curves: dict = dc_field(default_factory=dict, repr=False)  # tag -> (n_k, n_seed, n_eval)
    dropped: dict = dc_field(default_factory=dict)
    wall_clock: float = 0.0

    def gain(self) -> np.ndarray:
        """Per-(k, seed) ratio E_base / E_xlstm."""
        return self.errors["baseline"] / self.errors["xlstm"]

    def gain_mean_sd(self):
        g = self.gain()
        return np.nanmean(g, axis=1), np.nanstd(g, axis=1)

    def k_star(self, tag: str) -> float:
        return resolvable_bandwidth(self.ks, np.nanmean(self.rel_errors[tag], axis=1), self.eps)

    def k_star_per_seed(self, tag: str) -> np.ndarray:
        return np.asarray([resolvable_bandwidth(self.ks, self.rel_errors[tag][:, s], self.eps)
                           for s in range(len(self.seeds))])

    def rows(self) -> list:
        g_mean, g_sd = self.gain_mean_sd()
        out = []
        for i, k in enumerate(self.ks):
            row = {"k": float(k)}
            for tag in ("xlstm", "baseline"):
                e = self.errors[tag][i]
                t = self.tau[tag][i]
                row[f"E_{tag}_mean"] = float(np.nanmean(e))
                row[f"E_{tag}_sd"] = float(np.nanstd(e))
                row[f"relE_{tag}_mean"] = float(np.nanmean(self.rel_errors[tag][i]))
                finite = t[np.isfinite(t)]
                row[f"tau_{tag}_mean"] = float(np.mean(finite)) if finite.size == t.size else float("inf")
                row[f"tau_{tag}_censored"] = int(np.sum(~np.isfinite(t)))
            row["G_mean"] = float(g_mean[i])
            row["G_sd"] = float(g_sd[i])
            out.append(row)
        return out

    def summary(self) -> dict:
        return {
            "eps": self.eps,
            "budget": self.budget,
            "seeds": list(self.seeds),
            "param_counts": self.param_counts,
            "k_star": {tag: self.k_star(tag) for tag in ("xlstm", "baseline")},
            "dropped": self.dropped,
            "wall_clock": self.wall_clock,
        }

    def to_json(self) -> dict:
        return {
            "ks": self.ks.tolist(), "eps": self.eps, "seeds": list(self.seeds), "budget": self.budget,
            "eval_every": self.eval_every, "param_counts": self.param_counts,
            "errors": {k: v.tolist() for k, v in self.errors.items()},
            "rel_errors": {k: v.tolist() for k, v in self.rel_errors.items()},
            "tau": {k: np.where(np.isfinite(v), v, -1.0).tolist() for k, v in self.tau.items()},
            "dropped": self.dropped, "wall_clock": self.wall_clock,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "FrequencyReport":
        tau = {k: np.where(np.asarray(v) < 0, np.inf, np.asarray(v, dtype=np.float64)) for k, v in doc["tau"].items()}
        return cls(np.asarray(doc["ks"], dtype=np.float64), doc["eps"], tuple(doc["seeds"]), doc["budget"],
                   doc["eval_every"], doc["param_counts"],
                   {k: np.asarray(v) for k, v in doc["errors"].items()},
                   {k: np.asarray(v) for k, v in doc["rel_errors"].items()}, tau,
                   dropped=doc.get("dropped", {}), wall_clock=doc.get("wall_clock", 0.0))


def _stack_params(param_list):
    return jax.tree_util.tree_map(lambda *xs: jnp.stack(xs), *param_list)


def _regression_runner(config: mdl.ModelConfig, opt: tr.AdamConfig, budget: int, eval_every: int):
    """jit(vmap) trainer: params batch, train targets batch, grid targets batch -> error curves."""
    n_eval = budget // eval_every

    def one(params, x_train, y_train, x_grid, y_grid):
        def loss(p):
            r = mdl.forward(p, x_train, config) - y_train
            return jnp.mean(r * r)

        def grid_error(p):
            d = mdl.forward(p, x_grid, config) - y_grid
            return jnp.sqrt(jnp.mean(d * d))

        def inner(carry, _):
            p, s = carry
            g = jax.grad(loss)(p)
            p, s = tr._adam_update(p, g, s, opt)
            return (p, s), None

        def outer(carry, _):
            carry, _ = jax.lax.scan(inner, carry, None, length=eval_every)
            return carry, grid_error(carry[0])

        carry = (params, tr.OptimState.zeros(params))
        _, curve = jax.lax.scan(outer, carry, None, length=n_eval)
        return jnp.concatenate([grid_error(params)[None], curve])

    batched = jax.vmap(one, in_axes=(0, None, 0, None, 0))
    return jax.jit(batched)


def frequency_benchmark(xlstm_cfg: mdl.ModelConfig, ks=tuple(range(1, 25)), budget: int = 1000,
                        seeds=(0, 1, 2, 3, 4), eps: float = 0.1, lr: float = 1e-3, phase: float = 0.0,
                        n_train: int = 512, n_grid: int = 2049, eval_every: int = 10,
                        baseline_cfg: mdl.ModelConfig | None = None, progress=None) -> FrequencyReport:
    """Plane-wave regression for both architectures at matched size and budget.

    Errors are L2(mu) norms on a dense uniform grid (mu uniform on [-1, 1]);
    relative errors divide by ||phi_k||, falling back to absolute errors for
    an identically-zero target.  ``tau`` is the first evaluated iteration
    with relative error <= eps (+inf if never reached within the budget).
    """
    if budget % eval_every:
        raise ValueError("budget must be a multiple of eval_every")
    start = time.perf_counter()
    ks = np.asarray(ks, dtype=np.float64)
    seeds = tuple(int(s) for s in seeds)
    baseline_cfg = baseline_cfg or tr.baseline_for(xlstm_cfg)
    x_train = np.linspace(-1.0, 1.0, n_train)[:, None]
    x_grid = np.linspace(-1.0, 1.0, n_grid)[:, None]
    y_train = np.stack([np.asarray(pb.plane_wave_target(k, phase)(x_train)) for k in ks])
    y_grid = np.stack([np.asarray(pb.plane_wave_target(k, phase)(x_grid)) for k in ks])
    norms = np.sqrt(np.mean(y_grid**2, axis=1))
    scale = np.where(norms > DEGENERATE_NORM, norms, 1.0)
    opt = tr.AdamConfig(lr=lr)
    n_k, n_s = len(ks), len(seeds)

    errors, rel, taus, curves, dropped, counts = {}, {}, {}, {}, {}, {}
    for tag, cfg in (("xlstm", xlstm_cfg), ("baseline", baseline_cfg)):
        counts[tag] = mdl.param_count(cfg)
        runner = _regression_runner(cfg, opt, budget, eval_every)
        inits = [mdl.init(cfg, s) for s in seeds]
        params = _stack_params([inits[j] for _ in range(n_k) for j in range(n_s)])
        yt = np.repeat(y_train, n_s, axis=0)
        yg = np.repeat(y_grid, n_s, axis=0)
        curve = np.asarray(runner(params, jnp.asarray(x_train), jnp.asarray(yt), jnp.asarray(x_grid), jnp.asarray(yg)))
        curve = curve.reshape(n_k, n_s, -1)
        bad = ~np.all(np.isfinite(curve), axis=2)
        curve = np.where(bad[..., None], np.nan, curve)
        dropped[tag] = [[float(ks[i]), seeds[j]] for i, j in zip(*np.nonzero(bad))]
        rel_curve = curve / scale[:, None, None]
        hit = rel_curve <= eps
        first = np.argmax(hit, axis=2)
        tau = np.where(hit.any(axis=2), first * eval_every, np.inf)
        errors[tag] = curve[..., -1]
        rel[tag] = rel_curve[..., -1]
        taus[tag] = tau.astype(np.float64)
        curves[tag] = curve
        if progress:
            progress(tag, time.perf_counter() - start)
    return FrequencyReport(ks, eps, seeds, budget, eval_every, counts, errors, rel, taus, curves, dropped,
                           time.perf_counter() - start)


def save_report(report: FrequencyReport, directory) -> None:
    from pathlib import Path

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "report.json").write_text(json.dumps({"summary": report.summary(), "data": report.to_json()}))
