"""Loss assembly, Adam, and the (paired) training loop."""

from __future__ import annotations

import dataclasses
import json
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, NamedTuple

import jax
import jax.numpy as jnp
from jax.flatten_util import ravel_pytree
import numpy as np

from . import autodiff as ad
from . import model as mdl
from . import problems as pb


class ConfigurationError(ValueError):
    pass


DEFAULT_BUDGET = 20_000

# Reduced "desk" profile: the default L=4, W=64 model at 20k iterations costs
# days per problem on one CPU core.  Budgets are sized so that one paired run
# (xLSTM plus matched baseline) stays within 15 minutes per problem.
DESK_MODEL = {"depth": 2, "width": 16, "micro_steps": 3}
DESK_BUDGETS = {"advection1d": 1500, "laplace2d": 1500, "disk-robin": 650, "poisson-beam": 500}


# --- losses ---------------------------------------------------------------------


def weighted_total(terms, weights) -> float:
    """Sum of weight * term in order, in Python floats (the recorded total)."""
    total = 0.0
    for term, weight in zip(terms, weights):
        total += float(weight) * float(term)
    return total


@dataclass(frozen=True)
class LossBreakdown:
    terms: dict
    weights: dict
    total: float
    iteration: int = 0

    @classmethod
    def build(cls, names, values, weights: dict, iteration: int = 0) -> "LossBreakdown":
        values = [float(v) for v in values]
        w = [weights[n] for n in names]
        return cls(dict(zip(names, values)), dict(weights), weighted_total(values, w), iteration)


def resolve_weights(spec: pb.ProblemSpec, weights: dict | None) -> dict:
    out = spec.default_weights()
    for name, value in (weights or {}).items():
        if name not in out:
            raise ConfigurationError(f"{spec.name} has no loss term {name!r}")
        if value < 0:
            raise ConfigurationError(f"loss weight {name!r} must be >= 0")
        out[name] = float(value)
    return out


def _sets_arrays(sets: pb.SampleSets, spec: pb.ProblemSpec) -> tuple:
    return (jnp.asarray(sets.interior),) + tuple(jnp.asarray(sets.constraints[c.name]) for c in spec.constraints)


def term_values(spec: pb.ProblemSpec, field: Callable, arrays: tuple):
    """Mean-squared value of every loss term, in ``spec.term_names`` order."""
    interior = arrays[0]
    if spec.residual_fn is None:
        out = field(interior)
        out = out.value if isinstance(out, ad.Jet) else out
        r = out - spec.data_target(interior)
    else:
        r = spec.residual_fn(field, interior)
    values = [jnp.mean(r * r)]
    for c, pts in zip(spec.constraints, arrays[1:]):
        if pts.shape[0] == 0:  # zero-weight term with no points contributes nothing
            values.append(jnp.zeros((), dtype=jnp.float64))
            continue
        b = pb.apply_operator(c.operator, field, pts, spec.coefficients) - c.target(pts)
        values.append(jnp.mean(b * b))
    return jnp.stack(values)


def _check_sets(spec, sets: pb.SampleSets, weights: dict):
    sizes = sets.sizes()
    for name in spec.term_names:
        if weights[name] != 0.0 and sizes.get(name, 0) == 0:
            raise ConfigurationError(f"loss term {name!r} has weight {weights[name]} but an empty sample set")


def assemble_loss(spec: pb.ProblemSpec, params, config: mdl.ModelConfig | None, sets: pb.SampleSets,
                  weights: dict | None = None, field: Callable | None = None) -> LossBreakdown:
    """Evaluate every loss term; pass ``field`` to score a fixed closure instead of a network."""
    weights = resolve_weights(spec, weights)
    _check_sets(spec, sets, weights)
    if field is None:
        field = mdl.field(params, config)
    values = np.asarray(term_values(spec, field, _sets_arrays(sets, spec)))
    return LossBreakdown.build(spec.term_names, values, weights)


def make_objective(spec: pb.ProblemSpec, config: mdl.ModelConfig, weights: dict):
    """``(params, arrays) -> (total, terms)`` suitable for jax.value_and_grad(has_aux=True)."""
    w = jnp.asarray([weights[n] for n in spec.term_names])

    def objective(params, arrays):
        terms = term_values(spec, mdl.field(params, config), arrays)
        return jnp.sum(w * terms), terms

    return objective


# --- Adam ------------------------------------------------------------------------


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class OptimState(NamedTuple):
    m: object
    v: object
    step: object

    @classmethod
    def zeros(cls, params) -> "OptimState":
        zeros = jax.tree_util.tree_map(jnp.zeros_like, params)
        return cls(zeros, zeros, jnp.asarray(0, dtype=jnp.int64))


def _adam_update(params, grad, state: OptimState, cfg: AdamConfig):
    step = state.step + 1
    m = jax.tree_util.tree_map(lambda m, g: cfg.beta1 * m + (1.0 - cfg.beta1) * g, state.m, grad)
    v = jax.tree_util.tree_map(lambda v, g: cfg.beta2 * v + (1.0 - cfg.beta2) * g * g, state.v, grad)
    bc1 = 1.0 - cfg.beta1 ** step
    bc2 = 1.0 - cfg.beta2 ** step
    new = jax.tree_util.tree_map(
        lambda p, m, v: p - cfg.lr * (m / bc1) / (jnp.sqrt(v / bc2) + cfg.eps), params, m, v
    )
    return new, OptimState(m, v, step)


def adam_step(params, grad, state: OptimState, cfg: AdamConfig = AdamConfig()):
    """Bias-corrected Adam update; rejects non-finite gradients outside jit."""
    p_leaves = jax.tree_util.tree_leaves(params)
    g_leaves = jax.tree_util.tree_leaves(grad)
    if len(p_leaves) != len(g_leaves) or any(jnp.shape(p) != jnp.shape(g) for p, g in zip(p_leaves, g_leaves)):
        raise ValueError("gradient structure does not match parameters")
    for g in g_leaves:
        if ad.is_finite(g) is False:
            raise FloatingPointError(f"non-finite gradient at Adam step {int(state.step) + 1}")
    return _adam_update(params, grad, state, cfg)


# --- runs ------------------------------------------------------------------------------


@dataclass
class RunRecord:
    config: dict
    seed: int
    term_names: tuple
    history: np.ndarray  # (iterations, n_terms) raw term values
    totals: np.ndarray  # (iterations,)
    wall_clock: float
    param_count: int
    sample_digest: str
    status: str = "ok"
    params: dict | None = dc_field(default=None, repr=False)

    @property
    def iterations(self) -> int:
        return len(self.totals)

    @property
    def model_config(self) -> mdl.ModelConfig:
        return mdl.ModelConfig.from_dict(self.config["model"])

    def breakdown(self, i: int) -> LossBreakdown:
        return LossBreakdown(dict(zip(self.term_names, (float(v) for v in self.history[i]))),
                             dict(self.config["weights"]), float(self.totals[i]), i)

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "term_names": list(self.term_names),
            "history": self.history.tolist(),
            "totals": self.totals.tolist(),
            "wall_clock": self.wall_clock,
            "param_count": self.param_count,
            "sample_digest": self.sample_digest,
            "status": self.status,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "RunRecord":
        names = tuple(doc["term_names"])
        history = np.asarray(doc["history"], dtype=np.float64).reshape(-1, len(names))
        return cls(doc["config"], int(doc["seed"]), names, history,
                   np.asarray(doc["totals"], dtype=np.float64), float(doc["wall_clock"]),
                   int(doc["param_count"]), doc["sample_digest"], doc.get("status", "ok"))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "history.json").write_text(json.dumps(self.to_json()))
        if self.params is not None:
            mdl.save_checkpoint(directory / "checkpoint.json", self.params, self.model_config,
                                meta={"seed": self.seed, "problem": self.config["problem"]["name"]})

    @classmethod
    def load(cls, directory) -> "RunRecord":
        directory = Path(directory)
        record = cls.from_json(json.loads((directory / "history.json").read_text()))
        ckpt = directory / "checkpoint.json"
        if ckpt.exists():
            record.params, _, _ = mdl.load_checkpoint(ckpt)
        return record


def config_snapshot(spec, model_cfg, budget, seed, opt, weights) -> dict:
    return {
        "problem": {"name": spec.name, "coefficients": dict(spec.coefficients)},
        "model": model_cfg.to_dict(),
        "budget": int(budget),
        "seed": int(seed),
        "optimizer": dataclasses.asdict(opt),
        "weights": dict(weights),
    }


def train(spec: pb.ProblemSpec, model_cfg: mdl.ModelConfig, budget: int, seed: int,
          opt: AdamConfig = AdamConfig(), weights: dict | None = None,
          sets: pb.SampleSets | None = None, progress: Callable | None = None) -> RunRecord:
    """Full-batch Adam on fixed collocation sets drawn from ``seed``.

    A non-finite loss stops the run; the record then holds the history up to
    the last finite iterate, those parameters, and ``status="non-finite"``.
    """
    if budget < 1:
        raise ConfigurationError("budget must be >= 1")
    if model_cfg.in_dim != spec.domain.dim:
        raise ConfigurationError(f"model in_dim {model_cfg.in_dim} != problem dimension {spec.domain.dim}")
    weights = resolve_weights(spec, weights)
    sets = sets if sets is not None else pb.sample(spec, seed)
    _check_sets(spec, sets, weights)
    arrays = _sets_arrays(sets, spec)
    objective = make_objective(spec, model_cfg, weights)

    @jax.jit
    def step(params, state, arrays):
        (_, terms), grad = jax.value_and_grad(objective, has_aux=True)(params, arrays)
        params, state = _adam_update(params, grad, state, opt)
        return params, state, terms

    params = mdl.init(model_cfg, seed)
    state = OptimState.zeros(params)
    rows, status = [], "ok"
    start = time.perf_counter()
    for it in range(budget):
        new_params, new_state, terms = step(params, state, arrays)
        terms = np.asarray(terms)
        if not np.all(np.isfinite(terms)):
            status = "non-finite"
            break
        rows.append(terms)
        if not ad.is_finite(ravel_pytree(new_params)[0]):
            # an overflowing update: keep the last finite parameters
            status = "non-finite"
            break
        params, state = new_params, new_state
        if progress is not None:
            progress(it, terms)
    wall = time.perf_counter() - start
    history = np.stack(rows) if rows else np.zeros((0, len(spec.term_names)))
    w = [weights[n] for n in spec.term_names]
    totals = np.asarray([weighted_total(row, w) for row in history])
    return RunRecord(
        config=config_snapshot(spec, model_cfg, budget, seed, opt, weights),
        seed=seed,
        term_names=spec.term_names,
        history=history,
        totals=totals,
        wall_clock=wall,
        param_count=mdl.param_count(model_cfg),
        sample_digest=sets.digest(),
        status=status,
        params=params,
    )


def baseline_for(model_cfg: mdl.ModelConfig, tol: float = 0.02) -> mdl.ModelConfig:
    """Same-depth tanh MLP whose parameter count matches ``model_cfg`` within ``tol``."""
    try:
        width = mdl.matched_baseline_width(model_cfg, tol)
    except ValueError as exc:
        raise ConfigurationError(str(exc)) from exc
    return mdl.ModelConfig(arch="baseline", in_dim=model_cfg.in_dim, depth=max(model_cfg.depth, 1), width=width)


def train_pair(spec: pb.ProblemSpec, model_cfg: mdl.ModelConfig, budget: int, seed: int,
               opt: AdamConfig = AdamConfig(), weights: dict | None = None,
               progress: Callable | None = None) -> dict:
    """xLSTM and parameter-matched baseline on identical sets, seed and budget."""
    sets = pb.sample(spec, seed)
    base_cfg = baseline_for(model_cfg)
    out = {}
    for tag, cfg in (("xlstm", model_cfg), ("baseline", base_cfg)):
        cb = (lambda it, t, tag=tag: progress(tag, it, t)) if progress else None
        out[tag] = train(spec, cfg, budget, seed, opt, weights, sets=sets, progress=cb)
    return out


def predict(params, model_cfg: mdl.ModelConfig, points, batch: int = 8192) -> np.ndarray:
    fn = jax.jit(lambda p, x: mdl.forward(p, x, model_cfg))
    points = np.asarray(points, dtype=np.float64)
    out = [np.asarray(fn(params, points[i:i + batch])) for i in range(0, len(points), batch)]
    return np.concatenate(out) if out else np.zeros(0)
