"""Baseline tanh-MLP and xLSTM representation networks.

Row-vector convention throughout: a layer computes ``u @ W + b`` with ``W``
stored as ``(fan_in, fan_out)``.  All functions accept plain arrays or
:class:`~xlstm_pinn.autodiff.Jet` inputs, so the same code serves evaluation,
coordinate derivatives and parameter gradients.
"""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import jax.numpy as jnp
import numpy as np

from . import autodiff as ad

CHECKPOINT_FORMAT = "xlstm-pinn-checkpoint"
CHECKPOINT_VERSION = 1


class NumericalFault(FloatingPointError):
    """A non-finite intermediate appeared inside the network."""


class CheckpointError(IOError):
    """A checkpoint file is missing, corrupt, or of an unknown version."""


@dataclass(frozen=True)
class ModelConfig:
    arch: str = "xlstm"  # "xlstm" | "baseline"
    in_dim: int = 2
    depth: int = 4  # L
    width: int = 64  # W
    micro_steps: int = 3  # S
    input_gate: str = "exponential"  # "exponential" | "sigmoid"
    forget_gate: str = "sigmoid"  # "sigmoid" | "exponential"
    # "xlstm": normalized, stabilized memory; "lstm": classic cell with
    # h = o * tanh(c), the form the linearization probe differentiates.
    cell: str = "xlstm"
    layer_norm: bool = False
    eps: float = 1e-8
    clip_lo: float = -30.0
    clip_hi: float = 0.0

    def __post_init__(self):
        if self.arch not in ("xlstm", "baseline"):
            raise ValueError(f"unknown arch {self.arch!r}")
        if self.input_gate not in ("exponential", "sigmoid"):
            raise ValueError(f"unknown input gate mode {self.input_gate!r}")
        if self.forget_gate not in ("exponential", "sigmoid"):
            raise ValueError(f"unknown forget gate mode {self.forget_gate!r}")
        if self.cell not in ("xlstm", "lstm"):
            raise ValueError(f"unknown cell {self.cell!r}")
        if self.in_dim < 1 or self.width < 1 or self.depth < 0:
            raise ValueError("in_dim and width must be positive, depth nonnegative")
        if self.micro_steps < 0:
            raise ValueError("micro_steps must be >= 0")
        if self.clip_lo > self.clip_hi:
            raise ValueError("clip_lo must not exceed clip_hi")

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})


class BlockState(NamedTuple):
    h: object
    c: object
    n: object
    m: object

    @classmethod
    def zeros(cls, like) -> "BlockState":
        value = like.value if isinstance(like, ad.Jet) else like
        z = jnp.zeros(jnp.shape(value), dtype=jnp.float64)
        return cls(z, z, z, z)


def _block_shapes(config: ModelConfig) -> dict:
    w = config.width
    if config.arch == "baseline":
        return {"W": (w, w), "b": (w,)}
    shapes = {
        "W": (w, 4 * w),
        "U": (w, 4 * w),
        "b": (4 * w,),
        "P": (w, w),
        "mix_W1": (w, w),
        "mix_W2": (w, w),
        "gate_W": (w, w),
        "gate_b": (w,),
        "shape_W": (w, w),
        "shape_b": (w,),
    }
    if config.layer_norm:
        shapes["ln_scale"] = (w,)
        shapes["ln_shift"] = (w,)
    return shapes


def param_shapes(config: ModelConfig) -> dict:
    w = config.width
    return {
        "embed": {"W": (config.in_dim, w), "b": (w,)},
        "blocks": [_block_shapes(config) for _ in range(config.depth)],
        "head": {"W": (w, 1), "b": (1,)},
    }


def param_count(config: ModelConfig) -> int:
    shapes = param_shapes(config)
    total = sum(math.prod(s) for s in shapes["embed"].values())
    total += sum(math.prod(s) for s in shapes["head"].values())
    for block in shapes["blocks"]:
        total += sum(math.prod(s) for s in block.values())
    return total


def init(config: ModelConfig, seed: int) -> dict:
    """Uniform(+-sqrt(1/fan_in)) matrices, zero biases, forget-gate bias +1."""
    rng = np.random.default_rng(seed)
    w = config.width

    def draw(shape, name):
        if name == "ln_scale":
            return np.ones(shape)
        if len(shape) == 1:
            return np.zeros(shape)
        bound = math.sqrt(1.0 / shape[0])
        return rng.uniform(-bound, bound, size=shape)

    shapes = param_shapes(config)
    params = {"embed": {}, "blocks": [], "head": {}}
    for name, shape in shapes["embed"].items():
        params["embed"][name] = draw(shape, name)
    for block_shapes in shapes["blocks"]:
        block = {name: draw(shape, name) for name, shape in block_shapes.items()}
        if config.arch == "xlstm":
            block["b"][w:2 * w] = 1.0
        params["blocks"].append(block)
    for name, shape in shapes["head"].items():
        params["head"][name] = draw(shape, name)
    return _to_jax(params)


def _to_jax(params):
    return {
        "embed": {k: jnp.asarray(v, dtype=jnp.float64) for k, v in params["embed"].items()},
        "blocks": [{k: jnp.asarray(v, dtype=jnp.float64) for k, v in b.items()} for b in params["blocks"]],
        "head": {k: jnp.asarray(v, dtype=jnp.float64) for k, v in params["head"].items()},
    }


def _check(name, x):
    if ad.is_finite(x) is False:
        raise NumericalFault(f"non-finite value in gate/stage {name!r}")


def _gate_activation(g, mode):
    return ad.exp(g) if mode == "exponential" else ad.sigmoid(g)


def _log_gate(g, mode):
    return g if mode == "exponential" else ad.log_sigmoid(g)


def micro_step(u, state: BlockState, block: dict, config: ModelConfig):
    """One gated-memory update followed by the residual refinement of ``u``."""
    w = config.width
    g = u @ block["W"] + state.h @ block["U"] + block["b"]
    g_i, g_f, g_o, g_z = (g[..., k * w:(k + 1) * w] for k in range(4))
    o = ad.sigmoid(g_o)
    z = ad.tanh(g_z)
    if config.cell == "lstm":
        i = _gate_activation(g_i, config.input_gate)
        f = _gate_activation(g_f, config.forget_gate)
        _check("i", i)
        _check("f", f)
        c = f * state.c + i * z
        h = o * ad.tanh(c)
        new_state = BlockState(h, c, state.n, state.m)
    else:
        log_i = _log_gate(g_i, config.input_gate)
        log_f = _log_gate(g_f, config.forget_gate)
        m = ad.maximum(log_f + state.m, log_i)
        _check("m", m)
        f_bar = ad.exp(ad.clip(log_f + state.m - m, config.clip_lo, config.clip_hi))
        i_bar = ad.exp(ad.clip(log_i - m, config.clip_lo, config.clip_hi))
        c = f_bar * state.c + i_bar * z
        n = f_bar * state.n + i_bar
        _check("c", c)
        _check("n", n)
        h = o * c / (n + config.eps)
        new_state = BlockState(h, c, n, m)
    _check("h", h)
    u_next = u + ad.tanh(h @ block["P"])
    _check("u", u_next)
    return u_next, new_state


def _layer_norm(u, block, eps=1e-5):
    centered = u - u.mean(axis=-1, keepdims=True) if isinstance(u, ad.Jet) else u - jnp.mean(u, axis=-1, keepdims=True)
    sq = centered * centered
    var = sq.mean(axis=-1, keepdims=True) if isinstance(sq, ad.Jet) else jnp.mean(sq, axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps) * block["ln_scale"] + block["ln_shift"]


def micro_steps(u, block: dict, config: ModelConfig):
    state = BlockState.zeros(u)
    for _ in range(config.micro_steps):
        u, state = micro_step(u, state, block, config)
    return u


def block_forward(u, block: dict, config: ModelConfig):
    """S micro-steps, gated feedforward mixer, optional layer norm, tanh shaping."""
    if config.arch == "baseline":
        return ad.tanh(ad.affine(u, block["W"], block["b"]))
    u_s = micro_steps(u, block, config)
    mixed = ad.tanh(ad.tanh(u_s @ block["mix_W1"]) @ block["mix_W2"])
    gate = ad.sigmoid(ad.affine(u_s, block["gate_W"], block["gate_b"]))
    u_plus = u_s + gate * mixed
    if config.layer_norm:
        u_plus = _layer_norm(u_plus, block)
    return ad.tanh(ad.affine(u_plus, block["shape_W"], block["shape_b"]))


def embed(x, params: dict):
    return ad.tanh(ad.affine(x, params["embed"]["W"], params["embed"]["b"]))


def forward(params: dict, x, config: ModelConfig):
    """Scalar field value(s) at coordinates ``x`` of shape ``(..., in_dim)``."""
    x_shape = x.shape if isinstance(x, ad.Jet) else jnp.shape(x)
    if x_shape[-1] != config.in_dim:
        raise ValueError(f"coordinate dimension {x_shape[-1]} != model in_dim {config.in_dim}")
    u = embed(x, params)
    for block in params["blocks"]:
        u = block_forward(u, block, config)
    out = ad.affine(u, params["head"]["W"], params["head"]["b"])
    return out[..., 0]


def field(params: dict, config: ModelConfig):
    """Closure ``x -> u_theta(x)`` for use with the jet evaluators."""
    return lambda x: forward(params, x, config)


def matched_baseline_width(config: ModelConfig, tol: float = 0.02) -> int:
    """Width of a same-depth tanh MLP whose parameter count is closest to ``config``'s."""
    target = param_count(config)
    depth = max(config.depth, 1)
    best, best_gap = 1, float("inf")
    for w in range(1, 8 * config.width + 64):
        count = param_count(ModelConfig(arch="baseline", in_dim=config.in_dim, depth=depth, width=w))
        gap = abs(count - target) / target
        if gap < best_gap:
            best, best_gap = w, gap
    if best_gap > tol:
        raise ValueError(f"no baseline width within {tol:.0%} of {target} parameters")
    return best


# --- checkpoints -----------------------------------------------------------


def named_arrays(params: dict) -> dict:
    out = {}
    for k, v in params["embed"].items():
        out[f"embed.{k}"] = v
    for i, block in enumerate(params["blocks"]):
        for k, v in block.items():
            out[f"blocks.{i}.{k}"] = v
    for k, v in params["head"].items():
        out[f"head.{k}"] = v
    return out


def from_named_arrays(arrays: dict, config: ModelConfig) -> dict:
    shapes = param_shapes(config)
    params = {"embed": {}, "blocks": [{} for _ in shapes["blocks"]], "head": {}}
    for name, value in arrays.items():
        parts = name.split(".")
        if parts[0] == "blocks":
            params["blocks"][int(parts[1])][parts[2]] = value
        else:
            params[parts[0]][parts[1]] = value
    for group in ("embed", "head"):
        for k, shape in shapes[group].items():
            if tuple(np.shape(params[group].get(k, ()))) != tuple(shape):
                raise CheckpointError(f"array {group}.{k} missing or has wrong shape")
    for i, block_shapes in enumerate(shapes["blocks"]):
        for k, shape in block_shapes.items():
            if tuple(np.shape(params["blocks"][i].get(k, ()))) != tuple(shape):
                raise CheckpointError(f"array blocks.{i}.{k} missing or has wrong shape")
    return _to_jax(params)


def save_checkpoint(path, params: dict, config: ModelConfig, meta: dict | None = None) -> None:
    arrays = {
        name: {"shape": list(np.shape(v)), "data": np.asarray(v, dtype=np.float64).ravel().tolist()}
        for name, v in named_arrays(params).items()
    }
    doc = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "meta": meta or {},
        "arrays": arrays,
    }
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path):
    """Return ``(params, config, meta)``; raise :class:`CheckpointError` on any defect."""
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('version')!r}")
    try:
        config = ModelConfig.from_dict(doc["config"])
        arrays = {
            name: np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in doc["arrays"].items()
        }
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc
    return from_named_arrays(arrays, config), config, doc.get("meta", {})
