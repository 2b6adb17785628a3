"""PDE benchmark definitions, analytic references and collocation sampling.

Each benchmark is a :class:`ProblemSpec`: a domain, an interior residual, a
list of boundary/initial constraints, a closed-form reference field and the
collocation budget.  Fields are callables ``x -> u(x)`` that accept either
coordinate arrays of shape ``(N, d)`` or coordinate jets.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import jax.numpy as jnp
import numpy as np

from . import autodiff as ad

LOCUS_TOL = 1e-12


class DomainError(ValueError):
    """A point lies outside the region an operator is defined on."""


@dataclass(frozen=True)
class Domain:
    kind: str  # "box" | "disk"
    lo: tuple = (0.0, 0.0)
    hi: tuple = (1.0, 1.0)

    @property
    def dim(self) -> int:
        return len(self.lo)

    def contains(self, points, tol: float = LOCUS_TOL) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.kind == "disk":
            return np.sum(points**2, axis=1) <= 1.0 + tol
        lo, hi = np.asarray(self.lo), np.asarray(self.hi)
        return np.all((points >= lo - tol) & (points <= hi + tol), axis=1)

    def centroid(self) -> np.ndarray:
        if self.kind == "disk":
            return np.zeros(2)
        return 0.5 * (np.asarray(self.lo) + np.asarray(self.hi))


@dataclass(frozen=True)
class Locus:
    """Boundary piece: ``x[axis] == value`` on a box, or the unit circle (axis None)."""

    axis: int | None = None
    value: float = 0.0

    def distance(self, points) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=np.float64))
        if self.axis is None:
            return np.abs(np.sum(points**2, axis=1) - 1.0)
        return np.abs(points[:, self.axis] - self.value)


@dataclass(frozen=True)
class Constraint:
    name: str
    locus: Locus
    operator: str  # "value" | "dx" | "dyy" | "robin"
    target: Callable  # points (N, d) -> (N,)
    count: int


@dataclass(frozen=True)
class ReferenceField:
    fn: Callable
    provenance: str  # "paper-analytic" | "derived-closed-form"

    def __call__(self, x):
        return self.fn(x)


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    domain: Domain
    coefficients: dict
    residual_fn: Callable | None  # (field, points) -> (N,)
    constraints: tuple
    reference: ReferenceField
    n_interior: int
    weights: dict = dc_field(default_factory=dict)
    data_target: Callable | None = None  # pure regression problems only

    @property
    def term_names(self) -> tuple:
        return ("residual",) + tuple(c.name for c in self.constraints)

    def constraint(self, name: str) -> Constraint:
        for c in self.constraints:
            if c.name == name:
                return c
        raise KeyError(f"{self.name} has no constraint {name!r}")

    def default_weights(self) -> dict:
        return {name: float(self.weights.get(name, 1.0)) for name in self.term_names}


# --- operators ---------------------------------------------------------------


def _d(field, points, axis, order):
    return ad.jet_eval(field, points, axis, order)


def apply_operator(operator: str, field: Callable, points, coefficients: dict):
    """Constraint operator applied to ``field`` at ``points`` (no target subtracted)."""
    if operator == "value":
        out = field(jnp.asarray(points))
        return out.value if isinstance(out, ad.Jet) else out
    if operator == "dx":
        return _d(field, points, 0, 1).derivative(1)
    if operator == "dyy":
        return _d(field, points, 1, 2).derivative(2)
    if operator == "robin":
        points = jnp.asarray(points)
        normals = points / jnp.linalg.norm(points, axis=-1, keepdims=True)
        jet = ad.jet_eval(field, points, normals, 1)
        return -jet.derivative(1) - coefficients["Bi"] * jet.value
    raise ValueError(f"unknown constraint operator {operator!r}")


def _advection_residual(field, points, a=-0.5, b=0.5):
    jet = ad.jet_eval_many(field, points, (0, 1), 1)
    u_x, u_t = jet.derivative(1)
    return u_t + a * u_x + b * jet.value


def _laplacian(field, points):
    u_xx, u_yy = ad.jet_eval_many(field, points, (0, 1), 2).derivative(2)
    return u_xx + u_yy


def beam_source(points):
    x, y = points[..., 0], points[..., 1]
    return (2.0 - x * x) * jnp.exp(-y)


def _beam_residual(field, points):
    # One order-4 jet in both axes shares the value pass; only u_yyyy needs
    # the full order.
    jet = ad.jet_eval_many(field, points, (0, 1), 4)
    u_xx = jet.derivative(2)[0]
    u_yyyy = jet.derivative(4)[1]
    return u_xx - u_yyyy - beam_source(points)


# --- the benchmarks ----------------------------------------------------------


def advection1d(a: float = -0.5, b: float = 0.5, n_t0: int = 250, n_x2: int = 250) -> ProblemSpec:
    """u_t + a u_x + b u = 0 on [0,2]x[0,1]; coordinates are (x, t)."""

    def ref(x):
        return 6.0 * ad.exp(-3.0 * x[..., 0] - 2.0 * x[..., 1])

    return ProblemSpec(
        name="advection1d",
        domain=Domain("box", (0.0, 0.0), (2.0, 1.0)),
        coefficients={"a": a, "b": b},
        residual_fn=lambda f, p: _advection_residual(f, p, a, b),
        constraints=(
            Constraint("t=0", Locus(1, 0.0), "value", lambda p: 6.0 * jnp.exp(-3.0 * p[..., 0]), n_t0),
            Constraint("x=2", Locus(0, 2.0), "value", lambda p: 6.0 * jnp.exp(-6.0 - 2.0 * p[..., 1]), n_x2),
        ),
        reference=ReferenceField(ref, "paper-analytic"),
        n_interior=3000,
    )


def laplace2d(n_side: int = 1000) -> ProblemSpec:
    """Laplace equation on the unit square, Dirichlet top/bottom, Neumann sides."""

    def zero(p):
        return jnp.zeros(p.shape[0])

    return ProblemSpec(
        name="laplace2d",
        domain=Domain("box", (0.0, 0.0), (1.0, 1.0)),
        coefficients={},
        residual_fn=_laplacian,
        constraints=(
            Constraint("y=0", Locus(1, 0.0), "value", zero, n_side),
            Constraint("y=1", Locus(1, 1.0), "value", lambda p: jnp.ones(p.shape[0]), n_side),
            Constraint("x=0", Locus(0, 0.0), "dx", zero, n_side),
            Constraint("x=1", Locus(0, 1.0), "dx", zero, n_side),
        ),
        reference=ReferenceField(lambda x: x[..., 1], "paper-analytic"),
        n_interior=1000,
    )


def disk_reference(bi: float) -> Callable:
    """Radial solution of theta'' + theta'/r + 1 = 0 with -theta'(1) = Bi theta(1)."""
    offset = 0.25 + 1.0 / (2.0 * bi)

    def ref(x):
        r2 = x[..., 0] * x[..., 0] + x[..., 1] * x[..., 1]
        return offset - 0.25 * r2

    return ref


def disk_robin(bi: float = 1.0, n_boundary: int = 500) -> ProblemSpec:
    """Steady conduction theta_xx + theta_yy + 1 = 0 on the unit disk, Robin rim."""
    return ProblemSpec(
        name="disk-robin",
        domain=Domain("disk", (-1.0, -1.0), (1.0, 1.0)),
        coefficients={"Bi": bi},
        residual_fn=lambda f, p: _laplacian(f, p) + 1.0,
        constraints=(
            Constraint("boundary", Locus(None), "robin", lambda p: jnp.zeros(p.shape[0]), n_boundary),
        ),
        reference=ReferenceField(disk_reference(bi), "derived-closed-form"),
        n_interior=3000,
    )


def poisson_beam(n_side: int = 1000) -> ProblemSpec:
    """u_xx - u_yyyy = (2 - x^2) e^{-y} on the unit square."""
    inv_e = math.exp(-1.0)

    def ref(x):
        return x[..., 0] * x[..., 0] * ad.exp(-x[..., 1])

    def x_sq(p):
        return p[..., 0] ** 2

    def x_sq_e(p):
        return inv_e * p[..., 0] ** 2

    return ProblemSpec(
        name="poisson-beam",
        domain=Domain("box", (0.0, 0.0), (1.0, 1.0)),
        coefficients={},
        residual_fn=_beam_residual,
        constraints=(
            Constraint("u(y=0)", Locus(1, 0.0), "value", x_sq, n_side),
            Constraint("u(y=1)", Locus(1, 1.0), "value", x_sq_e, n_side),
            Constraint("u_yy(y=0)", Locus(1, 0.0), "dyy", x_sq, n_side),
            Constraint("u_yy(y=1)", Locus(1, 1.0), "dyy", x_sq_e, n_side),
            Constraint("x=0", Locus(0, 0.0), "value", lambda p: jnp.zeros(p.shape[0]), n_side),
            Constraint("x=1", Locus(0, 1.0), "value", lambda p: jnp.exp(-p[..., 1]), n_side),
        ),
        reference=ReferenceField(ref, "paper-analytic"),
        n_interior=1000,
    )


def plane_wave_target(k, phase: float = 0.0) -> Callable:
    """``x -> sin(2 pi k . x + phase)`` on [-1, 1]^d."""
    k = np.atleast_1d(np.asarray(k, dtype=np.float64))

    def target(x):
        x = jnp.asarray(x)
        if x.ndim == 1 and k.size == 1:
            x = x[:, None]
        return jnp.sin(2.0 * math.pi * (x @ jnp.asarray(k)) + phase)

    return target


def plane_wave_problem(k: float = 1.0, phase: float = 0.0, n_points: int = 512) -> ProblemSpec:
    """Pure regression onto one plane wave on [-1, 1]; no PDE terms."""
    target = plane_wave_target(k, phase)
    return ProblemSpec(
        name="spectral-probe",
        domain=Domain("box", (-1.0,), (1.0,)),
        coefficients={"k": float(k), "phase": float(phase)},
        residual_fn=None,
        constraints=(),
        reference=ReferenceField(target, "paper-analytic"),
        n_interior=n_points,
        data_target=target,
    )


REGISTRY = {
    "advection1d": advection1d,
    "laplace2d": laplace2d,
    "disk-robin": disk_robin,
    "poisson-beam": poisson_beam,
    "spectral-probe": plane_wave_problem,
}

PDE_PROBLEMS = ("advection1d", "laplace2d", "disk-robin", "poisson-beam")


def get_problem(name: str, **kwargs) -> ProblemSpec:
    try:
        factory = REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; choose from {', '.join(REGISTRY)}") from None
    return factory(**kwargs)


# --- public evaluation API ------------------------------------------------------


def residual(spec: ProblemSpec, field: Callable, points) -> np.ndarray:
    """Interior residual of ``field`` at ``points``; rejects points outside the domain."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if not np.all(spec.domain.contains(points)):
        raise DomainError(f"{spec.name}: residual requested outside the domain")
    if spec.residual_fn is None:
        return np.asarray(field(jnp.asarray(points)) - spec.data_target(points))
    return np.asarray(spec.residual_fn(field, jnp.asarray(points)))


def constraint_residual(spec: ProblemSpec, field: Callable, name: str, points) -> np.ndarray:
    """(constraint operator applied to ``field``) minus its target, on the locus."""
    c = spec.constraint(name)
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    if np.any(c.locus.distance(points) > LOCUS_TOL):
        raise DomainError(f"{spec.name}: points are not on the locus of {name!r}")
    value = apply_operator(c.operator, field, jnp.asarray(points), spec.coefficients)
    return np.asarray(value - c.target(jnp.asarray(points)))


def reference(spec: ProblemSpec, points) -> np.ndarray:
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    return np.asarray(spec.reference(jnp.asarray(points)))


# --- sampling ------------------------------------------------------------------


@dataclass(frozen=True)
class SampleSets:
    interior: np.ndarray
    constraints: dict

    def digest(self) -> str:
        h = hashlib.sha256(np.ascontiguousarray(self.interior).tobytes())
        for name in sorted(self.constraints):
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.constraints[name]).tobytes())
        return h.hexdigest()

    def sizes(self) -> dict:
        out = {"residual": len(self.interior)}
        out.update({k: len(v) for k, v in self.constraints.items()})
        return out


def _sample_interior(domain: Domain, n: int, rng) -> np.ndarray:
    if domain.kind == "disk":
        r = np.sqrt(rng.uniform(size=n))
        ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
        return np.stack([r * np.cos(ang), r * np.sin(ang)], axis=1)
    lo, hi = np.asarray(domain.lo), np.asarray(domain.hi)
    return lo + (hi - lo) * rng.uniform(size=(n, domain.dim))


def _sample_locus(domain: Domain, locus: Locus, n: int, rng) -> np.ndarray:
    if locus.axis is None:
        ang = rng.uniform(0.0, 2.0 * math.pi, size=n)
        return np.stack([np.cos(ang), np.sin(ang)], axis=1)
    pts = _sample_interior(domain, n, rng)
    pts[:, locus.axis] = locus.value
    return pts


def sample(spec: ProblemSpec, seed: int) -> SampleSets:
    """i.i.d. uniform collocation sets, deterministic per seed."""
    rng = np.random.default_rng(seed)
    interior = _sample_interior(spec.domain, spec.n_interior, rng)
    sets = {c.name: _sample_locus(spec.domain, c.locus, c.count, rng) for c in spec.constraints}
    return SampleSets(interior, sets)


# --- validation grids --------------------------------------------------------------


@dataclass(frozen=True)
class Grid:
    points: np.ndarray  # (M, d)
    shape: tuple  # raster shape, for plotting
    description: str
    mask: np.ndarray | None = None  # True where inside the domain


def validation_grid(spec: ProblemSpec) -> Grid:
    """Dense evaluation grid for the error metrics."""
    if spec.name == "advection1d":
        xs, ts = np.linspace(0.0, 2.0, 201), np.linspace(0.0, 1.0, 101)
        X, T = np.meshgrid(xs, ts, indexing="xy")
        return Grid(np.stack([X.ravel(), T.ravel()], axis=1), X.shape, "uniform 201x101 on [0,2]x[0,1]")
    if spec.domain.kind == "disk":
        rs = np.linspace(0.0, 1.0, 101)
        angs = np.linspace(0.0, 2.0 * math.pi, 256, endpoint=False)
        R, A = np.meshgrid(rs, angs, indexing="ij")
        pts = np.stack([(R * np.cos(A)).ravel(), (R * np.sin(A)).ravel()], axis=1)
        return Grid(pts, R.shape, "polar 101x256 on the unit disk")
    if spec.domain.dim == 1:
        xs = np.linspace(spec.domain.lo[0], spec.domain.hi[0], 2049)
        return Grid(xs[:, None], xs.shape, "uniform 2049 on [-1,1]")
    xs = np.linspace(0.0, 1.0, 201)
    X, Y = np.meshgrid(xs, xs, indexing="xy")
    return Grid(np.stack([X.ravel(), Y.ravel()], axis=1), X.shape, "uniform 201x201 on [0,1]^2")


def raster_grid(spec: ProblemSpec, n: int = 256) -> Grid:
    """Cartesian raster for heatmaps; the disk is masked outside r = 1."""
    lo, hi = spec.domain.lo, spec.domain.hi
    if spec.domain.kind == "disk":
        lo, hi = (-1.0, -1.0), (1.0, 1.0)
    aspect = (hi[1] - lo[1]) / (hi[0] - lo[0])
    nx, ny = n, max(2, int(round(n * aspect)))
    X, Y = np.meshgrid(np.linspace(lo[0], hi[0], nx), np.linspace(lo[1], hi[1], ny), indexing="xy")
    pts = np.stack([X.ravel(), Y.ravel()], axis=1)
    mask = None
    if spec.domain.kind == "disk":
        mask = (X**2 + Y**2 <= 1.0)
        pts = np.where(mask.ravel()[:, None], pts, 0.0)
    return Grid(pts, X.shape, f"raster {nx}x{ny}", mask)
