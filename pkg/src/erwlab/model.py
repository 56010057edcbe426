"""Model definitions for memory-reinforced random walks.

A model is an auxiliary walk on a rectangle in [0, inf)^s whose increment at
time n+1 picks one of r coordinate blocks of an i.i.d. draw Y according to
state-dependent block probabilities P_1..P_{r-1} evaluated at the running
average position, plus an affine output map S_n = A @ S_aux_n + n * b.

This module holds the data types (ModelSpec, StepLaw, InitialLaw, Func1D),
the f/g/h transforms for the one-dimensional family, grid validation, and
the validated-model wrapper that caches moments and the drift map H.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import funcdsl
from .funcdsl import FuncExpr, parse


class ModelError(ValueError):
    """Invalid model definition."""


class DomainViolation(ModelError):
    """A point handed to the drift map lies outside the model rectangle."""


# ---------------------------------------------------------------------------
# Step and initial laws


@dataclass(frozen=True)
class StepLaw:
    """Finite-support law of the i.i.d. draws Y on the model rectangle.

    kinds:
      * ``point-mass``     one atom, probability one
      * ``finite-support`` explicit atoms (s-vectors) and probabilities
      * ``product``        independent per-axis scalar finite laws, expanded
                           to their joint support at construction

    Restricting to finite support keeps the mean ``mu`` and the second-moment
    matrix E[Y Y^T] exact, which the covariance formulas downstream require.
    """

    kind: str
    atoms: np.ndarray  # (n_atoms, s)
    probs: np.ndarray  # (n_atoms,)

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        if atoms.shape[0] != probs.shape[0]:
            raise ModelError("atoms and probabilities must align")
        if np.any(probs < 0) or abs(math.fsum(probs.tolist()) - 1.0) > 1e-12:
            raise ModelError("step-law probabilities must be nonnegative and sum to 1")
        if np.any(atoms < 0):
            raise ModelError("step atoms must be nonnegative (walk lives in [0, inf)^s)")

    @property
    def s(self) -> int:
        return self.atoms.shape[1]

    @property
    def mu(self) -> np.ndarray:
        return self.probs @ self.atoms

    @property
    def second_moment(self) -> np.ndarray:
        """E[Y Y^T], exact under the finite support."""
        return (self.atoms.T * self.probs) @ self.atoms

    @staticmethod
    def point_mass(atom) -> "StepLaw":
        atom = np.atleast_1d(np.asarray(atom, dtype=float))
        return StepLaw("point-mass", atom[None, :], np.array([1.0]))

    @staticmethod
    def finite(atoms, probs) -> "StepLaw":
        return StepLaw("finite-support", np.atleast_2d(atoms), np.asarray(probs, dtype=float))

    @staticmethod
    def product(factors: Sequence[Sequence[tuple]]) -> "StepLaw":
        """Joint law of independent axes; each factor is [(value, prob), ...]."""
        atoms = [[]]
        probs = [1.0]
        for factor in factors:
            new_atoms, new_probs = [], []
            for a, p in zip(atoms, probs):
                for value, q in factor:
                    new_atoms.append(a + [float(value)])
                    new_probs.append(p * float(q))
            atoms, probs = new_atoms, new_probs
        return StepLaw("product", np.asarray(atoms), np.asarray(probs))

    @staticmethod
    def scalar_family(name: str, **params) -> list:
        """Named scalar families with exact moments, as (value, prob) lists."""
        if name == "constant":
            return [(params.get("value", 1.0), 1.0)]
        if name == "bernoulli-scaled":
            p = params["p"]
            c = params.get("scale", 1.0)
            return [(0.0, 1.0 - p), (c, p)]
        if name == "discrete-uniform":
            lo, hi = int(params["lo"]), int(params["hi"])
            values = list(range(lo, hi + 1))
            return [(v, 1.0 / len(values)) for v in values]
        if name == "geometric-truncated":
            p, kmax = params["p"], int(params["kmax"])
            raw = [(k, p * (1 - p) ** (k - 1)) for k in range(1, kmax + 1)]
            z = sum(w for _, w in raw)
            return [(k, w / z) for k, w in raw]
        raise ModelError(f"unknown scalar step family {name!r}")


@dataclass(frozen=True)
class InitialLaw:
    """Law of the time-1 auxiliary increment (finite support)."""

    atoms: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        atoms = np.atleast_2d(np.asarray(self.atoms, dtype=float))
        probs = np.asarray(self.probs, dtype=float)
        object.__setattr__(self, "atoms", atoms)
        object.__setattr__(self, "probs", probs)
        if np.any(probs < 0) or abs(math.fsum(probs.tolist()) - 1.0) > 1e-12:
            raise ModelError("initial-law probabilities must be nonnegative and sum to 1")


# ---------------------------------------------------------------------------
# Domain


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle with the origin as one corner.

    ``upper`` entries may be ``inf``; validation grids never probe infinite
    edges and instead span [lo, lo + clip] there.
    """

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lower, dtype=float)
        hi = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if lo.shape != hi.shape or np.any(lo < 0) or np.any(hi <= lo):
            raise ModelError("domain must satisfy 0 <= lower < upper per axis")

    @property
    def s(self) -> int:
        return self.lower.shape[0]

    def contains(self, x, tol=1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lower - tol) and np.all(x <= self.upper + tol))

    def grid(self, density: int, clip: float = 1.0) -> np.ndarray:
        """Cartesian evaluation grid, capped at 1e5 points total."""
        s = self.s
        per_axis = min(density, max(2, int(1e5 ** (1.0 / s))))
        axes = []
        for lo, hi in zip(self.lower, self.upper):
            top = lo + clip if math.isinf(hi) else hi
            axes.append(np.linspace(lo, top, per_axis))
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)


# ---------------------------------------------------------------------------
# One-dimensional memory functions and transforms


@dataclass(frozen=True)
class Func1D:
    """A memory function together with its role in the 1-d family.

    role ``f`` maps [0,1] -> [0,1]; role ``g`` maps [-1,1] -> [-1,1]; role
    ``h`` is the step-up probability (1-p) + (2p-1) f with memory strength p.
    """

    expr: FuncExpr
    role: str  # f | g | h
    memory_p: Optional[float] = None

    def __post_init__(self):
        if self.role not in ("f", "g", "h"):
            raise ModelError("role must be one of f, g, h")
        if self.role == "h" and self.memory_p is None:
            raise ModelError("role h requires the memory parameter p")

    def __call__(self, x):
        return self.expr(x)

    def range_ok(self, grid_density: int = 201, tol: float = 1e-9) -> bool:
        lo, hi = (-1.0, 1.0) if self.role == "g" else (0.0, 1.0)
        xs = np.linspace(lo, hi, grid_density)
        vals = self.expr(xs)
        return bool(np.all(vals >= lo - tol) and np.all(vals <= hi + tol))

    def is_symmetric(self, grid_density: int = 201, tol: float = 1e-12) -> bool:
        """f(x) + f(1-x) = 1 on a grid (roles f and h); g odd for role g."""
        if self.role == "g":
            xs = np.linspace(-1.0, 1.0, grid_density)
            return bool(np.max(np.abs(self.expr(xs) + self.expr(-xs))) <= tol)
        xs = np.linspace(0.0, 1.0, grid_density)
        return bool(np.max(np.abs(self.expr(xs) + self.expr(1.0 - xs) - 1.0)) <= tol)


def h_from_f(f: Func1D, p: float) -> Func1D:
    """Step-up probability h(x) = (1-p) + (2p-1) f(x)."""
    if not 0.0 < p < 1.0:
        raise ModelError("memory parameter p must lie in (0,1)")
    if f.role != "f":
        raise ModelError("h_from_f expects a role-f function")
    return Func1D(funcdsl.affine(f.expr, 2.0 * p - 1.0, 1.0 - p), "h", memory_p=p)


def g_from_f(f: Func1D) -> Func1D:
    """Location form g(x) = 2 f((x+1)/2) - 1 on [-1, 1]."""
    if f.role != "f":
        raise ModelError("g_from_f expects a role-f function")
    half = funcdsl.BinOp("/", funcdsl.BinOp("+", funcdsl.Var(0, "x"), funcdsl.Const(1.0)), funcdsl.Const(2.0))
    composed = funcdsl.substitute(f.expr, half)
    return Func1D(funcdsl.affine(composed, 2.0, -1.0), "g")


def f_from_g(g: Func1D) -> Func1D:
    """Inverse transform f(x) = (g(2x-1) + 1) / 2."""
    if g.role != "g":
        raise ModelError("f_from_g expects a role-g function")
    inner = funcdsl.BinOp("-", funcdsl.BinOp("*", funcdsl.Const(2.0), funcdsl.Var(0, "x")), funcdsl.Const(1.0))
    composed = funcdsl.substitute(g.expr, inner)
    return Func1D(funcdsl.affine(composed, 0.5, 0.5), "f")


def dual(f: Func1D, p: float) -> tuple:
    """Reflected parameterization (f*, p*) = (1-f, 1-p) inducing the same h."""
    if f.role != "f":
        raise ModelError("dual expects a role-f function")
    return Func1D(funcdsl.one_minus(f.expr), "f"), 1.0 - p


# ---------------------------------------------------------------------------
# Model definition


@dataclass(frozen=True)
class ModelSpec:
    """Full parameterization of a walk instance.

    partition blocks are contiguous 1-based index ranges covering 1..s in
    order; only the last block may be empty. ``prob_maps`` holds the r-1
    block probabilities P_1..P_{r-1} as expressions over x1..xs (or x when
    s == 1); the last block takes the complementary probability.
    """

    s: int
    d: int
    r: int
    partition: tuple  # of tuples of 1-based indices; () allowed only last
    step_law: StepLaw
    prob_maps: tuple  # of FuncExpr
    A: np.ndarray  # (d, s)
    b: np.ndarray  # (d,)
    initial: InitialLaw
    domain: Domain
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "A", np.atleast_2d(np.asarray(self.A, dtype=float)))
        object.__setattr__(self, "b", np.atleast_1d(np.asarray(self.b, dtype=float)))
        object.__setattr__(self, "partition", tuple(tuple(int(i) for i in blk) for blk in self.partition))
        object.__setattr__(self, "prob_maps", tuple(self.prob_maps))


def _check_partition(spec: ModelSpec, errors: list):
    if len(spec.partition) != spec.r:
        errors.append(f"partition has {len(spec.partition)} blocks, expected r={spec.r}")
        return
    expected = 1
    for i, blk in enumerate(spec.partition):
        if not blk:
            if i != spec.r - 1:
                errors.append(f"partition-overlap: only the last block may be empty (block {i + 1})")
            continue
        if list(blk) != list(range(expected, expected + len(blk))):
            errors.append(f"partition-overlap: block {i + 1} = {blk} is not the contiguous run starting at {expected}")
            return
        expected += len(blk)
    if expected != spec.s + 1:
        errors.append(f"partition-overlap: blocks cover 1..{expected - 1}, expected 1..{spec.s}")


@dataclass(frozen=True)
class ValidatedModel:
    """A validated spec with cached moments and the drift map H.

    Immutable after construction; safe to share across simulation workers.
    """

    spec: ModelSpec
    mu: np.ndarray
    sigma: np.ndarray  # E[Y Y^T]
    block_masks: np.ndarray  # (r, s) 0/1
    notes: tuple = ()

    @property
    def s(self) -> int:
        return self.spec.s

    @property
    def d(self) -> int:
        return self.spec.d

    @property
    def r(self) -> int:
        return self.spec.r

    @property
    def domain(self) -> Domain:
        return self.spec.domain

    @property
    def meta(self) -> dict:
        return self.spec.meta

    def block_probs(self, x, clamp_tol: float = 1e-9):
        """All r block probabilities at x (vectorized over leading axes).

        Values outside [0 - tol, 1 + tol] abort: that is model misuse, not
        noise. Within the tolerance band they are clamped.
        """
        x = np.asarray(x, dtype=float)
        vshape = x.shape[:-1] if self.s > 1 else x.shape
        cols = [x[..., j] for j in range(self.s)] if self.s > 1 else [x]
        values = []
        for pm in self.spec.prob_maps:
            fast = pm.fast
            values.append(np.asarray(fast(cols) if fast is not None else pm(x), dtype=float))
        if values:
            probs = np.stack([np.broadcast_to(v, vshape) for v in values], axis=0)
        else:
            probs = np.zeros((0,) + vshape)
        lo, hi = probs.min(initial=0.0), probs.max(initial=0.0)
        if lo < -clamp_tol or hi > 1.0 + clamp_tol:
            raise ModelError(
                f"probability-out-of-range at runtime: P in [{lo:.6g}, {hi:.6g}]"
            )
        probs = np.clip(probs, 0.0, 1.0)
        tail = 1.0 - probs.sum(axis=0)
        if np.min(tail, initial=1.0) < -clamp_tol:
            raise ModelError("probability-out-of-range at runtime: block probabilities sum past 1")
        tail = np.clip(tail, 0.0, 1.0)
        return np.concatenate([probs, tail[None, ...]], axis=0)

    def eval_H(self, x) -> np.ndarray:
        """Drift map H(x) = sum_i P_i(x) * mu masked to block i."""
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1 if self.s > 1 else x.ndim == 0
        if self.s == 1:
            pts = np.atleast_1d(x)
            if not self.domain.contains([pts.min()]) or not self.domain.contains([pts.max()]):
                raise DomainViolation(f"point outside model rectangle")
            probs = self.block_probs(pts)  # (r, n)
            out = (probs[:, :, None] * (self.block_masks * self.mu)[:, None, :]).sum(axis=0)
            return out[0] if single else out
        pts = np.atleast_2d(x)
        for j in range(self.s):
            col = pts[:, j]
            if col.min() < self.domain.lower[j] - 1e-9 or col.max() > self.domain.upper[j] + 1e-9:
                raise DomainViolation(f"coordinate {j + 1} outside model rectangle")
        probs = self.block_probs(pts)  # (r, n)
        masked_mu = self.block_masks * self.mu  # (r, s)
        out = np.einsum("rn,rs->ns", probs, masked_mu)
        return out[0] if single else out

    def sigma_blocks(self, x=None) -> np.ndarray:
        """sum_i P_i(x) Sigma^(pi_i) as an (s, s) matrix (x defaults needed)."""
        probs = self.block_probs(np.asarray(x, dtype=float))
        out = np.zeros((self.s, self.s))
        for i in range(self.r):
            mask = self.block_masks[i].astype(bool)
            if not mask.any():
                continue
            block = np.zeros_like(out)
            ix = np.ix_(mask, mask)
            block[ix] = self.sigma[ix]
            out += float(probs[i]) * block
        return out

    def noise_second_moment(self, x) -> np.ndarray:
        """Sigma(x) = sum_i P_i(x) Sigma^(pi_i) - H(x) H(x)^T."""
        H = self.eval_H(x)
        return self.sigma_blocks(x) - np.outer(H, H)

    def noise_sigma2(self, x):
        """sigma^2(x) = tr Sigma(x); for s = 1 this is H(x)/mu * Sigma - H(x)^2."""
        return float(np.trace(self.noise_second_moment(x)))

    def observe(self, s_aux, n):
        """Map auxiliary positions to observed positions A s_aux + n b."""
        s_aux = np.asarray(s_aux, dtype=float)
        return s_aux @ self.spec.A.T + float(n) * self.spec.b


def validate_model(spec: ModelSpec, grid_density: int = 201, clip: float = 1.0):
    """Validate a spec on a finite grid.

    Returns a :class:`ValidatedModel` or raises :class:`ModelError` carrying
    the full list of violations (with an offending grid point each, where
    applicable).
    """
    errors = []
    notes = []
    if spec.s < 1 or spec.d < 1 or spec.r < 1:
        errors.append("dimensions s, d, r must be positive")
    _check_partition(spec, errors)
    if spec.step_law.s != spec.s:
        errors.append(f"step law dimension {spec.step_law.s} != s={spec.s}")
    if spec.A.shape != (spec.d, spec.s):
        errors.append(f"A must be {spec.d}x{spec.s}, got {spec.A.shape}")
    if spec.b.shape != (spec.d,):
        errors.append(f"b must be a {spec.d}-vector")
    if len(spec.prob_maps) != spec.r - 1:
        errors.append(f"need r-1={spec.r - 1} probability maps, got {len(spec.prob_maps)}")
    if spec.initial.atoms.shape[1] != spec.s:
        errors.append("initial-law atoms must be s-vectors")
    if spec.domain.s != spec.s:
        errors.append("domain dimension mismatch")
    sm = spec.step_law.second_moment
    if not np.allclose(sm, sm.T):
        errors.append("moment-missing: second-moment matrix is not symmetric")
    if errors:
        raise ModelError("; ".join(errors))

    grid = spec.domain.grid(grid_density, clip=clip)
    # models whose reachable states live on a simplex (one unit-mass block
    # per step) declare a cap on the coordinate sum; the probability
    # constraint only needs to hold there
    cap = spec.meta.get("simplex_cap")
    if cap is not None:
        grid = grid[grid.sum(axis=1) <= float(cap) + 1e-12]
    total = np.zeros(grid.shape[0])
    gridpts = grid[:, 0] if spec.s == 1 else grid
    for i, pm in enumerate(spec.prob_maps):
        vals = np.broadcast_to(np.asarray(pm(gridpts), dtype=float), (grid.shape[0],))
        bad = np.where((vals < -1e-12) | (vals > 1.0 + 1e-12))[0]
        if bad.size:
            errors.append(
                f"probability-out-of-range: P_{i + 1}({grid[bad[0]].tolist()}) = {vals[bad[0]]:.6g}"
            )
        total += vals
    interior = np.all(
        (grid > spec.domain.lower + 1e-12) & (grid < np.minimum(spec.domain.upper, spec.domain.lower + 1e12)),
        axis=1,
    )
    over = np.where(total > 1.0 + 1e-12)[0]
    if over.size:
        errors.append(
            f"probability-out-of-range: block probabilities sum to {total[over[0]]:.6g} at {grid[over[0]].tolist()}"
        )
    at_one = np.where((total >= 1.0 - 1e-15) & interior)[0]
    if at_one.size:
        errors.append(
            f"probability-out-of-range: block probabilities reach 1 at interior point {grid[at_one[0]].tolist()}"
        )
    if np.any(total >= 1.0 - 1e-15):
        notes.append("block probabilities attain 1 on the domain boundary (grid-verified only)")
    if errors:
        raise ModelError("; ".join(errors))

    masks = np.zeros((spec.r, spec.s))
    for i, blk in enumerate(spec.partition):
        for j in blk:
            masks[i, j - 1] = 1.0
    notes.append("probability constraints grid-verified only")
    return ValidatedModel(
        spec=spec,
        mu=spec.step_law.mu,
        sigma=spec.step_law.second_moment,
        block_masks=masks,
        notes=tuple(notes),
    )


# ---------------------------------------------------------------------------
# JSON serialization (strings in the expression grammar, matrices as lists)


def spec_to_dict(spec: ModelSpec) -> dict:
    return {
        "s": spec.s,
        "d": spec.d,
        "r": spec.r,
        "partition": [list(blk) for blk in spec.partition],
        "step_law": {
            "kind": spec.step_law.kind,
            "atoms": spec.step_law.atoms.tolist(),
            "probs": spec.step_law.probs.tolist(),
        },
        "prob_maps": [pm.to_string() for pm in spec.prob_maps],
        "A": spec.A.tolist(),
        "b": spec.b.tolist(),
        "initial": {
            "atoms": spec.initial.atoms.tolist(),
            "probs": spec.initial.probs.tolist(),
        },
        "domain": {
            "lower": spec.domain.lower.tolist(),
            "upper": [None if math.isinf(u) else u for u in spec.domain.upper],
        },
        "meta": spec.meta,
    }


def spec_from_dict(doc: dict) -> ModelSpec:
    s = int(doc["s"])
    upper = [math.inf if u is None else float(u) for u in doc["domain"]["upper"]]
    return ModelSpec(
        s=s,
        d=int(doc["d"]),
        r=int(doc["r"]),
        partition=tuple(tuple(blk) for blk in doc["partition"]),
        step_law=StepLaw(doc["step_law"]["kind"], np.asarray(doc["step_law"]["atoms"]), np.asarray(doc["step_law"]["probs"])),
        prob_maps=tuple(parse(text, arity=s) for text in doc["prob_maps"]),
        A=np.asarray(doc["A"]),
        b=np.asarray(doc["b"]),
        initial=InitialLaw(np.asarray(doc["initial"]["atoms"]), np.asarray(doc["initial"]["probs"])),
        domain=Domain(np.asarray(doc["domain"]["lower"], dtype=float), np.asarray(upper, dtype=float)),
        meta=doc.get("meta", {}),
    )


def save_model(spec: ModelSpec, path):
    with open(path, "w") as fh:
        json.dump(spec_to_dict(spec), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_model(path) -> ModelSpec:
    with open(path) as fh:
        return spec_from_dict(json.load(fh))
