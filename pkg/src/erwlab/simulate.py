"""Forward simulation of the walk dynamics with reproducible ensembles.

Every trajectory owns a counter-based stream (Philox keyed by
(master_seed, trajectory_index)) and consumes exactly two uniforms per time
step: one for the block choice, one for the step atom. The fixed draw budget
means switching functionals on or off never perturbs paths, and ensembles
are bit-for-bit reproducible regardless of batching or thread count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import ModelError, ValidatedModel


def default_checkpoints(n_max: int) -> list:
    """Geometric checkpoint spacing {floor(n_max * 2^-j)} down to 1."""
    pts = set()
    value = n_max
    while value >= 1:
        pts.add(int(value))
        value //= 2
    return sorted(pts)


@dataclass
class FunctionalConfig:
    """Optional per-trajectory functionals tracked during simulation."""

    center: Optional[np.ndarray] = None  # predicted limit of S_n/n (d-vector)
    lil_mode: Optional[str] = None  # "diffusive" | "critical"
    lil_window: tuple = (1000, None)  # max taken over n in [lo, hi]
    track_returns: bool = False  # d = 1 integer-lattice models only
    collect_noise: bool = False  # retain noise increments (s = 1 only)

    def wants_per_step(self) -> bool:
        return self.lil_mode is not None or self.track_returns or self.collect_noise


@dataclass
class EnsembleStats:
    """Checkpointed ensemble summaries plus retained per-trajectory data."""

    checkpoints: list
    n_max: int
    N: int
    master_seed: int
    d: int
    snn: np.ndarray  # (N, C, d) values of S_n/n at each checkpoint
    aux_final: np.ndarray  # (N, s) auxiliary position at n_max
    lil_max: Optional[np.ndarray] = None  # (N,)
    return_counts: Optional[np.ndarray] = None  # (N,)
    last_return: Optional[np.ndarray] = None  # (N,)
    returns_at: Optional[np.ndarray] = None  # (N, C) cumulative counts
    noise_x: Optional[np.ndarray] = None  # (N, n_max-1) states fed to the drift
    noise_e: Optional[np.ndarray] = None  # (N, n_max-1) noise increments
    config: dict = field(default_factory=dict)

    def mean(self, cp_index: int) -> np.ndarray:
        return self.snn[:, cp_index, :].mean(axis=0)

    def se(self, cp_index: int) -> np.ndarray:
        return self.snn[:, cp_index, :].std(axis=0, ddof=1) / math.sqrt(self.N)

    def cov(self, cp_index: int) -> np.ndarray:
        x = self.snn[:, cp_index, :]
        centered = x - x.mean(axis=0)
        return centered.T @ centered / (self.N - 1)

    def scaled_cov(self, cp_index: int) -> np.ndarray:
        """Covariance of sqrt(n) * S_n/n at the checkpoint."""
        return self.checkpoints[cp_index] * self.cov(cp_index)

    def scaled_deviation(self, cp_index: int, tau: float, center) -> np.ndarray:
        """n^(1-tau) * (S_n/n - center) per trajectory, (N, d)."""
        n = self.checkpoints[cp_index]
        return n ** (1.0 - tau) * (self.snn[:, cp_index, :] - np.asarray(center))

    def checkpoint_index(self, n: int) -> int:
        return self.checkpoints.index(n)


def trajectory_seed(master_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))


@dataclass
class WalkState:
    """Single-trajectory state: time index, auxiliary position, stream.

    ``counts`` aliases the auxiliary position for one-dimensional unit-step
    models (the up-step tally). The stream identity is the (seed, index)
    pair; the generator is positioned right after draw pair ``n``.
    """

    n: int
    s_aux: np.ndarray
    rng: np.random.Generator
    stream: tuple = (0, 0)

    @property
    def counts(self):
        return self.s_aux

    @staticmethod
    def fresh(model: ValidatedModel, seed: int, index: int = 0) -> "WalkState":
        gen = np.random.Generator(np.random.Philox(trajectory_seed(seed, index)))
        return WalkState(n=0, s_aux=np.zeros(model.s), rng=gen, stream=(seed, index))

    def observed(self, model: ValidatedModel) -> np.ndarray:
        return model.observe(self.s_aux, self.n)


def step(state: WalkState, model: ValidatedModel) -> WalkState:
    """Advance one time step, consuming exactly two uniforms.

    Time 1 draws from the initial law; afterwards the block index comes from
    the probabilities evaluated at the position average and the step atom
    from the step law (the second draw is burnt at time 1 so the budget
    stays fixed).
    """
    u1, u2 = state.rng.random(2)
    spec = model.spec
    if state.n == 0:
        idx = min(int(np.searchsorted(np.cumsum(spec.initial.probs), u1, side="right")),
                  len(spec.initial.probs) - 1)
        move = spec.initial.atoms[idx]
    else:
        probs = model.block_probs(state.s_aux / state.n if model.s > 1 else np.array(state.s_aux[0] / state.n))
        cum = np.cumsum(np.asarray(probs, dtype=float).reshape(-1))
        block = min(int(np.sum(u1 >= cum)), model.r - 1)
        atom_cum = np.cumsum(spec.step_law.probs)
        aidx = min(int(np.searchsorted(atom_cum, u2, side="right")), len(atom_cum) - 1)
        move = spec.step_law.atoms[aidx] * model.block_masks[block]
    return WalkState(n=state.n + 1, s_aux=state.s_aux + move, rng=state.rng, stream=state.stream)


def _make_generators(master_seed, lo, hi):
    return [np.random.Generator(np.random.Philox(trajectory_seed(master_seed, i))) for i in range(lo, hi)]


def _lil_norm(n: int, mode: str) -> float:
    if mode == "diffusive":
        return math.sqrt(n / (2.0 * math.log(math.log(n))))
    if mode == "critical":
        return math.sqrt(n / (2.0 * math.log(n) * math.log(math.log(math.log(n)))))
    raise ModelError(f"unknown LIL mode {mode!r}")


def _simulate_batch(model, n_max, checkpoints, gens, cfg, out):
    """Advance one batch of trajectories through all n_max steps."""
    B = len(gens)
    s, d, r = model.s, model.d, model.r
    spec = model.spec
    atoms = spec.step_law.atoms  # (n_atoms, s)
    atom_cum = np.cumsum(spec.step_law.probs)
    init_atoms = spec.initial.atoms
    init_cum = np.cumsum(spec.initial.probs)
    masks = model.block_masks  # (r, s)
    A, b = spec.A, spec.b
    cp_set = {cp: j for j, cp in enumerate(checkpoints)}
    max_atom = float(np.max(np.abs(atoms))) if atoms.size else 0.0

    state = np.zeros((B, s))
    int_lattice = (
        d == 1
        and np.allclose(A, np.round(A))
        and np.allclose(b, np.round(b))
        and np.allclose(atoms, np.round(atoms))
        and np.allclose(init_atoms, np.round(init_atoms))
    )
    if cfg.track_returns and not int_lattice:
        raise ModelError("non-lattice-model: return counting needs d=1 integer-valued positions")

    lil_lo, lil_hi = cfg.lil_window
    lil_hi = n_max if lil_hi is None else lil_hi
    center = None if cfg.center is None else np.asarray(cfg.center, dtype=float)

    chunk = max(1, min(n_max, 8_388_608 // max(1, 2 * B)))
    t = 0
    while t < n_max:
        span = min(chunk, n_max - t)
        uniforms = np.empty((span, 2, B))
        for j, gen in enumerate(gens):
            uniforms[:, :, j] = gen.random((span, 2))
        for tt in range(span):
            tc = t + tt
            u1, u2 = uniforms[tt, 0], uniforms[tt, 1]
            if tc == 0:
                idx = np.searchsorted(init_cum, u1, side="right")
                np.clip(idx, 0, len(init_cum) - 1, out=idx)
                step_vec = init_atoms[idx]
            else:
                x = state[:, 0] / tc if s == 1 else state / tc
                probs = model.block_probs(x)  # (r, B)
                cum = np.cumsum(probs, axis=0)
                block = (u1[None, :] >= cum).sum(axis=0)
                np.clip(block, 0, r - 1, out=block)
                aidx = np.searchsorted(atom_cum, u2, side="right")
                np.clip(aidx, 0, len(atom_cum) - 1, out=aidx)
                step_vec = atoms[aidx] * masks[block]
                if cfg.collect_noise:
                    H = probs.T @ (masks * model.mu)  # (B, s)
                    e_vec = H - step_vec
                    out["noise_x"][:, tc - 1] = x if s == 1 else np.nan
                    out["noise_e"][:, tc - 1] = e_vec[:, 0] if s == 1 else np.linalg.norm(e_vec, axis=1)
            state += step_vec
            n_now = tc + 1
            if cfg.lil_mode is not None or cfg.track_returns:
                s_obs = state @ A.T + n_now * b  # (B, d)
                if cfg.track_returns and n_now >= 1:
                    at_zero = s_obs[:, 0] == 0.0
                    out["return_counts"] += at_zero
                    out["last_return"][at_zero] = n_now
                if cfg.lil_mode is not None and lil_lo <= n_now <= lil_hi:
                    dev = s_obs / n_now - (center if center is not None else 0.0)
                    z = np.abs(dev[:, 0]) * _lil_norm(n_now, cfg.lil_mode)
                    np.maximum(out["lil_max"], z, out=out["lil_max"])
            if n_now in cp_set:
                out["snn"][:, cp_set[n_now], :] = state @ A.T / n_now + b
                if cfg.track_returns:
                    out["returns_at"][:, cp_set[n_now]] = out["return_counts"]
        t += span
        if np.any(np.abs(state) > (t * max_atom) + 1e-9):
            raise ModelError("overflow-guard: auxiliary position exceeds n * max atom")
    out["aux_final"][:, :] = state


def trajectory(model: ValidatedModel, n_max: int, seed: int, checkpoints=None,
               functional_config: Optional[FunctionalConfig] = None):
    """Single trajectory; deterministic function of (model, seed).

    Equals trajectory ``index=0`` of an ensemble run with ``master_seed=seed``.
    Returns an :class:`EnsembleStats` with N=1.
    """
    return ensemble(model, n_max, 1, seed, checkpoints, functional_config, threads=1)


def ensemble(model: ValidatedModel, n_max: int, N: int, master_seed: int,
             checkpoints=None, functional_config: Optional[FunctionalConfig] = None,
             threads: int = 1, batch_size: int = 2048) -> EnsembleStats:
    """Monte Carlo ensemble of N independent trajectories.

    Results are independent of ``threads`` and ``batch_size``: trajectory i
    always consumes the same stream (master_seed, i), and reductions happen
    on index-ordered arrays.
    """
    if n_max < 1:
        raise ModelError("n_max must be >= 1")
    if N < 1:
        raise ModelError("N must be >= 1")
    cfg = functional_config or FunctionalConfig()
    checkpoints = sorted(set(default_checkpoints(n_max) if checkpoints is None else [int(c) for c in checkpoints]))
    if any(c < 1 or c > n_max for c in checkpoints):
        raise ModelError("checkpoints must lie in [1, n_max]")
    if n_max not in checkpoints:
        checkpoints.append(n_max)
        checkpoints.sort()
    C = len(checkpoints)
    d, s = model.d, model.s

    if cfg.collect_noise:
        if model.s != 1:
            raise ModelError("noise collection is implemented for s = 1 models")
        if N * max(0, n_max - 1) > 200_000_000:
            raise ModelError("noise collection would retain too much data; shrink N or n_max")

    snn = np.empty((N, C, d))
    aux_final = np.empty((N, s))
    lil_max = np.zeros(N) if cfg.lil_mode is not None else None
    return_counts = np.zeros(N, dtype=np.int64) if cfg.track_returns else None
    last_return = np.zeros(N, dtype=np.int64) if cfg.track_returns else None
    returns_at = np.zeros((N, C), dtype=np.int64) if cfg.track_returns else None
    noise_x = np.empty((N, n_max - 1)) if cfg.collect_noise else None
    noise_e = np.empty((N, n_max - 1)) if cfg.collect_noise else None

    def run_batch(lo, hi):
        gens = _make_generators(master_seed, lo, hi)
        out = {
            "snn": snn[lo:hi],
            "aux_final": aux_final[lo:hi],
            "lil_max": lil_max[lo:hi] if lil_max is not None else None,
            "return_counts": return_counts[lo:hi] if return_counts is not None else None,
            "last_return": last_return[lo:hi] if last_return is not None else None,
            "returns_at": returns_at[lo:hi] if returns_at is not None else None,
            "noise_x": noise_x[lo:hi] if noise_x is not None else None,
            "noise_e": noise_e[lo:hi] if noise_e is not None else None,
        }
        _simulate_batch(model, n_max, checkpoints, gens, cfg, out)

    batches = [(lo, min(lo + batch_size, N)) for lo in range(0, N, batch_size)]
    if threads > 1 and len(batches) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(lambda span: run_batch(*span), batches))
    else:
        for lo, hi in batches:
            run_batch(lo, hi)

    return EnsembleStats(
        checkpoints=checkpoints,
        n_max=n_max,
        N=N,
        master_seed=master_seed,
        d=d,
        snn=snn,
        aux_final=aux_final,
        lil_max=lil_max,
        return_counts=return_counts,
        last_return=last_return,
        returns_at=returns_at,
        noise_x=noise_x,
        noise_e=noise_e,
        config={
            "n_max": n_max,
            "N": N,
            "master_seed": master_seed,
            "checkpoints": checkpoints,
            "lil_mode": cfg.lil_mode,
            "track_returns": cfg.track_returns,
        },
    )


def stats_to_rows(stats: EnsembleStats) -> list:
    """Flatten checkpoint summaries into CSV rows.

    Columns: checkpoint, component, mean, se, var, cov_0..cov_{d-1}.
    """
    rows = []
    for j, n in enumerate(stats.checkpoints):
        mean = stats.mean(j)
        se = stats.se(j)
        cov = stats.cov(j)
        for comp in range(stats.d):
            rows.append(
                [n, comp, mean[comp], se[comp], cov[comp, comp]] + [cov[comp, k] for k in range(stats.d)]
            )
    return rows
