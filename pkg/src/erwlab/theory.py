"""Limit theory computations for validated models.

Everything the asymptotic theorems need is derived here: the fixed point of
the drift map H, grid verification of the downcrossing condition, the
Jacobian spectrum with its dominant real part tau and largest block size
kappa, the noise covariance Sigma0 with its diffusive (Sigma1) and critical
(Sigma2) limits, law-of-iterated-logarithm constants, and the recursive
expansion coefficients for the superdiffusive deviation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg

from .model import ModelError, ValidatedModel


class TheoryError(ModelError):
    pass


# ---------------------------------------------------------------------------
# Fixed point


def _feasible(model, x):
    x = np.clip(x, model.domain.lower, np.minimum(model.domain.upper, model.domain.lower + 1e12))
    cap = model.meta.get("simplex_cap")
    if cap is not None and x.sum() > cap:
        x = x * (0.98 * float(cap) / x.sum())
    return x


def find_fixed_point(model: ValidatedModel, tol: float = 1e-13, flag_tol: float = 1e-8):
    """Solve H(x) = x on the model rectangle.

    s = 1 uses bracketing bisection on H(x) - x; s > 1 uses damped
    fixed-point iteration from the domain center with an eight-corner
    multi-start fallback. Raises on no root or on distinct multi-start
    roots (separation > ``flag_tol``).
    """
    dom = model.domain
    if model.s == 1:
        lo = float(dom.lower[0])
        hi = float(dom.upper[0]) if math.isfinite(dom.upper[0]) else lo + 1.0

        def g(x):
            return float(np.asarray(model.eval_H(np.array([x]))).reshape(-1)[0]) - x

        xs = np.linspace(lo, hi, 1001)
        vals = np.atleast_2d(model.eval_H(xs)).reshape(-1) - xs
        signs = np.sign(vals)
        crossings = np.where(np.diff(signs) != 0)[0]
        roots = []
        for c in crossings:
            a, b_ = xs[c], xs[c + 1]
            fa = vals[c]
            for _ in range(200):
                mid = 0.5 * (a + b_)
                fm = g(mid)
                if fa * fm <= 0:
                    b_ = mid
                else:
                    a, fa = mid, fm
                if b_ - a < tol:
                    break
            roots.append(0.5 * (a + b_))
        roots = [r for i, r in enumerate(roots) if all(abs(r - q) > flag_tol for q in roots[:i])]
        if not roots:
            raise TheoryError("no-root-in-domain: H(x) - x has no sign change")
        if len(roots) > 1:
            raise TheoryError(f"multiple-roots: fixed points near {roots}")
        return np.array([roots[0]])

    center = _feasible(model, dom.lower + 0.5 * (np.minimum(dom.upper, dom.lower + 1.0) - dom.lower))
    starts = [center]
    span = np.minimum(dom.upper, dom.lower + 1.0) - dom.lower
    for corner in range(2 ** min(model.s, 3)):
        offs = np.array([(corner >> j) & 1 for j in range(model.s)][: model.s], dtype=float)
        starts.append(_feasible(model, dom.lower + (0.1 + 0.8 * offs) * span))
    roots = []
    for x in starts:
        x = x.copy()
        converged = False
        for _ in range(20000):
            delta = model.eval_H(x) - x
            x = _feasible(model, x + 0.5 * delta)
            if np.max(np.abs(delta)) < tol:
                converged = True
                break
        if converged:
            roots.append(x)
    if not roots:
        raise TheoryError("no-root-in-domain: damped iteration did not converge from any start")
    base = roots[0]
    for r in roots[1:]:
        if np.max(np.abs(r - base)) > flag_tol:
            raise TheoryError(f"multiple-roots: fixed points {base.tolist()} and {r.tolist()}")
    return base


@dataclass(frozen=True)
class DowncrossingResult:
    verified: bool
    max_value: float
    argmax: np.ndarray


def check_downcrossing(model: ValidatedModel, x0, grid_density: int = 201,
                       exclusion_radius: float = 1e-6) -> DowncrossingResult:
    """Grid check of sup (x - x0)^T (H(x) - x) < 0 away from x0.

    The sup in the condition runs over closed subsets of the open rectangle,
    so the grid keeps strictly interior points and excludes a small ball
    around x0. A nonnegative maximum reports the offending point.
    """
    x0 = np.asarray(x0, dtype=float)
    grid = model.domain.grid(grid_density)
    cap = model.meta.get("simplex_cap")
    if cap is not None:
        grid = grid[grid.sum(axis=1) <= float(cap) + 1e-12]
    lower = model.domain.lower
    upper = np.minimum(model.domain.upper, model.domain.lower + 1e12)
    interior = np.all((grid > lower + 1e-12) & (grid < upper - 1e-12), axis=1)
    grid = grid[interior]
    keep = np.linalg.norm(grid - x0, axis=1) > exclusion_radius
    grid = grid[keep]
    if grid.shape[0] == 0:
        raise TheoryError("downcrossing grid is empty; raise grid_density")
    H = model.eval_H(grid if model.s > 1 else grid[:, 0])
    H = np.atleast_2d(H)
    if H.shape[0] != grid.shape[0]:
        H = H.T
    values = np.einsum("ij,ij->i", grid - x0, H - grid)
    k = int(np.argmax(values))
    return DowncrossingResult(verified=bool(values[k] < 0.0), max_value=float(values[k]), argmax=grid[k])


# ---------------------------------------------------------------------------
# Jacobian and spectral structure


def _partial(fun, x0, axis, base_step):
    """Second-order central partial derivative with Richardson refinement."""
    best, best_err = None, math.inf
    prev = None
    for k in range(6):
        h = base_step * 2.0 ** (-k)
        xp, xm = x0.copy(), x0.copy()
        xp[axis] += h
        xm[axis] -= h
        d = (fun(xp) - fun(xm)) / (2.0 * h)
        if prev is not None:
            extrap = (4.0 * d - prev) / 3.0
            err = np.max(np.abs(extrap - d))
            if err < best_err:
                best, best_err = extrap, err
        prev = d
    return best


def jacobian(model: ValidatedModel, x0, base_step: float = 1e-3) -> np.ndarray:
    """Numeric Jacobian of the drift map H at x0 (column j = dH/dx_j)."""
    x0 = np.asarray(x0, dtype=float)
    dist = np.minimum(
        x0 - model.domain.lower,
        np.minimum(model.domain.upper, model.domain.lower + 1e12) - x0,
    )
    cols = []
    for j in range(model.s):
        step = min(base_step, max(float(dist[j]) / 2.0, 1e-7))

        def H_of(x):
            return np.atleast_1d(model.eval_H(x if model.s > 1 else x[0]))

        cols.append(_partial(H_of, x0, j, step))
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class SpectralProfile:
    """Spectral data of the drift Jacobian at the fixed point."""

    J: np.ndarray
    eigenvalues: np.ndarray  # with algebraic multiplicity
    tau: float
    kappa: int
    clusters: tuple  # of dicts: value, multiplicity, block_sizes
    top_right: tuple = ()  # right eigenvectors of J in the tau cluster (kappa=1)
    top_left: tuple = ()  # matching left eigenvectors, bilinear-normalized
    exact_tau: bool = False

    def block_table(self) -> dict:
        return {complex(c["value"]): list(c["block_sizes"]) for c in self.clusters}


def _rank(mat, threshold):
    if mat.size == 0:
        return 0
    sv = np.linalg.svd(mat, compute_uv=False)
    return int(np.sum(sv > threshold))


def _cluster_eigenvalues(eig, tol, scale=1.0, rcond=None):
    """Agglomerative eigenvalue clustering.

    A defective eigenvalue of multiplicity m computed in finite precision
    splits into a ring of radius about (eps * scale)^(1/m), far wider than
    any fixed tight tolerance. Ring members carry near-zero reciprocal
    eigenvalue condition numbers, so clusters touching an ill-conditioned
    eigenvalue merge at the ring scale while well-conditioned (simple)
    eigenvalues keep the tight tolerance. The exponent is capped at 1/4:
    block sizes beyond 4 are outside the supported detection range.
    """
    eps = np.finfo(float).eps
    n = len(eig)
    ill = np.zeros(n, dtype=bool) if rcond is None else np.asarray(rcond) < 1e-3
    groups = [[complex(eig[i]), [i]] for i in range(n)]

    ring_scale = 10.0 * (eps * max(1.0, scale)) ** 0.25

    def gap_threshold(a, b):
        touchy = any(ill[i] for i in groups[a][1]) or any(ill[i] for i in groups[b][1])
        return max(tol, ring_scale) if touchy else tol

    merged = True
    while merged and len(groups) > 1:
        merged = False
        best = None
        for a in range(len(groups)):
            for b in range(a + 1, len(groups)):
                ca = groups[a][0] / len(groups[a][1])
                cb = groups[b][0] / len(groups[b][1])
                gap = abs(ca - cb)
                if gap <= gap_threshold(a, b) and (best is None or gap < best[0]):
                    best = (gap, a, b)
        if best is not None:
            _, a, b = best
            groups[a][0] += groups[b][0]
            groups[a][1].extend(groups[b][1])
            del groups[b]
            merged = True
    out = [(grp[0] / len(grp[1]), grp[1]) for grp in groups]
    out.sort(key=lambda item: -item[0].real)
    return out


def _block_sizes_for_cluster(J, lam, members, eig, tol):
    """Jordan block sizes for one eigenvalue cluster by rank gaps.

    Works on the cluster's invariant block of the complex Schur form, so
    eigenvalues from other clusters cannot contaminate the rank tests.
    """
    m = len(members)
    if m == 1:
        return [1]
    spread = max(abs(eig[i] - lam) for i in members)
    # the Schur recomputation spreads a defective ring slightly differently
    # than the eigensolver; widen the capture radius until the invariant
    # subspace has the right dimension
    Tc = None
    for factor in (2.0, 10.0, 50.0):
        sort_tol = max(tol, factor * spread + 1e3 * np.finfo(float).eps)
        T, Z, sdim = scipy.linalg.schur(
            J.astype(complex), output="complex", sort=lambda z: abs(z - lam) <= sort_tol
        )
        if sdim == m:
            Tc = T[:m, :m] - lam * np.eye(m)
            diag_spread = float(np.max(np.abs(np.diag(T)[:m] - lam)))
            spread = max(spread, diag_spread)
            break
    if Tc is None:
        return None
    sigma1 = max(1.0, float(np.linalg.norm(Tc, 2)))
    power = np.eye(m, dtype=complex)
    ranks = [m]
    for k in range(1, m + 1):
        power = power @ Tc
        threshold = max(50.0 * m * np.finfo(float).eps * sigma1 ** k, 10.0 * spread * sigma1 ** (k - 1))
        ranks.append(_rank(power, threshold))
    # blocks of size >= k: rank(N^{k-1}) - rank(N^k)
    counts = [ranks[k - 1] - ranks[k] for k in range(1, m + 1)]
    if any(c < 0 for c in counts) or sum(counts) == 0:
        return None
    sizes = []
    for k in range(m, 0, -1):
        exactly_k = counts[k - 1] - (counts[k] if k < m else 0)
        sizes.extend([k] * exactly_k)
    if sum(sizes) != m:
        return None
    return sorted(sizes, reverse=True)


def _analyze_clusters(J, clusters, eig, tol):
    result = []
    for lam, members in clusters:
        sizes = _block_sizes_for_cluster(J, lam, members, eig, max(tol, 10 * np.finfo(float).eps))
        if sizes is None:
            return None
        result.append({"value": complex(lam), "multiplicity": len(members), "block_sizes": tuple(sizes), "members": members})
    return result


def spectral_profile_from_jacobian(J, cluster_tol: float = 1e-7,
                                   unsupported_tol: float = 1e-9) -> SpectralProfile:
    """Eigenvalues, tau, kappa, and per-eigenvalue Jordan block sizes.

    Clustering starts at ``cluster_tol`` but widens adaptively: a defective
    eigenvalue computed in finite precision splits into a ring of radius
    about eps^(1/kappa), far beyond any fixed tight tolerance. Ring members
    betray themselves through huge eigenvalue condition numbers (left and
    right eigenvectors nearly orthogonal), so ill-conditioned eigenvalues
    are never left in nominally simple clusters.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    s = J.shape[0]
    eig, wl, vr = scipy.linalg.eig(J, left=True, right=True)
    scale = float(np.linalg.norm(J, 2))
    # reciprocal eigenvalue condition numbers; defective ring members have
    # values near zero
    rcond = np.abs(np.einsum("ij,ij->j", wl.conj(), vr))
    rcond /= np.linalg.norm(wl, axis=0) * np.linalg.norm(vr, axis=0)

    clusters = _cluster_eigenvalues(eig, cluster_tol, scale=scale, rcond=rcond)
    profile_clusters = None
    used_tol = cluster_tol
    for _ in range(2 * s):
        result = _analyze_clusters(J, clusters, eig, used_tol)
        suspect = None
        if result is not None:
            for idx, entry in enumerate(result):
                if max(entry["block_sizes"]) == 1 and any(rcond[m] < 1e-3 for m in entry["members"]):
                    suspect = idx
                    break
            if suspect is None:
                profile_clusters = result
                break
        if len(clusters) <= 1:
            break
        # merge the offending (or first unresolvable) cluster with its
        # nearest neighbour and retry
        target = suspect if suspect is not None else 0
        lam_t = clusters[target][0]
        nearest = min(
            (i for i in range(len(clusters)) if i != target),
            key=lambda i: abs(clusters[i][0] - lam_t),
        )
        a, b = sorted((target, nearest))
        merged_members = clusters[a][1] + clusters[b][1]
        merged_value = np.mean([eig[m] for m in merged_members])
        clusters = (
            clusters[:a]
            + [(merged_value, merged_members)]
            + clusters[a + 1 : b]
            + clusters[b + 1 :]
        )
    if profile_clusters is None:
        raise TheoryError("jacobian-nonsmooth: could not resolve a consistent Jordan structure")
    for entry in profile_clusters:
        entry.pop("members", None)

    tau = max(c["value"].real for c in profile_clusters)
    top = [c for c in profile_clusters if abs(c["value"].real - tau) <= max(used_tol, 1e-9)]
    kappa = max(max(c["block_sizes"]) for c in top)

    top_right, top_left = (), ()
    if kappa == 1:
        vals_r, vecs_r = np.linalg.eig(J)
        vals_l, vecs_l = np.linalg.eig(J.T)
        rights, lefts = [], []
        for c in top:
            lam = c["value"]
            ridx = [i for i in range(s) if abs(vals_r[i] - lam) <= max(used_tol, 1e-7)]
            lidx = [i for i in range(s) if abs(vals_l[i] - lam) <= max(used_tol, 1e-7)]
            if not ridx or len(ridx) != len(lidx):
                continue
            V = vecs_r[:, ridx]
            W = vecs_l[:, lidx]
            # enforce the dual-basis condition W^T V = I on the whole
            # eigenspace (bilinear pairing; per-vector scaling is not
            # enough when the eigenvalue repeats)
            G = W.T @ V
            if abs(np.linalg.det(G)) < 1e-12:
                continue
            W = W @ np.linalg.inv(G).T
            for col in range(V.shape[1]):
                rights.append(V[:, col])
                lefts.append(W[:, col])
        top_right, top_left = tuple(rights), tuple(lefts)

    return SpectralProfile(
        J=J,
        eigenvalues=eig,
        tau=float(tau),
        kappa=int(kappa),
        clusters=tuple(profile_clusters),
        top_right=top_right,
        top_left=top_left,
    )


def spectral_profile(model: ValidatedModel, x0, cluster_tol: float = 1e-7) -> SpectralProfile:
    """Spectral profile of the model drift at x0.

    Presets that registered a closed-form top eigenvalue override the
    numerically computed tau (floating-point classification at the exact
    phase boundary is meaningless otherwise).
    """
    exact = model.meta.get("exact", {})
    if model.s == 1 and exact.get("h_derivs"):
        J = np.array([[float(exact["h_derivs"][0])]])
    else:
        J = jacobian(model, x0)
    profile = spectral_profile_from_jacobian(J, cluster_tol=cluster_tol)
    if "tau" in exact:
        exact_tau = float(exact["tau"])
        if abs(exact_tau - profile.tau) > 1e-4:
            raise TheoryError(
                f"registered top eigenvalue {exact_tau} disagrees with numerics {profile.tau}"
            )
        profile = SpectralProfile(
            J=profile.J,
            eigenvalues=profile.eigenvalues,
            tau=exact_tau,
            kappa=profile.kappa,
            clusters=profile.clusters,
            top_right=profile.top_right,
            top_left=profile.top_left,
            exact_tau=True,
        )
    return profile


# ---------------------------------------------------------------------------
# Asymptotic covariances


def sigma0_matrix(model: ValidatedModel, x0) -> np.ndarray:
    """Conditional noise covariance at the fixed point."""
    x = np.asarray(x0, dtype=float)
    return model.noise_second_moment(x if model.s > 1 else float(x[0]))


def solve_sigma1(J, Sigma0, residual_tol: float = 1e-10):
    """Diffusive covariance: (J - I/2) X + X (J - I/2)^T = -Sigma0.

    Valid when every eigenvalue of J has real part < 1/2. The scalar case is
    returned exactly as Sigma0 / (1 - 2 tau).
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    Sigma0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    s = J.shape[0]
    M = J - 0.5 * np.eye(s)
    if np.max(np.linalg.eigvals(M).real) >= 0:
        raise TheoryError("lyapunov-singular: drift Jacobian has eigenvalue real part >= 1/2")
    if s == 1:
        return Sigma0 / (1.0 - 2.0 * J[0, 0])
    X = scipy.linalg.solve_continuous_lyapunov(M, -Sigma0)
    X = 0.5 * (X + X.T)
    residual = np.linalg.norm(M @ X + X @ M.T + Sigma0)
    if residual > residual_tol * max(np.linalg.norm(Sigma0), 1e-300):
        raise TheoryError(f"lyapunov-singular: residual {residual:.3e} too large")
    return X


def sigma1_quadrature(J, Sigma0, horizon: Optional[float] = None, panels: int = 10000):
    """Independent check of the diffusive covariance by composite Simpson
    quadrature of the matrix-exponential integral.

    The default horizon grows like 16/(1-2 tau) so the truncated tail stays
    below the 1e-6 relative target for all tau <= 0.45.
    """
    J = np.atleast_2d(np.asarray(J, dtype=float))
    Sigma0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    s = J.shape[0]
    M = J - 0.5 * np.eye(s)
    tau = float(np.max(np.linalg.eigvals(J).real))
    if horizon is None:
        horizon = max(40.0, 16.0 / max(1e-6, 1.0 - 2.0 * tau))
    nodes = 2 * panels + 1
    h = horizon / (nodes - 1)
    E_h = scipy.linalg.expm(M * h)
    E = np.eye(s)
    total = np.zeros((s, s))
    for i in range(nodes):
        weight = 1.0 if i in (0, nodes - 1) else (4.0 if i % 2 == 1 else 2.0)
        total += weight * (E @ Sigma0 @ E.T)
        if i < nodes - 1:
            E = E @ E_h
    return total * h / 3.0


def sigma2_critical(profile: SpectralProfile, Sigma0, tol: float = 1e-7):
    """Critical covariance from the top-eigenvalue eigenvector formula.

    Only the diagonalizable-at-top case (kappa = 1) is computed from
    numerical eigenvectors: cross terms pair eigenvectors belonging to the
    same eigenvalue. Defective tops need exact chain data; see
    :func:`sigma2_from_blocks`.
    """
    if profile.kappa != 1:
        raise TheoryError("unavailable-numerically: critical covariance needs exact block data when kappa > 1")
    Sigma0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    s = Sigma0.shape[0]
    out = np.zeros((s, s), dtype=complex)
    rights, lefts = profile.top_right, profile.top_left
    lams = []
    for c in profile.clusters:
        if abs(c["value"].real - profile.tau) <= max(tol, 1e-9):
            lams.extend([c["value"]] * c["multiplicity"])
    for j1 in range(len(rights)):
        for j2 in range(len(rights)):
            if abs(lams[j1] - lams[j2]) > tol:
                continue
            v1, w1 = rights[j1], lefts[j1]
            v2, w2 = rights[j2], lefts[j2]
            out += np.outer(v1, v2) * (w1 @ Sigma0 @ w2)
    if np.max(np.abs(out.imag)) > 1e-8 * max(1.0, np.max(np.abs(out.real))):
        raise TheoryError("critical covariance came out non-real; eigenvector pairing failed")
    return out.real


def sigma2_from_blocks(chain_rights, chain_lefts, kappa: int, Sigma0):
    """Critical covariance from exact top-block chain vectors.

    ``chain_rights`` holds, per top block, the expanding direction (the
    right chain column of the drift Jacobian); ``chain_lefts`` the matching
    dual column, normalized so dual^T chain = identity blockwise.
    """
    Sigma0 = np.atleast_2d(np.asarray(Sigma0, dtype=float))
    s = Sigma0.shape[0]
    out = np.zeros((s, s), dtype=complex)
    for v1, w1 in zip(chain_rights, chain_lefts):
        for v2, w2 in zip(chain_rights, chain_lefts):
            out += np.outer(v1, v2) * (np.asarray(w1) @ Sigma0 @ np.asarray(w2))
    out /= math.factorial(kappa - 1) ** 2 * (2 * kappa - 1)
    return out.real


# ---------------------------------------------------------------------------
# Expansion coefficients


def enumerate_partitions(i: int, t: int) -> list:
    """Nondecreasing i-tuples of positive integers summing to t, with the
    count of distinct arrangements of each tuple."""
    if not 1 <= i <= t:
        return []

    def rec(parts, minimum, remaining):
        if parts == 1:
            if remaining >= minimum:
                yield (remaining,)
            return
        for c in range(minimum, remaining // parts + 1):
            for rest in rec(parts - 1, c, remaining - c):
                yield (c,) + rest

    out = []
    for tup in rec(i, 1, t):
        nu = math.factorial(i)
        for v in set(tup):
            nu //= math.factorial(tup.count(v))
        out.append((tup, nu))
    return out


def expansion_coeffs(derivs, tau: float, m: int, scale: str = "auxiliary"):
    """Recursive coefficients of the superdiffusive deviation expansion.

    ``derivs`` lists the drift-map derivatives of orders 2..m+1 at the fixed
    point (observed-1d scale: derivatives of the step-up probability at the
    matching point, with the extra 2^(i-1) denominators). Returns
    (coefficients c_1..c_{m+1} with c_1 = 1, m0) where m0 is the number of
    correction terms beyond the linear one in the supercritical regime.
    """
    if abs(1.0 - tau) < 1e-12:
        raise TheoryError("tau-equals-one: expansion undefined at the boundary")
    if scale not in ("auxiliary", "observed-1d"):
        raise TheoryError(f"unknown expansion scale {scale!r}")
    derivs = [float(v) for v in derivs]
    if len(derivs) < m:
        raise TheoryError(f"need derivatives of orders 2..{m + 1}, got {len(derivs)}")
    coeffs = [1.0]
    for j in range(1, m + 1):
        total = 0.0
        for i in range(2, j + 2):
            denom = math.factorial(i) * (2.0 ** (i - 1) if scale == "observed-1d" else 1.0)
            term = 0.0
            for tup, nu in enumerate_partitions(i, j + 1):
                prod = 1.0
                for c in tup:
                    prod *= coeffs[c - 1]
                term += nu * prod
            total += derivs[i - 2] / denom * term
        coeffs.append(-total / (j * (1.0 - tau)))
    m0 = None
    if 0.5 < tau < 1.0:
        m0 = int(math.floor((tau - 0.5) / (1.0 - tau) + 1e-12))
    return coeffs, m0


# ---------------------------------------------------------------------------
# Regime report


@dataclass
class RegimeReport:
    """Everything the limit theorems predict for one model."""

    x0: np.ndarray
    limit: np.ndarray  # A x0 + b
    regime: str  # Diffusive | Critical | Supercritical | Unsupported
    tau: float
    kappa: int
    eta: Optional[float] = None  # 1-d alias of tau
    eta1: Optional[float] = None  # 1-d second derivative at the fixed point
    sigma0: Optional[np.ndarray] = None
    sigma1: Optional[np.ndarray] = None
    sigma2: Optional[np.ndarray] = None
    clt_variance: Optional[np.ndarray] = None  # observed-walk covariance
    lil_constant: Optional[float] = None
    residual_variance: Optional[float] = None  # supercritical 1-d residual CLT
    expansion_b: Optional[list] = None  # auxiliary-scale coefficients
    expansion_beta: Optional[list] = None  # observed-walk coefficients
    m0: Optional[int] = None
    downcrossing: Optional[DowncrossingResult] = None
    profile: Optional[SpectralProfile] = None
    notes: list = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()

        return {
            "x0": arr(self.x0),
            "limit": arr(self.limit),
            "regime": self.regime,
            "tau": self.tau,
            "kappa": self.kappa,
            "eta": self.eta,
            "eta1": self.eta1,
            "sigma0": arr(self.sigma0),
            "sigma1": arr(self.sigma1),
            "sigma2": arr(self.sigma2),
            "clt_variance": arr(self.clt_variance),
            "lil_constant": self.lil_constant,
            "residual_variance": self.residual_variance,
            "expansion_b": self.expansion_b,
            "expansion_beta": self.expansion_beta,
            "m0": self.m0,
            "downcrossing": None
            if self.downcrossing is None
            else {
                "verified": self.downcrossing.verified,
                "max_value": self.downcrossing.max_value,
                "argmax": self.downcrossing.argmax.tolist(),
            },
            "eigenvalues": None
            if self.profile is None
            else [[z.real, z.imag] for z in np.atleast_1d(self.profile.eigenvalues)],
            "block_table": None
            if self.profile is None
            else [
                {"value": [c["value"].real, c["value"].imag], "block_sizes": list(c["block_sizes"])}
                for c in self.profile.clusters
            ],
            "notes": list(self.notes),
            "provenance": self.provenance,
        }


def _h_derivatives(model: ValidatedModel, x0, upto: int) -> list:
    """Drift-map derivatives H', H'', ... at x0 (s = 1), exact when known."""
    exact = model.meta.get("exact", {})
    max_order = exact.get("max_smooth_order", None)
    listed = exact.get("h_derivs")
    if listed is not None:
        out = [float(v) for v in listed]
        if max_order is None:
            out += [0.0] * max(0, upto - len(out))
            return out[:upto]
        return out[: min(upto, max_order)]
    from . import funcdsl

    out = []
    limit = upto if max_order is None else min(upto, max_order)
    limit = min(limit, funcdsl.MAX_DERIV_ORDER)
    expr = model.spec.prob_maps[0]
    mu = float(model.mu[0])
    for order in range(1, limit + 1):
        try:
            value, _ = funcdsl.derive_at(expr, float(x0[0]), order=order)
        except funcdsl.NonSmoothError:
            break
        out.append(value * mu)
    return out


REGIME_TOL = 1e-9


def asymptotic_covariances(model: ValidatedModel, x0, profile: SpectralProfile,
                           regime_tol: float = REGIME_TOL):
    """Sigma0 plus the regime-appropriate limit covariance.

    Returns (sigma0, limit_sigma, clt_covariance, lil_constant): the limit
    covariance is the diffusive Lyapunov solution for tau < 1/2, the
    critical eigenvector form at tau = 1/2, and None in the supercritical
    regime; clt_covariance maps it through the observation matrix. The
    scalar iterated-logarithm constant comes back for s = 1 models in the
    diffusive and critical regimes.
    """
    x0 = np.asarray(x0, dtype=float)
    sigma0 = sigma0_matrix(model, x0)
    A = model.spec.A
    tau = profile.tau
    limit_sigma = None
    clt_cov = None
    lil_constant = None
    if tau < 0.5 - regime_tol:
        limit_sigma = solve_sigma1(profile.J, sigma0)
    elif tau <= 0.5 + regime_tol:
        limit_sigma = sigma2_critical(profile, sigma0)
    if limit_sigma is not None:
        clt_cov = A @ limit_sigma @ A.T
        if model.s == 1:
            lil_constant = math.sqrt(max(float(clt_cov[0, 0]), 0.0))
    return sigma0, limit_sigma, clt_cov, lil_constant


def classify(model: ValidatedModel, grid_density: int = 201,
             regime_tol: float = REGIME_TOL) -> RegimeReport:
    """Full analytic report: regime plus every applicable limit constant."""
    exact = model.meta.get("exact", {})
    notes = []
    if "x0" in exact:
        x0 = np.asarray(exact["x0"], dtype=float)
        notes.append("fixed point from closed form")
        numeric_x0 = find_fixed_point(model)
        if np.max(np.abs(numeric_x0 - x0)) > 1e-6:
            raise TheoryError(f"registered fixed point {x0} disagrees with numerics {numeric_x0}")
    else:
        x0 = find_fixed_point(model)
    down = check_downcrossing(model, x0, grid_density)
    if not down.verified:
        notes.append(f"downcrossing violated on grid at {down.argmax.tolist()} (value {down.max_value:.3e})")

    profile = spectral_profile(model, x0)
    tau, kappa = profile.tau, profile.kappa
    if profile.exact_tau:
        notes.append("top eigenvalue from closed form")

    A = model.spec.A
    limit = A @ x0 + model.spec.b
    report = RegimeReport(
        x0=x0,
        limit=limit,
        regime="Unsupported",
        tau=tau,
        kappa=kappa,
        downcrossing=down,
        profile=profile,
        notes=notes,
        provenance={
            "grid_density": grid_density,
            "regime_tol": regime_tol,
            "exact_tau": profile.exact_tau,
        },
    )
    if model.s == 1:
        report.eta = tau

    if tau >= 1.0 - regime_tol:
        report.regime = "Unsupported"
        notes.append("top eigenvalue real part at or above 1: outside the supported regimes")
        return report

    report.sigma0 = sigma0_matrix(model, x0)

    derivs = _h_derivatives(model, x0, upto=7) if model.s == 1 else []
    if model.s == 1 and len(derivs) >= 2:
        report.eta1 = derivs[1]

    if tau < 0.5 - regime_tol:
        report.regime = "Diffusive"
        report.sigma1 = solve_sigma1(profile.J, report.sigma0)
        report.clt_variance = A @ report.sigma1 @ A.T
        if model.s == 1:
            report.lil_constant = math.sqrt(max(report.clt_variance[0, 0], 0.0))
    elif tau <= 0.5 + regime_tol:
        report.regime = "Critical"
        try:
            report.sigma2 = sigma2_critical(profile, report.sigma0)
            report.clt_variance = A @ report.sigma2 @ A.T
            if model.s == 1:
                report.lil_constant = math.sqrt(max(report.clt_variance[0, 0], 0.0))
        except TheoryError as exc:
            notes.append(str(exc))
    else:
        report.regime = "Supercritical"
        if model.s == 1:
            sig2_x0 = float(report.sigma0[0, 0])
            a2 = float(A[0, 0]) ** 2
            report.residual_variance = a2 * sig2_x0 / (2.0 * tau - 1.0)
        complex_top = [
            c["value"].imag
            for c in profile.clusters
            if abs(c["value"].real - tau) <= regime_tol and abs(c["value"].imag) > regime_tol
        ]
        if complex_top:
            freqs = ", ".join(f"{w:+.6g}" for w in sorted(set(round(w, 12) for w in complex_top)))
            notes.append(
                f"complex top eigenvalues: oscillatory corrections exp(i w log n), w in {{{freqs}}}, "
                "reported symbolically only (no stable estimator at finite horizons)"
            )

    if model.s == 1 and derivs:
        m_avail = max(0, min(len(derivs), 7) - 1)
        b_coeffs, m0 = expansion_coeffs(derivs[1 : m_avail + 1], tau, m_avail, scale="auxiliary")
        report.expansion_b = b_coeffs
        a_scalar = float(A[0, 0])
        report.expansion_beta = [b / a_scalar ** j for j, b in enumerate(b_coeffs)]
        report.m0 = m0

    return report
