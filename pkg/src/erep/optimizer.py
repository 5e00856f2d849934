"""Convex-optimization kernel for the ensemble update.

Group norm, Bregman divergence, curvature accumulation, simplex
projections and the composite Newton-step subproblem

    min_{w in simplex}  <grad, w - w_prev> + lam * L(w) + eta * D_A(w || w_prev)

where ``L`` is the max-over-groups of within-group l1 mass.
"""

import logging
import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, NamedTuple

import numpy as np
from scipy.optimize import brentq, linprog, minimize

from .errors import ConvergenceWarning, GroupingError, NumericError, ParameterError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CompositeStepParams:
    eta: float
    lam: float = 0.0
    epsilon: float = 1.0
    inner_tol: float = 1e-8
    inner_max_iter: int = 20_000

    def __post_init__(self):
        if not self.eta > 0:
            raise ParameterError(f"eta must be > 0, got {self.eta}")
        if not self.epsilon > 0:
            raise ParameterError(f"epsilon must be > 0, got {self.epsilon}")
        if not self.lam >= 0:
            raise ParameterError(f"lambda must be >= 0, got {self.lam}")
        if not self.inner_tol > 0:
            raise ParameterError(f"inner_tol must be > 0, got {self.inner_tol}")
        if self.inner_max_iter < 1:
            raise ParameterError(f"inner_max_iter must be >= 1, got {self.inner_max_iter}")


def theory_eta(alpha: float, G: float, D: float):
    """Learning rate ``0.5 * min(alpha, 1 / (4 G D))`` and initial curvature ``1 / (eta D)^2``."""
    if not (alpha > 0 and G > 0 and D > 0):
        raise ParameterError(f"alpha, G, D must be positive, got {alpha}, {G}, {D}")
    eta = 0.5 * min(alpha, 1.0 / (4.0 * G * D))
    return eta, 1.0 / (eta**2 * D**2)


# -- group norm -------------------------------------------------------------


def _group_masses(w, grouping):
    a = np.abs(w)
    return np.array([a[g].sum() for g in grouping.groups])


def _check_dim(w, grouping):
    if w.shape != (grouping.n,):
        raise GroupingError(f"vector of length {w.shape} does not match grouping over {grouping.n} coordinates")


def group_norm(w, grouping) -> float:
    """Max over groups of the l1 mass inside the group."""
    w = np.asarray(w, dtype=float)
    _check_dim(w, grouping)
    return float(_group_masses(w, grouping).max())


def group_norm_subgradient(w, grouping) -> np.ndarray:
    """Signs on the first maximizing group (sign(0) = +1), zero elsewhere."""
    w = np.asarray(w, dtype=float)
    _check_dim(w, grouping)
    j = int(np.argmax(_group_masses(w, grouping)))
    out = np.zeros_like(w)
    g = grouping.groups[j]
    out[g] = np.where(w[g] >= 0, 1.0, -1.0)
    return out


# -- curvature / Bregman ----------------------------------------------------


def bregman(A, w, x) -> float:
    """``0.5 (w - x)^T A (w - x)``."""
    A = np.asarray(A, dtype=float)
    d = np.asarray(w, dtype=float) - np.asarray(x, dtype=float)
    if A.shape != (d.size, d.size):
        raise ValueError(f"dimension mismatch: A {A.shape}, vectors ({d.size},)")
    return 0.5 * float(d @ A @ d)


def update_curvature(A, grad) -> np.ndarray:
    """Rank-one accumulation ``A + grad grad^T`` (new array)."""
    grad = np.asarray(grad, dtype=float)
    if not np.all(np.isfinite(grad)):
        raise NumericError("non-finite gradient in curvature update")
    A = np.asarray(A, dtype=float)
    if A.shape != (grad.size, grad.size):
        raise ValueError(f"dimension mismatch: A {A.shape}, grad ({grad.size},)")
    return A + np.outer(grad, grad)


# -- projections --------------------------------------------------------------


def simplex_threshold(v, z=1.0):
    """Threshold ``tau`` with ``sum(max(v - tau, 0)) == z``."""
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - z
    k = np.arange(1, u.size + 1)
    return float(np.max(css / k))


def project_simplex(v, z=1.0) -> np.ndarray:
    """Euclidean projection onto ``{w >= 0, sum(w) = z}`` by sort and threshold."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise NumericError("non-finite input to simplex projection")
    out = np.maximum(v - simplex_threshold(v, z), 0.0)
    total = out.sum()
    if not total > 0:
        # all mass lost to cancellation (astronomically large v): nearest vertex
        out = np.zeros_like(v)
        out[int(np.argmax(v))] = z
    elif abs(total - z) > 1e-12 * z:
        out *= z / total
    return out


class _PartitionProx:
    """Exact Euclidean prox of ``tau * L + indicator(simplex)`` for a partition.

    KKT: ``w_i = max(0, v_i - theta - nu_g(i))`` with ``nu >= 0``,
    ``sum(nu) = tau`` and ``nu_g > 0`` only on groups at the maximal mass
    ``s``. For fixed ``s`` the capped groups are projected onto the
    ``s``-simplex and ``theta`` solves a piecewise-linear mass equation; the
    multiplier total is monotone in ``s`` and is root-found.
    """

    def __init__(self, grouping):
        self.grouping = grouping
        self.owner = grouping.owner
        self.m = grouping.m
        self.size = max(grouping.sizes)

    def _group_tables(self, v):
        pad = np.full((self.m, self.size), -np.inf)
        for j, g in enumerate(self.grouping.groups):
            pad[j, : g.size] = np.sort(v[g])[::-1]
        css = np.cumsum(np.where(np.isfinite(pad), pad, 0.0), axis=1)
        valid = np.isfinite(pad)
        return css, valid

    def _group_thresholds(self, css, valid, s):
        k = np.arange(1, self.size + 1)
        vals = np.where(valid, (css - s) / k, -np.inf)
        return vals.max(axis=1)

    @staticmethod
    def _solve_theta(v, cap):
        # sum_i min(cap_i, max(0, v_i - theta)) == 1, piecewise linear decreasing in theta
        bps = np.unique(np.concatenate([v, v - cap]))
        phi = np.minimum(cap[None, :], np.maximum(0.0, v[None, :] - bps[:, None])).sum(axis=1)
        # phi is nonincreasing along increasing breakpoints
        idx = np.searchsorted(-phi, -1.0, side="right")
        if idx == 0:
            return bps[0] - (1.0 - phi[0]) / max(np.count_nonzero(cap > 0), 1)
        if idx >= bps.size:
            return bps[-1]
        lo, hi = bps[idx - 1], bps[idx]
        plo, phi_hi = phi[idx - 1], phi[idx]
        if plo == phi_hi:
            return lo
        return lo + (plo - 1.0) * (hi - lo) / (plo - phi_hi)

    def _at(self, v, css, valid, s):
        thr = self._group_thresholds(css, valid, s)
        cap = np.maximum(0.0, v - thr[self.owner])
        theta = self._solve_theta(v, cap)
        nu = np.maximum(0.0, thr - theta)
        w = np.minimum(cap, np.maximum(0.0, v - theta))
        return w, nu

    def __call__(self, v, tau):
        w0 = project_simplex(v)
        if tau <= 0 or self.m == 1:
            return w0
        masses = np.bincount(self.owner, weights=w0, minlength=self.m)
        s_free = masses.max()
        s_min = 1.0 / self.m
        if s_free - s_min <= 1e-15:
            return w0
        css, valid = self._group_tables(v)
        # limit s -> 1/m: every group holds exactly 1/m
        thr = self._group_thresholds(css, valid, s_min)
        if np.sum(thr - thr.min()) <= tau:
            return np.maximum(0.0, v - thr[self.owner])

        def excess(s):
            return self._at(v, css, valid, s)[1].sum() - tau

        lo = s_min + 1e-15
        if excess(s_free) >= 0:
            return w0
        if excess(lo) <= 0:
            s = lo
        else:
            s = brentq(excess, lo, s_free, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
        w = self._at(v, css, valid, s)[0]
        return w / w.sum()


def dykstra_capped_projection(v, grouping, cap, tol=1e-12, max_iter=100_000):
    """Project onto ``simplex ∩ {group mass <= cap}`` for arbitrary (overlapping) groups.

    Dykstra's alternating projections over the simplex and one halfspace
    per group; converges to the exact projection of the intersection.
    """
    v = np.asarray(v, dtype=float)
    rows = grouping.indicator()
    sets = grouping.m + 1
    x = v.copy()
    incr = np.zeros((sets, v.size))
    for it in range(max_iter):
        x_old, incr_old = x, incr.copy()
        for k in range(sets):
            y = x + incr[k]
            if k == 0:
                nxt = project_simplex(y)
            else:
                a = rows[k - 1]
                excess = a @ y - cap
                nxt = y - (excess / (a @ a)) * a if excess > 0 else y
            incr[k] = y - nxt
            x = nxt
        # x can repeat across a sweep while the corrections still move
        if np.max(np.abs(x - x_old)) < tol and np.max(np.abs(incr - incr_old)) < tol:
            return x, True
    return x, False


def min_group_cap(grouping) -> float:
    """Smallest achievable max group mass over the simplex (1/m for partitions)."""
    if grouping.partition:
        return 1.0 / grouping.m
    p, m = grouping.n, grouping.m
    res = linprog(
        np.append(np.zeros(p), 1.0),
        A_ub=np.hstack([grouping.indicator(), -np.ones((m, 1))]),
        b_ub=np.zeros(m),
        A_eq=np.append(np.ones(p), 0.0)[None, :],
        b_eq=[1.0],
        bounds=[(0, None)] * p + [(None, None)],
        method="highs",
    )
    return float(res.fun)


def _slsqp_capped_projection(v, grouping, cap, tol=1e-10):
    # the SQP model of 0.5||w - v||^2 starts from the identity Hessian, which is
    # exact here, so the first least-squares subproblem already solves the QP
    M = grouping.indicator()
    res = minimize(
        lambda w: 0.5 * float((w - v) @ (w - v)),
        project_simplex(v),
        jac=lambda w: w - v,
        method="SLSQP",
        bounds=[(0.0, None)] * v.size,
        constraints=[
            {"type": "eq", "fun": lambda w: np.array([w.sum() - 1.0]), "jac": lambda w: np.ones((1, v.size))},
            {"type": "ineq", "fun": lambda w: cap - M @ w, "jac": lambda w: -M},
        ],
        options={"ftol": 1e-13, "maxiter": 200},
    )
    x = np.maximum(res.x, 0.0)
    x /= x.sum()
    if float((M @ x).max()) > cap + tol:
        return x, False
    # optimality certificate for a projection: max_{y feasible} <v - x, y - x> <= 0
    r = v - x
    lp = linprog(-r, A_ub=M, b_ub=np.full(M.shape[0], cap), A_eq=np.ones((1, v.size)), b_eq=[1.0],
                 bounds=[(0, None)] * v.size, method="highs")
    return x, bool(lp.status == 0 and -lp.fun - r @ x <= tol)


def capped_simplex_projection(v, grouping, cap) -> np.ndarray:
    """Euclidean projection onto ``{w in simplex : every group mass <= cap}``."""
    v = np.asarray(v, dtype=float)
    if grouping.partition:
        if cap * grouping.m < 1.0 - 1e-12:
            raise ParameterError(f"cap {cap} infeasible for {grouping.m} disjoint groups")
        prox = _PartitionProx(grouping)
        css, valid = prox._group_tables(v)
        w0 = project_simplex(v)
        masses = np.bincount(grouping.owner, weights=w0, minlength=grouping.m)
        if masses.max() <= cap:
            return w0
        if cap * grouping.m <= 1.0 + 1e-15:
            thr = prox._group_thresholds(css, valid, 1.0 / grouping.m)
            return np.maximum(0.0, v - thr[grouping.owner])
        w = prox._at(v, css, valid, cap)[0]
        return w
    if cap < min_group_cap(grouping) - 1e-12:
        raise ParameterError(f"cap {cap} below the smallest achievable group mass {min_group_cap(grouping)}")
    x, ok = _slsqp_capped_projection(v, grouping, cap)
    if not ok:
        x, ok = dykstra_capped_projection(v, grouping, cap)
    if not ok:
        warnings.warn("capped projection did not converge", ConvergenceWarning, stacklevel=2)
    return x


def _linear_group_min(c, tau, grouping) -> float:
    """``min_{y in simplex} <c, y> + tau L(y)`` as an epigraph LP."""
    p, m = c.size, grouping.m
    res = linprog(
        np.append(c, tau),
        A_ub=np.hstack([grouping.indicator(), -np.ones((m, 1))]),
        b_ub=np.zeros(m),
        A_eq=np.append(np.ones(p), 0.0)[None, :],
        b_eq=[1.0],
        bounds=[(0, None)] * p + [(None, None)],
        method="highs",
    )
    return float(res.fun) if res.status == 0 else -math.inf


def _generic_prox(v, tau, grouping, tol=1e-11):
    """Prox of ``tau * L + simplex`` for overlapping groups.

    SLSQP on the epigraph form, certified by the linearized optimality gap
    ``<x - v, x> + tau L(x) - min_y (<x - v, y> + tau L(y))``; falls back to
    a golden-section search over the exposure cap.
    """
    w_free = project_simplex(v)
    if tau <= 0:
        return w_free
    p = v.size
    M = grouping.indicator()
    z0 = np.append(w_free, group_norm(w_free, grouping))
    res = minimize(
        lambda z: 0.5 * float((z[:p] - v) @ (z[:p] - v)) + tau * z[p],
        z0,
        jac=lambda z: np.append(z[:p] - v, tau),
        method="SLSQP",
        bounds=[(0.0, None)] * p + [(None, None)],
        constraints=[
            {"type": "eq", "fun": lambda z: np.array([z[:p].sum() - 1.0]), "jac": lambda z: np.append(np.ones(p), 0.0)[None, :]},
            {"type": "ineq", "fun": lambda z: z[p] - M @ z[:p], "jac": lambda z: np.hstack([-M, np.ones((M.shape[0], 1))])},
        ],
        options={"ftol": 1e-13, "maxiter": 200},
    )
    x = np.maximum(res.x[:p], 0.0)
    x /= x.sum()
    r = x - v
    gap = float(r @ x) + tau * group_norm(x, grouping) - _linear_group_min(r, tau, grouping)
    if gap <= tol:
        return x
    return _golden_prox(v, tau, grouping, w_free)


def _golden_prox(v, tau, grouping, w_free):
    hi = group_norm(w_free, grouping)
    lo = min(min_group_cap(grouping), hi)

    def value(s):
        w = capped_simplex_projection(v, grouping, s)
        return 0.5 * float(np.sum((w - v) ** 2)) + tau * group_norm(w, grouping), w

    # golden section on a convex function of the cap
    invphi = (math.sqrt(5) - 1) / 2
    a, b = lo, hi
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = value(c)[0], value(d)[0]
    while b - a > 1e-10:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = value(c)[0]
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = value(d)[0]
    candidates = [value(s) for s in (a, b, hi, lo)]
    return min(candidates, key=lambda t: t[0])[1]


def prox_group_simplex(v, tau, grouping) -> np.ndarray:
    """``argmin_{w in simplex} 0.5 ||w - v||^2 + tau * L(w)``."""
    v = np.asarray(v, dtype=float)
    if grouping.partition:
        return _PartitionProx(grouping)(v, tau)
    return _generic_prox(v, tau, grouping)


# -- composite Newton step ---------------------------------------------------


class StepResult(NamedTuple):
    w: np.ndarray
    objective: float
    iterations: int
    converged: bool


def composite_objective(w, grad, A, w_prev, eta, lam, grouping) -> float:
    d = np.asarray(w) - w_prev
    value = float(grad @ d) + eta * 0.5 * float(d @ A @ d)
    if lam:
        value += lam * group_norm(w, grouping)
    return value


@lru_cache(maxsize=64)
def _tangent_basis(p):
    # orthonormal basis of {d : sum(d) = 0}
    q, _ = np.linalg.qr(np.eye(p) - 1.0 / p)
    return np.ascontiguousarray(q[:, : p - 1])


def tangent_spectrum(A):
    """Extreme eigenvalues of ``A`` restricted to directions that keep the sum fixed."""
    p = A.shape[0]
    if p == 1:
        return 0.0, 0.0
    Q = _tangent_basis(p)
    ev = np.linalg.eigvalsh(Q.T @ A @ Q)
    return float(ev[0]), float(ev[-1])


def solve_composite_step(grad, A, w_prev, params: CompositeStepParams, grouping, method="accelerated") -> StepResult:
    """Solve the composite Newton-step subproblem; see :func:`composite_newton_step`."""
    grad = np.asarray(grad, dtype=float)
    A = np.asarray(A, dtype=float)
    w_prev = np.asarray(w_prev, dtype=float)
    p = grad.size
    if A.shape != (p, p) or w_prev.shape != (p,) or grouping.n != p:
        raise ValueError("dimension mismatch in composite step")
    eta, lam = params.eta, params.lam
    if p == 1:
        w = np.ones(1)
        return StepResult(w, composite_objective(w, grad, A, w_prev, eta, lam, grouping), 0, True)
    if method == "subgradient":
        return _subgradient_step(grad, A, w_prev, params, grouping)
    if method != "accelerated":
        raise ValueError(f"unknown method {method!r}")

    mu, L = tangent_spectrum(A)
    mu, L = eta * mu, eta * L
    if not (mu > 0 and np.isfinite(L)):
        raise NumericError("curvature matrix is not positive definite on the simplex")
    step = 1.0 / L
    H = eta * A
    lin = grad - H @ w_prev
    prox = _PartitionProx(grouping) if grouping.partition else None

    def prox_at(v):
        if not lam:
            return project_simplex(v)
        if prox is not None:
            return prox(v, step * lam)
        return _generic_prox(v, step * lam, grouping)

    def objective(w):
        return composite_objective(w, grad, A, w_prev, eta, lam, grouping)

    # FISTA with the strongly-convex momentum and gradient-mapping certificate
    q = mu / L
    beta = (1 - math.sqrt(q)) / (1 + math.sqrt(q))
    x = prox_at(w_prev - step * (lin + H @ w_prev))
    y = x.copy()
    f_x = objective(x)
    best, best_obj = x, f_x
    start_obj = objective(w_prev)
    if start_obj <= best_obj:
        best, best_obj = w_prev.copy(), start_obj
    converged = False
    it = 0
    for it in range(1, params.inner_max_iter + 1):
        x_new = prox_at(y - step * (lin + H @ y))
        gmap = L * (y - x_new)
        # gap bound for a mu-strongly convex composite after one prox-gradient step
        gap_bound = float(gmap @ gmap) / mu
        f_new = objective(x_new)
        if f_new < best_obj:
            best, best_obj = x_new, f_new
        if gap_bound <= params.inner_tol:
            converged = True
            break
        if f_new > f_x:
            # adaptive restart
            y = x.copy()
            continue
        y = x_new + beta * (x_new - x)
        x, f_x = x_new, f_new
    if not converged:
        warnings.warn(
            f"composite step hit {params.inner_max_iter} iterations without meeting tolerance",
            ConvergenceWarning,
            stacklevel=2,
        )
    return StepResult(best, best_obj, it, converged)


def _subgradient_step(grad, A, w_prev, params, grouping):
    """Projected subgradient with step ``c / sqrt(k)`` and best-iterate tracking."""
    eta, lam = params.eta, params.lam
    c = 1.0 / (eta * np.linalg.eigvalsh(A)[0] + 1.0)
    w = w_prev.copy()
    best = w.copy()
    best_obj = composite_objective(w, grad, A, w_prev, eta, lam, grouping)
    ref_obj, stall = best_obj, 0
    converged = False
    it = 0
    for it in range(1, params.inner_max_iter + 1):
        sub = grad + eta * (A @ (w - w_prev))
        if lam:
            sub = sub + lam * group_norm_subgradient(w, grouping)
        w = project_simplex(w - c / math.sqrt(it) * sub)
        obj = composite_objective(w, grad, A, w_prev, eta, lam, grouping)
        if obj < best_obj:
            best, best_obj = w.copy(), obj
        if ref_obj - best_obj < params.inner_tol:
            stall += 1
            if stall >= 50:
                converged = True
                break
        else:
            ref_obj, stall = best_obj, 0
    if not converged:
        warnings.warn("subgradient step hit iteration cap", ConvergenceWarning, stacklevel=3)
    return StepResult(best, best_obj, it, converged)


def composite_newton_step(grad, A, w_prev, params: CompositeStepParams, grouping, method="accelerated") -> np.ndarray:
    """Minimize ``<grad, w - w_prev> + lam L(w) + eta D_A(w || w_prev)`` over the simplex.

    The default solver is accelerated proximal gradient with an exact prox
    for partition groupings; ``method="subgradient"`` runs plain projected
    subgradient descent. On hitting ``inner_max_iter`` the best iterate is
    returned and a :class:`ConvergenceWarning` is emitted.
    """
    return solve_composite_step(grad, A, w_prev, params, grouping, method=method).w


# -- brute-force oracle ------------------------------------------------------


def simplex_grid(dim: int, step: float) -> np.ndarray:
    """All simplex points with coordinates on multiples of ``step``."""
    if dim not in (2, 3, 4):
        raise ParameterError(f"grid enumeration supports dim 2..4, got {dim}")
    if not 0 < step <= 1e-2:
        raise ParameterError(f"grid step must be in (0, 1e-2], got {step}")
    N = int(round(1.0 / step))
    if abs(N * step - 1.0) > 1e-9:
        raise ParameterError(f"grid step must divide 1, got {step}")
    if dim == 2:
        i = np.arange(N + 1)
        pts = np.stack([i, N - i], axis=1)
    elif dim == 3:
        i, j = np.triu_indices(N + 1)
        # i <= j: first = i, second = j - i, third = N - j
        pts = np.stack([i, j - i, N - j], axis=1)
    else:
        chunks = []
        for a in range(N + 1):
            r = N - a
            i, j = np.triu_indices(r + 1)
            chunks.append(np.stack([np.full(i.size, a), i, j - i, r - j], axis=1))
        pts = np.concatenate(chunks)
    return pts / N


def brute_force_simplex_min(objective: Callable, dim: int, step: float = 1e-3, batch: bool = True):
    """Enumerate the simplex grid and return ``(argmin point, min value)``.

    With ``batch=True`` the objective receives an (N, dim) array and returns N
    values; otherwise it is called per point.
    """
    pts = simplex_grid(dim, step)
    if batch:
        vals = np.asarray(objective(pts), dtype=float)
    else:
        vals = np.array([objective(p) for p in pts])
    k = int(np.argmin(vals))
    return pts[k].copy(), float(vals[k])


def batched_composite_objective(grad, A, w_prev, eta, lam, grouping):
    """Vectorized composite objective for use with :func:`brute_force_simplex_min`."""
    grad = np.asarray(grad, dtype=float)
    M = grouping.indicator()

    def f(W):
        D = W - w_prev
        val = D @ grad + 0.5 * eta * np.einsum("ij,jk,ik->i", D, A, D)
        if lam:
            val = val + lam * (np.abs(W) @ M.T).max(axis=1)
        return val

    return f


__all__ = [
    "CompositeStepParams",
    "StepResult",
    "batched_composite_objective",
    "bregman",
    "brute_force_simplex_min",
    "capped_simplex_projection",
    "composite_newton_step",
    "composite_objective",
    "group_norm",
    "group_norm_subgradient",
    "min_group_cap",
    "dykstra_capped_projection",
    "project_simplex",
    "prox_group_simplex",
    "simplex_grid",
    "simplex_threshold",
    "solve_composite_step",
    "tangent_spectrum",
    "theory_eta",
    "update_curvature",
]
