"""Group-lasso baselines on the lifted model.

Objective::

    0.5 * ||Y~ - S~ X~||_F^2 + lam * sum_n ||X~[group n]||_F

where group n pairs lifted rows n and n+N (real and imaginary parts of
device n's row).  Stacks may carry a leading batch axis; the batch is then
solved jointly as independent problems sharing one pilot.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .numerics import ContractError

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 5000
LAMBDA_GRID = (0.01, 0.05, 0.1, 0.2, 0.5)


def group_rows(n: int, N: int) -> tuple[int, int]:
    if not 0 <= n < N:
        raise IndexError(f"device index {n} out of range for N={N}")
    return n, n + N


def group_soft_threshold(rows: np.ndarray, tau: float) -> np.ndarray:
    """Proximal map of ``tau * ||.||_F`` on one group block."""
    if tau < 0:
        raise ContractError(f"threshold must be >= 0, got {tau}")
    norm = np.linalg.norm(rows)
    if norm <= tau:
        return np.zeros_like(rows)
    return rows * (1.0 - tau / norm)


def _group_norms(X: np.ndarray) -> np.ndarray:
    N = X.shape[-2] // 2
    return np.sqrt(np.sum(X[..., :N, :] ** 2 + X[..., N:, :] ** 2, axis=-1))


def _lam_shape(lam, ndim: int) -> np.ndarray:
    """Per-problem weights (shape (B,)) reshaped to broadcast over ``ndim`` axes."""
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0):
        raise ContractError("regularization weight must be >= 0")
    if lam.ndim == 0:
        return lam
    return lam.reshape(lam.shape + (1,) * (ndim - lam.ndim))


def group_prox(X: np.ndarray, tau) -> np.ndarray:
    """Groupwise shrinkage of a (batched) lifted stack; ``tau`` scalar or per sample."""
    norms = _group_norms(X)[..., None]
    tau = _lam_shape(tau, norms.ndim)
    active = norms > tau
    factor = np.where(active, 1.0 - tau / np.where(active, norms, 1.0), 0.0)
    return X * np.concatenate([factor, factor], axis=-2)


def objective(S: np.ndarray, Y: np.ndarray, X: np.ndarray, lam) -> np.ndarray:
    """Group-lasso objective; one value per problem for batched inputs."""
    R = Y - S @ X
    lam = np.asarray(lam, dtype=np.float64)
    return 0.5 * np.sum(R ** 2, axis=(-2, -1)) + lam * np.sum(_group_norms(X), axis=-1)


def lambda_max(S: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Smallest weight for which ``X = 0`` is optimal: ``max_n ||(S~^T Y~)_n||_F``."""
    return np.max(_group_norms(S.T @ Y), axis=-1)


def spectral_norm_sq(S: np.ndarray, iters: int = 50) -> float:
    """``sigma_max(S)^2`` by power iteration on ``S^T S`` from a fixed start."""
    v = np.ones(S.shape[1]) / np.sqrt(S.shape[1])
    est = 0.0
    for _ in range(iters):
        w = S.T @ (S @ v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return float(v @ (S.T @ (S @ v)))


def default_step(S: np.ndarray) -> float:
    return 0.99 / spectral_norm_sq(S)


@dataclass(frozen=True)
class GroupLassoProblem:
    S: np.ndarray
    Y: np.ndarray
    lam: float | np.ndarray

    def __post_init__(self):
        S, Y = np.asarray(self.S, dtype=np.float64), np.asarray(self.Y, dtype=np.float64)
        if S.ndim != 2 or S.shape[0] % 2 or S.shape[1] % 2:
            raise ContractError(f"lifted operator must be 2L x 2N, got {S.shape}")
        if Y.shape[-2] != S.shape[0]:
            raise ContractError(f"observation {Y.shape} incompatible with operator {S.shape}")
        object.__setattr__(self, "S", S)
        object.__setattr__(self, "Y", Y)
        _lam_shape(self.lam, Y.ndim)

    @property
    def N(self) -> int:
        return self.S.shape[1] // 2

    def objective(self, X) -> float:
        return float(np.sum(objective(self.S, self.Y, X, self.lam)))

    def zeros(self) -> np.ndarray:
        return np.zeros(self.Y.shape[:-2] + (self.S.shape[1], self.Y.shape[-1]))


@dataclass
class SolveReport:
    X: np.ndarray
    iterations: int
    objective_trace: list = field(default_factory=list)
    converged: bool = False


def _rel_change(X_new, X_old) -> float:
    """Largest per-sample relative change, so one slow sample keeps a batch running."""
    denom = np.sqrt(np.sum(X_new ** 2, axis=(-2, -1)))
    diff = np.sqrt(np.sum((X_new - X_old) ** 2, axis=(-2, -1)))
    return float(np.max(np.where(denom > 0, diff / np.where(denom > 0, denom, 1.0), diff)))


def ista_solve(problem: GroupLassoProblem, step: float | None = None,
               max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
               X0: np.ndarray | None = None, trace: bool = True) -> SolveReport:
    """Proximal gradient descent ``X <- prox(X + step S^T (Y - S X), step*lam)``.

    ``step`` defaults to ``0.99 / sigma_max(S)^2``; larger steps are rejected.
    """
    S, Y = problem.S, problem.Y
    L2 = spectral_norm_sq(S)
    if step is None:
        step = 0.99 / L2
    if not step > 0 or step > (1.0 + 1e-9) / L2:
        raise ContractError(f"step {step} violates 0 < step <= 1/||S||^2 = {1.0 / L2}")
    lam = _lam_shape(problem.lam, Y.ndim)
    tau = step * lam
    StY = S.T @ Y
    StS = S.T @ S
    X = problem.zeros() if X0 is None else np.array(X0, dtype=np.float64)
    hist = [problem.objective(X)] if trace else []
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        X_new = group_prox(X + step * (StY - StS @ X), tau)
        change = _rel_change(X_new, X)
        X = X_new
        if trace:
            hist.append(problem.objective(X))
        if change < tol:
            converged = True
            break
    return SolveReport(X, it, hist, converged)


def bcd_solve(problem: GroupLassoProblem, max_iter: int = DEFAULT_MAX_ITER,
              tol: float = DEFAULT_TOL, X0: np.ndarray | None = None,
              trace: bool = True) -> SolveReport:
    """Cyclic exact minimization over device groups.

    For a lifted pilot the two columns of a group are orthogonal with equal
    norm ``c``, so the block minimizer is the group soft-threshold of the
    partial-residual correlation at ``lam``, divided by ``c^2``.
    """
    S, Y = problem.S, problem.Y
    N = problem.N
    X = problem.zeros() if X0 is None else np.array(X0, dtype=np.float64)
    cols = [np.ascontiguousarray(S[:, [n, n + N]]) for n in range(N)]
    col_sq = np.empty(N)
    for n, C in enumerate(cols):
        G = C.T @ C
        col_sq[n] = 0.5 * (G[0, 0] + G[1, 1])
        if col_sq[n] > 0 and (abs(G[0, 1]) > 1e-9 * col_sq[n] or abs(G[0, 0] - G[1, 1]) > 1e-9 * col_sq[n]):
            raise ContractError(f"group {n} columns are not an orthogonal equal-norm pair; "
                                "operator does not have the lifted structure")
    skipped = [n for n in range(N) if col_sq[n] == 0.0]
    if skipped:
        warnings.warn(f"bcd_solve: zero pilot columns for devices {skipped}; skipping them",
                      RuntimeWarning, stacklevel=2)
    hist = [problem.objective(X)] if trace else []

    # Work on 2-D views: samples side by side as column blocks of width M.
    batch_shape, M = Y.shape[:-2], Y.shape[-1]
    B = int(np.prod(batch_shape, dtype=int))
    X2 = np.moveaxis(X.reshape((B,) + X.shape[-2:]), 0, 1).reshape(2 * N, B * M).copy()
    R2 = np.moveaxis(Y.reshape((B,) + Y.shape[-2:]), 0, 1).reshape(S.shape[0], B * M) - S @ X2
    lam = np.broadcast_to(np.asarray(problem.lam, dtype=np.float64), batch_shape).reshape(B)

    def sweep(groups):
        if B == 1:
            return sweep_single(groups)
        for n in groups:
            c2 = col_sq[n]
            C = cols[n]
            Xg = X2[[n, n + N]]
            # correlation of the residual with this block restored
            corr = C.T @ R2 + c2 * Xg
            norm = np.sqrt(np.einsum("ibm,ibm->b", *(corr.reshape(2, B, M),) * 2))
            factor = np.where(norm > lam, 1.0 - lam / np.where(norm > lam, norm, 1.0), 0.0)
            new = corr * np.repeat(factor / c2, M)
            R2[...] -= C @ (new - Xg)
            X2[[n, n + N]] = new

    lam1 = float(lam[0]) if B == 1 else 0.0
    rows_of = [np.array([n, n + N]) for n in range(N)]
    Ct = [np.ascontiguousarray(C.T) for C in cols]

    def sweep_single(groups):
        # same update as ``sweep`` with scalar bookkeeping (hot path for one sample)
        for n in groups:
            c2 = col_sq[n]
            rows = rows_of[n]
            Xg = X2[rows]
            corr = Ct[n] @ R2
            corr += c2 * Xg
            norm = math.sqrt(float(np.vdot(corr, corr)))
            if norm > lam1:
                new = corr * ((1.0 - lam1 / norm) / c2)
            elif Xg.any():
                new = np.zeros_like(corr)
            else:
                continue
            R2[...] -= cols[n] @ (new - Xg)
            X2[rows] = new

    def unpack():
        return np.moveaxis(X2.reshape(2 * N, B, M), 1, 0).reshape(batch_shape + (2 * N, M))

    # Active-set strategy: after each full sweep, sweep only the nonzero groups
    # until they settle; convergence is only declared on a full sweep.
    every = [n for n in range(N) if col_sq[n] > 0.0]
    converged = False
    full = True
    it = 0
    while it < max_iter:
        it += 1
        X_old = X2.copy()
        if full:
            groups = every
        else:
            groups = [n for n in every if X2[n].any() or X2[n + N].any()]
        sweep(groups)
        change = _rel_change(X2.reshape(2 * N, B, M).transpose(1, 0, 2),
                             X_old.reshape(2 * N, B, M).transpose(1, 0, 2))
        if trace:
            hist.append(problem.objective(unpack()))
        if change < tol:
            if full:
                converged = True
                break
            full = True
        else:
            full = False
    X = unpack()
    return SolveReport(X, it, hist, converged)


def ista_iterations(S: np.ndarray, Y: np.ndarray, lam, n_iter: int,
                    step: float | None = None) -> np.ndarray:
    """Exactly ``n_iter`` ISTA steps from zero (fixed-budget baseline)."""
    report = ista_solve(GroupLassoProblem(S, Y, lam), step, max_iter=n_iter, tol=-1.0, trace=False)
    return report.X


def polish(problem: GroupLassoProblem, X: np.ndarray, rel_support: float = 1e-6,
           max_newton: int = 50) -> tuple[np.ndarray, bool]:
    """Newton refinement of an approximate solution on its support, with a KKT certificate.

    The objective is smooth on the set of estimates whose support is fixed
    and whose groups are all nonzero, so Newton's method converges there in
    a handful of steps where first-order methods can crawl (small weights,
    correlated active columns).  The result is accepted only if every group
    off the support satisfies the optimality condition
    ``||(S^T R)_n|| <= lam``; otherwise ``X`` is returned unchanged.
    Single problems only (2-D ``Y``).
    """
    S, Y = problem.S, problem.Y
    if Y.ndim != 2:
        raise ContractError("polish handles one problem at a time")
    lam = float(problem.lam)
    N, M = problem.N, Y.shape[1]
    norms = _group_norms(X)
    if not norms.any() or lam == 0.0:
        return X, False
    A = np.flatnonzero(norms > rel_support * norms.max())
    rows = np.concatenate([A, A + N])
    k = len(A)
    SA = S[:, rows]
    G = SA.T @ SA
    StY = SA.T @ Y
    H_ls = np.kron(G, np.eye(M))

    def split(v):
        # group j of the active set owns rows j and j + k of the reduced block
        return np.stack([v[:k], v[k:]], axis=1)  # (k, 2, M)

    def f(Z):
        R = Y - SA @ Z
        return 0.5 * float(np.sum(R ** 2)) + lam * float(np.sum(np.linalg.norm(split(Z), axis=(1, 2))))

    Z = X[rows].copy()
    fz = f(Z)
    for _ in range(max_newton):
        blocks = split(Z)
        gn = np.linalg.norm(blocks, axis=(1, 2))
        if np.any(gn == 0.0):
            return X, False
        unit = blocks / gn[:, None, None]
        grad = G @ Z - StY + lam * np.concatenate([unit[:, 0], unit[:, 1]])
        H = H_ls.copy()
        # curvature of lam*||z_g||: (I - u u^T) lam / ||z_g|| on each group's 2M entries
        for j in range(k):
            idx = np.concatenate([np.arange(j * M, (j + 1) * M),
                                  np.arange((j + k) * M, (j + k + 1) * M)])
            u = np.concatenate([unit[j, 0], unit[j, 1]])
            H[np.ix_(idx, idx)] += lam / gn[j] * (np.eye(2 * M) - np.outer(u, u))
        try:
            step = np.linalg.solve(H, grad.reshape(-1)).reshape(Z.shape)
        except np.linalg.LinAlgError:
            return X, False
        t = 1.0
        while t > 1e-12:
            cand = Z - t * step
            fc = f(cand)
            if fc <= fz:
                break
            t *= 0.5
        else:
            break
        done = np.linalg.norm(t * step) <= 1e-15 * max(1.0, np.linalg.norm(Z))
        Z, fz = cand, fc
        if done:
            break
    out = np.zeros_like(X)
    out[rows] = Z
    # KKT off the support; on it the Newton system drove the gradient to zero
    corr_norms = _group_norms(S.T @ (Y - S @ out))
    off = np.setdiff1d(np.arange(N), A)
    if np.any(corr_norms[off] > lam * (1 + 1e-9)) or not problem.objective(out) <= problem.objective(X):
        return X, False
    return out, True


def lambda_path(S: np.ndarray, Y: np.ndarray, fractions, solver: str = "bcd",
                max_iter: int = DEFAULT_MAX_ITER, tol: float = DEFAULT_TOL,
                refine: bool = False) -> list[SolveReport]:
    """Solutions for ``frac * lambda_max`` over decreasing ``fractions``, warm-started.

    Each solve starts from the previous solution, which makes very small
    weights (slow from a cold start) cheap.  Reports come back in the order
    of ``fractions`` after sorting them from largest to smallest.  With
    ``refine`` (single problems only) every solution goes through
    :func:`polish`; a certified refinement marks the report converged.
    """
    solve = {"bcd": bcd_solve, "ista": ista_solve}.get(solver)
    if solve is None:
        raise ContractError(f"unknown solver {solver!r} for lambda_path")
    lam_max = lambda_max(S, Y)
    X, reports = None, []
    for frac in sorted(fractions, reverse=True):
        problem = GroupLassoProblem(S, Y, frac * lam_max)
        rep = solve(problem, max_iter=max_iter, tol=tol, X0=X, trace=False)
        if refine:
            Xp, ok = polish(problem, rep.X)
            if ok:
                rep = SolveReport(Xp, rep.iterations, [], True)
        X = rep.X
        reports.append(rep)
    return reports
