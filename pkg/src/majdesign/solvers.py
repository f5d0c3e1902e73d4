"""Solvers that consume majorizers: CG, structured M-solves, and the MM iteration."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .majorizers import MajorizerSpec, inverse_sqrt_apply
from .operators import (
    CirculantOperator,
    DFTOperator,
    HermitianOperator,
    IdentityOperator,
    LinearOperator,
    StackedOperator,
    materialize,
)

log = logging.getLogger(__name__)


class IndefiniteError(ArithmeticError):
    """CG met a direction of nonpositive curvature."""


class MajorizationViolation(RuntimeError):
    """An MM step increased the cost although the majorizer is certified."""


@dataclass
class CGResult:
    x: np.ndarray
    iterations: int
    residual: float  # ||b - A x|| / ||b||
    converged: bool
    residuals: list = field(default_factory=list)


def _as_apply(A) -> Callable:
    if isinstance(A, (LinearOperator, MajorizerSpec)):
        return A.apply
    if callable(A):
        return A
    return lambda v: A @ v


def conjugate_gradient(A, b, x0=None, iters: int = 100, tol: float = 1e-10,
                       preconditioner: Optional[Callable] = None,
                       callback: Optional[Callable] = None) -> CGResult:
    """Preconditioned conjugate gradients for Hermitian positive definite ``A``.

    Runs until ``||r|| <= tol ||b||`` or ``iters`` steps. Raises
    :class:`IndefiniteError` on nonpositive curvature. ``callback(x, r)`` is
    called after every step with the iterate and its residual.
    """
    apply = _as_apply(A)
    b = np.asarray(b)
    x = np.zeros_like(b, dtype=np.result_type(b, float)) if x0 is None else np.array(x0, dtype=np.result_type(b, x0, float))
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return CGResult(np.zeros_like(x), 0, 0.0, True, [0.0])
    r = b - apply(x) if np.any(x) else b.astype(x.dtype, copy=True)
    z = preconditioner(r) if preconditioner else r
    p = z.copy()
    rz = np.real(np.vdot(r, z))
    res = [np.linalg.norm(r) / bnorm]
    it = 0
    while it < iters and res[-1] > tol:
        ap = apply(p)
        pap = np.real(np.vdot(p, ap))
        if pap <= 0:
            raise IndefiniteError(f"nonpositive curvature {pap:.3g} at CG iteration {it}")
        a = rz / pap
        x = x + a * p
        r = r - a * ap
        it += 1
        res.append(np.linalg.norm(r) / bnorm)
        if callback is not None:
            callback(x, r)
        if res[-1] <= tol:
            break
        z = preconditioner(r) if preconditioner else r
        rz_new = np.real(np.vdot(r, z))
        p = z + (rz_new / rz) * p
        rz = rz_new
    return CGResult(x, it, float(res[-1]), bool(res[-1] <= tol), res)


@dataclass
class SolveResult:
    x: np.ndarray
    residual: float
    iterations: int


def _stacked_preconditioner(M: MajorizerSpec) -> Callable:
    """Cheap approximate inverse of a majorizer with stacked ``K``.

    For ``K = [U_DFT; I]`` this is ``T C^{-1} T`` where ``T = diag(M)^{-1/2}``
    and ``C`` is the Frobenius-nearest circulant to ``T M T``; its eigenvalues
    have a closed form, so no extra matvecs are spent. Anything else gets the
    Jacobi (diagonal) preconditioner.
    """
    K = M.K
    w = M.weights
    diag = majorizer_diagonal(M)
    if isinstance(K, StackedOperator) and np.all(diag > 0):
        blocks, offs = K.blocks, K.offsets
        dft = [i for i, b in enumerate(blocks) if isinstance(b, DFTOperator)]
        ident = [i for i, b in enumerate(blocks) if isinstance(b, IdentityOperator)]
        if len(dft) == 1 and len(dft) + len(ident) == len(blocks):
            U = blocks[dft[0]]
            grid = U.grid
            d1 = w[offs[dft[0]]:offs[dft[0] + 1]].reshape(grid)
            t = 1.0 / np.sqrt(diag)
            # C_t = U diag(t) U^H is circulant; lam_k = sum_j d1_j |c_t[j - k]|^2
            e0 = np.zeros(U.cols)
            e0[0] = 1
            q = np.abs(U.apply(t * U.adjoint_apply(e0))).reshape(grid) ** 2
            lam = np.real(np.fft.ifftn(np.fft.fftn(d1) * np.conj(np.fft.fftn(q)))).ravel()
            for j in ident:
                lam += np.mean(w[offs[j]:offs[j + 1]] * t * t)
            lam = np.maximum(lam, lam.max() * 1e-12)
            return lambda r: t * U.adjoint_apply(U.apply(t * r) / lam) if r.ndim == 1 \
                else t[:, None] * U.adjoint_apply(U.apply(t[:, None] * r) / lam[:, None])
    diag = np.where(diag > 0, diag, diag.max() if diag.max() > 0 else 1.0)
    return lambda r: r / diag if r.ndim == 1 else r / diag[:, None]


def attach_dense_factor(M: MajorizerSpec) -> MajorizerSpec:
    """Cache a dense Cholesky factor of ``M`` so :func:`solve_M` is exact.

    Desk-scale convenience for long MM runs; the matrix-free CG path is used
    whenever no factor is attached.
    """
    from scipy.linalg import cho_factor

    Md = M.dense()
    M.meta["_cholesky"] = cho_factor(0.5 * (Md + Md.conj().T))
    return M


def majorizer_diagonal(M: MajorizerSpec) -> np.ndarray:
    """Diagonal entries of ``M`` without materializing it."""
    K, w = M.K, M.weights
    if isinstance(K, IdentityOperator):
        return w.copy()
    if isinstance(K, DFTOperator):
        return np.full(K.cols, w.mean())
    if isinstance(K, StackedOperator):
        out = np.zeros(K.cols)
        for b, lo, hi in zip(K.blocks, K.offsets[:-1], K.offsets[1:]):
            out += _block_diagonal(b, w[lo:hi])
        return out
    return _block_diagonal(K, w)


def _block_diagonal(K: LinearOperator, w: np.ndarray) -> np.ndarray:
    if isinstance(K, IdentityOperator):
        return w.copy()
    if isinstance(K, DFTOperator):
        return np.full(K.cols, w.sum() / K.cols)
    mat = getattr(K, "matrix", None)
    if mat is not None:
        import scipy.sparse as sp

        if sp.issparse(mat):
            return np.asarray(mat.multiply(mat.conj()).T @ w).real.ravel()
        return np.real(np.conj(mat) * mat).T @ w
    Kd = materialize(K)
    return (np.abs(Kd) ** 2).T @ w


def solve_M(M: MajorizerSpec, r: np.ndarray, inner_iters: Optional[int] = None,
            tol: Optional[float] = None, x0=None) -> SolveResult:
    """Solve ``M z = r``.

    Diagonal and circulant majorizers are inverted exactly; other structures
    use preconditioned CG capped at ``inner_iters`` steps.
    """
    w = M.weights
    if M.structure == "diagonal":
        if np.any(w <= 0):
            raise ZeroDivisionError("diagonal majorizer has nonpositive entries")
        return SolveResult(r / w if r.ndim == 1 else r / w[:, None], 0.0, 0)
    if M.structure == "circulant":
        if np.any(w <= 0):
            raise ZeroDivisionError("circulant majorizer has nonpositive eigenvalues")
        if M.real_part:
            return SolveResult(CirculantOperator.from_eigenvalues(1.0 / w, M.K.grid).apply(r), 0.0, 0)
        K = M.K
        return SolveResult(K.adjoint_apply(K.apply(r) / w), 0.0, 0)
    if "_cholesky" in M.meta:
        from scipy.linalg import cho_solve

        z = cho_solve(M.meta["_cholesky"], r)
        if M.real and not np.iscomplexobj(r):
            z = z.real
        return SolveResult(z, 0.0, 0)
    iters = M.inner_iters if inner_iters is None else inner_iters
    tol = M.inner_tol if tol is None else tol
    pre = M.meta.get("_preconditioner")
    if pre is None:
        pre = _stacked_preconditioner(M)
        M.meta["_preconditioner"] = pre
    res = conjugate_gradient(M.apply, r, x0=x0, iters=iters, tol=tol, preconditioner=pre)
    if not res.converged:
        log.debug("solve_M: CG stopped at relative residual %.3g after %d iterations",
                  res.residual, res.iterations)
    return SolveResult(res.x, res.residual, res.iterations)


@dataclass
class QuadraticProblem:
    """``min 1/2 x^H H x + Re(x^H g)`` started from ``x0``."""

    H: HermitianOperator
    g: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        if self.g.shape != (self.H.cols,) or self.x0.shape != (self.H.cols,):
            raise ValueError("g and x0 must match the dimension of H")

    def cost(self, x: np.ndarray) -> float:
        return float(0.5 * np.real(np.vdot(x, self.H.apply(x))) + np.real(np.vdot(x, self.g)))


@dataclass
class ConvergenceTrace:
    iters: list = field(default_factory=list)
    distance: list = field(default_factory=list)
    cost: list = field(default_factory=list)
    x: Optional[np.ndarray] = None

    def append(self, it, dist, cost):
        self.iters.append(int(it))
        self.distance.append(float("nan") if dist is None else float(dist))
        self.cost.append(float(cost))

    def rows(self):
        return list(zip(self.iters, self.distance, self.cost))

    def iterations_to(self, rel_tol: float) -> Optional[int]:
        """First iteration whose distance is at most ``rel_tol`` times the initial one."""
        if not self.distance:
            return None
        d0 = self.distance[0]
        for it, dist in zip(self.iters, self.distance):
            if dist <= rel_tol * d0:
                return it
        return None


def mm_quadratic(q: QuadraticProblem, M: MajorizerSpec, iters: int,
                 x_star: Optional[np.ndarray] = None, stop_rel_distance: Optional[float] = None,
                 rtol: float = 1e-10, inner_iters: Optional[int] = None) -> ConvergenceTrace:
    """MM iteration ``x <- x - M^{-1} (H x + g)`` with a per-iteration trace.

    With a certified majorizer an increase of the cost beyond ``rtol``
    relative roundoff raises :class:`MajorizationViolation`. If
    ``stop_rel_distance`` is set the run ends once the distance to ``x_star``
    has shrunk by that factor.
    """
    if not M.certified:
        log.warning("running MM with an uncertified majorizer (%s)", M.descriptor)
    x = np.array(q.x0)
    hx = q.H.apply(x)
    cost = float(0.5 * np.real(np.vdot(x, hx)) + np.real(np.vdot(x, q.g)))
    trace = ConvergenceTrace()
    d0 = None if x_star is None else float(np.linalg.norm(x - x_star))
    trace.append(0, d0, cost)
    z_prev = None
    for it in range(1, iters + 1):
        grad = hx + q.g
        sol = solve_M(M, grad, inner_iters=inner_iters, x0=z_prev)
        z_prev = sol.x if sol.iterations else None
        x = x - sol.x
        hx = q.H.apply(x)
        new_cost = float(0.5 * np.real(np.vdot(x, hx)) + np.real(np.vdot(x, q.g)))
        if M.certified and new_cost > cost + rtol * max(abs(cost), abs(new_cost), 1e-300):
            raise MajorizationViolation(
                f"cost rose from {cost!r} to {new_cost!r} at MM iteration {it}")
        cost = new_cost
        dist = None if x_star is None else float(np.linalg.norm(x - x_star))
        trace.append(it, dist, cost)
        if stop_rel_distance is not None and dist is not None and dist <= stop_rel_distance * d0:
            break
    trace.x = x
    return trace


def majorized_spectrum(M: MajorizerSpec, H) -> np.ndarray:
    """Sorted eigenvalues of ``M^{-1/2} H M^{-1/2}`` (dense, desk scale)."""
    Hd = materialize(H) if isinstance(H, LinearOperator) else np.asarray(H)
    if M.structure in ("diagonal", "circulant"):
        isq = inverse_sqrt_apply(M)
        B = isq(isq(Hd).conj().T).conj().T
    else:
        Md = M.dense()
        Md = 0.5 * (Md + Md.conj().T)
        try:
            L = np.linalg.cholesky(Md)
        except np.linalg.LinAlgError as exc:
            raise ValueError("majorizer is singular or indefinite") from exc
        Li = np.linalg.inv(L)
        B = Li @ Hd @ Li.conj().T
    B = 0.5 * (B + B.conj().T)
    return np.sort(np.linalg.eigvalsh(B))
