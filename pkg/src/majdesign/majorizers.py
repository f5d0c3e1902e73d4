"""Majorizer container and the reference majorizers (Lipschitz, SQS, circulant)."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
import scipy.linalg

from .operators import (
    CirculantOperator,
    DFTOperator,
    DimensionError,
    HermitianOperator,
    IdentityOperator,
    LinearOperator,
    StackedOperator,
    generalized_power_iteration,
    materialize,
    power_iteration,
)

log = logging.getLogger(__name__)

ALPHA_FLOOR = 1e-12
DENSE_FACTOR_DIM = 1024
CERT_METHODS = ("power-iteration", "dense-eigen", "factor-3", "analytic", "none")


def describe_K(K: LinearOperator) -> str:
    """Short descriptor string for the structures this package knows about."""
    if isinstance(K, IdentityOperator):
        return "identity"
    if isinstance(K, DFTOperator):
        return "dft" if len(K.grid) == 1 else "dft:" + "x".join(map(str, K.grid))
    if isinstance(K, StackedOperator):
        return "stacked:" + "+".join(describe_K(b) for b in K.blocks)
    return K.kind


@dataclass(frozen=True)
class MajorizerSpec:
    """``M = alpha * K^H diag(d) K``.

    ``method`` records how majorization was established: ``analytic``
    (matrix inequality), ``power-iteration`` or ``dense-eigen`` (tight
    scaling), ``factor-3`` (scaling from a local dual maximum) or ``none``.
    """

    K: LinearOperator
    d: np.ndarray
    alpha: float = 1.0
    certified: bool = False
    method: str = "none"
    descriptor: str = ""
    # solve/eigen helpers for stacked K; see solvers.solve_M
    inner_iters: int = 100
    inner_tol: float = 1e-10
    real_part: bool = False
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        d = np.asarray(self.d, dtype=float).ravel()
        if d.size != self.K.rows:
            raise DimensionError(f"d has length {d.size}, K has {self.K.rows} rows")
        if np.any(d < 0):
            raise ValueError("majorizer diagonal must be nonnegative")
        if self.method not in CERT_METHODS:
            raise ValueError(f"unknown certification method {self.method!r}")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "alpha", max(float(self.alpha), ALPHA_FLOOR))
        # cached factorizations depend on alpha and d; never carry them over
        object.__setattr__(self, "meta", {k: v for k, v in self.meta.items()
                                          if not k.startswith("_")})
        if not self.descriptor:
            object.__setattr__(self, "descriptor", describe_K(self.K))

    @property
    def dim(self) -> int:
        return self.K.cols

    @property
    def structure(self) -> str:
        if isinstance(self.K, IdentityOperator):
            return "diagonal"
        if isinstance(self.K, DFTOperator):
            return "circulant"
        return "general"

    @property
    def weights(self) -> np.ndarray:
        """Effective diagonal ``alpha * d``."""
        return self.alpha * self.d

    @property
    def real(self) -> bool:
        return self.K.real or self.real_part

    def _apply_raw(self, x):
        kx = self.K.apply(x)
        return self.K.adjoint_apply(self.weights * kx if kx.ndim == 1
                                    else self.weights[:, None] * kx)

    def apply(self, x: np.ndarray) -> np.ndarray:
        out = self._apply_raw(x)
        if not self.real_part:
            return out
        if not np.iscomplexobj(x):
            return out.real
        # Re(M) x = (M x + conj(M conj(x))) / 2
        return 0.5 * (out + np.conj(self._apply_raw(np.conj(x))))

    def as_operator(self) -> HermitianOperator:
        return HermitianOperator(self.dim, self.apply, real=self.real, representation="majorizer")

    def dense(self) -> np.ndarray:
        return materialize(self.as_operator())

    def scaled(self, alpha: float, method: str, certified: bool = True) -> "MajorizerSpec":
        return replace(self, alpha=alpha, method=method, certified=certified)

    def circulant(self) -> CirculantOperator:
        """The circulant matrix ``K^H diag(alpha d) K`` for a DFT ``K``."""
        if self.structure != "circulant":
            raise TypeError("majorizer is not circulant")
        return CirculantOperator.from_eigenvalues(self.weights, self.K.grid)

    def realified(self) -> "MajorizerSpec":
        """Majorizer ``Re(M)``, which still majorizes any real symmetric ``H``.

        For a DFT ``K`` this symmetrizes the spectrum so ``M`` maps real
        vectors to real vectors; identity and real ``K`` are returned as is.
        """
        if self.K.real:
            return self
        if self.structure == "circulant":
            grid = self.K.grid
            d = self.d.reshape(grid)
            flipped = d
            for ax in range(len(grid)):
                flipped = np.roll(np.flip(flipped, axis=ax), 1, axis=ax)
            return replace(self, d=0.5 * (d + flipped).ravel(), real_part=True)
        return replace(self, real_part=True)


def _h_apply(H):
    return H.apply if isinstance(H, LinearOperator) else (lambda x: H @ x)


def lipschitz_majorizer(H: HermitianOperator, tol: float = 1e-3, seed: int = 0,
                        power_tol: float = 1e-7, max_iters: int = 20000) -> MajorizerSpec:
    """``lambda_max(H) I`` with the power-iteration estimate inflated by ``1 + tol``."""
    res = power_iteration(H, tol=power_tol, max_iters=max_iters, seed=seed)
    safety = tol if res.converged else 2 * tol
    n = H.cols
    return MajorizerSpec(IdentityOperator(n), np.full(n, res.value * (1 + safety)),
                         certified=True, method="analytic", descriptor="identity",
                         meta={"lambda_max": res.value, "power_converged": res.converged})


def _column_probe_abs_sums(H: HermitianOperator) -> np.ndarray:
    n = H.cols
    out = np.zeros(n)
    dtype = float if H.real else complex
    for j in range(n):
        e = np.zeros(n, dtype=dtype)
        e[j] = 1
        out += np.abs(H.apply(e))
    return out


def sqs_majorizer(H: HermitianOperator, nonnegative_hint: bool = False,
                  dense_cap: int = 2048 * 2048, check_probes: int = 4,
                  seed: int = 0) -> MajorizerSpec:
    """Diagonal majorizer with entries equal to the absolute row sums of ``H``.

    With ``nonnegative_hint`` the row sums are ``H @ 1`` (one matvec). The hint
    is spot-checked on a few columns; a negative entry there is a hard error
    because the fast path would then under-majorize.
    """
    n = H.cols
    if nonnegative_hint:
        rng = np.random.default_rng(seed)
        for j in rng.choice(n, size=min(check_probes, n), replace=False):
            e = np.zeros(n)
            e[j] = 1
            col = H.apply(e)
            if np.any(np.real(col) < -1e-12 * np.abs(col).max()) or np.any(np.abs(np.imag(col)) > 1e-12 * np.abs(col).max()):
                raise ValueError(f"nonnegative_hint given but column {j} of H has negative entries")
        d = np.real(H.apply(np.ones(n)))
        if np.any(d < 0):
            raise ValueError("nonnegative_hint given but H @ 1 has negative entries")
    elif n * n <= dense_cap:
        d = np.abs(materialize(H)).sum(axis=0)
    else:
        d = _column_probe_abs_sums(H)
    return MajorizerSpec(IdentityOperator(n), d, certified=True, method="analytic",
                         descriptor="identity")


def best_circulant_approx(T) -> CirculantOperator:
    """Frobenius-nearest circulant to the square matrix ``T``.

    The first column averages ``T`` along its wrapped diagonals:
    ``c_k = mean_j T[(j + k) % N, j]``.
    """
    T = np.asarray(T)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise DimensionError(f"best_circulant_approx needs a square matrix, got {T.shape}")
    n = T.shape[0]
    j = np.arange(n)
    c = np.array([T[(j + k) % n, j].mean() for k in range(n)])
    return CirculantOperator(c)


def circulant_majorizer(C: CirculantOperator) -> MajorizerSpec:
    """Wrap a positive definite circulant as an (uncertified) ``K = U_DFT`` majorizer."""
    lam = C.eigenvalues
    if np.abs(lam.imag).max() > 1e-10 * np.abs(lam).max():
        raise ValueError("circulant is not Hermitian")
    lam = lam.real
    if np.any(lam <= 0):
        raise ValueError("circulant must be positive definite to serve as a majorizer")
    return MajorizerSpec(DFTOperator(C.grid), lam, method="none")


def inverse_sqrt_apply(M: MajorizerSpec):
    """Return ``x -> M^{-1/2} x`` for diagonal and circulant majorizers."""
    w = M.weights
    if np.any(w <= 0):
        raise ValueError("majorizer is singular (nonpositive diagonal entries)")
    s = 1.0 / np.sqrt(w)

    def scale(x):
        return s * x if x.ndim == 1 else s[:, None] * x

    if M.structure == "diagonal":
        return scale
    if M.structure == "circulant":
        K = M.K
        if M.real_part:
            return CirculantOperator.from_eigenvalues(s, K.grid).apply
        return lambda x: K.adjoint_apply(scale(K.apply(x)))
    raise TypeError(f"no closed-form inverse square root for {M.descriptor}")


def max_generalized_eigenvalue(M: MajorizerSpec, H, tol: float = 1e-7,
                               max_iters: int = 20000, seed: int = 0):
    """Power-iteration estimate of ``lambda_max(M^{-1/2} H M^{-1/2})``."""
    h = _h_apply(H)
    if M.structure in ("diagonal", "circulant"):
        isq = inverse_sqrt_apply(M)
        sym = HermitianOperator(M.dim, lambda x: isq(h(isq(x))), real=M.real)
        return power_iteration(sym, tol=tol, max_iters=max_iters, seed=seed)
    from .solvers import attach_dense_factor, solve_M

    if M.dim <= DENSE_FACTOR_DIM and "_cholesky" not in M.meta:
        # exact inner solves are cheaper than CG at this size
        M = attach_dense_factor(replace(M))
    return generalized_power_iteration(
        h, M.apply, lambda r: solve_M(M, r).x, M.dim, tol=tol, max_iters=max_iters, seed=seed)


def scale_to_majorize(M0: MajorizerSpec, H, tol: float = 1e-3, seed: int = 0,
                      power_tol: float = 1e-7, max_iters: int = 20000) -> MajorizerSpec:
    """Rescale ``M0`` by ``(1 + tol) * lambda_max(M0^{-1/2} H M0^{-1/2})``."""
    if M0.structure in ("diagonal", "circulant") and np.any(M0.weights <= 0):
        raise ValueError("M0 is singular: every diagonal entry must be positive")
    res = max_generalized_eigenvalue(M0, H, tol=power_tol, max_iters=max_iters, seed=seed)
    safety = tol if res.converged else 2 * tol
    factor = (1 + safety) * res.value
    alpha = M0.alpha * max(factor, ALPHA_FLOOR)
    meta = dict(M0.meta, scale_estimate=res.value, power_converged=res.converged,
                power_iterations=res.iterations)
    return replace(M0, alpha=alpha, certified=True, method="power-iteration", meta=meta)


def dense_scale_to_majorize(M0: MajorizerSpec, H, tol: float = 1e-3) -> MajorizerSpec:
    """Like :func:`scale_to_majorize` but with the exact top eigenvalue of the
    pencil ``(H, M0)`` from a dense solver. Desk scale only."""
    Hd = materialize(H) if isinstance(H, LinearOperator) else np.asarray(H)
    Md = M0.dense()
    if M0.real:
        # Re(M0) acts on real vectors only; compare it with a real H
        Md, Hd = Md.real, Hd.real
    Md = 0.5 * (Md + Md.conj().T)
    Hd = 0.5 * (Hd + Hd.conj().T)
    n = Md.shape[0]
    try:
        lam = float(scipy.linalg.eigh(Hd, Md, eigvals_only=True, subset_by_index=[n - 1, n - 1])[0])
    except np.linalg.LinAlgError as exc:
        raise ValueError("M0 is singular or indefinite") from exc
    alpha = M0.alpha * max((1 + tol) * lam, ALPHA_FLOOR)
    return replace(M0, alpha=alpha, certified=True, method="dense-eigen",
                   meta=dict(M0.meta, scale_estimate=lam))


def circ_majorizer(H, dense_H: Optional[np.ndarray] = None, tol: float = 1e-3,
                   seed: int = 0) -> MajorizerSpec:
    """``beta * C`` with ``C`` the best circulant approximation of ``H``."""
    T = materialize(H) if dense_H is None else dense_H
    C = best_circulant_approx(T)
    return scale_to_majorize(circulant_majorizer(C), H, tol=tol, seed=seed)
