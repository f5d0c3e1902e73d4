"""Majorizer design by steepest ascent on the dual problem.

For a Hermitian PSD ``H`` and a fixed ``K`` we look for the smallest (in
``W``-weighted norm) nonnegative ``d`` with ``K^H diag(d) K >= H``. The dual
function

    L(x) = -1/2 * sum_k |Kx|_k^4 / w_k + x^H H x

is maximized by steepest ascent with an exact line search (the step length is
a root of a cubic), and the design is read off as ``d = |Kx|^2 / w``. The dual
is not concave, so the ascent may stop at a local maximum; the induced matrix
is then scaled either by power iteration or by the factor 3 that holds at any
local maximum.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .majorizers import MajorizerSpec, describe_K, max_generalized_eigenvalue
from .operators import (
    DFTOperator,
    DimensionError,
    HermitianOperator,
    IdentityOperator,
    LinearOperator,
    materialize,
    min_eigenvalue,
    random_unit_vector,
)

log = logging.getLogger(__name__)

DEFAULT_ITERS = 128


@dataclass(frozen=True)
class DesignProblem:
    H: HermitianOperator
    K: LinearOperator
    w: np.ndarray = None

    def __post_init__(self):
        if self.K.cols != self.H.cols:
            raise DimensionError(f"K has {self.K.cols} columns but H is {self.H.cols}x{self.H.cols}")
        w = np.ones(self.K.rows) if self.w is None else np.asarray(self.w, dtype=float).ravel()
        if w.size != self.K.rows:
            raise DimensionError(f"w has length {w.size}, K has {self.K.rows} rows")
        if np.any(w <= 0):
            raise ValueError("design weights must be strictly positive")
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.H.cols


@dataclass(frozen=True)
class AscentState:
    x: np.ndarray
    dual_value: float
    grad_norm: float
    iter: int = 0
    stagnated: bool = False
    # cached products, kept in sync by ascent_step
    kx: Optional[np.ndarray] = field(default=None, repr=False)
    hx: Optional[np.ndarray] = field(default=None, repr=False)
    grad: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True)
class LineSearchPolynomial:
    """``f'(a) = -(c3 a^3 + c2 a^2 + c1 a + c0)`` for ``f(a) = L(x + a g)``."""

    c3: float
    c2: float
    c1: float
    c0: float
    v0: np.ndarray
    v1: np.ndarray
    v2: np.ndarray
    b1: float
    b2: float
    # x^H H x, so that f(a) can be evaluated without further matvecs
    b0: float = 0.0

    @property
    def coefficients(self) -> tuple[float, float, float, float]:
        return (self.c3, self.c2, self.c1, self.c0)

    def derivative(self, a):
        return -(((self.c3 * a + self.c2) * a + self.c1) * a + self.c0)

    def increase(self, a):
        """``f(a) - f(0)``, free of the cancellation in ``value(a) - value(0)``."""
        a = np.asarray(a, dtype=float)
        return -a * (((self.c3 / 4 * a + self.c2 / 3) * a + self.c1 / 2) * a + self.c0)

    def value(self, a, w) -> np.ndarray:
        """``f(a)`` for scalar or array ``a``."""
        a = np.asarray(a, dtype=float)
        q = self.v0 + np.multiply.outer(a, self.v1) + np.multiply.outer(a * a, self.v2)
        return -0.5 * np.sum(q * q / w, axis=-1) + self.b0 + a * self.b1 + a * a * self.b2


@dataclass
class DesignResult:
    majorizer: MajorizerSpec
    x: np.ndarray
    trace: list
    certification: dict
    stop_reason: str = ""

    @property
    def d(self) -> np.ndarray:
        return self.majorizer.d


def _abs2(z):
    return z.real ** 2 + z.imag ** 2


def dual_value(p: DesignProblem, x: np.ndarray) -> float:
    x = np.asarray(x)
    if x.shape != (p.n,):
        raise DimensionError(f"x must have length {p.n}, got {x.shape}")
    v = _abs2(p.K.apply(x))
    return float(-0.5 * np.sum(v * v / p.w) + np.real(np.vdot(x, p.H.apply(x))))


def _gradient(p: DesignProblem, kx, hx):
    return 2.0 * (hx - p.K.adjoint_apply(_abs2(kx) / p.w * kx))


def dual_gradient(p: DesignProblem, x: np.ndarray) -> np.ndarray:
    """Gradient of ``L`` with respect to ``x`` viewed as ``2N`` real coordinates.

    The real and imaginary parts of the result are the partial derivatives
    with respect to ``Re x`` and ``Im x``.
    """
    x = np.asarray(x)
    if x.shape != (p.n,):
        raise DimensionError(f"x must have length {p.n}, got {x.shape}")
    return _gradient(p, p.K.apply(x), p.H.apply(x))


def _coefficients(w, kx, kg, b0, b1, b2) -> LineSearchPolynomial:
    v0 = _abs2(kx)
    v1 = 2.0 * np.real(kg * np.conj(kx))
    v2 = _abs2(kg)
    c3 = 2.0 * np.sum(v2 * v2 / w)
    c2 = 3.0 * np.sum(v2 * v1 / w)
    c1 = 2.0 * np.sum(v2 * v0 / w) + np.sum(v1 * v1 / w) - 2.0 * b2
    c0 = np.sum(v1 * v0 / w) - b1
    return LineSearchPolynomial(float(c3), float(c2), float(c1), float(c0),
                                v0, v1, v2, float(b1), float(b2), float(b0))


def line_search_coefficients(p: DesignProblem, x: np.ndarray, g: np.ndarray) -> LineSearchPolynomial:
    """Cubic whose real roots are the stationary points of ``a -> L(x + a g)``."""
    if not np.any(g):
        raise ValueError("search direction is zero; the ascent should terminate instead")
    hx, hg = p.H.apply(x), p.H.apply(g)
    b0 = float(np.real(np.vdot(x, hx)))
    b1 = float(2.0 * np.real(np.vdot(g, hx)))
    b2 = float(np.real(np.vdot(g, hg)))
    return _coefficients(p.w, p.K.apply(x), p.K.apply(g), b0, b1, b2)


def cubic_real_roots(c3: float, c2: float, c1: float, c0: float) -> list[float]:
    """Real roots of ``c3 a^3 + c2 a^2 + c1 a + c0``.

    Leading coefficients that are negligible relative to the rest are dropped,
    falling back to the quadratic or linear case. Each root is polished with
    Newton steps.
    """
    c = np.array([c3, c2, c1, c0], dtype=float)
    scale = np.abs(c).max()
    if scale == 0 or not np.all(np.isfinite(c)):
        raise ValueError(f"cubic has no usable coefficients: {tuple(c)}")
    lead = 0
    while lead < 3 and abs(c[lead]) <= 1e-14 * scale:
        lead += 1
    c = c[lead:]
    if c.size == 1:
        return []
    r = np.roots(c)
    mag = max(1.0, np.abs(r).max())
    cand = r[np.abs(r.imag) <= 1e-7 * mag].real
    if cand.size == 0:
        # a cubic always has a real root; take the one closest to the axis
        cand = np.array([r[np.argmin(np.abs(r.imag))].real])
    dc = np.polyder(c)
    roots = []
    for a in cand:
        for _ in range(3):
            fp = np.polyval(dc, a)
            if fp == 0:
                break
            step = np.polyval(c, a) / fp
            if not np.isfinite(step):
                break
            a = a - step
        roots.append(float(a))
    return sorted(roots)


def _is_stationary(grad_norm, x, tol):
    return grad_norm <= tol * max(1.0, float(np.linalg.norm(x)))


def initial_state(p: DesignProblem, x0: np.ndarray) -> AscentState:
    x0 = np.asarray(x0, dtype=complex)
    if not np.any(x0):
        raise ValueError("the ascent must start from a nonzero x")
    kx, hx = p.K.apply(x0), p.H.apply(x0)
    v = _abs2(kx)
    val = float(-0.5 * np.sum(v * v / p.w) + np.real(np.vdot(x0, hx)))
    g = _gradient(p, kx, hx)
    return AscentState(x0, val, float(np.linalg.norm(g)), 0, False, kx, hx, g)


def ascent_step(p: DesignProblem, s: AscentState, grad_tol: float = 0.0) -> AscentState:
    """One steepest-ascent step with exact line search.

    Costs one product with ``H``, one with ``K`` and one with ``K^H``. If no
    real root of the line-search cubic improves ``L`` the state is returned
    unchanged with ``stagnated`` set.
    """
    if s.kx is None:
        s = replace(initial_state(p, s.x), iter=s.iter)
    g = s.grad
    if s.grad_norm == 0 or _is_stationary(s.grad_norm, s.x, grad_tol):
        return replace(s, stagnated=True)
    kg, hg = p.K.apply(g), p.H.apply(g)
    b0 = float(np.real(np.vdot(s.x, s.hx)))
    poly = _coefficients(p.w, s.kx, kg, b0,
                         float(2.0 * np.real(np.vdot(g, s.hx))),
                         float(np.real(np.vdot(g, hg))))
    roots = np.array(cubic_real_roots(*poly.coefficients))
    if roots.size == 0:
        return replace(s, stagnated=True)
    gains = poly.increase(roots)
    best = int(np.argmax(gains))
    a = float(roots[best])
    if not gains[best] > 0 or a == 0.0:
        return replace(s, stagnated=True)
    x = s.x + a * g
    kx = s.kx + a * kg
    hx = s.hx + a * hg
    it = s.iter + 1
    if it % 64 == 0:
        # refresh the recurrences so roundoff cannot accumulate
        kx, hx = p.K.apply(x), p.H.apply(x)
    v = _abs2(kx)
    val = float(-0.5 * np.sum(v * v / p.w) + np.real(np.vdot(x, hx)))
    if val < s.dual_value - 1e-12 * abs(s.dual_value):
        # a real decrease, not roundoff: the step is unreliable
        return replace(s, stagnated=True)
    grad = _gradient(p, kx, hx)
    return AscentState(x, val, float(np.linalg.norm(grad)), it, False, kx, hx, grad)


def ascend(p: DesignProblem, x0: np.ndarray, iters: int = DEFAULT_ITERS,
           grad_tol: float = 1e-8) -> tuple[AscentState, list, str]:
    """Run :func:`ascent_step` up to ``iters`` times; returns state, trace and stop reason."""
    s = initial_state(p, x0)
    trace = [(0, s.dual_value, s.grad_norm)]
    reason = "iterations"
    for _ in range(iters):
        if _is_stationary(s.grad_norm, s.x, grad_tol):
            reason = "gradient"
            break
        s = ascent_step(p, s, grad_tol)
        if s.stagnated:
            reason = "stagnation"
            break
        trace.append((s.iter, s.dual_value, s.grad_norm))
    else:
        if _is_stationary(s.grad_norm, s.x, grad_tol):
            reason = "gradient"
    return s, trace, reason


def primal_from_dual(p: DesignProblem, x: np.ndarray) -> np.ndarray:
    """``d = |Kx|^2 / w``."""
    return _abs2(p.K.apply(x)) / p.w


def primal_value(p: DesignProblem, d: np.ndarray) -> float:
    """``J(d) = 1/2 ||d||_W^2`` (feasibility not checked)."""
    d = np.asarray(d, dtype=float)
    return float(0.5 * np.sum(p.w * d * d))


def _supports_power(K: LinearOperator) -> bool:
    return isinstance(K, (IdentityOperator, DFTOperator))


def design(p: DesignProblem, iters: int = DEFAULT_ITERS, seed: int = 0,
           cert_mode: str = "factor3", tol: float = 1e-3, grad_tol: float = 1e-8,
           restarts: int = 1, x0: Optional[np.ndarray] = None,
           power_tol: float = 1e-7, power_iters: int = 20000,
           allow_iterative_power: bool = False) -> DesignResult:
    """Design ``d`` for ``M = alpha K^H diag(d) K`` majorizing ``H``.

    ``cert_mode`` selects the scaling:

    * ``"factor3"``: ``alpha = 3``, valid at any local maximum of the dual;
    * ``"power"``: ``alpha = (1 + tol) * lambda_max(M^{-1/2} H M^{-1/2})`` by
      power iteration. Needs an identity or DFT ``K`` unless
      ``allow_iterative_power`` is set, in which case stacked ``K`` use a
      generalized power iteration with inner CG solves;
    * ``"none"``: ``alpha = 1``, uncertified.

    With several restarts, the run with the largest dual value wins.
    """
    if iters < 1:
        raise ValueError("iters must be at least 1")
    if cert_mode not in ("power", "factor3", "none"):
        raise ValueError(f"unknown cert_mode {cert_mode!r}")
    best = None
    for r in range(max(1, restarts)):
        start = x0 if (x0 is not None and r == 0) else random_unit_vector(p.n, (seed, r))
        state, trace, reason = ascend(p, start, iters, grad_tol)
        if best is None or state.dual_value > best[0].dual_value:
            best = (state, trace, reason)
    state, trace, reason = best

    d = primal_from_dual(p, state.x)
    base = MajorizerSpec(p.K, d, alpha=1.0, method="none", descriptor=describe_K(p.K))
    cert = {"method": "none", "alpha": 1.0, "min_eig_estimate": None,
            "dual_value": state.dual_value, "grad_norm": state.grad_norm,
            "iterations": state.iter, "stop_reason": reason}

    mode = cert_mode
    if mode == "power" and np.any(d <= 0) and _supports_power(p.K):
        warnings.warn("designed diagonal has zero entries; falling back to factor-3 scaling")
        mode = "factor3"
    if mode == "power" and not (_supports_power(p.K) or allow_iterative_power):
        log.info("power certification unavailable for %s; using factor 3", base.descriptor)
        mode = "factor3"

    if mode == "factor3":
        M = base.scaled(3.0, "factor-3")
        cert.update(method="factor-3", alpha=3.0)
    elif mode == "power":
        est = max_generalized_eigenvalue(base, p.H, tol=power_tol, max_iters=power_iters, seed=seed)
        safety = tol if est.converged else 2 * tol
        alpha = (1 + safety) * est.value
        if alpha > 3:
            log.warning("power-iteration scaling %.4g exceeds the factor-3 bound; "
                        "the ascent probably stopped short of a local maximum", alpha)
        M = base.scaled(alpha, "power-iteration")
        M.meta.update(scale_estimate=est.value, power_converged=est.converged)
        cert.update(method="power-iteration", alpha=M.alpha, power_converged=est.converged)
    else:
        M = base
    return DesignResult(M, state.x, trace, cert, reason)


def verify_majorization(M, H, mode: str = "dense", rtol: float = 1e-8,
                        h_max: Optional[float] = None, seed: int = 0) -> tuple[bool, float]:
    """Check ``M >= H`` via the smallest eigenvalue of ``M - H``.

    ``mode="dense"`` materializes both operators (desk scale only);
    ``mode="lanczos"`` estimates the smallest eigenvalue matrix-free. The
    check passes when that eigenvalue is at least ``-rtol * lambda_max(H)``.
    """
    m_apply = M.apply
    dim = M.dim if isinstance(M, MajorizerSpec) else M.cols
    if mode == "dense":
        Md = M.dense() if isinstance(M, MajorizerSpec) else materialize(M)
        Hd = materialize(H) if isinstance(H, LinearOperator) else np.asarray(H)
        Md, Hd = np.broadcast_arrays(Md, Hd)
        diff = Md - Hd
        diff = 0.5 * (diff + diff.conj().T)
        lam = float(np.linalg.eigvalsh(diff)[0])
        if h_max is None:
            h_max = float(np.linalg.eigvalsh(0.5 * (Hd + Hd.conj().T))[-1])
    elif mode == "lanczos":
        h = H.apply if isinstance(H, LinearOperator) else (lambda v: H @ v)
        real = getattr(M, "real", False) and getattr(H, "real", False)
        op = HermitianOperator(dim, lambda v: m_apply(v) - h(v), real=real)
        lam, _ = min_eigenvalue(op, dim, seed=seed)
        if h_max is None:
            from .operators import power_iteration

            h_max = power_iteration(H, tol=1e-6, seed=seed).value
    else:
        raise ValueError(f"unknown verification mode {mode!r}")
    return lam >= -rtol * max(abs(h_max), 1e-300), lam


def duality_gap(p: DesignProblem, d: np.ndarray, x: np.ndarray, rtol: float = 1e-8) -> float:
    """``J(d) - L(x)`` for feasible ``d``, ``+inf`` when ``K^H diag(d) K >= H`` fails."""
    M = MajorizerSpec(p.K, d)
    ok, _ = verify_majorization(M, p.H, "dense", rtol=rtol)
    if not ok:
        return float("inf")
    return primal_value(p, d) - dual_value(p, x)


def dual_hessian(p: DesignProblem, x: np.ndarray) -> np.ndarray:
    """Dense real Hessian of ``L`` in the coordinates ``(Re x, Im x)`` (desk scale)."""
    n = p.n
    Kd = materialize(p.K).astype(complex)
    Hd = materialize(p.H).astype(complex)
    kx = Kd @ x
    v0 = _abs2(kx)
    # K as a real map R^{2n} -> C^k: z = Kr (a) + i Kr (b)
    B = np.hstack([Kd, 1j * Kd])
    Hr = np.block([[Hd.real, -Hd.imag], [Hd.imag, Hd.real]])
    # d/dy of 2 Re(conj(kx) * B y)
    J = 2.0 * np.real(np.conj(kx)[:, None] * B)
    quartic = -(J.T @ (J / p.w[:, None]) + 2.0 * np.real(B.conj().T @ ((v0 / p.w)[:, None] * B)))
    hess = quartic + 2.0 * Hr
    return 0.5 * (hess + hess.T)
