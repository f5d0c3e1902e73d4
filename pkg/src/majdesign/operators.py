"""Matrix-free linear operators.

Every operator maps length-``cols`` vectors to length-``rows`` vectors and
exposes its adjoint. Inputs may also be 2-D arrays whose columns are treated
as independent vectors; this is what :func:`materialize` relies on.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)

MATERIALIZE_CAP = 4096 * 4096


class DimensionError(ValueError):
    """Raised when a vector does not match an operator's dimensions."""


def _check_len(x: np.ndarray, n: int, what: str) -> np.ndarray:
    x = np.asarray(x)
    if x.shape[0] != n:
        raise DimensionError(f"{what}: expected length {n}, got {x.shape[0]}")
    return x


class LinearOperator:
    """Base class. Subclasses implement ``_apply`` and ``_adjoint``."""

    kind = "abstract"

    def __init__(self, rows: int, cols: int, real: bool = False):
        if rows < 1 or cols < 1:
            raise ValueError(f"operator dimensions must be positive, got {rows}x{cols}")
        self.rows = int(rows)
        self.cols = int(cols)
        # real operators map real vectors to real vectors
        self.real = bool(real)

    @property
    def shape(self) -> tuple[int, int]:
        return (self.rows, self.cols)

    def apply(self, x: np.ndarray) -> np.ndarray:
        x = _check_len(x, self.cols, f"{self.kind}.apply")
        return self._apply(x)

    def adjoint_apply(self, y: np.ndarray) -> np.ndarray:
        y = _check_len(y, self.rows, f"{self.kind}.adjoint_apply")
        return self._adjoint(y)

    def __matmul__(self, x):
        return self.apply(x)

    @property
    def H(self) -> "LinearOperator":
        return AdjointOperator(self)

    def _apply(self, x):  # pragma: no cover - abstract
        raise NotImplementedError

    def _adjoint(self, y):  # pragma: no cover - abstract
        raise NotImplementedError

    def __repr__(self) -> str:
        return f"<{type(self).__name__} {self.rows}x{self.cols}>"


class AdjointOperator(LinearOperator):
    kind = "adjoint"

    def __init__(self, op: LinearOperator):
        super().__init__(op.cols, op.rows, real=op.real)
        self.op = op

    def _apply(self, x):
        return self.op._adjoint(x)

    def _adjoint(self, y):
        return self.op._apply(y)


class DenseOperator(LinearOperator):
    kind = "dense"

    def __init__(self, matrix):
        a = np.atleast_2d(np.asarray(matrix))
        super().__init__(*a.shape, real=not np.iscomplexobj(a))
        self.matrix = a

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self.matrix.conj().T @ y


class SparseOperator(LinearOperator):
    """Operator backed by a scipy sparse matrix (used for CT projectors)."""

    kind = "projector"

    def __init__(self, matrix):
        m = sp.csr_matrix(matrix)
        super().__init__(*m.shape, real=not np.iscomplexobj(m.data))
        self.matrix = m
        self._mt = m.conj().T.tocsr()

    def _apply(self, x):
        return self.matrix @ x

    def _adjoint(self, y):
        return self._mt @ y


class IdentityOperator(LinearOperator):
    kind = "identity"

    def __init__(self, n: int):
        super().__init__(n, n, real=True)

    def _apply(self, x):
        return np.array(x, copy=True)

    def _adjoint(self, y):
        return np.array(y, copy=True)


class DiagonalOperator(LinearOperator):
    kind = "diagonal"

    def __init__(self, values):
        v = np.asarray(values).ravel()
        super().__init__(v.size, v.size, real=not np.iscomplexobj(v))
        self.values = v

    def _scale(self, v, x):
        return v * x if x.ndim == 1 else v[:, None] * x

    def _apply(self, x):
        return self._scale(self.values, x)

    def _adjoint(self, y):
        return self._scale(self.values.conj(), y)


def _as_grid(x: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    return x.reshape(shape + x.shape[1:])


def _from_grid(z: np.ndarray, ndim: int) -> np.ndarray:
    n = int(np.prod(z.shape[:ndim]))
    return z.reshape((n,) + z.shape[ndim:])


class DFTOperator(LinearOperator):
    """Unitary (orthonormal) DFT over a grid of ``shape`` stored as a flat vector."""

    kind = "dft"

    def __init__(self, shape):
        self.grid = tuple(int(s) for s in np.atleast_1d(shape))
        n = int(np.prod(self.grid))
        super().__init__(n, n, real=False)
        self._axes = tuple(range(len(self.grid)))

    def _apply(self, x):
        z = np.fft.fftn(_as_grid(x, self.grid), axes=self._axes, norm="ortho")
        return _from_grid(z, len(self.grid))

    def _adjoint(self, y):
        z = np.fft.ifftn(_as_grid(y, self.grid), axes=self._axes, norm="ortho")
        return _from_grid(z, len(self.grid))


class CirculantOperator(LinearOperator):
    """(Multilevel) circulant matrix given its first column, applied by FFT.

    ``first_column`` is a flat vector laid out on ``shape``; for a 2-D grid the
    operator is block-circulant with circulant blocks.
    """

    kind = "circulant"

    def __init__(self, first_column, shape=None):
        c = np.asarray(first_column).ravel()
        self.grid = (c.size,) if shape is None else tuple(int(s) for s in np.atleast_1d(shape))
        if int(np.prod(self.grid)) != c.size:
            raise DimensionError(f"first column of length {c.size} does not fit grid {self.grid}")
        self.first_column = c
        self._axes = tuple(range(len(self.grid)))
        # unnormalized DFT of the first column = eigenvalues
        self.eigenvalues = np.fft.fftn(c.reshape(self.grid)).ravel()
        super().__init__(c.size, c.size, real=not np.iscomplexobj(c))

    @classmethod
    def from_eigenvalues(cls, eigenvalues, shape=None) -> "CirculantOperator":
        lam = np.asarray(eigenvalues).ravel()
        grid = (lam.size,) if shape is None else tuple(np.atleast_1d(shape))
        c = np.fft.ifftn(lam.reshape(grid)).ravel()
        if np.abs(c.imag).max() <= 1e-13 * max(np.abs(c).max(), 1e-300):
            c = c.real
        return cls(c, grid)

    def _filter(self, x, lam):
        ndim = len(self.grid)
        z = np.fft.fftn(_as_grid(x, self.grid), axes=self._axes)
        lam = lam.reshape(self.grid + (1,) * (x.ndim - 1))
        out = _from_grid(np.fft.ifftn(lam * z, axes=self._axes), ndim)
        if self.real and not np.iscomplexobj(x):
            return out.real
        return out

    def _apply(self, x):
        return self._filter(x, self.eigenvalues)

    def _adjoint(self, y):
        return self._filter(y, self.eigenvalues.conj())


class StackedOperator(LinearOperator):
    """Vertical stack ``[K1; K2; ...]`` of operators sharing a column count."""

    kind = "stacked"

    def __init__(self, blocks: Sequence[LinearOperator]):
        blocks = list(blocks)
        if not blocks:
            raise ValueError("stacked operator needs at least one block")
        cols = blocks[0].cols
        for b in blocks:
            if b.cols != cols:
                raise DimensionError(f"stacked blocks disagree on cols: {b.cols} != {cols}")
        super().__init__(sum(b.rows for b in blocks), cols, real=all(b.real for b in blocks))
        self.blocks = blocks
        self.offsets = np.cumsum([0] + [b.rows for b in blocks])

    def _apply(self, x):
        parts = [b._apply(x) for b in self.blocks]
        dtype = np.result_type(*parts)
        return np.concatenate([p.astype(dtype, copy=False) for p in parts], axis=0)

    def _adjoint(self, y):
        out = None
        for b, lo, hi in zip(self.blocks, self.offsets[:-1], self.offsets[1:]):
            term = b._adjoint(y[lo:hi])
            out = term if out is None else out + term
        return out


class ComposedOperator(LinearOperator):
    """Product ``A @ B`` applied right to left."""

    kind = "composed"

    def __init__(self, left: LinearOperator, right: LinearOperator):
        if left.cols != right.rows:
            raise DimensionError(f"cannot compose {left.shape} with {right.shape}")
        super().__init__(left.rows, right.cols, real=left.real and right.real)
        self.left, self.right = left, right

    def _apply(self, x):
        return self.left._apply(self.right._apply(x))

    def _adjoint(self, y):
        return self.right._adjoint(self.left._adjoint(y))


class ScaledOperator(LinearOperator):
    kind = "scaled"

    def __init__(self, op: LinearOperator, scale: float):
        super().__init__(op.rows, op.cols, real=op.real)
        self.op, self.scale = op, float(scale)

    def _apply(self, x):
        return self.scale * self.op._apply(x)

    def _adjoint(self, y):
        return self.scale * self.op._adjoint(y)


class HermitianOperator(LinearOperator):
    """Square operator equal to its own adjoint.

    Built either from a dense Hermitian matrix, from a Gram product
    ``A^H diag(w) A``, or from an arbitrary self-adjoint callable.
    """

    kind = "hermitian"

    def __init__(self, dim: int, matvec: Callable[[np.ndarray], np.ndarray],
                 real: bool = False, representation: str = "callable",
                 dense: Optional[np.ndarray] = None):
        super().__init__(dim, dim, real=real)
        self._matvec = matvec
        self.representation = representation
        self.dense = dense

    @property
    def dim(self) -> int:
        return self.rows

    def _apply(self, x):
        return self._matvec(x)

    def _adjoint(self, y):
        return self._matvec(y)

    def quadratic_form(self, x: np.ndarray) -> float:
        """Real part of ``x^H H x``."""
        return float(np.real(np.vdot(x, self.apply(x))))

    @classmethod
    def from_dense(cls, matrix, check: bool = True) -> "HermitianOperator":
        a = np.asarray(matrix)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionError(f"Hermitian matrix must be square, got {a.shape}")
        if check:
            scale = max(np.abs(a).max(), 1.0)
            if np.abs(a - a.conj().T).max() > 1e-10 * scale:
                raise ValueError("matrix is not Hermitian")
        return cls(a.shape[0], lambda x: a @ x, real=not np.iscomplexobj(a),
                   representation="dense", dense=a)

    @classmethod
    def from_operator(cls, op: LinearOperator) -> "HermitianOperator":
        """Wrap an operator that the caller knows to be self-adjoint."""
        if op.rows != op.cols:
            raise DimensionError(f"Hermitian operator must be square, got {op.shape}")
        return cls(op.rows, op._apply, real=op.real, representation="materialized")


def identity(n: int) -> IdentityOperator:
    return IdentityOperator(n)


def gram(A: LinearOperator, w=None) -> HermitianOperator:
    """Return ``H = A^H diag(w) A`` as a matrix-free Hermitian operator."""
    if w is None:
        w = np.ones(A.rows)
    w = np.asarray(w, dtype=float).ravel()
    if w.size != A.rows:
        raise DimensionError(f"gram: weights have length {w.size}, operator has {A.rows} rows")
    if np.any(w < 0):
        raise ValueError("gram: weights must be nonnegative")

    def matvec(x):
        ax = A._apply(x)
        return A._adjoint(w * ax if ax.ndim == 1 else w[:, None] * ax)

    H = HermitianOperator(A.cols, matvec, real=A.real, representation="gram")
    H.gram_factor, H.gram_weights = A, w
    return H


def _basis_block(n: int, lo: int, hi: int, dtype) -> np.ndarray:
    e = np.zeros((n, hi - lo), dtype=dtype)
    e[np.arange(lo, hi), np.arange(hi - lo)] = 1
    return e


def materialize(op: LinearOperator, cap: int = MATERIALIZE_CAP, block: int = 512) -> np.ndarray:
    """Dense matrix of ``op`` built by applying it to basis vectors.

    Refuses when ``rows * cols`` exceeds ``cap``: dense matrices are for desk-scale
    oracle checks only.
    """
    if op.rows * op.cols > cap:
        raise MemoryError(
            f"refusing to materialize {op.rows}x{op.cols} operator (cap {cap} entries)")
    dense = getattr(op, "dense", None)
    if dense is not None:
        return np.array(dense)
    if isinstance(op, DenseOperator):
        return np.array(op.matrix)
    if isinstance(op, SparseOperator):
        return op.matrix.toarray()
    if getattr(op, "representation", None) == "gram" and isinstance(op.gram_factor, SparseOperator):
        a = op.gram_factor.matrix
        return (a.conj().T @ sp.diags(op.gram_weights) @ a).toarray()
    dtype = float if op.real else complex
    out = np.empty((op.rows, op.cols), dtype=dtype)
    for lo in range(0, op.cols, block):
        hi = min(op.cols, lo + block)
        cols = op._apply(_basis_block(op.cols, lo, hi, dtype))
        out[:, lo:hi] = cols.real if op.real else cols
    return out


@dataclass(frozen=True)
class PowerResult:
    value: float
    vector: np.ndarray
    iterations: int
    converged: bool
    residual: float


def random_unit_vector(n: int, seed, complex_: bool = True) -> np.ndarray:
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(n)
    if complex_:
        x = x + 1j * rng.standard_normal(n)
    return x / np.linalg.norm(x)


def power_iteration(H, tol: float = 1e-6, max_iters: int = 5000, seed: int = 0,
                    x0: Optional[np.ndarray] = None) -> PowerResult:
    """Estimate the largest eigenvalue of a Hermitian PSD operator.

    Stops once ``||Hv - rho v|| <= tol * |rho|``. The returned value is the
    Rayleigh quotient of the returned vector, hence never above the true
    ``lambda_max``.
    """
    matvec = H.apply if isinstance(H, LinearOperator) else H
    n = H.cols if isinstance(H, LinearOperator) else len(x0)
    v = random_unit_vector(n, seed) if x0 is None else np.asarray(x0, dtype=complex)
    attempt = 0
    while np.linalg.norm(v) == 0:
        attempt += 1
        v = random_unit_vector(n, (seed, attempt))
    v = v / np.linalg.norm(v)
    hv = matvec(v)
    rho, res = 0.0, np.inf
    for it in range(1, max_iters + 1):
        rho = float(np.real(np.vdot(v, hv)))
        res = float(np.linalg.norm(hv - rho * v))
        if res <= tol * abs(rho):
            return PowerResult(rho, v, it, True, res)
        nrm = np.linalg.norm(hv)
        if nrm == 0:
            # v lies in the null space; H is zero on the explored subspace
            return PowerResult(0.0, v, it, True, 0.0)
        v = hv / nrm
        hv = matvec(v)
    rho = float(np.real(np.vdot(v, hv)))
    log.warning("power iteration did not converge in %d iterations (residual %.3g)",
                max_iters, res)
    return PowerResult(rho, v, max_iters, False, res)


def generalized_power_iteration(H, M_apply, M_solve, n: int, tol: float = 1e-6,
                                max_iters: int = 5000, seed: int = 0) -> PowerResult:
    """Largest eigenvalue of ``M^{-1} H`` (equivalently of ``M^{-1/2} H M^{-1/2}``).

    ``M^{-1} H`` is self-adjoint in the ``M`` inner product, so plain power
    iteration with ``M``-normalization converges to the top of its spectrum.
    """
    matvec = H.apply if isinstance(H, LinearOperator) else H
    v = random_unit_vector(n, seed)
    mv = M_apply(v)
    v = v / np.sqrt(np.real(np.vdot(v, mv)))
    mv = M_apply(v)
    rho, res = 0.0, np.inf
    for it in range(1, max_iters + 1):
        hv = matvec(v)
        rho = float(np.real(np.vdot(v, hv)))
        z = M_solve(hv)
        # residual of the eigen-equation measured in the M^{-1} norm
        r = hv - rho * mv
        res = float(np.sqrt(max(np.real(np.vdot(r, M_solve(r))), 0.0)))
        if res <= tol * abs(rho):
            return PowerResult(rho, v, it, True, res)
        mz = M_apply(z)
        nz = np.sqrt(np.real(np.vdot(z, mz)))
        if nz == 0:
            return PowerResult(0.0, v, it, True, 0.0)
        v, mv = z / nz, mz / nz
    log.warning("generalized power iteration did not converge in %d iterations (residual %.3g)",
                max_iters, res)
    return PowerResult(rho, v, max_iters, False, res)


def min_eigenvalue(A, dim: int, tol: float = 1e-8, seed: int = 0) -> tuple[float, float]:
    """Smallest eigenvalue of a Hermitian operator by Lanczos (ARPACK).

    Returns the estimate and the residual norm of its Ritz vector.
    """
    from scipy.sparse.linalg import LinearOperator as SpLinOp, eigsh

    matvec = A.apply if isinstance(A, LinearOperator) else A
    real = getattr(A, "real", False)
    dtype = float if real else complex
    op = SpLinOp((dim, dim), matvec=lambda v: matvec(v.astype(dtype)), dtype=dtype)
    v0 = np.random.default_rng(seed).standard_normal(dim).astype(dtype)
    vals, vecs = eigsh(op, k=1, which="SA", tol=tol, v0=v0)
    lam = float(vals[0])
    v = vecs[:, 0]
    return lam, float(np.linalg.norm(matvec(v) - lam * v))
