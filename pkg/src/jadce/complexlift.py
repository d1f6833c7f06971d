"""Real-valued lifting of the complex model, pseudoinverse and nullspace projector.

A complex operator ``S`` (L x N) lifts to the 2L x 2N block matrix
``[[Re S, -Im S], [Im S, Re S]]`` and complex data ``X`` (N x M) lifts to the
stack ``[Re X; Im X]`` (2N x M), so that ``lift(S) @ lift(X) == lift(S @ X)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import numerics as nx
from .numerics import ContractError, SingularMatrixError, Tensor

INFERENCE_EPS = 1e-10
TRAINING_EPS = 1e-8


@dataclass(frozen=True)
class ComplexMat:
    re: np.ndarray
    im: np.ndarray

    def __post_init__(self):
        re = np.asarray(self.re, dtype=np.float64)
        im = np.asarray(self.im, dtype=np.float64)
        if re.shape != im.shape:
            raise nx.DimensionError(f"real part {re.shape} and imaginary part {im.shape} differ")
        object.__setattr__(self, "re", re)
        object.__setattr__(self, "im", im)

    @classmethod
    def from_complex(cls, z) -> "ComplexMat":
        z = np.asarray(z, dtype=np.complex128)
        return cls(z.real.copy(), z.imag.copy())

    @classmethod
    def zeros(cls, rows: int, cols: int) -> "ComplexMat":
        return cls(np.zeros((rows, cols)), np.zeros((rows, cols)))

    def to_complex(self) -> np.ndarray:
        return self.re + 1j * self.im

    @property
    def shape(self) -> tuple[int, ...]:
        return self.re.shape

    @property
    def rows(self) -> int:
        return self.re.shape[0]

    @property
    def cols(self) -> int:
        return self.re.shape[1]

    def __eq__(self, other):
        if not isinstance(other, ComplexMat):
            return NotImplemented
        return np.array_equal(self.re, other.re) and np.array_equal(self.im, other.im)

    __hash__ = None


def lift_blocks(re, im) -> Tensor:
    """Differentiable block lift of an operator given its real/imaginary parts."""
    top = nx.concat([re, nx.scale(im, -1.0)], axis=1)
    bottom = nx.concat([im, re], axis=1)
    return nx.concat([top, bottom], axis=0)


def lift_operator(S: ComplexMat) -> np.ndarray:
    """``[[Re S, -Im S], [Im S, Re S]]`` as a new array."""
    return np.block([[S.re, -S.im], [S.im, S.re]])


def is_lifted_operator(A: np.ndarray) -> bool:
    """Exact check of the lifted block structure."""
    r, c = A.shape
    if r % 2 or c % 2:
        return False
    h, w = r // 2, c // 2
    return (np.array_equal(A[:h, :w], A[h:, w:])
            and np.array_equal(A[:h, w:], -A[h:, :w]))


def unlift_operator(A: np.ndarray) -> ComplexMat:
    if not is_lifted_operator(A):
        raise ContractError("matrix does not have the lifted block structure")
    h, w = A.shape[0] // 2, A.shape[1] // 2
    return ComplexMat(A[:h, :w].copy(), A[h:, :w].copy())


def lift_stack(X: ComplexMat) -> np.ndarray:
    """``[Re X; Im X]``; works on batched parts of shape (..., r, c) too."""
    return np.concatenate([X.re, X.im], axis=-2)


def unlift_stack(Xt: np.ndarray) -> ComplexMat:
    Xt = np.asarray(Xt, dtype=np.float64)
    rows = Xt.shape[-2]
    if rows % 2:
        raise ContractError(f"lifted stack needs an even row count, got {rows}")
    h = rows // 2
    return ComplexMat(Xt[..., :h, :].copy(), Xt[..., h:, :].copy())


def pseudoinverse(A, eps: float = INFERENCE_EPS):
    """Regularized right pseudoinverse ``A.T @ inv(A @ A.T + eps*I)``.

    For ``eps == 0`` and full row rank this is the Moore-Penrose
    pseudoinverse.  Tensor inputs stay on the tape (for pilot training);
    array inputs return an array.

    Raises
    ------
    SingularMatrixError
        If ``A @ A.T + eps*I`` has no Cholesky factorization.
    """
    if eps < 0:
        raise ContractError(f"eps must be >= 0, got {eps}")
    tracked = isinstance(A, Tensor)
    At = nx.as_tensor(A)
    if At.ndim != 2:
        raise nx.DimensionError(f"pseudoinverse needs a matrix, got shape {At.shape}")
    r, c = At.shape
    if r > c:
        raise nx.DimensionError(f"pseudoinverse expects a wide matrix (rows <= cols), got {At.shape}")
    gram = nx.matmul(At, nx.transpose(At))
    if eps:
        gram = nx.add(gram, eps * np.eye(r))
    try:
        # (A A^T + eps I)^{-1} A, transposed
        out = nx.transpose(nx.spd_solve(gram, At))
    except SingularMatrixError as exc:
        raise SingularMatrixError(f"{exc}; pseudoinverse needs eps > 0 for this matrix") from None
    return out if tracked else out.data.copy()


def nullspace_projector(A: np.ndarray, eps: float = INFERENCE_EPS) -> np.ndarray:
    """Orthogonal projector ``I - A^+ A`` onto the nullspace of a wide ``A``."""
    A = np.asarray(A, dtype=np.float64)
    P = np.eye(A.shape[1]) - pseudoinverse(A, eps) @ A
    return 0.5 * (P + P.T)


@dataclass(frozen=True)
class Projector:
    """Per-pilot constants shared by every block and sample: ``S~``, ``S~^+`` and ``P``."""

    lifted: np.ndarray
    eps: float = INFERENCE_EPS

    @classmethod
    def from_pilot(cls, S: ComplexMat, eps: float = INFERENCE_EPS) -> "Projector":
        return cls(lift_operator(S), eps)

    @cached_property
    def pinv(self) -> np.ndarray:
        out = pseudoinverse(self.lifted, self.eps)
        out.flags.writeable = False
        return out

    @cached_property
    def P(self) -> np.ndarray:
        I = np.eye(self.lifted.shape[1])
        P = I - self.pinv @ self.lifted
        P = 0.5 * (P + P.T)
        P.flags.writeable = False
        return P

    def estimate(self, Yt: np.ndarray) -> np.ndarray:
        """Minimum-norm estimate ``S~^+ Y~`` (batched over leading axes)."""
        return np.matmul(self.pinv, Yt)
