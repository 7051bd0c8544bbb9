"""Dense 3-way tensors, factor models and the multilinear kernels used by PARAFAC.

Tensors are plain ``float64`` numpy arrays of shape ``(I, J, K)``. Unfoldings
follow the Kolda-Bader layout: the lower-numbered remaining mode varies
fastest along the columns, so the mode-1 unfolding places ``x[i, j, k]`` at
row ``i``, column ``j + J * k``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray

__all__ = [
    "FactorModel",
    "as_tensor3",
    "unfold",
    "fold",
    "khatri_rao",
    "reconstruct",
    "frobenius_norm",
    "relative_error",
]

MODES = (1, 2, 3)


def as_tensor3(data: ArrayLike) -> NDArray[np.float64]:
    """Validate and copy ``data`` into a non-negative float64 array of ndim 3."""
    t = np.array(data, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected a 3-way tensor, got ndim={t.ndim}")
    if min(t.shape) < 1:
        raise ValueError(f"tensor dimensions must be >= 1, got {t.shape}")
    if not np.all(np.isfinite(t)):
        raise ValueError("tensor contains non-finite values")
    if np.any(t < 0):
        raise ValueError("tensor contains negative values")
    return t


def _check_mode(mode: int) -> None:
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")


def unfold(t: NDArray, mode: int) -> NDArray[np.float64]:
    """Matricize ``t`` along ``mode`` (1, 2 or 3).

    The result has shape ``(t.shape[mode - 1], prod(other dims))`` with the
    lower-numbered remaining mode varying fastest.
    """
    _check_mode(mode)
    t = np.asarray(t, dtype=np.float64)
    if t.ndim != 3:
        raise ValueError(f"expected a 3-way tensor, got ndim={t.ndim}")
    moved = np.moveaxis(t, mode - 1, 0)
    return np.reshape(moved, (moved.shape[0], -1), order="F")


def fold(m: NDArray, mode: int, shape: tuple[int, int, int]) -> NDArray[np.float64]:
    """Inverse of :func:`unfold`."""
    _check_mode(mode)
    shape = tuple(int(s) for s in shape)
    ax = mode - 1
    moved_shape = (shape[ax],) + tuple(s for i, s in enumerate(shape) if i != ax)
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (moved_shape[0], moved_shape[1] * moved_shape[2]):
        raise ValueError(f"matrix of shape {m.shape} cannot fold to {shape} along mode {mode}")
    return np.moveaxis(np.reshape(m, moved_shape, order="F"), 0, ax).copy()


def khatri_rao(p: NDArray, q: NDArray) -> NDArray[np.float64]:
    """Column-wise Kronecker product; row ``a * q.rows + b`` holds ``p[a] * q[b]``."""
    p = np.asarray(p, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 2 or q.ndim != 2:
        raise ValueError("khatri_rao expects two matrices")
    if p.shape[1] != q.shape[1]:
        raise ValueError(f"column mismatch: {p.shape[1]} vs {q.shape[1]}")
    return np.einsum("ir,jr->ijr", p, q).reshape(p.shape[0] * q.shape[0], p.shape[1])


@dataclass
class FactorModel:
    """Kruskal model ``[[A, B, C]]`` with optional per-component weights.

    ``A`` holds user memberships (I x R), ``B`` day-of-week activity (J x R)
    and ``C`` weekly activity (K x R). When ``weights`` is set, component ``r``
    is scaled by ``weights[r]``.
    """

    A: NDArray[np.float64]
    B: NDArray[np.float64]
    C: NDArray[np.float64]
    weights: NDArray[np.float64] | None = field(default=None)

    def __post_init__(self) -> None:
        self.A = np.atleast_2d(np.asarray(self.A, dtype=np.float64))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=np.float64))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=np.float64))
        ranks = {self.A.shape[1], self.B.shape[1], self.C.shape[1]}
        if len(ranks) != 1:
            raise ValueError(
                "factor matrices disagree on rank: "
                f"A={self.A.shape}, B={self.B.shape}, C={self.C.shape}"
            )
        if self.weights is not None:
            self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
            if self.weights.shape[0] != self.rank:
                raise ValueError("weights length must equal the rank")

    @property
    def rank(self) -> int:
        return self.A.shape[1]

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.A.shape[0], self.B.shape[0], self.C.shape[0])

    @property
    def factors(self) -> tuple[NDArray, NDArray, NDArray]:
        return (self.A, self.B, self.C)

    def weighted_A(self) -> NDArray[np.float64]:
        """``A`` with the component weights multiplied in."""
        if self.weights is None:
            return self.A.copy()
        return self.A * self.weights[None, :]

    def absorb_weights(self) -> "FactorModel":
        """Equivalent model with the weights pushed into ``A``."""
        return FactorModel(self.weighted_A(), self.B.copy(), self.C.copy())

    def permute(self, perm) -> "FactorModel":
        perm = np.asarray(perm, dtype=int)
        w = None if self.weights is None else self.weights[perm]
        return FactorModel(self.A[:, perm], self.B[:, perm], self.C[:, perm], w)

    def is_nonnegative(self) -> bool:
        ok = all(np.all(f >= 0) for f in self.factors)
        return bool(ok and (self.weights is None or np.all(self.weights >= 0)))

    def copy(self) -> "FactorModel":
        w = None if self.weights is None else self.weights.copy()
        return FactorModel(self.A.copy(), self.B.copy(), self.C.copy(), w)


def reconstruct(m: FactorModel) -> NDArray[np.float64]:
    """Full tensor ``sum_r w_r a_r o b_r o c_r``."""
    return np.einsum("ir,jr,kr->ijk", m.weighted_A(), m.B, m.C)


def frobenius_norm(t: NDArray) -> float:
    return float(np.sqrt(np.sum(np.square(np.asarray(t, dtype=np.float64)))))


def relative_error(t: NDArray, m: FactorModel) -> float:
    """``||t - reconstruct(m)||_F / ||t||_F``.

    A zero tensor fitted by a zero model has error 0; a zero tensor against a
    non-zero model has infinite error.
    """
    t = np.asarray(t, dtype=np.float64)
    if t.shape != m.shape:
        raise ValueError(f"shape mismatch: tensor {t.shape} vs model {m.shape}")
    resid = frobenius_norm(t - reconstruct(m))
    norm = frobenius_norm(t)
    if norm == 0.0:
        return 0.0 if resid == 0.0 else float("inf")
    return resid / norm
