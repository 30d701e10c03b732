"""Dense float64 helpers, the seeded random stream and the finite-difference checker.

Matrices are plain ``numpy.ndarray`` objects of dtype float64. The public
operations here check shapes and finiteness; hot loops elsewhere in the
package call numpy directly on arrays that already passed these checks.
"""
import logging
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from .exceptions import NumericError, ParameterError, ShapeError
from .types import Blocks, ElementwiseOp, Matrix

logger = logging.getLogger(__name__)


class Rng:
    """Seeded random stream.

    Backed by numpy's PCG64 bit generator, whose output sequence for a given
    seed is fixed by its published algorithm and identical on every platform.
    Child streams are derived through ``SeedSequence`` so that, for example,
    epoch ``e`` of a training run always shuffles the same way regardless of
    how many draws earlier epochs made.
    """

    def __init__(self, seed: int, key: Sequence[int] = ()):
        if seed < 0:
            raise ParameterError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._sequence = np.random.SeedSequence([self.seed, *self.key])
        self.generator = np.random.Generator(np.random.PCG64(self._sequence))

    def child(self, *key: int) -> "Rng":
        return Rng(self.seed, self.key + tuple(key))

    def uniform(self, low: float, high: float, shape) -> Matrix:
        return self.generator.uniform(low, high, size=shape)

    def normal(self, shape, scale: float = 1.0) -> Matrix:
        return self.generator.normal(0.0, scale, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def integers(self, high: int) -> int:
        return int(self.generator.integers(0, high))

    def choice(self, n: int, size: int) -> np.ndarray:
        """``size`` distinct indices from ``range(n)``."""
        return self.generator.choice(n, size=size, replace=False)


def assert_finite(value, what: str = "value") -> None:
    if not np.all(np.isfinite(value)):
        raise NumericError(f"non-finite entries in {what}")


def sigmoid(x):
    # exp(-|x|) never overflows
    x = np.asarray(x, dtype=np.float64)
    z = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z))


def matmul(a: Matrix, b: Matrix) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul dimension mismatch: {a.shape} x {b.shape}")
    out = a @ b
    assert_finite(out, "matmul output")
    return out


def elementwise(op: ElementwiseOp, a, b=None) -> Matrix:
    a = np.asarray(a, dtype=np.float64)
    if op == "sigmoid":
        out = sigmoid(a)
    elif op == "tanh":
        out = np.tanh(a)
    elif op in ("mul", "add"):
        if b is None:
            raise ParameterError(f"elementwise '{op}' needs two operands")
        b = np.asarray(b, dtype=np.float64)
        if a.shape != b.shape:
            raise ShapeError(f"elementwise '{op}' shape mismatch: {a.shape} vs {b.shape}")
        out = a * b if op == "mul" else a + b
    else:
        raise ParameterError(f"unknown elementwise op '{op}'")
    assert_finite(out, f"{op} output")
    return out


def finite_diff_grad(loss_fn: Callable[[Matrix], float], params: Matrix, h: float = 1e-5) -> Matrix:
    """Central-difference gradient of ``loss_fn`` at ``params``.

    ``params`` is perturbed in place one coordinate at a time and restored
    afterwards, so it may be a live parameter block of a model whose loss
    ``loss_fn`` evaluates.
    """
    if h <= 0:
        raise ParameterError(f"step h must be positive, got {h}")
    grad = np.zeros(params.shape, dtype=np.float64)
    for idx in np.ndindex(params.shape):
        original = params[idx]
        params[idx] = original + h
        f_plus = float(loss_fn(params))
        params[idx] = original - h
        f_minus = float(loss_fn(params))
        params[idx] = original
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise NumericError(f"non-finite loss while perturbing coordinate {idx}")
        grad[idx] = (f_plus - f_minus) / (2.0 * h)
    return grad


def relative_error(analytic: Matrix, numeric: Matrix, floor: float = 1e-6) -> float:
    """Largest entrywise ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.shape != numeric.shape:
        raise ShapeError(f"cannot compare {analytic.shape} with {numeric.shape}")
    if analytic.size == 0:
        return 0.0
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / scale))


def glorot_uniform(rng: Rng, rows: int, cols: int) -> Matrix:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, (rows, cols))


def global_norm(grads: Iterable[Matrix]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads)))


def clip_by_global_norm(grads: Blocks, max_norm: Optional[float]) -> float:
    """Rescale ``grads`` in place so their joint L2 norm is at most ``max_norm``.

    Returns the norm before clipping. ``None`` or a non-positive bound disables clipping.
    """
    norm = global_norm(grads.values())
    if max_norm is not None and max_norm > 0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads.values():
            g *= scale
        logger.debug(f"Clipped gradient norm {norm:.4f} -> {max_norm}")
    return norm


def zeros_like_blocks(blocks: Blocks) -> Blocks:
    return {name: np.zeros_like(value) for name, value in blocks.items()}
