"""Dense kernels, activations, initializers and the seeded RNG contract.

All learning code draws randomness from :func:`make_rng`, which wraps numpy's
PCG64 bit generator. PCG64 output for a given seed is fixed across platforms
and numpy releases, unlike the legacy global ``np.random`` state.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

DEFAULT_DTYPE = np.float64


class NumericalError(ArithmeticError):
    """Raised when a non-finite value shows up where finite data is required."""


def make_rng(seed: int) -> np.random.Generator:
    """Return a PCG64 generator for ``seed`` (taken modulo 2**64)."""
    return np.random.Generator(np.random.PCG64(int(seed) % 2**64))


def child_seed(seed: int, component: str) -> int:
    """Derive a 64-bit seed for a named component from a parent seed.

    The derivation is ``blake2b(f"{seed}:{component}")`` truncated to 8 bytes,
    so every subsystem gets its own stream and re-running one of them does not
    shift the others.
    """
    digest = hashlib.blake2b(f"{int(seed)}:{component}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def child_rng(seed: int, component: str) -> np.random.Generator:
    return make_rng(child_seed(seed, component))


def check_finite(x: np.ndarray, what: str = "array") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericalError(f"non-finite values in {what}")
    return x


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ValueError(f"cannot multiply shapes {a.shape} and {b.shape}")
    return a @ b


def sigmoid(x):
    """Logistic function, evaluated without overflow for any finite input.

    Uses ``1/(1+e^-x)`` for ``x >= 0`` and ``e^x/(1+e^x)`` otherwise.
    """
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(DEFAULT_DTYPE)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def tanh(x):
    return np.tanh(x)


def relu(x):
    return np.maximum(x, 0.0)


def dropout_mask(shape, rate: float, rng: np.random.Generator, dtype=DEFAULT_DTYPE) -> np.ndarray:
    """Inverted-dropout mask: 0 with probability ``rate``, else ``1/(1-rate)``."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must be in [0, 1), got {rate}")
    if rate == 0.0:
        return np.ones(shape, dtype=dtype)
    keep = rng.random(shape) >= rate
    return keep.astype(dtype) / (1.0 - rate)


@dataclass(frozen=True)
class Initializer:
    """Weight initialization scheme.

    ``kind`` is one of ``"uniform_scaled"`` (Glorot uniform), ``"identity_scaled"``
    (``scale * I``, square targets only) or ``"zeros"``.
    """

    kind: str = "uniform_scaled"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform_scaled", "identity_scaled", "zeros"):
            raise ValueError(f"unknown initializer kind {self.kind!r}")
        if self.kind == "identity_scaled" and not self.scale > 0:
            raise ValueError(f"identity scale must be > 0, got {self.scale}")


GLOROT = Initializer("uniform_scaled")
ZEROS = Initializer("zeros")


def identity(scale: float = 1.0) -> Initializer:
    return Initializer("identity_scaled", scale)


def init_matrix(rows: int, cols: int, initializer: Initializer, rng: np.random.Generator | None = None,
                dtype=DEFAULT_DTYPE) -> np.ndarray:
    if initializer.kind == "zeros":
        return np.zeros((rows, cols), dtype=dtype)
    if initializer.kind == "identity_scaled":
        if rows != cols:
            raise ValueError(f"identity initializer needs a square matrix, got {rows}x{cols}")
        return initializer.scale * np.eye(rows, dtype=dtype)
    if rng is None:
        raise ValueError("uniform_scaled initialization needs an rng")
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols)).astype(dtype)
