"""Randomized compression operators with E[Phi^T Phi] = I.

Three families are provided:

* ``gaussian`` -- dense i.i.d. N(0, 1/m) entries;
* ``ros`` -- randomized orthogonal system: sign flips, a normalized
  Walsh-Hadamard transform on the zero-padded power-of-two length, and
  uniform row subsampling without replacement, scaled so that
  E[Phi^T Phi] = I on the original coordinates;
* ``count`` -- count sketch, one random +/-1 entry per column, applied in
  O(nnz) through a sparse matrix.

Randomness is drawn from a counter-based Philox generator keyed by
``(seed, kind)``; every operator realizes its randomness at construction,
so applying it is deterministic and safe to parallelize over column blocks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sparse

from .exceptions import DimensionError

KINDS = ("gaussian", "ros", "count")
_KIND_STREAM = {"gaussian": 0, "ros": 1, "count": 2}


@dataclass(frozen=True)
class SketchSpec:
    """Declarative description of a compression operator.

    Equal specs always realize bit-identical operators.
    """

    kind: str
    m: int
    M: int
    seed: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown sketch kind {self.kind!r}; expected one of {KINDS}")
        if not (1 <= self.m <= self.M):
            raise ValueError(f"need 1 <= m <= M, got m={self.m}, M={self.M}")
        if self.seed < 0:
            raise ValueError("seed must be a nonnegative integer")

    def to_json(self) -> str:
        return json.dumps({"kind": self.kind, "m": self.m, "M": self.M, "seed": self.seed})

    @classmethod
    def from_json(cls, text: str) -> "SketchSpec":
        data = json.loads(text)
        return cls(kind=data["kind"], m=int(data["m"]), M=int(data["M"]), seed=int(data["seed"]))


def _spec_rng(spec: SketchSpec) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(spec.seed), spawn_key=(_KIND_STREAM[spec.kind],))
    return np.random.Generator(np.random.Philox(seq))


def next_pow_two(n: int) -> int:
    if n < 1:
        raise ValueError("n must be positive")
    return 1 << (n - 1).bit_length()


def fwht(x: np.ndarray) -> np.ndarray:
    """Unnormalized Walsh-Hadamard transform along axis 0.

    The leading dimension must be a power of two. ``fwht(fwht(x)) == n * x``.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if n & (n - 1):
        raise DimensionError(f"length {n} is not a power of two")
    flat = x.ndim == 1
    a = x.reshape(n, -1).copy()
    k = a.shape[1]
    h = 1
    while h < n:
        a = a.reshape(n // (2 * h), 2, h, k)
        low = a[:, 0] + a[:, 1]
        high = a[:, 0] - a[:, 1]
        a = np.stack((low, high), axis=1).reshape(n, k)
        h *= 2
    return a.reshape(n) if flat else a


class SketchOperator:
    """Base class: a realized compression matrix applied as a linear map."""

    def __init__(self, spec: SketchSpec):
        self.spec = spec

    def _check_rows(self, X, rows, name):
        X = np.asarray(X, dtype=float)
        if X.ndim not in (1, 2):
            raise DimensionError(f"{name} must be a vector or matrix")
        if X.shape[0] != rows:
            raise DimensionError(f"{name} has {X.shape[0]} rows, operator expects {rows}")
        return X

    def apply(self, X):
        raise NotImplementedError

    def apply_transpose(self, Y):
        raise NotImplementedError

    def materialize(self) -> np.ndarray:
        """Dense m x M matrix of the operator (testing / small sizes only)."""
        return self.apply(np.eye(self.spec.M))


class GaussianSketch(SketchOperator):
    def __init__(self, spec: SketchSpec, matrix: np.ndarray):
        super().__init__(spec)
        self.matrix = matrix

    @classmethod
    def from_spec(cls, spec: SketchSpec) -> "GaussianSketch":
        rng = _spec_rng(spec)
        matrix = rng.standard_normal((spec.m, spec.M)) / math.sqrt(spec.m)
        return cls(spec, matrix)

    def apply(self, X):
        X = self._check_rows(X, self.spec.M, "input")
        return self.matrix @ X

    def apply_transpose(self, Y):
        Y = self._check_rows(Y, self.spec.m, "input")
        return self.matrix.T @ Y


class RosSketch(SketchOperator):
    """Sign flips + normalized Walsh-Hadamard transform + row subsampling.

    Inputs are zero-padded to the next power of two; the combined scaling
    1/sqrt(m) makes E[Phi^T Phi] = I on the unpadded coordinates, and the
    full-sampling case m = M = M_pad gives an exactly orthogonal operator.
    """

    def __init__(self, spec: SketchSpec, signs: np.ndarray, rows: np.ndarray):
        super().__init__(spec)
        self.signs = signs  # +/-1 per input coordinate, length M
        self.rows = rows  # sampled transform rows, length m, drawn from M_pad
        self.m_pad = next_pow_two(spec.M)

    @classmethod
    def from_spec(cls, spec: SketchSpec) -> "RosSketch":
        rng = _spec_rng(spec)
        m_pad = next_pow_two(spec.M)
        signs = rng.integers(0, 2, size=spec.M) * 2.0 - 1.0
        rows = rng.choice(m_pad, size=spec.m, replace=False)
        return cls(spec, signs, rows)

    def apply(self, X):
        X = self._check_rows(X, self.spec.M, "input")
        flat = X.ndim == 1
        Xm = X.reshape(self.spec.M, -1)
        padded = np.zeros((self.m_pad, Xm.shape[1]))
        padded[: self.spec.M] = self.signs[:, None] * Xm
        out = fwht(padded)[self.rows] / math.sqrt(self.spec.m)
        return out.reshape(-1) if flat else out

    def apply_transpose(self, Y):
        Y = self._check_rows(Y, self.spec.m, "input")
        flat = Y.ndim == 1
        Ym = Y.reshape(self.spec.m, -1)
        scattered = np.zeros((self.m_pad, Ym.shape[1]))
        scattered[self.rows] = Ym
        out = self.signs[:, None] * fwht(scattered)[: self.spec.M] / math.sqrt(self.spec.m)
        return out.reshape(-1) if flat else out


class CountSketch(SketchOperator):
    """One +/-1 entry per column; applies in time proportional to nnz."""

    def __init__(self, spec: SketchSpec, rows: np.ndarray, signs: np.ndarray):
        super().__init__(spec)
        self.rows = rows
        self.signs = signs
        self._matrix = sparse.csr_matrix(
            (signs.astype(float), (rows, np.arange(spec.M))), shape=(spec.m, spec.M)
        )

    @classmethod
    def from_spec(cls, spec: SketchSpec) -> "CountSketch":
        rng = _spec_rng(spec)
        rows = rng.integers(0, spec.m, size=spec.M)
        signs = rng.integers(0, 2, size=spec.M) * 2.0 - 1.0
        return cls(spec, rows, signs)

    def apply(self, X):
        X = self._check_rows(X, self.spec.M, "input")
        return self._matrix @ X

    def apply_transpose(self, Y):
        Y = self._check_rows(Y, self.spec.m, "input")
        return self._matrix.T @ Y


_FACTORIES = {"gaussian": GaussianSketch, "ros": RosSketch, "count": CountSketch}


def make_sketch(spec: SketchSpec) -> SketchOperator:
    """Realize the operator described by ``spec``."""
    return _FACTORIES[spec.kind].from_spec(spec)


def identity_sketch(M: int) -> CountSketch:
    """The exact identity as a (degenerate) count-sketch realization."""
    spec = SketchSpec(kind="count", m=M, M=M, seed=0)
    return CountSketch(spec, rows=np.arange(M), signs=np.ones(M))


def apply_sketch(op: SketchOperator, X):
    """Compute ``Phi @ X``; linear in X and deterministic given the spec."""
    return op.apply(X)


def sketch_flops_estimate(spec: SketchSpec, N: int, nnz: int | None = None) -> float:
    """Rough flop count of applying the operator to an M x N matrix."""
    if spec.kind == "gaussian":
        return float(spec.m) * spec.M * N
    if spec.kind == "ros":
        m_pad = next_pow_two(spec.M)
        return float(m_pad) * math.log2(m_pad) * N
    if nnz is None:
        raise ValueError("count sketch estimate needs the nonzero count")
    return float(nnz)
