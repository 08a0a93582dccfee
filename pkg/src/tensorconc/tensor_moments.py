"""Centered empirical moment functional F(v) = mean_i g(<X_i, v>) - E g(<X, v>).

``g(x) = x**p`` (signed mode, integer p) or ``|x|**p`` (abs mode, real p >= 2).
The p-th moment tensor is never formed: every query costs O(N d) from the
sample matrix. ``dense_moment_tensor`` exists only as a small-size cross-check.
"""

from __future__ import annotations

import csv
import functools
import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .distributions import (DistModel, SampleBatch, SeedTrace, SpectrumSpec,
                            as_eigenvalues, draw_isotropic)

SIGNED = "signed_power"
ABS = "abs_power"
GAUSSIAN_CLOSED_FORM = "gaussian_closed_form"
MC_ORACLE = "mc_oracle"

# Rows x columns per chunk when evaluating M oracle draws against many directions.
_CHUNK_ELEMS = 4_000_000
# Oracle draws above this many entries are regenerated per query instead of stored.
_MAX_STORED_ELEMS = 50_000_000
_ORACLE_CHUNK_ROWS = 100_000


def double_factorial(n: int) -> int:
    return math.prod(range(n, 0, -2)) if n > 0 else 1


def is_integer(p: float) -> bool:
    return float(p) == int(p)


def check_mode(p: float, mode: str) -> None:
    if mode not in (SIGNED, ABS):
        raise ValueError(f"unknown mode {mode!r}")
    if not p >= 2:
        raise ValueError(f"moment order must be >= 2, got {p}")
    if mode == SIGNED and not is_integer(p):
        raise ValueError("signed_power mode needs an integer p; use abs_power")


def int_power(s: np.ndarray, k: int) -> np.ndarray:
    """``s**k`` by repeated squaring; libm pow is ~40x slower on arrays."""
    if k == 0:
        return np.ones_like(s)
    out = None
    base = s
    while True:
        if k & 1:
            out = base.copy() if out is None else out * base
        k >>= 1
        if not k:
            return out
        base = base * base


def power(s: np.ndarray, p: float, mode: str) -> np.ndarray:
    if mode == SIGNED:
        return int_power(s, int(p))
    if is_integer(p):
        return int_power(np.abs(s), int(p))
    return np.abs(s) ** p


def power_deriv(s: np.ndarray, p: float, mode: str) -> np.ndarray:
    """d/ds of ``power(s, p, mode)``; continuous everywhere since p >= 2."""
    if mode == SIGNED:
        return p * int_power(s, int(p) - 1)
    if is_integer(p):
        return p * int_power(np.abs(s), int(p) - 1) * np.sign(s)
    return p * np.abs(s) ** (p - 1) * np.sign(s)


def _as_columns(v) -> tuple[np.ndarray, bool]:
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return v[:, None], True
    if v.ndim != 2:
        raise ValueError("directions must be a vector or a d x K matrix")
    return v, False


@dataclass(eq=False)
class PopulationOracle:
    """Source of ``E g(<X, v>)`` for ``X = Q diag(sqrt(lambda)) Z``.

    ``gaussian_closed_form`` uses ``(p-1)!! (v' Sigma v)^{p/2}`` for even p
    and 0 for odd p. ``mc_oracle`` averages over ``M`` frozen draws seeded by
    ``oracle_seed``; odd signed moments are exactly 0 for every supported
    (symmetric) model and are never estimated.
    """

    kind: str
    spectrum: SpectrumSpec | np.ndarray
    model: DistModel | str = DistModel.GAUSSIAN
    M: int = 1_000_000
    oracle_seed: int = 20250101
    rotation: np.ndarray | None = None
    eigenvalues: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.kind not in (GAUSSIAN_CLOSED_FORM, MC_ORACLE):
            raise ValueError(f"unknown population oracle kind {self.kind!r}")
        self.model = DistModel.parse(self.model)
        if self.kind == GAUSSIAN_CLOSED_FORM and self.model is not DistModel.GAUSSIAN:
            raise ValueError("closed-form population moments exist only for the gaussian model")
        if self.kind == MC_ORACLE and self.M < 2:
            raise ValueError("mc_oracle needs M >= 2")
        self.eigenvalues = as_eigenvalues(self.spectrum)
        if self.rotation is not None:
            self.rotation = np.asarray(self.rotation, dtype=float)

    @property
    def dim(self) -> int:
        return self.eigenvalues.size

    def covariance(self) -> np.ndarray:
        c = np.diag(self.eigenvalues)
        if self.rotation is not None:
            c = self.rotation @ c @ self.rotation.T
        return c

    def _to_eigenbasis(self, V: np.ndarray) -> np.ndarray:
        return V if self.rotation is None else self.rotation.T @ V

    def _from_eigenbasis(self, W: np.ndarray) -> np.ndarray:
        return W if self.rotation is None else self.rotation @ W

    # -- frozen Monte Carlo draws ------------------------------------------------

    def _chunk(self, j: int, rows: int) -> np.ndarray:
        rng = SeedTrace(self.oracle_seed, j, "population-oracle").rng()
        z = draw_isotropic(self.model, self.dim, rows, rng)
        return z * np.sqrt(self.eigenvalues)

    def _chunk_sizes(self):
        full, rest = divmod(self.M, _ORACLE_CHUNK_ROWS)
        sizes = [_ORACLE_CHUNK_ROWS] * full + ([rest] if rest else [])
        return list(enumerate(sizes))

    @functools.cached_property
    def _stored_draws(self) -> np.ndarray | None:
        if self.M * self.dim > _MAX_STORED_ELEMS:
            return None
        return np.concatenate([self._chunk(j, m) for j, m in self._chunk_sizes()])

    def draws(self):
        """Yield the oracle draws (eigenbasis coordinates) block by block."""
        stored = self._stored_draws
        if stored is not None:
            yield stored
            return
        for j, m in self._chunk_sizes():
            yield self._chunk(j, m)

    def _blocks(self, K: int):
        step = max(1, _CHUNK_ELEMS // max(K, 1))
        for y in self.draws():
            for a in range(0, y.shape[0], step):
                yield y[a:a + step]

    @functools.cached_property
    def _mc_second_moment(self) -> np.ndarray:
        acc = np.zeros((self.dim, self.dim))
        for y in self.draws():
            acc += y.T @ y
        return acc / self.M

    # -- queries -------------------------------------------------------------

    def second_moment(self) -> np.ndarray:
        if self.kind == GAUSSIAN_CLOSED_FORM:
            return self.covariance()
        m = self._mc_second_moment
        if self.rotation is not None:
            m = self.rotation @ m @ self.rotation.T
        return m

    def moment(self, V, p: float, mode: str = SIGNED) -> tuple[np.ndarray, np.ndarray]:
        """Population moments and their standard errors at the columns of ``V``."""
        check_mode(p, mode)
        V, single = _as_columns(V)
        W = self._to_eigenbasis(V)
        K = W.shape[1]
        if self.kind == GAUSSIAN_CLOSED_FORM:
            if mode != SIGNED:
                raise ValueError("closed-form population moments need signed_power mode")
            vals = _gaussian_moment(W, self.eigenvalues, int(p))
            se = np.zeros(K)
        elif mode == SIGNED and int(p) % 2 == 1:
            vals, se = np.zeros(K), np.zeros(K)
        else:
            s1 = np.zeros(K)
            s2 = np.zeros(K)
            for y in self._blocks(K):
                g = power(y @ W, p, mode)
                s1 += g.sum(axis=0)
                s2 += (g * g).sum(axis=0)
            vals = s1 / self.M
            var = np.maximum(s2 / self.M - vals ** 2, 0.0) * self.M / (self.M - 1)
            se = np.sqrt(var / self.M)
        return (vals[0], se[0]) if single else (vals, se)

    def moment_grad(self, V, p: float, mode: str = SIGNED) -> np.ndarray:
        check_mode(p, mode)
        V, single = _as_columns(V)
        W = self._to_eigenbasis(V)
        if self.kind == GAUSSIAN_CLOSED_FORM:
            if mode != SIGNED:
                raise ValueError("closed-form population moments need signed_power mode")
            G = _gaussian_moment_grad(W, self.eigenvalues, int(p))
        elif mode == SIGNED and int(p) % 2 == 1:
            G = np.zeros_like(W)
        else:
            G = np.zeros_like(W)
            for y in self._blocks(W.shape[1]):
                G += y.T @ power_deriv(y @ W, p, mode)
            G /= self.M
        G = self._from_eigenbasis(G)
        return G[:, 0] if single else G


def _gaussian_moment(W: np.ndarray, lam: np.ndarray, p: int) -> np.ndarray:
    if p % 2:
        return np.zeros(W.shape[1])
    q = lam @ (W * W)
    return double_factorial(p - 1) * q ** (p // 2)


def _gaussian_moment_grad(W: np.ndarray, lam: np.ndarray, p: int) -> np.ndarray:
    if p % 2:
        return np.zeros_like(W)
    q = lam @ (W * W)
    return p * double_factorial(p - 1) * q ** (p // 2 - 1) * (lam[:, None] * W)


def population_moment(oracle: PopulationOracle, v, p: float, mode: str = SIGNED) -> tuple[float, float]:
    """Return ``(E g(<X, v>), standard error)``; the error is 0 for closed forms."""
    val, se = oracle.moment(np.asarray(v, dtype=float), p, mode)
    return float(val), float(se)


@dataclass(eq=False)
class MomentFunctional:
    """Immutable evaluator of the centered moment ``F(v)`` for one sample batch."""

    batch: SampleBatch
    p: float
    mode: str
    population: PopulationOracle

    def __post_init__(self):
        if not isinstance(self.batch, SampleBatch):
            self.batch = SampleBatch(self.batch)
        check_mode(self.p, self.mode)
        if self.population.kind == GAUSSIAN_CLOSED_FORM and self.mode != SIGNED:
            raise ValueError("gaussian_closed_form population requires signed_power mode")
        if self.population.dim != self.batch.dim:
            raise ValueError(f"population dimension {self.population.dim} != batch dimension {self.batch.dim}")

    @property
    def dim(self) -> int:
        return self.batch.dim

    def _check(self, V: np.ndarray) -> None:
        if V.shape[0] != self.dim:
            raise ValueError(f"direction has dimension {V.shape[0]}, expected {self.dim}")

    def empirical(self, V) -> np.ndarray | float:
        V, single = _as_columns(V)
        self._check(V)
        out = power(self.batch.rows @ V, self.p, self.mode).mean(axis=0)
        return float(out[0]) if single else out

    def empirical_grad(self, V) -> np.ndarray:
        V, single = _as_columns(V)
        self._check(V)
        X = self.batch.rows
        G = X.T @ power_deriv(X @ V, self.p, self.mode) / X.shape[0]
        return G[:, 0] if single else G

    def value(self, V):
        V, single = _as_columns(V)
        self._check(V)
        vals = self.empirical(V) - self.population.moment(V, self.p, self.mode)[0]
        return float(vals[0]) if single else vals

    def value_and_grad(self, V) -> tuple[np.ndarray, np.ndarray]:
        V, single = _as_columns(V)
        self._check(V)
        X = self.batch.rows
        S = X @ V
        emp = power(S, self.p, self.mode).mean(axis=0)
        G = X.T @ power_deriv(S, self.p, self.mode) / X.shape[0]
        pop = self.population.moment(V, self.p, self.mode)[0]
        G = G - self.population.moment_grad(V, self.p, self.mode)
        vals = emp - pop
        return (vals[0], G[:, 0]) if single else (vals, G)

    def second_moment_error(self) -> np.ndarray:
        """``(1/N) X'X - Sigma_pop``; the p = 2 slice of this batch."""
        X = self.batch.rows
        return X.T @ X / X.shape[0] - self.population.second_moment()


def empirical_moment(f: MomentFunctional, v) -> float:
    return f.empirical(np.asarray(v, dtype=float))


def centered_value(f: MomentFunctional, v) -> float:
    return f.value(np.asarray(v, dtype=float))


def centered_gradient(f: MomentFunctional, v) -> np.ndarray:
    return f.value_and_grad(np.asarray(v, dtype=float))[1]


def dense_moment_tensor(batch: SampleBatch | np.ndarray, p: int) -> np.ndarray:
    """Materialize ``(1/N) sum_i X_i^{(x)p}``; only for d <= 6 and p <= 4."""
    X = batch.rows if isinstance(batch, SampleBatch) else np.asarray(batch, dtype=float)
    d = X.shape[1]
    if d > 6 or not 1 <= p <= 4 or not is_integer(p):
        raise ValueError("dense moment tensors are limited to d <= 6 and integer p <= 4")
    letters = "abcd"[:p]
    spec = ",".join(f"n{c}" for c in letters) + "->" + letters
    return np.einsum(spec, *([X] * p)) / X.shape[0]


def contract(tensor: np.ndarray, v) -> float:
    """Evaluate ``<tensor, v^{(x)p}>``."""
    out = tensor
    v = np.asarray(v, dtype=float)
    for _ in range(tensor.ndim):
        out = out @ v
    return float(out)


def dump_tensor_csv(tensor: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"i{k + 1}" for k in range(tensor.ndim)] + ["value"])
        for idx in itertools.product(*(range(n) for n in tensor.shape)):
            w.writerow([*idx, repr(float(tensor[idx]))])
