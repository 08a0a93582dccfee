"""Covariance spectra, seeded subgaussian samplers and an empirical psi_2 norm.

Covariances are diagonal: every quantity computed downstream is invariant
under orthogonal conjugation, so the spectrum carries all the information.
An optional ``rotation`` argument exists for regression tests.
"""

from __future__ import annotations

import enum
import math
import zlib
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq
from scipy.special import logsumexp


class DistModel(str, enum.Enum):
    """Mean-zero isotropic subgaussian laws on R^d."""

    GAUSSIAN = "gaussian"
    RADEMACHER = "rademacher"
    UNIFORM_SPHERE_SCALED = "uniform_sphere_scaled"

    @classmethod
    def parse(cls, value: "str | DistModel") -> "DistModel":
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip())
        except ValueError:
            known = ", ".join(m.value for m in cls)
            raise ValueError(f"unknown model kind {value!r} (known: {known})") from None


SPECTRUM_KINDS = ("flat_top", "poly_decay", "exp_decay", "explicit")


@dataclass(frozen=True)
class SpectrumSpec:
    """Eigenvalue profile of a diagonal covariance.

    ``param`` is ``r`` for flat_top, ``alpha`` for poly_decay, ``beta`` for
    exp_decay and the tuple of values for explicit.
    """

    kind: str
    dim: int
    param: object = None

    @classmethod
    def flat_top(cls, r: int, dim: int) -> "SpectrumSpec":
        return cls("flat_top", dim, r)

    @classmethod
    def identity(cls, dim: int) -> "SpectrumSpec":
        return cls("flat_top", dim, dim)

    @classmethod
    def poly_decay(cls, alpha: float, dim: int) -> "SpectrumSpec":
        return cls("poly_decay", dim, float(alpha))

    @classmethod
    def exp_decay(cls, beta: float, dim: int) -> "SpectrumSpec":
        return cls("exp_decay", dim, float(beta))

    @classmethod
    def explicit(cls, values, dim: int | None = None) -> "SpectrumSpec":
        values = tuple(float(x) for x in values)
        return cls("explicit", len(values) if dim is None else dim, values)

    @classmethod
    def parse(cls, text: str, dim: int | None = None) -> "SpectrumSpec":
        """Parse ``kind:param`` strings such as ``flat_top:3`` or ``explicit:2,1``.

        ``identity`` is accepted as shorthand for ``flat_top:dim``.
        """
        text = text.strip()
        kind, _, arg = text.partition(":")
        kind = kind.strip()
        if kind == "identity":
            if dim is None:
                raise ValueError("identity spectrum needs a dimension")
            return cls.identity(dim)
        if kind == "explicit":
            values = [float(x) for x in arg.split(",") if x.strip()]
            return cls.explicit(values, dim)
        if dim is None:
            raise ValueError(f"spectrum {text!r} needs a dimension")
        if kind == "flat_top":
            r = float(arg)
            if r != int(r):
                raise ValueError(f"flat_top rank must be an integer, got {arg!r}")
            return cls.flat_top(int(r), dim)
        if kind == "poly_decay":
            return cls.poly_decay(float(arg), dim)
        if kind == "exp_decay":
            return cls.exp_decay(float(arg), dim)
        raise ValueError(f"unknown spectrum kind {kind!r}")

    @property
    def label(self) -> str:
        if self.kind == "explicit":
            return "explicit:" + ",".join(repr(x) for x in self.param)
        return f"{self.kind}:{self.param!r}"


def materialize_spectrum(spec: SpectrumSpec) -> np.ndarray:
    """Return the eigenvalues of ``spec`` as a nonincreasing array of length d."""
    d = spec.dim
    if not isinstance(d, (int, np.integer)) or d < 1:
        raise ValueError(f"dimension must be a positive integer, got {d!r}")
    if spec.kind == "flat_top":
        r = spec.param
        if not isinstance(r, (int, np.integer)) or r < 1:
            raise ValueError(f"flat_top rank must be a positive integer, got {r!r}")
        if r > d:
            raise ValueError(f"flat_top rank {r} exceeds dimension {d}")
        lam = np.zeros(d)
        lam[:r] = 1.0
    elif spec.kind == "poly_decay":
        if not spec.param > 0:
            raise ValueError("poly_decay exponent must be positive")
        lam = np.arange(1, d + 1, dtype=float) ** (-spec.param)
    elif spec.kind == "exp_decay":
        if not spec.param > 0:
            raise ValueError("exp_decay rate must be positive")
        lam = np.exp(-spec.param * np.arange(d, dtype=float))
    elif spec.kind == "explicit":
        lam = np.asarray(spec.param, dtype=float)
        if lam.shape != (d,):
            raise ValueError(f"explicit spectrum has {lam.size} values, expected {d}")
        if np.any(~np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("explicit eigenvalues must be finite and nonnegative")
        lam = np.sort(lam)[::-1].copy()
        if lam[0] <= 0:
            raise ValueError("spectrum is identically zero")
    else:
        raise ValueError(f"unknown spectrum kind {spec.kind!r}")
    return lam


@dataclass(frozen=True)
class SeedTrace:
    """Identifies one random stream: ``(master_seed, trial_index, purpose)``.

    Streams for different trials or purposes are statistically independent and
    do not depend on the order in which they are requested.
    """

    master_seed: int
    trial_index: int = 0
    purpose: str = "sample"

    def rng(self) -> np.random.Generator:
        tag = zlib.crc32(self.purpose.encode("utf-8"))
        ss = np.random.SeedSequence([int(self.master_seed), int(self.trial_index), tag])
        return np.random.default_rng(ss)

    def child(self, purpose: str) -> "SeedTrace":
        return SeedTrace(self.master_seed, self.trial_index, f"{self.purpose}/{purpose}")


@dataclass(frozen=True)
class SampleBatch:
    """N x d matrix of i.i.d. rows plus the seed that produced it."""

    rows: np.ndarray
    seed_trace: SeedTrace | None = field(default=None, compare=False)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2:
            raise ValueError("a sample batch must be two-dimensional")
        rows = rows.copy() if rows.flags.writeable else rows
        rows.flags.writeable = False
        object.__setattr__(self, "rows", rows)

    @property
    def n(self) -> int:
        return self.rows.shape[0]

    @property
    def dim(self) -> int:
        return self.rows.shape[1]


def draw_isotropic(model: DistModel | str, d: int, N: int, rng: np.random.Generator) -> np.ndarray:
    """Raw N x d isotropic draws from ``rng``; no seed bookkeeping."""
    model = DistModel.parse(model)
    if model is DistModel.GAUSSIAN:
        return rng.standard_normal((N, d))
    if model is DistModel.RADEMACHER:
        return rng.integers(0, 2, size=(N, d)).astype(float) * 2.0 - 1.0
    g = rng.standard_normal((N, d))
    norms = np.linalg.norm(g, axis=1, keepdims=True)
    # A zero Gaussian row has probability zero; guard anyway.
    norms[norms == 0] = 1.0
    return g * (math.sqrt(d) / norms)


def sample_isotropic(model: DistModel | str, d: int, N: int, seed_trace: SeedTrace) -> SampleBatch:
    if N < 1 or d < 1:
        raise ValueError(f"need N >= 1 and d >= 1, got N={N}, d={d}")
    rows = draw_isotropic(model, d, N, seed_trace.rng())
    return SampleBatch(rows, seed_trace)


def sample_anisotropic(model: DistModel | str, spectrum: SpectrumSpec | np.ndarray, N: int,
                       seed_trace: SeedTrace, rotation: np.ndarray | None = None) -> SampleBatch:
    """Rows ``X_i = Sigma^{1/2} Z_i`` with ``Z_i`` the isotropic batch of the same seed.

    With ``rotation`` = Q the covariance is ``Q diag(lambda) Q^T``.
    """
    lam = as_eigenvalues(spectrum)
    z = sample_isotropic(model, lam.size, N, seed_trace).rows
    x = z * np.sqrt(lam)
    if rotation is not None:
        x = x @ np.asarray(rotation, dtype=float).T
    return SampleBatch(x, seed_trace)


def as_eigenvalues(spectrum: SpectrumSpec | np.ndarray) -> np.ndarray:
    if isinstance(spectrum, SpectrumSpec):
        return materialize_spectrum(spectrum)
    lam = np.asarray(spectrum, dtype=float)
    if lam.ndim != 1 or lam.size == 0:
        raise ValueError("eigenvalues must be a nonempty 1-d array")
    return lam


def estimate_psi2(samples, tol: float = 1e-6) -> float:
    """Empirical psi_2 norm ``inf{t : mean(exp(Z^2/t^2)) <= 2}``.

    The root is bracketed by ``[max|Z| / sqrt(ln 2n), 10 max|Z|]``: at the
    lower end the largest sample alone pushes the mean to 2, at the upper end
    every term is below ``e^0.01``. The exponential is evaluated through
    ``logsumexp`` so it never overflows. ``tol`` is the relative tolerance
    on ``t``.
    """
    z = np.asarray(samples, dtype=float).ravel()
    if z.size < 100:
        raise ValueError(f"estimate_psi2 needs at least 100 samples, got {z.size}")
    if not np.all(np.isfinite(z)):
        raise ValueError("samples must be finite")
    zmax = float(np.max(np.abs(z)))
    if zmax == 0.0:
        return 0.0
    n = z.size
    sq = (z / zmax) ** 2
    log_target = math.log(2.0 * n)

    def excess(s: float) -> float:
        # s = t / max|Z|
        return float(logsumexp(sq / (s * s))) - log_target

    lo = 1.0 / math.sqrt(math.log(2.0 * n))
    hi = 10.0
    f_lo, f_hi = excess(lo), excess(hi)
    if f_lo < 0 or f_hi > 0:
        raise RuntimeError("psi_2 bracket does not contain a root")
    if f_lo == 0:
        return lo * zmax
    s = brentq(excess, lo, hi, xtol=1e-300, rtol=min(tol, 1e-6) * 1e-3, maxiter=500)
    return s * zmax


# psi_2 norms of the unit-variance scalar laws, used to normalize 1-d inputs.
PSI2_STANDARD_GAUSSIAN = math.sqrt(8.0 / 3.0)
PSI2_RADEMACHER = 1.0 / math.sqrt(math.log(2.0))
