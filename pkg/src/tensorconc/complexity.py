"""Effective rank, radius, Gaussian complexity and L^p marginal norms."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln

from .distributions import (DistModel, SeedTrace, SpectrumSpec, as_eigenvalues,
                            draw_isotropic)
from .sphere_norm import ELLIPSOID, POINT, SPHERE, Domain
from .tensor_moments import ABS, power, power_deriv

GAMMA_TRIALS = 100_000
LP_TRIALS = 1_000_000
_BLOCK = 50_000


def effective_rank(spectrum: SpectrumSpec | np.ndarray) -> float:
    lam = as_eigenvalues(spectrum)
    top = float(lam.max())
    if top <= 0:
        raise ValueError("effective rank of an all-zero spectrum is undefined")
    return float(lam.sum()) / top


def ellipsoid_radius(spectrum: SpectrumSpec | np.ndarray) -> float:
    """rad(Sigma^{1/2} S^{d-1}) = ||Sigma||^{1/2}."""
    return math.sqrt(float(as_eigenvalues(spectrum).max()))


def gauss_complexity_mc(domain: Domain, trials: int = GAMMA_TRIALS, seed: int = 0) -> tuple[float, float]:
    """Monte Carlo estimate of gamma(T) = E sup_{v in T} |<g, v>| and its standard error.

    Each trial is exact: sup over Sigma^{1/2} S^{d-1} of |<g, v>| is
    ``|Sigma^{1/2} g|``, over the sphere ``|g|``, over {v0} ``|<g, v0>|``.
    """
    if trials < 1000:
        raise ValueError("gauss_complexity_mc needs at least 1000 trials")
    if domain.kind == SPHERE:
        w = np.ones(domain.dim)
    elif domain.kind == ELLIPSOID:
        w = domain.scales
    elif domain.kind == POINT:
        w = None
    else:
        raise ValueError(f"unsupported domain {domain.kind!r}")
    total = 0.0
    total_sq = 0.0
    for b, start in enumerate(range(0, trials, _BLOCK)):
        m = min(_BLOCK, trials - start)
        g = SeedTrace(seed, b, "gauss-complexity").rng().standard_normal((m, domain.dim))
        vals = np.abs(g @ domain.point) if w is None else np.linalg.norm(g * w, axis=1)
        total += math.fsum(vals)
        total_sq += math.fsum(vals * vals)
    mean = total / trials
    var = max(total_sq / trials - mean * mean, 0.0) * trials / (trials - 1)
    return mean, math.sqrt(var / trials)


@dataclass
class ComplexityProfile:
    eff_rank: float
    radius: float
    gauss_complexity: float
    gauss_complexity_se: float
    trace: float
    op_norm: float


def complexity_profile(spectrum: SpectrumSpec | np.ndarray, trials: int = GAMMA_TRIALS,
                       seed: int = 0) -> ComplexityProfile:
    lam = as_eigenvalues(spectrum)
    gamma, se = gauss_complexity_mc(Domain.ellipsoid(lam), trials, seed)
    return ComplexityProfile(
        eff_rank=effective_rank(lam),
        radius=ellipsoid_radius(lam),
        gauss_complexity=gamma,
        gauss_complexity_se=se,
        trace=float(lam.sum()),
        op_norm=float(lam.max()),
    )


def gaussian_abs_moment(p: float) -> float:
    """E|g|^p for g ~ N(0, 1)."""
    return math.exp(p / 2 * math.log(2.0) + gammaln((p + 1) / 2) - 0.5 * math.log(math.pi))


class LpMarginal:
    """v -> ||<X, v>||_{L^p} for X = Sigma^{1/2} Z, with its gradient.

    Exact when p = 2 (covariance is known for every model) or the model is
    Gaussian (``(E|g|^p)^{1/p} |Sigma^{1/2} v|``); otherwise a frozen Monte
    Carlo average over ``trials`` draws.
    """

    def __init__(self, model: DistModel | str, spectrum: SpectrumSpec | np.ndarray, p: float,
                 trials: int = LP_TRIALS, seed: int = 7):
        if p < 1:
            raise ValueError(f"L^p norm needs p >= 1, got {p}")
        self.model = DistModel.parse(model)
        self.lam = as_eigenvalues(spectrum)
        self.p = float(p)
        self.trials = int(trials)
        self.seed = seed
        self.exact = self.p == 2 or self.model is DistModel.GAUSSIAN
        self.const = 1.0 if self.p == 2 else gaussian_abs_moment(self.p) ** (1 / self.p)

    @functools.cached_property
    def draws(self) -> np.ndarray:
        blocks = []
        for b, start in enumerate(range(0, self.trials, _BLOCK)):
            m = min(_BLOCK, self.trials - start)
            rng = SeedTrace(self.seed, b, "lp-marginal").rng()
            blocks.append(draw_isotropic(self.model, self.lam.size, m, rng))
        return np.concatenate(blocks) * np.sqrt(self.lam)

    def __call__(self, V) -> np.ndarray:
        V = np.asarray(V, dtype=float)
        if self.exact:
            q = self.lam @ (V * V) if V.ndim == 2 else float(self.lam @ (V * V))
            return self.const * np.sqrt(q)
        return np.mean(power(self.draws @ V, self.p, ABS), axis=0) ** (1 / self.p)

    def value_and_grad(self, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self.exact:
            q = self.lam @ (V * V)
            r = np.sqrt(q)
            with np.errstate(invalid="ignore", divide="ignore"):
                G = np.where(r > 0, self.const * self.lam[:, None] * V / r, 0.0)
            return self.const * r, G
        Y = self.draws
        S = Y @ V
        mom = np.mean(power(S, self.p, ABS), axis=0)
        m = mom ** (1 / self.p)
        dmom = Y.T @ power_deriv(S, self.p, ABS) / Y.shape[0]
        with np.errstate(invalid="ignore", divide="ignore"):
            G = np.where(m > 0, dmom * (m ** (1 - self.p) / self.p), 0.0)
        return m, G


def lp_marginal_norm(model: DistModel | str, spectrum: SpectrumSpec | np.ndarray, v, p: float,
                     trials: int = LP_TRIALS, seed: int = 7) -> float:
    """||<X, v>||_{L^p}; see ``LpMarginal`` for when this is exact."""
    return float(LpMarginal(model, spectrum, p, trials, seed)(np.asarray(v, dtype=float)))
