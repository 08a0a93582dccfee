"""The l^p matrix-deviation process and empirical checks of its tail behavior.

For an N x d matrix A with i.i.d. isotropic rows Z_i and q >= 2::

    Z_v = | ||A v||_q - N^{1/q} ||<Z, v>||_{L^q} |

The checks here resample A, so every probability is over the rows.
Suprema over T reuse the grid and ascent machinery of ``sphere_norm``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ._parallel import parallel_map
from .complexity import LpMarginal, gauss_complexity_mc
from .distributions import (DistModel, SampleBatch, SeedTrace, SpectrumSpec,
                            as_eigenvalues, draw_isotropic, estimate_psi2,
                            sample_anisotropic)
from .order_stats import fit_constant, relative_gap
from .sphere_norm import (ELLIPSOID, POINT, SPHERE, Domain, grid_max,
                          maximize_abs, random_starts, sphere_grid)
from .tensor_moments import (ABS, GAUSSIAN_CLOSED_FORM, MC_ORACLE, SIGNED,
                             PopulationOracle, power, power_deriv)

DEFAULT_RESOLUTION = 2000
_TRIAL_CHUNK = 250


@dataclass(eq=False)
class DeviationProcess:
    """v -> Z_v for one realization of A; ``marginal`` gives ||<Z, v>||_{L^q}."""

    batch: SampleBatch
    p_dev: float
    marginal: LpMarginal

    def __post_init__(self):
        if self.p_dev < 2:
            raise ValueError(f"p_dev must be >= 2, got {self.p_dev}")
        if self.marginal.lam.size != self.batch.dim:
            raise ValueError("marginal and batch dimensions differ")
        if self.marginal.p != float(self.p_dev):
            raise ValueError("marginal L^p index differs from p_dev")

    @classmethod
    def build(cls, model: DistModel | str, batch: SampleBatch, p_dev: float,
              marginal_trials: int = 1_000_000, marginal_seed: int = 7) -> "DeviationProcess":
        marginal = LpMarginal(model, np.ones(batch.dim), p_dev, marginal_trials, marginal_seed)
        return cls(batch, p_dev, marginal)

    @property
    def model(self) -> DistModel:
        return self.marginal.model

    @property
    def scale(self) -> float:
        """N^{1/q}."""
        return self.batch.n ** (1.0 / self.p_dev)

    def with_rows(self, rows: np.ndarray) -> "DeviationProcess":
        """Same process on another realization of A; the marginal is shared."""
        return DeviationProcess(SampleBatch(rows), self.p_dev, self.marginal)

    def signed_gap(self, V) -> np.ndarray:
        """||A v||_q - N^{1/q} m(v) at the columns of V."""
        V = np.asarray(V, dtype=float)
        S = self.batch.rows @ V
        norm = np.sum(power(S, self.p_dev, ABS), axis=0) ** (1.0 / self.p_dev)
        return norm - self.scale * self.marginal(V)

    def values(self, V) -> np.ndarray:
        return np.abs(self.signed_gap(V))

    def gap_and_grad(self, V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = self.p_dev
        A = self.batch.rows
        S = A @ V
        norm = np.sum(power(S, q, ABS), axis=0) ** (1.0 / q)
        m, Gm = self.marginal.value_and_grad(V)
        with np.errstate(invalid="ignore", divide="ignore"):
            Gn = np.where(norm > 0, A.T @ power_deriv(S, q, ABS) / (q * norm ** (q - 1)), 0.0)
        return norm - self.scale * m, Gn - self.scale * Gm


def eval_Z(proc: DeviationProcess, v) -> float:
    v = np.asarray(v, dtype=float)
    return float(proc.values(v[:, None])[0])


def _resample(proc: DeviationProcess, seed: int, i: int, purpose: str) -> np.ndarray:
    rng = SeedTrace(seed, i, purpose).rng()
    return draw_isotropic(proc.model, proc.batch.dim, proc.batch.n, rng)


def _chunks(trials: int) -> list[range]:
    return [range(a, min(a + _TRIAL_CHUNK, trials)) for a in range(0, trials, _TRIAL_CHUNK)]


@dataclass
class IncrementReport:
    pairs_u: np.ndarray
    pairs_v: np.ndarray
    distances: np.ndarray
    psi2: np.ndarray
    ratios: np.ndarray
    resample_trials: int
    skipped: int
    seed: int

    @property
    def max_ratio(self) -> float:
        return float(np.max(self.ratios))

    @property
    def median_ratio(self) -> float:
        return float(np.median(self.ratios))

    @property
    def bounded(self) -> bool:
        return self.max_ratio <= 3.0 * self.median_ratio


def random_pairs(domain: Domain, count: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Independent uniform directions pushed onto T."""
    U = random_starts(domain.dim, 2 * count, seed)
    return domain.embed(U[:, :count]), domain.embed(U[:, count:])


def increment_subgauss_check(proc: DeviationProcess, pair_count: int = 50,
                             resample_trials: int = 2000, seed: int = 0,
                             pairs: tuple[np.ndarray, np.ndarray] | None = None,
                             domain: Domain | None = None) -> IncrementReport:
    """psi_2 norm of Z_v - Z_u over resampled A, divided by |u - v|.

    Pairs default to ``pair_count`` independent random points of T (the
    sphere unless ``domain`` is given); pairs with u = v are skipped.
    """
    if pairs is None and pair_count < 20:
        raise ValueError("pair_count must be >= 20")
    if resample_trials < 1000:
        raise ValueError("resample_trials must be >= 1000")
    domain = domain or Domain.sphere(proc.batch.dim)
    U, V = pairs if pairs is not None else random_pairs(domain, pair_count, seed)
    U, V = np.asarray(U, dtype=float), np.asarray(V, dtype=float)
    dist = np.linalg.norm(U - V, axis=0)
    keep = dist > 0
    U, V, dist = U[:, keep], V[:, keep], dist[keep]
    if U.shape[1] == 0:
        raise ValueError("every pair is degenerate (u = v)")
    W = np.concatenate([U, V], axis=1)
    k = U.shape[1]

    def run(chunk):
        out = np.empty((len(chunk), k))
        for row, i in enumerate(chunk):
            z = proc.with_rows(_resample(proc, seed, i, "deviation/increment")).values(W)
            out[row] = z[k:] - z[:k]
        return out

    inc = np.concatenate(parallel_map(run, _chunks(resample_trials)))
    psi = np.array([estimate_psi2(inc[:, j]) for j in range(k)])
    return IncrementReport(U, V, dist, psi, psi / dist, resample_trials, int((~keep).sum()), seed)


@dataclass
class SupTailReport:
    u_grid: tuple[float, ...]
    trials: int
    gamma: float
    gamma_se: float
    radius: float
    fitted_C: tuple[float, ...]
    exceed_freq: tuple[float, ...]
    halves_C: tuple[tuple[float, float], ...]
    certified: bool
    converged_frac: float = 1.0
    sups: np.ndarray = field(default_factory=lambda: np.zeros(0), repr=False)
    seed: int = 0

    @property
    def stability(self) -> tuple[float, ...]:
        return tuple(relative_gap(a, b) for a, b in self.halves_C)

    @property
    def flagged(self) -> bool:
        return self.converged_frac < 0.95


def sup_Z(proc: DeviationProcess, domain: Domain, *, resolution: int = DEFAULT_RESOLUTION,
          restarts: int = 8, seed: int = 0, max_iters: int = 500) -> tuple[float, bool]:
    """sup_{v in T} Z_v and whether the optimizer converged.

    Grid evaluation for d <= 3, multi-start ascent otherwise.
    """
    if domain.kind == POINT:
        return eval_Z(proc, domain.point), True
    if domain.dim <= 3 and domain.dim >= 2:
        return grid_max(proc.values, domain, resolution, proc.batch.n)[0], True
    if domain.dim == 1:
        return float(proc.values(domain.embed(np.ones((1, 1))))[0]), True
    res = maximize_abs(proc.gap_and_grad, domain, random_starts(domain.dim, restarts, seed),
                       max_iters=max_iters)
    return res.value, res.n_converged > 0


def sup_tail_check(proc: DeviationProcess, domain: Domain | None = None,
                   u_grid=(1.0, 2.0, 3.0), trials: int = 10_000, seed: int = 0,
                   resolution: int = DEFAULT_RESOLUTION, gamma_trials: int = 100_000) -> SupTailReport:
    """Fit C in P(sup_T Z > C (gamma(T) + u rad(T))) <= 2 exp(-u^2) for each u.

    Each fitted constant is the empirical ``1 - 2e^{-u^2}`` quantile of
    ``sup_T Z / (gamma(T) + u rad(T))``; constants are also fitted on each
    half of the trials. For d > 3 the supremum comes from ascent and the
    report is marked non-certified.
    """
    domain = domain or Domain.sphere(proc.batch.dim)
    if domain.kind not in (SPHERE, ELLIPSOID, POINT):
        raise ValueError(f"unsupported domain {domain.kind!r}")
    if trials < 2:
        raise ValueError("need at least two trials")
    gamma, gamma_se = gauss_complexity_mc(domain, gamma_trials, seed)
    rad = domain.radius

    def run(chunk):
        out = np.empty(len(chunk))
        ok = 0
        for row, i in enumerate(chunk):
            p = proc.with_rows(_resample(proc, seed, i, "deviation/sup"))
            out[row], conv = sup_Z(p, domain, resolution=resolution, seed=seed + i)
            ok += conv
        return out, ok

    parts = parallel_map(run, _chunks(trials))
    sups = np.concatenate([p[0] for p in parts])
    converged = sum(p[1] for p in parts) / trials
    half = trials // 2
    fitted, freq, halves = [], [], []
    for u in u_grid:
        level = 2.0 * math.exp(-u * u)
        r = sups / (gamma + u * rad)
        c = fit_constant(r, level)
        fitted.append(c)
        freq.append(float(np.mean(r > c)))
        halves.append((fit_constant(r[:half], level), fit_constant(r[half:], level)))
    return SupTailReport(tuple(float(u) for u in u_grid), trials, gamma, gamma_se, rad,
                         tuple(fitted), tuple(freq), tuple(halves),
                         certified=domain.kind == POINT or domain.dim <= 3,
                         converged_frac=converged, sups=sups, seed=seed)


def reverse_triangle_sides(proc: DeviationProcess, domain: Domain,
                           resolution: int = DEFAULT_RESOLUTION) -> tuple[float, float]:
    """(sup_T ||Av||_q, sup_T Z_v + N^{1/q} sup_T m(v)) on the grid; the first never exceeds the second."""
    V = domain.embed(sphere_grid(domain.dim, resolution))
    S = proc.batch.rows @ V
    norms = np.sum(power(S, proc.p_dev, ABS), axis=0) ** (1.0 / proc.p_dev)
    return float(norms.max()), float(proc.values(V).max() + proc.scale * proc.marginal(V).max())


@dataclass
class SymmetrizationReport:
    model: str
    p: int
    N: int
    trials: int
    L: float
    R: float
    se: float
    population_se: float
    seed: int

    @property
    def holds(self) -> bool:
        return self.L <= 2.0 * self.R + 3.0 * self.se


def verify_symmetrization(model: DistModel | str, spectrum: SpectrumSpec | np.ndarray,
                          domain_kind: str = SPHERE, p: int = 2, N: int = 50, trials: int = 2000,
                          seed: int = 0, resolution: int = 1024,
                          oracle_M: int = 1_000_000) -> SymmetrizationReport:
    """Compare L = E sup_T |sum_i (<X_i,v>^p - E<X,v>^p)| with R = E sup_T |sum_i eps_i <X_i,v>^p|.

    Both suprema are taken over the same grid of T. ``se`` combines the
    standard error of the paired differences L_t - 2 R_t with the largest
    population-moment error N * se(E<X,v>^p) on the grid.
    """
    model = DistModel.parse(model)
    lam = as_eigenvalues(spectrum)
    if lam.size > 3:
        raise ValueError("verify_symmetrization uses the grid oracle and needs d <= 3")
    if trials < 2:
        raise ValueError("need at least two trials")
    domain = Domain.sphere(lam.size) if domain_kind == SPHERE else Domain.ellipsoid(lam)
    V = domain.embed(sphere_grid(lam.size, resolution)) if lam.size > 1 else np.ones((1, 1))
    if p == 2:
        # Every model is isotropic, so E<X,v>^2 = v' Sigma v exactly.
        pop, pop_se = lam @ (V * V), np.zeros(V.shape[1])
    else:
        kind = GAUSSIAN_CLOSED_FORM if model is DistModel.GAUSSIAN else MC_ORACLE
        oracle = PopulationOracle(kind, lam, model, M=oracle_M, oracle_seed=seed)
        pop, pop_se = oracle.moment(V, p, SIGNED)
    pop_se_max = float(np.max(pop_se))

    def run(chunk):
        out = np.empty((len(chunk), 2))
        for row, i in enumerate(chunk):
            trace = SeedTrace(seed, i, "symmetrization")
            X = sample_anisotropic(model, lam, N, trace).rows
            eps = trace.child("signs").rng().integers(0, 2, size=N) * 2.0 - 1.0
            P = power(X @ V, p, SIGNED)
            out[row, 0] = np.max(np.abs(P.sum(axis=0) - N * pop))
            out[row, 1] = np.max(np.abs(eps @ P))
        return out

    LR = np.concatenate(parallel_map(run, _chunks(trials)))
    diff = LR[:, 0] - 2.0 * LR[:, 1]
    se = float(np.std(diff, ddof=1) / math.sqrt(trials)) + N * pop_se_max
    return SymmetrizationReport(model.value, p, N, trials, float(LR[:, 0].mean()),
                                float(LR[:, 1].mean()), se, pop_se_max, seed)
