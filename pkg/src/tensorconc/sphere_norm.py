"""Suprema of |F(v)| over the unit sphere or an ellipsoid Sigma^{1/2} S^{d-1}.

Three routes:

* ``sup_exact_p2``: p = 2 reduces to the extreme eigenvalue of a d x d matrix.
* ``sup_ascent``: multi-start projected gradient ascent with Armijo
  backtracking, run separately on +F and -F so the kink of |F| at zero is
  never touched.
* ``sup_grid``: exhaustive evaluation on an angular grid (d = 2) or a
  Fibonacci lattice (d = 3), with an explicit Lipschitz error bound.

The ascent and grid machinery only see objective callbacks, so other modules
maximize other functions of v (e.g. the deviation process) with the same code.
Ellipsoids are handled by pulling back to the sphere: v = Sigma^{1/2} u.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .distributions import SpectrumSpec, as_eigenvalues
from .tensor_moments import (GAUSSIAN_CLOSED_FORM, MomentFunctional,
                             double_factorial)

SPHERE = "sphere"
ELLIPSOID = "ellipsoid"
POINT = "point"

# Covering radius of an n-point Fibonacci lattice on S^2 is about 2.71/sqrt(n)
# (measured); 4/sqrt(n) leaves margin.
FIBONACCI_COVER_CONST = 4.0
TIE_RTOL = 1e-12
EPS = float(np.finfo(float).eps)
_GRID_CHUNK = 4_000_000


@dataclass(frozen=True, eq=False)
class Domain:
    """The index set T: ``sphere``, ``ellipsoid`` (scales = sqrt(lambda)) or ``point``."""

    kind: str
    dim: int
    scales: np.ndarray | None = None
    point: np.ndarray | None = None

    @classmethod
    def sphere(cls, dim: int) -> "Domain":
        return cls(SPHERE, dim)

    @classmethod
    def ellipsoid(cls, spectrum: SpectrumSpec | np.ndarray) -> "Domain":
        lam = as_eigenvalues(spectrum)
        return cls(ELLIPSOID, lam.size, scales=np.sqrt(lam))

    @classmethod
    def single_point(cls, v) -> "Domain":
        v = np.asarray(v, dtype=float)
        return cls(POINT, v.size, point=v)

    def scaled(self, c: float) -> "Domain":
        """The set c * T."""
        if self.kind == POINT:
            return Domain(POINT, self.dim, point=c * self.point)
        scales = np.ones(self.dim) if self.scales is None else self.scales
        return Domain(ELLIPSOID, self.dim, scales=c * scales)

    @property
    def radius(self) -> float:
        if self.kind == SPHERE:
            return 1.0
        if self.kind == ELLIPSOID:
            return float(np.max(self.scales))
        return float(np.linalg.norm(self.point))

    def embed(self, U: np.ndarray) -> np.ndarray:
        """Map unit vectors (columns of U) onto T."""
        if self.kind == SPHERE:
            return U
        if self.kind == ELLIPSOID:
            return self.scales[:, None] * U if U.ndim == 2 else self.scales * U
        raise ValueError("a single-point domain has no sphere parameterization")

    def pullback_grad(self, G: np.ndarray) -> np.ndarray:
        if self.kind == SPHERE:
            return G
        return self.scales[:, None] * G if G.ndim == 2 else self.scales * G

    def contains(self, v, atol: float = 1e-10) -> bool:
        v = np.asarray(v, dtype=float)
        if self.kind == POINT:
            return bool(np.allclose(v, self.point, atol=atol))
        if self.kind == SPHERE:
            return abs(np.linalg.norm(v) - 1.0) <= atol
        s = self.scales
        pos = s > 0
        if np.any(np.abs(v[~pos]) > atol):
            return False
        return abs(np.linalg.norm(v[pos] / s[pos]) - 1.0) <= atol


@dataclass
class SupResult:
    value: float
    argmax: np.ndarray
    restarts_used: int
    best_restart_spread: float
    method: str
    converged: bool = True
    n_converged: int = 0
    iterations: int = 0
    error_bound: float = 0.0


def canonical_sign(v: np.ndarray, atol: float = 1e-14) -> np.ndarray:
    """Flip v so its first entry with |x| > atol is positive."""
    nz = np.flatnonzero(np.abs(v) > atol)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


def _pick_best(values: np.ndarray, points: np.ndarray) -> int:
    """Index of the max; near-ties go to the lexicographically smallest canonical point."""
    top = values.max()
    ties = np.flatnonzero(values >= top - TIE_RTOL * max(abs(top), 1e-300))
    if ties.size == 1:
        return int(ties[0])
    keys = [tuple(canonical_sign(points[:, j])) for j in ties]
    return int(ties[min(range(len(ties)), key=keys.__getitem__)])


# ---------------------------------------------------------------------------
# ascent on the sphere
# ---------------------------------------------------------------------------

ObjectiveFn = Callable[[np.ndarray, np.ndarray], "tuple[np.ndarray, np.ndarray]"]


@dataclass
class AscentState:
    U: np.ndarray
    values: np.ndarray
    grad_norms: np.ndarray
    converged: np.ndarray
    iterations: int


def ascend_on_sphere(fg: ObjectiveFn, U0: np.ndarray, *, max_iters: int = 2000, tol: float = 1e-8,
                     armijo_c: float = 1e-4, shrink: float = 0.5, min_step: float = 1e-14,
                     stall_tol: float = 1e-6, max_step: float = 1e8) -> AscentState:
    """Maximize each column of ``U0`` independently over the unit sphere.

    ``fg(U, cols)`` returns objective values and Euclidean gradients for the
    columns of ``U``; ``cols`` are their indices in ``U0`` (lets one callback
    serve several objectives). Steps are ``u <- normalize(u + a * Pg)`` with
    ``Pg`` the tangential gradient. The trial step is 1 on the first
    iteration and the Barzilai-Borwein step afterwards (twice the last
    accepted step when BB is undefined); it is halved until the Armijo
    condition holds, so every accepted step increases the objective.

    A column converges when ``|Pg| <= tol``. A column whose step underflows
    ``min_step`` is frozen; it still counts as converged when
    ``|Pg| <= stall_tol * max(1, |f|, |g|)``, since Armijo cannot resolve
    increases below the rounding noise of f (|Pg| ~ sqrt(eps) * scale). The
    same gradient threshold plus an iteration that gains nothing beyond
    rounding also counts as converged.
    """
    U = np.array(U0, dtype=float, copy=True)
    U /= np.linalg.norm(U, axis=0)
    R = U.shape[1]
    f, G = fg(U, np.arange(R))
    PG = G - U * np.sum(U * G, axis=0)
    gn = np.linalg.norm(PG, axis=0)
    converged = gn <= tol
    frozen = converged.copy()
    last_step = np.full(R, 0.5)
    U_prev = np.full_like(U, np.nan)
    PG_prev = np.full_like(U, np.nan)
    it = 0
    for it in range(1, max_iters + 1):
        act = np.flatnonzero(~frozen)
        if act.size == 0:
            it -= 1
            break
        ds = U[:, act] - U_prev[:, act]
        dy = PG_prev[:, act] - PG[:, act]
        curv = np.sum(ds * dy, axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            bb = np.sum(ds * ds, axis=0) / curv
        step = np.where(np.isfinite(bb) & (curv > 0), bb, 2.0 * last_step[act])
        step = np.clip(step, 1e3 * min_step, max_step)
        U_prev[:, act] = U[:, act]
        PG_prev[:, act] = PG[:, act]
        f_before = f[act].copy()
        todo = np.arange(act.size)
        while todo.size:
            cols = act[todo]
            cand = U[:, cols] + step[todo] * PG[:, cols]
            cand /= np.linalg.norm(cand, axis=0)
            fc, Gc = fg(cand, cols)
            ok = fc >= f[cols] + armijo_c * step[todo] * gn[cols] ** 2
            acc = cols[ok]
            U[:, acc] = cand[:, ok]
            f[acc] = fc[ok]
            G[:, acc] = Gc[:, ok]
            last_step[acc] = step[todo[ok]]
            rej = todo[~ok]
            step[rej] *= shrink
            dead = act[rej[step[rej] < min_step]]
            frozen[dead] = True
            scale = np.maximum(1.0, np.maximum(np.abs(f[dead]), np.linalg.norm(G[:, dead], axis=0)))
            converged[dead] = gn[dead] <= np.maximum(tol, stall_tol * scale)
            todo = rej[step[rej] >= min_step]
        Ua, Ga = U[:, act], G[:, act]
        PG[:, act] = Ga - Ua * np.sum(Ua * Ga, axis=0)
        gn[act] = np.linalg.norm(PG[:, act], axis=0)
        scale = np.maximum(1.0, np.maximum(np.abs(f[act]), np.linalg.norm(Ga, axis=0)))
        flat = (gn[act] <= stall_tol * scale) & (f[act] - f_before <= 8 * EPS * scale)
        newly = act[(gn[act] <= tol) | flat]
        converged[newly] = True
        frozen[newly] = True
    return AscentState(U, f, gn, converged, it)


def random_starts(d: int, count: int, seed: int) -> np.ndarray:
    """Start i depends only on (seed, i): adding restarts keeps earlier ones."""
    cols = [np.random.default_rng([int(seed), i]).standard_normal(d) for i in range(count)]
    U = np.stack(cols, axis=1) if cols else np.zeros((d, 0))
    return U / np.linalg.norm(U, axis=0)


def maximize_abs(value_grad: Callable[[np.ndarray], "tuple[np.ndarray, np.ndarray]"], domain: Domain,
                 starts: np.ndarray, *, max_iters: int = 2000, tol: float = 1e-8) -> SupResult:
    """sup over T of |h(v)|, given ``value_grad(V) -> (h, grad h)`` in v-coordinates.

    Every start is ascended twice, on +h and on -h.
    """
    d, S = starts.shape
    U0 = np.concatenate([starts, starts], axis=1)
    sign = np.concatenate([np.ones(S), -np.ones(S)])

    def fg(U, cols):
        h, Gv = value_grad(domain.embed(U))
        s = sign[cols]
        return s * h, s * domain.pullback_grad(Gv)

    state = ascend_on_sphere(fg, U0, max_iters=max_iters, tol=tol)
    V = domain.embed(state.U)
    h, _ = value_grad(V)
    absval = np.abs(h)
    per_start = np.maximum(absval[:S], absval[S:])
    j = _pick_best(absval, V)
    argmax = canonical_sign(V[:, j])
    value = float(abs(value_grad(argmax[:, None])[0][0]))
    return SupResult(
        value=value,
        argmax=argmax,
        restarts_used=S,
        best_restart_spread=float(per_start.max() - per_start.min()),
        method="ascent",
        converged=bool(state.converged.any()),
        n_converged=int(state.converged.sum()),
        iterations=state.iterations,
    )


def _warm_starts(f: MomentFunctional, domain: Domain) -> np.ndarray:
    M = f.second_moment_error()
    if domain.kind == ELLIPSOID:
        M = domain.scales[:, None] * M * domain.scales[None, :]
    w, Q = np.linalg.eigh((M + M.T) / 2)
    return Q[:, [int(np.argmax(w)), int(np.argmin(w))]]


def sup_ascent(f: MomentFunctional, domain: Domain | None = None, restarts: int = 32,
               step_rule: str = "armijo", tol: float = 1e-8, *, max_iters: int = 2000,
               seed: int = 0, warm_start: bool = True) -> SupResult:
    """Multi-start ascent estimate of ``sup_{v in T} |F(v)|`` (not certified for p >= 3)."""
    domain = domain or Domain.sphere(f.dim)
    if step_rule != "armijo":
        raise ValueError(f"unsupported step rule {step_rule!r}")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    if domain.kind == POINT:
        return _sup_point(f.value, domain)
    starts = random_starts(f.dim, restarts, seed)
    if warm_start:
        starts = np.concatenate([_warm_starts(f, domain), starts], axis=1)
    return maximize_abs(f.value_and_grad, domain, starts, max_iters=max_iters, tol=tol)


def _sup_point(value_fn, domain: Domain) -> SupResult:
    v = domain.point
    return SupResult(float(abs(value_fn(v[:, None])[0])), v.copy(), 1, 0.0, "grid")


def sup_exact_p2(f: MomentFunctional, domain: Domain | None = None) -> SupResult:
    """Extreme eigenvalue of ``(1/N) X'X - Sigma_pop`` (conjugated for ellipsoids)."""
    if f.p != 2:
        raise ValueError(f"sup_exact_p2 needs p = 2, got p = {f.p}")
    domain = domain or Domain.sphere(f.dim)
    if domain.kind == POINT:
        return _sup_point(f.value, domain)
    M = f.second_moment_error()
    if domain.kind == ELLIPSOID:
        M = domain.scales[:, None] * M * domain.scales[None, :]
    w, Q = np.linalg.eigh((M + M.T) / 2)
    cand = np.flatnonzero(np.abs(w) >= np.abs(w).max() * (1 - TIE_RTOL))
    V = domain.embed(Q[:, cand])
    j = _pick_best(np.abs(w[cand]), V)
    argmax = canonical_sign(V[:, j])
    return SupResult(abs(f.value(argmax)), argmax, 1, 0.0, "exact_eig", n_converged=1)


# ---------------------------------------------------------------------------
# brute-force grid
# ---------------------------------------------------------------------------

def sphere_grid(d: int, resolution: int) -> np.ndarray:
    """Grid on S^{d-1} as columns. d = 2: angles k*pi/resolution (half circle,
    enough for objectives even under v -> -v). d = 3: Fibonacci lattice."""
    if resolution < 1:
        raise ValueError("resolution must be positive")
    if d == 2:
        theta = np.arange(resolution) * (math.pi / resolution)
        return np.stack([np.cos(theta), np.sin(theta)])
    if d == 3:
        i = np.arange(resolution) + 0.5
        z = 1.0 - 2.0 * i / resolution
        phi = math.pi * (1.0 + math.sqrt(5.0)) * i
        r = np.sqrt(1.0 - z * z)
        return np.stack([r * np.cos(phi), r * np.sin(phi), z])
    raise ValueError(f"grid oracle supports d in {{2, 3}}, got d = {d}")


def grid_spacing(d: int, resolution: int) -> float:
    """Max distance from a point of S^{d-1} (modulo sign) to the grid."""
    if d == 2:
        return math.pi / (2 * resolution)
    return FIBONACCI_COVER_CONST / math.sqrt(resolution)


def grid_max(values_fn: Callable[[np.ndarray], np.ndarray], domain: Domain, resolution: int,
             n_rows: int = 1) -> tuple[float, np.ndarray, np.ndarray]:
    """Evaluate a nonnegative objective on the grid; returns (max, argmax v, all values)."""
    U = sphere_grid(domain.dim, resolution)
    step = max(1, _GRID_CHUNK // max(n_rows, 1))
    vals = np.concatenate([values_fn(domain.embed(U[:, a:a + step]))
                           for a in range(0, U.shape[1], step)])
    V = domain.embed(U)
    j = _pick_best(vals, V)
    return float(vals[j]), canonical_sign(V[:, j]), vals


def lipschitz_bound(f: MomentFunctional, domain: Domain) -> float:
    """Upper bound on |grad_u F(embed(u))| over the unit sphere."""
    p = f.p
    s = np.ones(f.dim) if domain.kind == SPHERE else domain.scales
    X = f.batch.rows * s
    emp = p * float(np.mean(np.linalg.norm(X, axis=1) ** p))
    pop = f.population
    if pop.kind == GAUSSIAN_CLOSED_FORM:
        if int(p) % 2:
            pb = 0.0
        else:
            C = s[:, None] * pop.covariance() * s[None, :]
            pb = p * double_factorial(int(p) - 1) * float(np.linalg.norm(C, 2)) ** (p / 2)
    else:
        rot = pop.rotation
        total = 0.0
        for y in pop.draws():
            yy = y if rot is None else y @ rot.T
            total += float(np.sum(np.linalg.norm(yy * s, axis=1) ** p))
        pb = p * total / pop.M
    return emp + pb


def sup_grid(f: MomentFunctional, domain: Domain | None = None, resolution: int = 100_000) -> SupResult:
    """Brute-force sup of |F| on a grid; ``error_bound`` bounds the gap to the true sup."""
    domain = domain or Domain.sphere(f.dim)
    if domain.kind == POINT:
        return _sup_point(f.value, domain)
    if domain.dim not in (2, 3):
        raise ValueError(f"grid oracle supports d in {{2, 3}}, got d = {domain.dim}")
    value, argmax, _ = grid_max(lambda V: np.abs(f.value(V)), domain, resolution, f.batch.n)
    bound = lipschitz_bound(f, domain) * grid_spacing(domain.dim, resolution)
    return SupResult(value, argmax, resolution, 0.0, "grid", error_bound=bound)
