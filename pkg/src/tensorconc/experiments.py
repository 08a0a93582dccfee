"""Monte Carlo grids over (model, spectrum, d, N, p), rate fits and reports.

The error reported per cell is the normalized one::

    sup_{v in T} | (1/N) sum_i <X_i, v>^p - E <X, v>^p |

and its predicted size is ``||Sigma||^{p/2} (r^{p/2} / N + sqrt(r / N))``
with ``r`` the effective rank, or ``(gamma^p + sqrt(N) gamma rad^{p-1}) / N``
for a general index set T. Constants are fitted per curve, never assumed.

Config files are flat ``key = value`` text; a repeated key builds a list
and ``#`` starts a comment. See ``CONFIG_KEYS`` for the schema.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from ._parallel import parallel_map
from .complexity import effective_rank
from .distributions import (DistModel, SeedTrace, SpectrumSpec, as_eigenvalues,
                            materialize_spectrum, sample_anisotropic)
from .sphere_norm import ELLIPSOID, SPHERE, Domain, sup_ascent, sup_exact_p2
from .tensor_moments import (GAUSSIAN_CLOSED_FORM, MC_ORACLE, SIGNED,
                             MomentFunctional, PopulationOracle)

CSV_COLUMNS = ("d", "N", "p", "model", "spectrum_id", "mean_error", "std_error",
               "theory_bound", "ratio", "seed")
FAILURE_RATE_LIMIT = 0.05
_TRIAL_CHUNK = 10

# key -> (parser, repeatable, default)
CONFIG_KEYS = {
    "model": (str, False, "gaussian"),
    "spectrum": (str, True, ["identity"]),
    "dim": (int, True, None),
    "p": (int, True, None),
    "N": (int, True, None),
    "trials_per_cell": (int, False, 100),
    "T": (str, False, SPHERE),
    "restarts": (int, False, 32),
    "max_iters": (int, False, 2000),
    "tol": (float, False, 1e-8),
    "master_seed": (int, False, 0),
    "output": (str, False, "results.csv"),
    "budget": (float, False, 1e13),
    "oracle_M": (int, False, 1_000_000),
}


@dataclass
class ExperimentConfig:
    model: str = "gaussian"
    spectra: list[str] = field(default_factory=lambda: ["identity"])
    dims: list[int] = field(default_factory=list)
    p_list: list[int] = field(default_factory=list)
    N_list: list[int] = field(default_factory=list)
    trials_per_cell: int = 100
    T_kind: str = SPHERE
    restarts: int = 32
    max_iters: int = 2000
    tol: float = 1e-8
    master_seed: int = 0
    output_path: str = "results.csv"
    budget: float = 1e13
    oracle_M: int = 1_000_000

    def __post_init__(self):
        DistModel.parse(self.model)
        if self.T_kind not in (SPHERE, ELLIPSOID):
            raise ValueError(f"T must be sphere or ellipsoid, got {self.T_kind!r}")
        if not (self.dims and self.p_list and self.N_list):
            raise ValueError("config needs at least one dim, p and N")
        if any(b <= a for a, b in zip(self.N_list, self.N_list[1:])):
            raise ValueError("N values must be strictly increasing")
        if min(self.N_list) < 1 or min(self.dims) < 1:
            raise ValueError("N and dim must be positive")
        if min(self.p_list) < 2:
            raise ValueError("p must be >= 2")
        if self.trials_per_cell < 1:
            raise ValueError("trials_per_cell must be >= 1")
        for s, d in itertools.product(self.spectra, self.dims):
            materialize_spectrum(SpectrumSpec.parse(s, d))

    @classmethod
    def from_text(cls, text: str) -> "ExperimentConfig":
        values: dict[str, object] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, val = line.partition("=")
            key, val = key.strip(), val.strip()
            if not sep or not key:
                raise ValueError(f"line {lineno}: expected key = value")
            if key not in CONFIG_KEYS:
                raise ValueError(f"line {lineno}: unknown key {key!r}")
            parse, repeatable, _ = CONFIG_KEYS[key]
            try:
                parsed = parse(float(val)) if parse is int and "e" in val.lower() else parse(val)
            except ValueError:
                raise ValueError(f"line {lineno}: bad value {val!r} for {key}") from None
            if repeatable:
                values.setdefault(key, []).append(parsed)
            elif key in values:
                raise ValueError(f"line {lineno}: {key} given twice")
            else:
                values[key] = parsed
        get = lambda k: values.get(k, CONFIG_KEYS[k][2])
        return cls(model=get("model"), spectra=list(get("spectrum")), dims=list(get("dim") or []),
                   p_list=list(get("p") or []), N_list=list(get("N") or []),
                   trials_per_cell=get("trials_per_cell"), T_kind=get("T"),
                   restarts=get("restarts"), max_iters=get("max_iters"), tol=get("tol"),
                   master_seed=get("master_seed"), output_path=get("output"),
                   budget=get("budget"), oracle_M=get("oracle_M"))

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.from_text(Path(path).read_text())

    def grid(self) -> list[tuple[str, int, int, int]]:
        """(spectrum, d, p, N) cells in a fixed order."""
        return list(itertools.product(self.spectra, self.dims, self.p_list, self.N_list))


@dataclass
class Cell:
    d: int
    N: int
    p: int
    model: str
    spectrum_id: str
    mean_error: float
    std_error: float
    theory_bound: float
    ratio: float
    seed: int

    def key(self):
        return (self.model, self.spectrum_id, self.d, self.p, self.N)


@dataclass
class CellDiagnostics:
    method: str
    failures: int
    trials: int
    mean_restart_spread: float
    max_restart_spread: float
    work: float
    skipped: bool = False

    @property
    def flagged(self) -> bool:
        return self.skipped or self.failures > FAILURE_RATE_LIMIT * self.trials


def cell_work(d: int, N: int, p: int, trials: int, restarts: int, max_iters: int) -> float:
    """Rough flop count: trials x N x d x restarts x iterations (N d^2 per trial when p = 2)."""
    if p == 2:
        return float(trials) * N * d * d
    return float(trials) * N * d * (2 * restarts + 2) * max_iters


def _cell_setup(cfg: ExperimentConfig, spectrum: SpectrumSpec, p: int):
    lam = materialize_spectrum(spectrum)
    model = DistModel.parse(cfg.model)
    kind = GAUSSIAN_CLOSED_FORM if model is DistModel.GAUSSIAN else MC_ORACLE
    if cfg.T_kind == ELLIPSOID:
        # isotropic rows over Sigma^{1/2} S^{d-1}
        sample_lam, domain = np.ones(lam.size), Domain.ellipsoid(lam)
    else:
        sample_lam, domain = lam, Domain.sphere(lam.size)
    oracle = PopulationOracle(kind, sample_lam, model, M=cfg.oracle_M, oracle_seed=cfg.master_seed)
    return model, sample_lam, domain, oracle


def cell_purpose(model: str, spectrum_id: str, d: int, N: int, p: int) -> str:
    return f"cell/{model}/{spectrum_id}/{d}/{N}/{p}"


def run_cell(cfg: ExperimentConfig, d: int, N: int, p: int, trials: int | None = None,
             spectrum: str | SpectrumSpec | None = None) -> tuple[float, float, CellDiagnostics]:
    """Mean and standard error over trials of the normalized sup error."""
    trials = cfg.trials_per_cell if trials is None else trials
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if spectrum is None:
        spectrum = cfg.spectra[0]
    spec = spectrum if isinstance(spectrum, SpectrumSpec) else SpectrumSpec.parse(spectrum, d)
    model, sample_lam, domain, oracle = _cell_setup(cfg, spec, p)
    purpose = cell_purpose(model.value, spec.label, d, N, p)

    def one(i):
        trace = SeedTrace(cfg.master_seed, i, purpose)
        batch = sample_anisotropic(model, sample_lam, N, trace)
        f = MomentFunctional(batch, p, SIGNED, oracle)
        if p == 2:
            res = sup_exact_p2(f, domain)
        else:
            res = sup_ascent(f, domain, cfg.restarts, tol=cfg.tol, max_iters=cfg.max_iters,
                             seed=cfg.master_seed * 1_000_003 + i)
        return res.value, res.converged, res.best_restart_spread, res.method

    chunks = [range(a, min(a + _TRIAL_CHUNK, trials)) for a in range(0, trials, _TRIAL_CHUNK)]
    out = [r for part in parallel_map(lambda c: [one(i) for i in c], chunks) for r in part]
    errors = np.array([o[0] for o in out])
    spreads = np.array([o[2] for o in out])
    mean = math.fsum(errors) / trials
    if trials > 1:
        var = math.fsum((errors - mean) ** 2) / (trials - 1)
        se = math.sqrt(var / trials)
    else:
        se = 0.0
    diag = CellDiagnostics(
        method=out[0][3],
        failures=sum(not o[1] for o in out),
        trials=trials,
        mean_restart_spread=math.fsum(spreads) / trials,
        max_restart_spread=float(spreads.max()),
        work=cell_work(d, N, p, trials, cfg.restarts, cfg.max_iters),
    )
    return mean, se, diag


def theory_bound(spectrum: SpectrumSpec | np.ndarray, N: int, p: float) -> float:
    """``||Sigma||^{p/2} (r^{p/2} / N + sqrt(r / N))`` with constant 1."""
    if N < 1:
        raise ValueError("N must be >= 1")
    lam = as_eigenvalues(spectrum)
    op = float(lam.max())
    r = effective_rank(lam)
    return op ** (p / 2) * (r ** (p / 2) / N + math.sqrt(r / N))


def theory_bound_T(gamma: float, radius: float, N: int, p: float) -> float:
    """``(gamma^p + sqrt(N) gamma rad^{p-1}) / N`` with constant 1."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if radius < 0 or gamma < math.sqrt(2 / math.pi) * radius * (1 - 1e-12):
        raise ValueError(f"inconsistent inputs: gamma = {gamma} < sqrt(2/pi) * rad = "
                         f"{math.sqrt(2 / math.pi) * radius}")
    return (gamma ** p + math.sqrt(N) * gamma * radius ** (p - 1)) / N


@dataclass
class RateFit:
    cells: list[Cell]
    slope_largeN: float
    slope_ci: tuple[float, float]
    intercept: float
    ratio_spread: float
    regime_threshold: float
    fit_cells: int
    flags: list[str] = field(default_factory=list)


def curve_key(c: Cell):
    return (c.model, c.spectrum_id, c.d, c.p)


def ratio_spread(cells) -> float:
    ratios = [c.ratio for c in cells]
    if not ratios:
        return math.nan
    return max(ratios) / min(ratios) if min(ratios) > 0 else math.inf


def monotone_fraction(cells) -> float:
    """Share of adjacent N pairs where mean_error decreases."""
    errs = [c.mean_error for c in sorted(cells, key=lambda c: c.N)]
    pairs = list(zip(errs, errs[1:]))
    return 1.0 if not pairs else sum(b < a for a, b in pairs) / len(pairs)


def fit_rates(cells, rank: float | None = None, strict: bool = True) -> RateFit:
    """OLS of ln(mean_error) on ln(N) over the cells with N >= r^{p-1}.

    All cells must belong to one curve (model, spectrum, d, p). ``rank``
    overrides the effective rank parsed from the spectrum id. With
    ``strict=False`` a curve without four eligible cells yields a NaN slope
    and a flag instead of an error.
    """
    cells = sorted(cells, key=Cell.key)
    if not cells:
        raise ValueError("no cells to fit")
    if len({curve_key(c) for c in cells}) > 1:
        raise ValueError("fit_rates expects the cells of a single curve")
    for c in cells:
        if not c.theory_bound > 0 or not math.isfinite(c.ratio):
            raise ValueError(f"cell N={c.N}: theory bound must be positive and ratio finite")
    p = cells[0].p
    if rank is None:
        rank = effective_rank(SpectrumSpec.parse(cells[0].spectrum_id, cells[0].d))
    threshold = rank ** (p - 1)
    eligible = [c for c in cells if c.N >= threshold and c.mean_error > 0]
    flags = []
    if len(eligible) < 4:
        if strict:
            raise ValueError(f"need >= 4 cells with N >= r^(p-1) = {threshold:g}, got {len(eligible)}")
        flags.append("insufficient_cells")
        slope = intercept = math.nan
        ci = (math.nan, math.nan)
    else:
        x = np.log([c.N for c in eligible])
        y = np.log([c.mean_error for c in eligible])
        fit = stats.linregress(x, y)
        half = stats.t.ppf(0.975, len(eligible) - 2) * fit.stderr
        slope, intercept = float(fit.slope), float(fit.intercept)
        ci = (slope - half, slope + half)
    if monotone_fraction(cells) < 0.9:
        flags.append("non_monotone")
    return RateFit(cells, slope, ci, intercept, ratio_spread(cells), threshold, len(eligible), flags)


def fit_curves(cells) -> list[RateFit]:
    groups: dict = {}
    for c in sorted(cells, key=Cell.key):
        groups.setdefault(curve_key(c), []).append(c)
    return [fit_rates(g, strict=False) for g in groups.values()]


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def cells_csv(cells) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for c in sorted(cells, key=Cell.key):
        w.writerow([_fmt(getattr(c, k)) for k in CSV_COLUMNS])
    return buf.getvalue()


def read_cells(path) -> list[Cell]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"{path}: expected columns {','.join(CSV_COLUMNS)}")
        return [Cell(int(r["d"]), int(r["N"]), int(r["p"]), r["model"], r["spectrum_id"],
                     float(r["mean_error"]), float(r["std_error"]), float(r["theory_bound"]),
                     float(r["ratio"]), int(r["seed"])) for r in reader]


def summary_text(fits, extra_flags: dict | None = None) -> str:
    lines = []
    for fit in fits:
        c = fit.cells[0]
        flags = list(fit.flags) + list((extra_flags or {}).get(curve_key(c), []))
        lines += [
            f"[curve model={c.model} spectrum={c.spectrum_id} d={c.d} p={c.p}]",
            f"cells = {len(fit.cells)}",
            f"regime = N >= r^(p-1) = {_fmt(fit.regime_threshold)}",
            f"fit_cells = {fit.fit_cells}",
            f"slope = {_fmt(fit.slope_largeN)}",
            f"slope_ci_low = {_fmt(fit.slope_ci[0])}",
            f"slope_ci_high = {_fmt(fit.slope_ci[1])}",
            f"intercept = {_fmt(fit.intercept)}",
            f"ratio_spread = {_fmt(fit.ratio_spread)}",
            f"flags = {','.join(sorted(flags)) or 'none'}",
            "",
        ]
    return "\n".join(lines)


def summary_path(csv_path) -> Path:
    p = Path(csv_path)
    return p.with_name(p.stem + ".summary.txt")


def emit_report(fit, path, extra_flags: dict | None = None) -> tuple[Path, Path]:
    """Write the per-cell CSV at ``path`` and a summary next to it.

    ``fit`` is a RateFit, a list of them, or a list of cells (fitted here).
    """
    if isinstance(fit, RateFit):
        fits = [fit]
    else:
        items = list(fit)
        fits = fit_curves(items) if items and isinstance(items[0], Cell) else items
    cells = [c for f in fits for c in f.cells]
    path = Path(path)
    path.write_text(cells_csv(cells))
    spath = summary_path(path)
    spath.write_text(summary_text(fits, extra_flags))
    return path, spath


@dataclass
class SimulationResult:
    cells: list[Cell]
    diagnostics: dict
    fits: list[RateFit]
    flags: dict

    @property
    def flagged(self) -> bool:
        return any(d.flagged for d in self.diagnostics.values())


def simulate(cfg: ExperimentConfig, log=sys.stderr) -> SimulationResult:
    """Run every cell of the config grid within the work budget."""
    grid = cfg.grid()
    works = [cell_work(d, N, p, cfg.trials_per_cell, cfg.restarts, cfg.max_iters)
             for _, d, p, N in grid]
    print(f"work estimate: {sum(works):.3g} (budget per cell {cfg.budget:.3g})", file=log)
    cells, diags, flags = [], {}, {}
    for (s, d, p, N), work in zip(grid, works):
        spec = SpectrumSpec.parse(s, d)
        key = (DistModel.parse(cfg.model).value, spec.label, d, p)
        if work > cfg.budget:
            diags[key + (N,)] = CellDiagnostics("skipped", 0, 0, 0.0, 0.0, work, skipped=True)
            flags.setdefault(key, []).append(f"skipped_N={N}")
            continue
        mean, se, diag = run_cell(cfg, d, N, p, spectrum=spec)
        diags[key + (N,)] = diag
        if diag.flagged:
            flags.setdefault(key, []).append(f"optimizer_failures_N={N}")
        bound = theory_bound(spec, N, p)
        cells.append(Cell(d, N, p, key[0], spec.label, mean, se, bound, mean / bound,
                          cfg.master_seed))
    fits = fit_curves(cells) if cells else []
    if cfg.trials_per_cell < 30:
        for f in fits:
            flags.setdefault(curve_key(f.cells[0]), []).append("few_trials")
    return SimulationResult(cells, diags, fits, flags)
