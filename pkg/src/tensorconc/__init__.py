"""Monte Carlo checks of concentration for empirical moment tensors of subgaussian vectors."""

from .complexity import (LpMarginal, complexity_profile, effective_rank, ellipsoid_radius,
                         gauss_complexity_mc, lp_marginal_norm)
from .deviation import (DeviationProcess, eval_Z, increment_subgauss_check, sup_tail_check,
                        verify_symmetrization)
from .distributions import (DistModel, SampleBatch, SeedTrace, SpectrumSpec, estimate_psi2,
                            materialize_spectrum, sample_anisotropic, sample_isotropic)
from .experiments import (ExperimentConfig, RateFit, emit_report, fit_rates, run_cell,
                          theory_bound, theory_bound_T)
from .order_stats import rearrange, threshold_k, verify_lemma
from .sphere_norm import Domain, SupResult, sup_ascent, sup_exact_p2, sup_grid
from .tensor_moments import (MomentFunctional, PopulationOracle, centered_gradient,
                             centered_value, empirical_moment, population_moment)

__all__ = [
    "DeviationProcess", "DistModel", "Domain", "ExperimentConfig", "LpMarginal", "MomentFunctional",
    "PopulationOracle", "RateFit", "SampleBatch", "SeedTrace", "SpectrumSpec", "SupResult",
    "centered_gradient", "centered_value", "complexity_profile", "effective_rank",
    "ellipsoid_radius", "emit_report", "empirical_moment", "estimate_psi2", "eval_Z",
    "fit_rates", "gauss_complexity_mc", "increment_subgauss_check", "lp_marginal_norm",
    "materialize_spectrum", "population_moment", "rearrange", "run_cell", "sample_anisotropic",
    "sample_isotropic", "sup_ascent", "sup_exact_p2", "sup_grid", "sup_tail_check",
    "theory_bound", "theory_bound_T", "threshold_k", "verify_lemma", "verify_symmetrization",
]
