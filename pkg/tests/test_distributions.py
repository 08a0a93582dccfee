import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tensorconc.distributions import (PSI2_RADEMACHER, PSI2_STANDARD_GAUSSIAN, DistModel,
                                      SampleBatch, SeedTrace, SpectrumSpec, estimate_psi2,
                                      materialize_spectrum, sample_anisotropic,
                                      sample_isotropic)

MODELS = [m.value for m in DistModel]


def test_flat_top():
    assert materialize_spectrum(SpectrumSpec.flat_top(3, 5)).tolist() == [1, 1, 1, 0, 0]


def test_explicit_passthrough_and_sorting():
    assert materialize_spectrum(SpectrumSpec.explicit([2, 1])).tolist() == [2, 1]
    assert materialize_spectrum(SpectrumSpec.explicit([1, 3, 2])).tolist() == [3, 2, 1]


def test_poly_decay():
    np.testing.assert_allclose(materialize_spectrum(SpectrumSpec.poly_decay(1, 4)),
                               [1, 1 / 2, 1 / 3, 1 / 4], rtol=0, atol=1e-15)


def test_exp_decay():
    lam = materialize_spectrum(SpectrumSpec.exp_decay(0.5, 3))
    np.testing.assert_allclose(lam, [1, math.exp(-0.5), math.exp(-1.0)])


@pytest.mark.parametrize("spec", [
    SpectrumSpec.flat_top(3, 0),
    SpectrumSpec.flat_top(6, 5),
    SpectrumSpec.flat_top(0, 5),
    SpectrumSpec.poly_decay(0, 3),
    SpectrumSpec.exp_decay(-1, 3),
    SpectrumSpec.explicit([0, 0]),
    SpectrumSpec.explicit([1, -1]),
    SpectrumSpec("nonsense", 3, 1),
])
def test_invalid_spectra(spec):
    with pytest.raises(ValueError):
        materialize_spectrum(spec)


@pytest.mark.parametrize("text,dim,expected", [
    ("flat_top:2", 4, [1, 1, 0, 0]),
    ("identity", 3, [1, 1, 1]),
    ("explicit:4,1", None, [4, 1]),
    ("poly_decay:2", 2, [1, 0.25]),
])
def test_parse(text, dim, expected):
    np.testing.assert_allclose(materialize_spectrum(SpectrumSpec.parse(text, dim)), expected)


def test_parse_roundtrips_label():
    for spec in [SpectrumSpec.flat_top(2, 4), SpectrumSpec.poly_decay(1.5, 6),
                 SpectrumSpec.explicit([3.0, 0.5])]:
        assert SpectrumSpec.parse(spec.label, spec.dim) == spec


@settings(max_examples=60, deadline=None)
@given(kind=st.sampled_from(["flat_top", "poly_decay", "exp_decay"]),
       d=st.integers(1, 40), param=st.floats(0.05, 4.0))
def test_spectrum_invariants(kind, d, param):
    if kind == "flat_top":
        spec = SpectrumSpec.flat_top(max(1, min(d, int(param * 10))), d)
    else:
        spec = SpectrumSpec(kind, d, param)
    lam = materialize_spectrum(spec)
    assert lam.shape == (d,)
    assert lam[0] > 0
    assert np.all(np.diff(lam) <= 0)


def test_rademacher_support():
    rows = sample_isotropic("rademacher", 2, 4, SeedTrace(3)).rows
    assert rows.shape == (4, 2)
    assert set(np.unique(rows)) <= {-1.0, 1.0}


def test_sphere_row_norm():
    rows = sample_isotropic("uniform_sphere_scaled", 3, 1, SeedTrace(0)).rows
    assert abs(np.linalg.norm(rows[0]) - math.sqrt(3)) < 1e-14


def test_unknown_model():
    with pytest.raises(ValueError):
        sample_isotropic("cauchy", 2, 3, SeedTrace(0))


def test_gaussian_covariance_near_identity():
    rows = sample_isotropic("gaussian", 10, 100_000, SeedTrace(1)).rows
    err = np.linalg.norm(rows.T @ rows / rows.shape[0] - np.eye(10), 2)
    assert err < 0.05


@pytest.mark.parametrize("model", MODELS)
def test_isotropy_across_seeds(model):
    N, d = 100_000, 8
    ok = 0
    for s in range(20):
        rows = sample_isotropic(model, d, N, SeedTrace(s, 0, "isotropy")).rows
        err = np.linalg.norm(rows.T @ rows / N - np.eye(d), 2)
        ok += err <= 5 / math.sqrt(N) * math.sqrt(d)
    assert ok >= 19


@pytest.mark.parametrize("model", MODELS)
def test_determinism(model):
    a = sample_anisotropic(model, SpectrumSpec.poly_decay(1, 4), 50, SeedTrace(9, 2, "x")).rows
    b = sample_anisotropic(model, SpectrumSpec.poly_decay(1, 4), 50, SeedTrace(9, 2, "x")).rows
    assert a.tobytes() == b.tobytes()


def test_streams_differ_by_trial_and_purpose():
    base = sample_isotropic("gaussian", 3, 5, SeedTrace(1, 0, "a")).rows
    assert not np.array_equal(base, sample_isotropic("gaussian", 3, 5, SeedTrace(1, 1, "a")).rows)
    assert not np.array_equal(base, sample_isotropic("gaussian", 3, 5, SeedTrace(1, 0, "b")).rows)


def test_anisotropic_zero_eigenvalue():
    rows = sample_anisotropic("gaussian", np.array([1.0, 0.0]), 100, SeedTrace(0)).rows
    assert np.all(rows[:, 1] == 0)


def test_anisotropic_rademacher_scaling():
    rows = sample_anisotropic("rademacher", np.array([4.0, 1.0]), 1, SeedTrace(5)).rows
    assert abs(rows[0, 0]) == 2 and abs(rows[0, 1]) == 1


@pytest.mark.parametrize("model", MODELS)
def test_identity_spectrum_matches_isotropic_bits(model):
    t = SeedTrace(4, 1, "eq")
    a = sample_anisotropic(model, SpectrumSpec.identity(5), 30, t).rows
    b = sample_isotropic(model, 5, 30, t).rows
    assert a.tobytes() == b.tobytes()


def test_rotation_hook_changes_covariance():
    q, _ = np.linalg.qr(np.random.default_rng(0).standard_normal((3, 3)))
    lam = np.array([3.0, 1.0, 0.5])
    rows = sample_anisotropic("gaussian", lam, 200_000, SeedTrace(2), rotation=q).rows
    cov = rows.T @ rows / rows.shape[0]
    np.testing.assert_allclose(cov, q @ np.diag(lam) @ q.T, atol=0.05)


def test_batch_is_read_only():
    b = SampleBatch(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        b.rows[0, 0] = 1.0


def test_psi2_constant_samples():
    c = 1.7
    assert estimate_psi2(np.full(500, c)) == pytest.approx(c / math.sqrt(math.log(2)), rel=1e-6)


def test_psi2_zero_samples():
    assert estimate_psi2(np.zeros(200)) == 0.0


def test_psi2_rejects_small_input():
    with pytest.raises(ValueError):
        estimate_psi2(np.ones(10))


def test_psi2_constants_match_defining_equation():
    # E exp(g^2 / t^2) = (1 - 2/t^2)^{-1/2} for g ~ N(0,1); equals 2 at t^2 = 8/3.
    t = PSI2_STANDARD_GAUSSIAN
    assert (1 - 2 / t ** 2) ** -0.5 == pytest.approx(2.0, rel=1e-14)
    assert math.exp(1 / PSI2_RADEMACHER ** 2) == pytest.approx(2.0, rel=1e-14)


def test_psi2_standard_normal():
    z = np.random.default_rng(0).standard_normal(1_000_000)
    assert abs(estimate_psi2(z) - PSI2_STANDARD_GAUSSIAN) <= 0.05 * PSI2_STANDARD_GAUSSIAN


@settings(max_examples=30, deadline=None)
@given(scale=st.floats(0.01, 100.0), seed=st.integers(0, 10_000))
def test_psi2_is_homogeneous(scale, seed):
    z = np.random.default_rng(seed).standard_normal(500)
    assert estimate_psi2(scale * z) == pytest.approx(scale * estimate_psi2(z), rel=1e-5)


@pytest.mark.parametrize("model", MODELS)
def test_psi2_over_marginals_is_stable(model):
    d, N = 6, 100_000
    Z = sample_isotropic(model, d, N, SeedTrace(8)).rows
    V = np.random.default_rng(1).standard_normal((d, 50))
    V /= np.linalg.norm(V, axis=0)
    psi = np.array([estimate_psi2(Z @ V[:, j]) for j in range(50)])
    assert psi.max() / psi.min() <= 3.0
