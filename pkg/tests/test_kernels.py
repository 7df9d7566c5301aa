import math

import numpy as np
import pytest

from biascal.errors import ConfigError, DimensionMismatchError
from biascal.kernels import (
    Constant,
    Heteroscedastic,
    Hyper,
    Matern32,
    Product,
    RBF,
    Sum,
    WhiteNoise,
    amplitude_profile,
    eval_kernel,
    gram,
    gram_values,
    split_noise,
)

SQRT3 = math.sqrt(3.0)


def random_smooth_spec(rng):
    kind = rng.integers(0, 4)
    amp = float(rng.uniform(0.3, 2.0))
    ell = float(rng.uniform(0.2, 2.0))
    if kind == 0:
        return Matern32(amp, ell)
    if kind == 1:
        return RBF(amp, ell)
    if kind == 2:
        return Sum(Matern32(amp, ell), RBF(1.0, 0.7))
    return Product(Constant(float(rng.uniform(0.5, 2.0))), Matern32(amp, ell))


def test_matern_zero_distance_is_amplitude_squared():
    assert eval_kernel(Matern32(1.0, 1.0), [0.3], [0.3]) == 1.0
    assert eval_kernel(Matern32(2.0, 0.5), [0.1], [0.1]) == pytest.approx(4.0)


def test_matern_unit_distance_closed_form():
    expected = (1.0 + SQRT3) * math.exp(-SQRT3)  # ~0.48335
    assert eval_kernel(Matern32(1.0, 1.0), [0.0], [1.0]) == pytest.approx(expected, rel=1e-12)


def test_white_noise_case_split():
    wn = WhiteNoise(0.25)
    assert eval_kernel(wn, [0.3], [0.3]) == 0.25
    assert eval_kernel(wn, [0.3], [0.4]) == 0.0


def test_gram_sum_adds_noise_on_diagonal_only():
    x = np.array([0.0, 0.5, 1.0])
    g = gram_values(Sum(Matern32(1.0, 1.0), WhiteNoise(0.04)), x)
    base = gram_values(Matern32(1.0, 1.0), x)
    assert np.allclose(g, base + 0.04 * np.eye(3), atol=0, rtol=0)


def test_gram_white_noise_uses_record_identity_not_value_equality():
    # repeated measurements at one location each get their own diagonal entry
    x = np.array([0.5, 0.5, 0.5])
    g = gram_values(WhiteNoise(0.09), x)
    assert np.allclose(g, 0.09 * np.eye(3))
    # cross gram between different record lists carries no noise
    xq = np.array([0.5])
    cross = gram_values(WhiteNoise(0.09), xq, x, same=False)
    assert np.all(cross == 0.0)


def test_heteroscedastic_exact_at_anchors():
    het = Heteroscedastic(
        anchors=[[0.0], [1.0]],
        log_variances=[math.log(0.01), math.log(0.09)],
        bandwidth=0.5,
    )
    g = gram_values(het, np.array([0.0, 1.0]))
    assert np.allclose(g, np.diag([0.01, 0.09]))
    assert eval_kernel(het, [0.0], [0.0]) == pytest.approx(0.01)
    assert eval_kernel(het, [0.0], [1.0]) == 0.0


def test_heteroscedastic_between_anchors_within_range():
    het = Heteroscedastic(
        anchors=[[0.0], [1.0]],
        log_variances=[math.log(0.01), math.log(0.09)],
        bandwidth=0.5,
    )
    for xq in np.linspace(0.05, 0.95, 11):
        v = eval_kernel(het, [xq], [xq])
        assert 0.01 <= v <= 0.09


def test_heteroscedastic_rejects_duplicate_anchors():
    with pytest.raises(ConfigError):
        Heteroscedastic(anchors=[[0.0], [0.0]], log_variances=[0.0, 0.0], bandwidth=1.0)


def test_symmetry_of_eval_kernel_all_variants():
    rng = np.random.default_rng(7)
    het = Heteroscedastic(
        anchors=rng.uniform(0, 1, size=(4, 2)),
        log_variances=list(rng.uniform(-6, -1, size=4)),
        bandwidth=0.4,
    )
    specs = [
        Constant(1.3),
        Matern32(1.2, 0.6),
        RBF(0.8, 0.9),
        WhiteNoise(0.2),
        het,
        Sum(Matern32(1.0, 1.0), WhiteNoise(0.1)),
        Product(Constant(2.0), RBF(1.0, 0.5)),
    ]
    for spec in specs:
        for _ in range(20):
            a = rng.uniform(-1, 2, size=2)
            b = rng.uniform(-1, 2, size=2)
            assert eval_kernel(spec, a, b) == pytest.approx(eval_kernel(spec, b, a), abs=1e-15)


def test_gram_symmetric_and_psd_for_noise_free_specs():
    rng = np.random.default_rng(11)
    for _ in range(10):
        spec = random_smooth_spec(rng)
        x = rng.uniform(-2, 2, size=(12, 1))
        g = gram_values(spec, x)
        assert np.max(np.abs(g - g.T)) < 1e-12
        ev = np.linalg.eigvalsh(g)
        assert ev.min() >= -1e-10 * max(ev.max(), 1e-30)


def test_gram_matrix_wrapper_carries_coordinates():
    x = np.linspace(0, 1, 5)
    g = gram(Matern32(1.0, 1.0), x)
    assert g.values.shape == (5, 5)
    assert g.rows.shape == (5, 1)
    assert g.note == ""


def test_semivariogram_nugget():
    # gamma(h) = k(x,x) - k(x, x+h) tends to sigma_n^2 > 0 as h -> 0
    spec = Sum(Matern32(1.0, 0.5), WhiteNoise(0.04))
    x = np.array([0.3])
    h = 1e-9
    gamma = eval_kernel(spec, x, x) - eval_kernel(spec, x, x + h)
    assert gamma == pytest.approx(0.04, abs=1e-7)


def test_dimension_mismatch_names_the_node():
    with pytest.raises(DimensionMismatchError):
        eval_kernel(Matern32(1.0, 1.0), [0.0, 1.0], [0.0])
    with pytest.raises(DimensionMismatchError):
        gram_values(RBF(1.0, 1.0), np.zeros((3, 1)), np.zeros((3, 2)), same=False)


def test_empty_coordinate_list_rejected():
    with pytest.raises(ConfigError):
        gram_values(Matern32(1.0, 1.0), np.zeros((0, 1)))


def test_hyper_bounds_validation():
    with pytest.raises(ConfigError):
        Hyper(1.0, bounds=(2.0, 0.5))
    with pytest.raises(ConfigError):
        Hyper(5.0, bounds=(0.1, 1.0))


def test_split_noise_separates_additive_components():
    spec = Sum(Sum(Matern32(1.0, 1.0), WhiteNoise(0.1)), RBF(1.0, 1.0))
    smooth, noise = split_noise(spec)
    assert not smooth.contains_noise()
    assert isinstance(noise, WhiteNoise)
    with pytest.raises(ConfigError):
        split_noise(Product(Matern32(1.0, 1.0), WhiteNoise(0.1)))


def test_amplitude_profile_detection():
    # free Matern amplitude: quadratic scale
    spec = Matern32(Hyper(1.5, free=True, bounds=(1e-3, 1e3)), 0.7)
    hyper, exponent, unit, d = amplitude_profile(spec)
    assert exponent == 2 and d == 0.0
    assert unit.amplitude.value == 1.0
    # free constant prefactor: linear scale, fixed white noise becomes the diagonal
    spec = Sum(
        Product(Constant(Hyper(0.5, free=True, bounds=(1e-6, 1e3))), Matern32(1.0, 0.7)),
        WhiteNoise(0.01),
    )
    hyper, exponent, unit, d = amplitude_profile(spec)
    assert exponent == 1 and d == 0.01
    # two free parameters: no profile
    spec = Matern32(
        Hyper(1.0, free=True, bounds=(1e-3, 1e3)), Hyper(0.5, free=True, bounds=(1e-2, 10))
    )
    assert amplitude_profile(spec) is None


def test_fitted_spec_is_a_clone():
    spec = Matern32(Hyper(1.0, free=True, bounds=(1e-3, 1e3)), 0.5)
    clone = spec.clone()
    clone.amplitude.value = 2.0
    assert spec.amplitude.value == 1.0
