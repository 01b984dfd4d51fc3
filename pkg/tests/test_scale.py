import numpy as np
import pytest
from hypothesis import given, strategies as st

from roughevolve.scale import (ScaleError, ScaleSpec, SpectralField, apply_multiplier,
                               field_to_csv, interpolation_defect, inverse_transform,
                               load_field, norm_beta, save_field, transform)

from conftest import random_packed


def test_cosine_has_half_amplitude_modes():
    spec = ScaleSpec(4)
    x = spec.sample_points(18)
    f = transform(np.cos(np.pi * x)[None], 4)
    expect = np.zeros(9, complex)
    expect[[3, 5]] = 0.5
    np.testing.assert_allclose(f.coeffs[0], expect, atol=1e-15)


def test_weights_follow_shifted_laplacian():
    spec = ScaleSpec(3, period=2.0)
    np.testing.assert_allclose(spec.lam, 1 + (np.pi * np.arange(-3, 4)) ** 2)
    np.testing.assert_allclose(spec.weights(0.5), np.sqrt(spec.lam))


@given(st.integers(1, 12), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_pack_unpack_round_trip(N, n1, seed):
    spec = ScaleSpec(N, n1)
    r = np.random.default_rng(seed).standard_normal(spec.dim)
    f = SpectralField.from_packed(spec, r)
    assert f.is_real()
    np.testing.assert_allclose(f.packed(), r, atol=1e-14)


@given(st.integers(0, 2**32 - 1), st.floats(0, 1))
def test_packed_norm_is_isometric(seed, beta):
    spec = ScaleSpec(6, 2)
    r = np.random.default_rng(seed).standard_normal(spec.dim)
    f = SpectralField.from_packed(spec, r)
    assert spec.packed_norm(r, beta) == pytest.approx(norm_beta(f, beta), rel=1e-12)


def test_samples_round_trip_and_transform_agree():
    spec = ScaleSpec(7, 2)
    r = random_packed(spec, np.random.default_rng(0))
    s = spec.to_samples(r.reshape(2, -1))
    np.testing.assert_allclose(spec.from_samples(s).reshape(-1), r, atol=1e-13)
    f = SpectralField.from_packed(spec, r)
    np.testing.assert_allclose(inverse_transform(f), s, atol=1e-13)


def test_too_few_samples_rejected():
    with pytest.raises(ScaleError):
        inverse_transform(SpectralField.zeros(4), n=8)


def test_galerkin_product_matches_dealiased_collocation():
    spec = ScaleSpec(5)
    rng = np.random.default_rng(1)
    f, v = rng.standard_normal((2, spec.dim))
    galerkin = spec.multiplication_operator(f) @ v
    n = spec.min_samples
    prod = spec.to_samples(f, n) * spec.to_samples(v, n)
    np.testing.assert_allclose(galerkin, spec.from_samples(prod), atol=1e-12)


def test_derivative_of_sine():
    spec = ScaleSpec(3)
    x = spec.sample_points()
    r = spec.from_samples(np.sin(np.pi * x))
    np.testing.assert_allclose(spec.to_samples(spec.derivative(r)), np.pi * np.cos(np.pi * x),
                               atol=1e-12)


@given(st.integers(0, 2**32 - 1))
def test_interpolation_inequality(seed):
    rng = np.random.default_rng(seed)
    a, b, g = np.sort(rng.uniform(0, 1, 3))
    f = SpectralField.from_packed(ScaleSpec(10), random_packed(ScaleSpec(10), rng, 0.3))
    assert interpolation_defect(f, a, b, g) <= 1e-12


def test_interpolation_order_checked():
    with pytest.raises(ScaleError):
        interpolation_defect(SpectralField.mode(1, 3), 0.6, 0.2, 0.9)


def test_negative_index_rejected():
    with pytest.raises(ScaleError):
        ScaleSpec(3).weights(-0.1)


def test_multiplier_forms_agree():
    f = SpectralField.from_packed(ScaleSpec(4, 2), np.arange(18.0))
    s = np.linspace(1, 2, 9)
    a = apply_multiplier(f, s)
    b = apply_multiplier(f, lambda k: s)
    mats = np.einsum("k,ij->kij", s, np.eye(2))
    c = apply_multiplier(f, mats)
    np.testing.assert_allclose(a.coeffs, b.coeffs)
    np.testing.assert_allclose(a.coeffs, c.coeffs)


def test_field_io_round_trip(tmp_path):
    f = SpectralField.from_packed(ScaleSpec(5, 3), np.random.default_rng(2).standard_normal(33))
    save_field(f, tmp_path / "f.bin")
    g = load_field(tmp_path / "f.bin")
    np.testing.assert_array_equal(f.coeffs, g.coeffs)
    field_to_csv(f, tmp_path / "f.csv")
    rows = (tmp_path / "f.csv").read_text().splitlines()
    assert rows[0] == "x,u1,u2,u3" and len(rows) == 1 + f.spec.min_samples
