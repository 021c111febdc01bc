import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deligan import autodiff as ad
from deligan.autodiff import Tensor
from deligan.latent import (SIGMA_FLOOR, MixtureLatent, mixture_from_dict, mixture_init, mixture_pdf,
                            mixture_to_dict, sample_mixture, sample_simple, sigma_penalty,
                            write_mixture_csv)
from deligan.nets import ConfigError

from conftest import fd_grad


def fixed_mixture(mu, sigma) -> MixtureLatent:
    return MixtureLatent(Tensor(np.array(mu, dtype=float), requires_grad=True),
                         Tensor(np.array(sigma, dtype=float), requires_grad=True))


class TestInit:
    def test_sigma_starts_at_sigma0(self, rng):
        mix = mixture_init(50, 2, rng, sigma0=0.2)
        assert (mix.sigma.values == 0.2).all()

    @pytest.mark.parametrize("seed", range(5))
    def test_means_inside_unit_box(self, seed):
        mix = mixture_init(50, 2, np.random.default_rng(seed))
        assert (np.abs(mix.mu.values) < 1).all()

    def test_shapes(self, rng):
        mix = mixture_init(50, 2, rng)
        assert mix.mu.shape == (50, 2) and mix.sigma.shape == (50, 2)
        assert (mix.n_components, mix.dim) == (50, 2)

    @pytest.mark.parametrize("n,k,s0", [(0, 2, 0.2), (3, 0, 0.2), (3, 2, 0.0), (3, 2, -1.0)])
    def test_invalid(self, n, k, s0, rng):
        with pytest.raises(ConfigError):
            mixture_init(n, k, rng, sigma0=s0)

    def test_clamp_sigma(self):
        mix = fixed_mixture([[0.0, 0.0]], [[-0.5, 0.3]])
        mix.clamp_sigma()
        assert mix.sigma.values.tolist() == [[SIGMA_FLOOR, 0.3]]


class TestSampling:
    def test_zero_sigma_returns_mu_rows(self, rng):
        mix = mixture_init(10, 3, rng)
        mix.sigma.values[:] = 0
        lb = sample_mixture(mix, 64, rng)
        assert np.array_equal(lb.z.values, mix.mu.values[lb.component_ids])

    def test_reparameterization_identity_is_exact(self, rng):
        mix = mixture_init(7, 4, rng)
        mix.sigma.values[:] = rng.uniform(0.1, 2.0, size=(7, 4))
        lb = sample_mixture(mix, 200, rng)
        c = lb.component_ids
        assert (lb.z.values - (mix.mu.values[c] + mix.sigma.values[c] * lb.eps) == 0).all()

    def test_monte_carlo_moments(self):
        mix = fixed_mixture([[0.0, 0.0]], [[1.0, 1.0]])
        z = sample_mixture(mix, 100_000, np.random.default_rng(5)).z.values
        assert np.all(np.abs(z.mean(0)) < 0.02)
        assert np.all(np.abs(z.std(0) - 1) < 0.02)

    def test_gradients_of_sum_z(self, rng):
        mix = mixture_init(6, 2, rng)
        lb = sample_mixture(mix, 4, rng)
        ad.zero_grad(mix.parameters())
        ad.backward(ad.sum(lb.z))
        counts = np.bincount(lb.component_ids, minlength=6)[:, None]
        expected_sigma = np.zeros((6, 2))
        np.add.at(expected_sigma, lb.component_ids, lb.eps)
        np.testing.assert_array_equal(mix.mu.grad, np.repeat(counts, 2, axis=1))
        np.testing.assert_allclose(mix.sigma.grad, expected_sigma, rtol=0, atol=1e-15)
        unused = counts[:, 0] == 0
        assert unused.any()
        assert (mix.mu.grad[unused] == 0).all() and (mix.sigma.grad[unused] == 0).all()

    def test_component_frequency_within_five_sigma(self):
        mix = mixture_init(50, 2, np.random.default_rng(0))
        ids = sample_mixture(mix, 100_000, np.random.default_rng(1)).component_ids
        counts = np.bincount(ids, minlength=50)
        mean, sd = 100_000 / 50, np.sqrt(100_000 * (1 / 50) * (49 / 50))
        assert np.all(np.abs(counts - mean) <= 5 * sd)

    def test_per_component_groups(self, rng):
        mix = mixture_init(20, 2, rng)
        ids = sample_mixture(mix, 10, rng, per_component=4).component_ids
        assert ids.shape == (10,)
        assert ids[0] == ids[3] and ids[4] == ids[7] and ids[8] == ids[9]

    def test_explicit_component_ids(self, rng):
        mix = mixture_init(5, 2, rng)
        lb = sample_mixture(mix, 3, rng, component_ids=[4, 4, 0])
        assert lb.component_ids.tolist() == [4, 4, 0]

    def test_same_seed_same_batch(self, rng):
        mix = mixture_init(5, 2, rng)
        a = sample_mixture(mix, 16, np.random.default_rng(3))
        b = sample_mixture(mix, 16, np.random.default_rng(3))
        assert np.array_equal(a.z.values, b.z.values)

    def test_zero_batch_rejected(self, rng):
        with pytest.raises(ConfigError):
            sample_mixture(mixture_init(2, 2, rng), 0, rng)


class TestSimplePrior:
    def test_uniform_in_open_box(self, rng):
        z = sample_simple("uniform", 1000, 3, rng)
        assert (np.abs(z.values) < 1).all() and not z.requires_grad

    def test_normal_mean(self):
        z = sample_simple("normal", 100_000, 2, np.random.default_rng(9)).values
        assert np.all(np.abs(z.mean(0)) < 0.02)

    def test_deterministic(self):
        a = sample_simple("uniform", 8, 2, np.random.default_rng(4)).values
        b = sample_simple("uniform", 8, 2, np.random.default_rng(4)).values
        assert np.array_equal(a, b)

    def test_unknown_kind(self, rng):
        with pytest.raises(ConfigError):
            sample_simple("laplace", 2, 2, rng)


class TestPdf:
    def test_standard_normal_mode(self):
        assert mixture_pdf(fixed_mixture([[0.0]], [[1.0]]), [0.0]) == pytest.approx(0.39894, abs=1e-5)

    def test_symmetric_pair(self):
        mix = fixed_mixture([[-1.0], [1.0]], [[1.0], [1.0]])
        assert mixture_pdf(mix, [0.0]) == pytest.approx(0.24197, abs=1e-5)

    def test_integrates_to_one(self):
        mix = fixed_mixture([[-2.0], [0.5], [3.0]], [[0.5], [1.0], [0.3]])
        grid = np.linspace(-10, 10, 20001)
        dens = np.array([mixture_pdf(mix, [g]) for g in grid])
        assert abs(np.sum((dens[1:] + dens[:-1]) * np.diff(grid)) / 2 - 1) < 1e-3

    def test_nonpositive_sigma_is_domain_error(self):
        with pytest.raises(ValueError):
            mixture_pdf(fixed_mixture([[0.0]], [[0.0]]), [0.0])

    @settings(max_examples=30, deadline=None)
    @given(seed=st.integers(0, 10_000))
    def test_permutation_invariant(self, seed):
        r = np.random.default_rng(seed)
        mu, sigma = r.normal(size=(5, 2)), r.uniform(0.2, 2, size=(5, 2))
        z = r.normal(size=2)
        perm = r.permutation(5)
        a = mixture_pdf(fixed_mixture(mu, sigma), z)
        b = mixture_pdf(fixed_mixture(mu[perm], sigma[perm]), z)
        assert a == pytest.approx(b, rel=1e-12)


class TestPenalty:
    def test_zero_at_unit_sigma(self, rng):
        mix = mixture_init(4, 3, rng, sigma0=1.0)
        assert sigma_penalty(mix, 5.0).item() == 0.0

    def test_hand_value(self):
        assert sigma_penalty(fixed_mixture([[0.0], [0.0]], [[0.5], [1.5]]), 1.0).item() == 0.25

    def test_gradient_k1_matches_formula_and_fd(self, rng):
        sig = rng.uniform(0.1, 2.0, size=(6, 1))
        lam = 0.7
        mix = fixed_mixture(np.zeros((6, 1)), sig)
        ad.backward(sigma_penalty(mix, lam))
        np.testing.assert_allclose(mix.sigma.grad, -2 * lam * (1 - sig) / 6, rtol=1e-12)
        fd = fd_grad(lambda s: lam * np.mean((1 - s) ** 2), sig)
        assert np.max(np.abs(mix.sigma.grad - fd)) < 1e-6

    def test_k_entries_averaged(self, rng):
        sig = rng.uniform(0.1, 2.0, size=(4, 3))
        mix = fixed_mixture(np.zeros((4, 3)), sig)
        ad.backward(sigma_penalty(mix, 2.0))
        np.testing.assert_allclose(mix.sigma.grad, -2 * 2.0 * (1 - sig) / 12, rtol=1e-12)

    def test_negative_lambda(self, rng):
        with pytest.raises(ConfigError):
            sigma_penalty(mixture_init(2, 2, rng), -1.0)


class TestSerialization:
    def test_dict_round_trip(self, rng):
        mix = mixture_init(5, 3, rng)
        back = mixture_from_dict(mixture_to_dict(mix))
        assert np.array_equal(back.mu.values, mix.mu.values)
        assert np.array_equal(back.sigma.values, mix.sigma.values)

    def test_csv_export(self, rng, tmp_path):
        mix = mixture_init(3, 2, rng)
        write_mixture_csv(mix, tmp_path / "m.csv")
        with open(tmp_path / "m.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["mu_0", "mu_1", "sigma_0", "sigma_1"]
        got = np.array(rows[1:], dtype=float)
        assert np.array_equal(got[:, :2], mix.mu.values) and np.array_equal(got[:, 2:], mix.sigma.values)
