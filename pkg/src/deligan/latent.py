"""Latent sources: fixed simple priors and the learnable Gaussian mixture."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .nets import ConfigError

SIGMA_FLOOR = 1e-4


@dataclass
class MixtureLatent:
    """N diagonal Gaussians in a K-dimensional latent space, equally weighted.

    ``mu`` and ``sigma`` are ``(N, K)`` leaf tensors trained with the generator.
    """

    mu: Tensor
    sigma: Tensor

    @property
    def n_components(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    def parameters(self) -> list[Tensor]:
        return [self.mu, self.sigma]

    def clamp_sigma(self, floor: float = SIGMA_FLOOR) -> None:
        np.maximum(self.sigma.values, floor, out=self.sigma.values)

    def sample(self, batch: int, rng: np.random.Generator) -> "LatentBatch":
        return sample_mixture(self, batch, rng)


@dataclass
class LatentBatch:
    z: Tensor
    component_ids: np.ndarray
    eps: np.ndarray


def mixture_init(n_components: int, dim: int, rng: np.random.Generator,
                 sigma0: float = 0.2) -> MixtureLatent:
    """Means uniform in (-1, 1), every standard deviation set to ``sigma0``."""
    if n_components < 1 or dim < 1:
        raise ConfigError(f"mixture needs N >= 1 and K >= 1, got N={n_components} K={dim}")
    if sigma0 <= 0:
        raise ConfigError(f"sigma0 must be positive, got {sigma0}")
    mu = rng.uniform(-1.0, 1.0, size=(n_components, dim))
    sigma = np.full((n_components, dim), float(sigma0))
    return MixtureLatent(Tensor(mu, requires_grad=True, name="latent.mu"),
                         Tensor(sigma, requires_grad=True, name="latent.sigma"))


def sample_mixture(mix: MixtureLatent, batch: int, rng: np.random.Generator,
                   per_component: int = 1,
                   component_ids: Optional[np.ndarray] = None) -> LatentBatch:
    """Reparameterized draw ``z = mu[c] + sigma[c] * eps``.

    Components are picked uniformly with replacement. With ``per_component=m``
    each picked component contributes ``m`` consecutive rows, which averages
    the mu/sigma gradients over more noise draws. ``component_ids`` overrides
    the pick entirely.
    """
    if batch < 1:
        raise ConfigError(f"batch must be >= 1, got {batch}")
    if component_ids is None:
        if per_component < 1:
            raise ConfigError(f"per_component must be >= 1, got {per_component}")
        n_picks = -(-batch // per_component)
        picks = rng.integers(0, mix.n_components, size=n_picks)
        component_ids = np.repeat(picks, per_component)[:batch]
    else:
        component_ids = np.asarray(component_ids, dtype=np.int64)
    eps = rng.standard_normal((batch, mix.dim))
    z = ad.add(ad.take_rows(mix.mu, component_ids),
               ad.mul(ad.take_rows(mix.sigma, component_ids), Tensor(eps)))
    return LatentBatch(z, component_ids, eps)


def sample_simple(kind: str, batch: int, dim: int, rng: np.random.Generator) -> Tensor:
    """i.i.d. ``uniform`` (on (-1, 1)) or ``normal`` latent rows, no gradient path."""
    if kind == "uniform":
        return Tensor(rng.uniform(-1.0, 1.0, size=(batch, dim)))
    if kind == "normal":
        return Tensor(rng.standard_normal((batch, dim)))
    raise ConfigError(f"unknown simple prior {kind!r}")


def mixture_pdf(mix: MixtureLatent, z) -> float:
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    sigma = mix.sigma.values
    if (sigma <= 0).any():
        raise ValueError("mixture_pdf: sigma entries must be positive")
    if z.shape[0] != mix.dim:
        raise ad.ShapeError(f"mixture_pdf: point of size {z.shape[0]}, latent dim {mix.dim}")
    u = (z - mix.mu.values) / sigma
    log_dens = -0.5 * (u * u).sum(axis=1) - np.log(sigma).sum(axis=1) - 0.5 * mix.dim * np.log(2 * np.pi)
    return float(np.exp(log_dens).mean())


def sigma_penalty(mix: MixtureLatent, lam: float) -> Tensor:
    """``lam * mean_i mean_k (1 - sigma_ik)^2``; pulls each std-dev toward 1."""
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    return ad.mul(ad.mean(ad.square(ad.sub(1.0, mix.sigma))), float(lam))


def mixture_to_dict(mix: MixtureLatent) -> dict:
    return {"mu": mix.mu.values.tolist(), "sigma": mix.sigma.values.tolist()}


def mixture_from_dict(d: dict) -> MixtureLatent:
    return MixtureLatent(Tensor(np.array(d["mu"], dtype=np.float64), requires_grad=True, name="latent.mu"),
                         Tensor(np.array(d["sigma"], dtype=np.float64), requires_grad=True, name="latent.sigma"))


def write_mixture_csv(mix: MixtureLatent, path) -> None:
    """One row per component: ``mu_0..mu_{K-1}, sigma_0..sigma_{K-1}``."""
    k = mix.dim
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow([f"mu_{j}" for j in range(k)] + [f"sigma_{j}" for j in range(k)])
        for mu, sg in zip(mix.mu.values, mix.sigma.values):
            w.writerow([repr(float(v)) for v in mu] + [repr(float(v)) for v in sg])
