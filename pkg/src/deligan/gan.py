"""Adversarial objectives, model variants and the alternating training loop.

Six variants share one discriminator layout and differ only in how latent
codes reach the generator:

=========  ==============================================================
baseline   z ~ U(-1, 1), one-hidden-layer generator
deligan    z drawn from a learnable N-component Gaussian mixture
gan_pp     extra N-unit dense layer between z and the generator
ensemble   N generators, generator i fed by mixture component i
nx         generator hidden layers N times wider
moe        N-dim one-hot component code appended to z
=========  ==============================================================
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ArchConfig, ExperimentConfig, substream
from .data import Dataset, ToySpec, TOY_PRESETS, load_mnist_idx, sample_toy, subset_balanced
from .latent import (MixtureLatent, mixture_from_dict, mixture_init, mixture_to_dict,
                     sample_mixture, sample_simple, sigma_penalty)
from .nets import (Adam, AdamState, ConfigError, Mlp, adam_step, mlp_from_dict, mlp_new,
                   mlp_to_dict)

log = logging.getLogger(__name__)

VARIANTS = ("baseline", "deligan", "gan_pp", "ensemble", "nx", "moe")
MODEL_VERSION = 1


@dataclass
class SimplePrior:
    kind: str
    dim: int


@dataclass
class OneHotPrior:
    """Simple prior with a uniformly drawn one-hot code of width ``n`` appended."""

    kind: str
    dim: int
    n: int


LatentSource = Union[SimplePrior, OneHotPrior, MixtureLatent]


@dataclass
class GanModel:
    variant: str
    generators: list[Mlp]
    discriminator: Mlp
    latent: LatentSource
    latent_dim: int
    n_components: int

    @property
    def data_dim(self) -> int:
        return self.generators[0].out_dim

    @property
    def mixture(self) -> Optional[MixtureLatent]:
        return self.latent if isinstance(self.latent, MixtureLatent) else None

    def generator_parameters(self) -> list[Tensor]:
        return [p for g in self.generators for p in g.parameters()]

    def latent_parameters(self) -> list[Tensor]:
        return self.mixture.parameters() if self.mixture is not None else []

    def parameter_counts(self) -> dict:
        g = sum(p.size for p in self.generator_parameters())
        d = self.discriminator.num_parameters()
        z = sum(p.size for p in self.latent_parameters())
        return {"generator": int(g), "discriminator": int(d), "latent": int(z), "total": int(g + d + z)}

    def fake(self, batch: int, rng: np.random.Generator, generator: Optional[int] = None,
             per_component: int = 1) -> Tensor:
        """Graph-connected generator output for one training batch.

        For ``ensemble`` the whole batch comes from generator ``generator``
        fed by its own mixture component.
        """
        if self.variant == "ensemble":
            ids = np.full(batch, generator, dtype=np.int64)
            z = sample_mixture(self.latent, batch, rng, component_ids=ids).z
            return self.generators[generator](z)
        return self.generators[0](self.latent_codes(batch, rng, per_component))

    def latent_codes(self, batch: int, rng: np.random.Generator, per_component: int = 1) -> Tensor:
        src = self.latent
        if isinstance(src, MixtureLatent):
            return sample_mixture(src, batch, rng, per_component=per_component).z
        z = sample_simple(src.kind, batch, src.dim, rng)
        if isinstance(src, OneHotPrior):
            code = np.eye(src.n)[rng.integers(0, src.n, size=batch)]
            z = Tensor(np.concatenate([z.values, code], axis=1))
        return z

    def generate(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Draw ``n`` samples with no graph recording."""
        if n == 0:
            return np.empty((0, self.data_dim))
        if self.variant != "ensemble":
            return self.generators[0].predict(self.latent_codes(n, rng).values)
        lb = sample_mixture(self.latent, n, rng)
        out = np.empty((n, self.data_dim))
        for i in np.unique(lb.component_ids):
            rows = lb.component_ids == i
            out[rows] = self.generators[i].predict(lb.z.values[rows])
        return out

    def mu_images(self) -> Optional[np.ndarray]:
        """Generator output at each mixture mean, for plotting."""
        mix = self.mixture
        if mix is None:
            return None
        if self.variant == "ensemble":
            return np.concatenate([g.predict(mix.mu.values[i:i + 1]) for i, g in enumerate(self.generators)])
        return self.generators[0].predict(mix.mu.values)


def _generator_layout(variant: str, k: int, n: int, data_dim: int, arch: ArchConfig):
    hidden = [int(h) for h in arch.g_hidden]
    if variant == "nx":
        hidden = [h * n for h in hidden]
    if variant == "gan_pp":
        hidden = [n] + hidden
    in_dim = k + n if variant == "moe" else k
    sizes = [in_dim] + hidden + [data_dim]
    acts = [arch.g_activation] * len(hidden) + [arch.g_output]
    return sizes, acts


def build_variant(variant: str, data_dim: int, n_components: int, latent_dim: int,
                  rng: np.random.Generator, arch: Optional[ArchConfig] = None,
                  sigma0: float = 0.2, prior: str = "uniform") -> GanModel:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}")
    if n_components < 1:
        raise ConfigError(f"N must be >= 1, got {n_components}")
    arch = arch or ArchConfig()
    sizes, acts = _generator_layout(variant, latent_dim, n_components, data_dim, arch)
    count = n_components if variant == "ensemble" else 1
    gens = [mlp_new(sizes, acts, rng, arch.init, arch.init_std, arch.slope, name=f"G{i}")
            for i in range(count)]
    d_sizes = [data_dim] + [int(h) for h in arch.d_hidden] + [1]
    d_acts = [arch.d_activation] * len(arch.d_hidden) + ["sigmoid"]
    disc = mlp_new(d_sizes, d_acts, rng, arch.init, arch.init_std, arch.slope, name="D")
    if variant in ("deligan", "ensemble"):
        latent = mixture_init(n_components, latent_dim, rng, sigma0)
    elif variant == "moe":
        latent = OneHotPrior(prior, latent_dim, n_components)
    else:
        latent = SimplePrior(prior, latent_dim)
    model = GanModel(variant, gens, disc, latent, latent_dim, n_components)
    log.info("built %s: %s", variant, model.parameter_counts())
    return model


# ---------------------------------------------------------------------------
# objectives


def _check_prob(t: Tensor, what: str) -> None:
    v = t.values
    if v.ndim != 2 or v.shape[1] != 1:
        raise ad.ShapeError(f"{what}: expected shape (B, 1), got {v.shape}")
    if (v < 0).any() or (v > 1).any():
        raise ValueError(f"{what}: probabilities outside [0, 1]")


def discriminator_loss(d_real: Tensor, d_fake: Tensor) -> Tensor:
    """``-mean(log D(x)) - mean(log(1 - D(G(z))))``."""
    _check_prob(d_real, "d_real")
    _check_prob(d_fake, "d_fake")
    return ad.sub(ad.neg(ad.mean(ad.log(d_real))), ad.mean(ad.log(ad.sub(1.0, d_fake))))


def generator_loss(d_fake: Tensor, mix: Optional[MixtureLatent] = None, lam: float = 0.0,
                   nonsaturating: bool = False) -> Tensor:
    """``mean(log(1 - D(G(z))))`` plus the sigma penalty when a mixture is given.

    ``nonsaturating`` swaps the adversarial term for ``-mean(log D(G(z)))``.
    """
    _check_prob(d_fake, "d_fake")
    if nonsaturating:
        loss = ad.neg(ad.mean(ad.log(d_fake)))
    else:
        loss = ad.mean(ad.log(ad.sub(1.0, d_fake)))
    if mix is not None:
        loss = ad.add(loss, sigma_penalty(mix, lam))
    return loss


# ---------------------------------------------------------------------------
# training


@dataclass
class StepRecord:
    iter: int
    d_loss: float
    g_loss: float
    d_real_mean: float
    d_fake_mean: float
    sigma_min: float
    sigma_mean: float


HISTORY_FIELDS = ("iter", "d_loss", "g_loss", "d_real_mean", "d_fake_mean", "sigma_min", "sigma_mean")


@dataclass
class TrainHistory:
    records: list[StepRecord] = field(default_factory=list)
    mu_snapshots: list[tuple[int, np.ndarray, np.ndarray]] = field(default_factory=list)
    status: str = "ok"
    message: str = ""

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(r, name) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_FIELDS)
        for r in self.records:
            w.writerow([r.iter] + [repr(float(getattr(r, k))) for k in HISTORY_FIELDS[1:]])
        return buf.getvalue()

    def mu_snapshots_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        k = self.mu_snapshots[0][1].shape[1] if self.mu_snapshots else 0
        w.writerow(["iter", "component"] + [f"mu_{j}" for j in range(k)] + [f"sigma_{j}" for j in range(k)])
        for it, mu, sigma in self.mu_snapshots:
            for c in range(mu.shape[0]):
                w.writerow([it, c] + [repr(float(v)) for v in mu[c]] + [repr(float(v)) for v in sigma[c]])
        return buf.getvalue()


class Optimizers:
    """Discriminator, generator and latent optimizers for one model.

    Ensemble members each get their own Adam state covering generator ``i``
    plus rows ``i`` of mu and sigma, so a step touches nothing else.
    """

    def __init__(self, model: GanModel, cfg_optim):
        o = cfg_optim
        hyper = dict(beta1=o.beta1, beta2=o.beta2, eps=o.eps)
        lr_latent = o.lr_g if o.lr_latent is None else o.lr_latent
        self.model = model
        self.d = Adam(model.discriminator.parameters(), lr=o.lr_d, **hyper)
        if model.variant == "ensemble":
            self.members = [AdamState(o.lr_g, **hyper) for _ in model.generators]
            self.member_latent = [AdamState(lr_latent, **hyper) for _ in model.generators]
            self.g = None
            self.latent = None
        else:
            self.g = Adam(model.generator_parameters(), lr=o.lr_g, **hyper)
            lat = model.latent_parameters()
            self.latent = Adam(lat, lr=lr_latent, **hyper) if lat else None

    def step_generator(self, member: Optional[int] = None) -> None:
        model = self.model
        if member is None:
            self.g.step()
            if self.latent is not None:
                self.latent.step()
        else:
            gen = model.generators[member]
            params = gen.parameters()
            adam_step([p.values for p in params], [p.grad for p in params],
                      self.members[member], [p.name for p in params])
            mix = model.mixture
            rows = slice(member, member + 1)
            adam_step([mix.mu.values[rows], mix.sigma.values[rows]],
                      [mix.mu.grad[rows], mix.sigma.grad[rows]],
                      self.member_latent[member], [f"latent.mu[{member}]", f"latent.sigma[{member}]"])
        if model.mixture is not None:
            model.mixture.clamp_sigma()


def _all_params(model: GanModel) -> list[Tensor]:
    return model.discriminator.parameters() + model.generator_parameters() + model.latent_parameters()


def train_step(model: GanModel, real_batch: np.ndarray, opts: Optimizers, cfg: ExperimentConfig,
               rng: np.random.Generator, it: int = 0) -> StepRecord:
    """One discriminator update followed by one generator update."""
    if len(real_batch) == 0:
        raise ValueError("empty real batch")
    batch = len(real_batch)
    params = _all_params(model)
    D = model.discriminator

    # discriminator phase: fakes enter as constants, so G and the latent get no gradient
    ad.zero_grad(params)
    fake = Tensor(model.generate(batch, rng))
    d_real = D(Tensor(real_batch))
    d_fake = D(fake)
    d_loss = discriminator_loss(d_real, d_fake)
    ad.backward(d_loss)
    opts.d.step()

    # generator phase: D receives gradient too but is not stepped
    ad.zero_grad(params)
    member = int(rng.integers(0, len(model.generators))) if model.variant == "ensemble" else None
    d_fake_g = D(model.fake(batch, rng, member, cfg.latent.per_component))
    g_loss = generator_loss(d_fake_g, model.mixture, cfg.latent.lam, cfg.optim.nonsaturating)
    ad.backward(g_loss)
    opts.step_generator(member)

    mix = model.mixture
    sig = mix.sigma.values if mix is not None else np.ones(1)
    return StepRecord(it, d_loss.item(), g_loss.item(), float(d_real.values.mean()),
                      float(d_fake.values.mean()), float(sig.min()), float(sig.mean()))


def load_training_data(cfg: ExperimentConfig) -> Dataset:
    d = cfg.data
    rng = substream(cfg.seed, "data")
    if d.kind == "toy":
        spec = toy_spec_of(cfg)
        return sample_toy(spec, d.n, rng)
    if d.kind == "points":
        pts = np.array(d.points, dtype=np.float64)
        return Dataset(pts.reshape(len(pts), -1), np.arange(len(pts)), source="points")
    if d.kind == "mnist":
        full = load_mnist_idx(d.images, d.labels)
        return subset_balanced(full, d.per_class, rng)
    raise ConfigError(f"unknown data kind {d.kind!r}")


def toy_spec_of(cfg: ExperimentConfig) -> Optional[ToySpec]:
    d = cfg.data
    if d.kind != "toy":
        return None
    if d.modes is not None:
        return ToySpec.from_dict({"modes": d.modes})
    return TOY_PRESETS[d.preset]()


def init_model(cfg: ExperimentConfig, data_dim: int) -> GanModel:
    lat = cfg.latent
    return build_variant(cfg.variant, data_dim, lat.N, lat.K, substream(cfg.seed, "init"),
                         cfg.arch, lat.sigma0, lat.prior)


def train(cfg: ExperimentConfig, data: Optional[Dataset] = None,
          model: Optional[GanModel] = None, callback=None) -> tuple[GanModel, TrainHistory]:
    """Run ``cfg.train.iterations`` steps; stops early with status ``diverged``
    on a non-finite or exploding loss."""
    data = data if data is not None else load_training_data(cfg)
    model = model if model is not None else init_model(cfg, data.dim)
    opts = Optimizers(model, cfg.optim)
    hist = TrainHistory()
    latent_rng = substream(cfg.seed, "latent")
    batch_rng = substream(cfg.seed, "batch")
    tc = cfg.train
    pool = data.samples

    def snapshot(it):
        mix = model.mixture
        if mix is not None and tc.snapshot_every > 0 and it % tc.snapshot_every == 0:
            hist.mu_snapshots.append((it, mix.mu.values.copy(), mix.sigma.values.copy()))

    snapshot(0)
    for it in range(1, tc.iterations + 1):
        real = pool[batch_rng.integers(0, len(pool), size=tc.batch)]
        try:
            rec = train_step(model, real, opts, cfg, latent_rng, it)
        except FloatingPointError as e:
            hist.status, hist.message = "diverged", f"iteration {it}: {e}"
            log.warning("run diverged: %s", hist.message)
            break
        hist.records.append(rec)
        if not (np.isfinite(rec.d_loss) and np.isfinite(rec.g_loss)) or \
                max(abs(rec.d_loss), abs(rec.g_loss)) > tc.divergence_threshold:
            hist.status, hist.message = "diverged", f"iteration {it}: loss out of range"
            log.warning("run diverged: %s", hist.message)
            break
        snapshot(it)
        if callback is not None:
            callback(it, model, hist)
    return model, hist


# ---------------------------------------------------------------------------
# checkpoints


def model_to_dict(model: GanModel) -> dict:
    src = model.latent
    if isinstance(src, MixtureLatent):
        latent = {"type": "mixture", **mixture_to_dict(src)}
    elif isinstance(src, OneHotPrior):
        latent = {"type": "onehot", "kind": src.kind, "dim": src.dim, "n": src.n}
    else:
        latent = {"type": "simple", "kind": src.kind, "dim": src.dim}
    return {
        "version": MODEL_VERSION,
        "kind": "gan",
        "variant": model.variant,
        "latent_dim": model.latent_dim,
        "n_components": model.n_components,
        "generators": [mlp_to_dict(g) for g in model.generators],
        "discriminator": mlp_to_dict(model.discriminator),
        "latent": latent,
    }


def model_from_dict(d: dict) -> GanModel:
    if d.get("version") != MODEL_VERSION or d.get("kind") != "gan":
        raise ConfigError("not a GAN checkpoint of a supported version")
    lat = d["latent"]
    if lat["type"] == "mixture":
        latent = mixture_from_dict(lat)
    elif lat["type"] == "onehot":
        latent = OneHotPrior(lat["kind"], lat["dim"], lat["n"])
    else:
        latent = SimplePrior(lat["kind"], lat["dim"])
    gens = [mlp_from_dict(g, name=f"G{i}") for i, g in enumerate(d["generators"])]
    return GanModel(d["variant"], gens, mlp_from_dict(d["discriminator"], name="D"), latent,
                    d["latent_dim"], d["n_components"])


def save_model(model: GanModel, path) -> None:
    with open(path, "w") as f:
        json.dump(model_to_dict(model), f)


def load_model(path) -> GanModel:
    with open(path) as f:
        return model_from_dict(json.load(f))


# ---------------------------------------------------------------------------
# latent drift under a frozen generator and discriminator


def drift_means(model: GanModel, mu_init: np.ndarray, steps: int = 500, lr: float = 1e-2,
                nonsaturating: bool = False) -> np.ndarray:
    """Follow the generator-loss gradient on the means alone.

    D, G and sigma are left untouched; each mean is fed through G at its
    own location (no noise). Returns ``D(G(mu))`` per component, shape
    ``(steps + 1, N)``, starting with the initial positions.
    """
    G = model.generators[0]
    D = model.discriminator
    mu = Tensor(np.array(mu_init, dtype=np.float64), requires_grad=True, name="drift.mu")
    opt = Adam([mu], lr=lr)
    trace = [D.predict(G.predict(mu.values))[:, 0]]
    for _ in range(steps):
        opt.zero_grad()
        # sum, not mean: each component follows its own gradient at full scale
        d_fake = D(G(mu))
        if nonsaturating:
            loss = ad.neg(ad.sum(ad.log(d_fake)))
        else:
            loss = ad.sum(ad.log(ad.sub(1.0, d_fake)))
        ad.backward(loss)
        opt.step()
        trace.append(D.predict(G.predict(mu.values))[:, 0])
    return np.array(trace)
