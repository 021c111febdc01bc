"""Sample-quality and diversity metrics.

Inception-style scores need ``p(y|x)`` from a trained classifier. At this
scale a small softmax MLP trained on the labeled training data stands in for
the Inception network, so scores are comparable between runs of this package
only.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import Dataset, ToySpec
from .nets import Adam, ConfigError, Mlp, mlp_from_dict, mlp_new, mlp_to_dict

log = logging.getLogger(__name__)

KL_EPS = 1e-12
CLASSIFIER_VERSION = 1


class MetricUnavailable(RuntimeError):
    """The stand-in classifier is not accurate enough to produce meaningful scores."""


@dataclass
class ClassProbMatrix:
    probs: np.ndarray
    predicted: np.ndarray

    @classmethod
    def from_probs(cls, probs) -> "ClassProbMatrix":
        probs = np.asarray(probs, dtype=np.float64)
        if probs.ndim != 2:
            raise ValueError(f"probabilities must be a matrix, got shape {probs.shape}")
        if (probs < 0).any() or not np.allclose(probs.sum(axis=1), 1.0, atol=1e-9, rtol=0):
            raise ValueError("every row must be a probability distribution")
        return cls(probs, probs.argmax(axis=1))

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    def __len__(self) -> int:
        return len(self.probs)


@dataclass
class ClassScore:
    cls: int
    mean: float
    std: float


@dataclass
class ScoreReport:
    overall_mean: float
    overall_std: float
    splits: int
    per_class: list[ClassScore] = field(default_factory=list)
    protocol: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["class", "mean", "std"])
        for c in self.per_class:
            w.writerow([c.cls, repr(c.mean), repr(c.std)])
        w.writerow(["overall", repr(self.overall_mean), repr(self.overall_std)])
        return buf.getvalue()


# ---------------------------------------------------------------------------
# stand-in classifier


@dataclass
class ClassifierConfig:
    hidden: list = field(default_factory=lambda: [64])
    activation: str = "relu"
    lr: float = 1e-2
    steps: int = 1000
    batch: int = 64
    holdout: float = 0.2
    floor: float = 0.9


@dataclass
class Classifier:
    mlp: Mlp
    n_classes: int
    accuracy: float
    floor: float

    def probs(self, x) -> ClassProbMatrix:
        if self.accuracy < self.floor:
            raise MetricUnavailable(
                f"classifier held-out accuracy {self.accuracy:.3f} is below the floor {self.floor}")
        logits = self.mlp.predict(np.asarray(x, dtype=np.float64).reshape(-1, self.mlp.in_dim))
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        return ClassProbMatrix(p, p.argmax(axis=1))


def train_classifier(d: Dataset, rng: np.random.Generator,
                     cfg: Optional[ClassifierConfig] = None) -> Classifier:
    """Fit a softmax MLP on ``d``; raise MetricUnavailable if held-out accuracy misses the floor."""
    cfg = cfg or ClassifierConfig()
    if d.labels is None:
        raise ConfigError("classifier training needs labels")
    classes = np.unique(d.labels)
    if len(classes) < 2:
        raise ConfigError(f"classifier needs at least 2 classes, got {len(classes)}")
    n_classes = int(d.labels.max()) + 1
    order = rng.permutation(len(d))
    n_hold = max(1, int(round(cfg.holdout * len(d))))
    hold, fit = order[:n_hold], order[n_hold:]
    sizes = [d.dim] + list(cfg.hidden) + [n_classes]
    acts = [cfg.activation] * len(cfg.hidden) + ["none"]
    mlp = mlp_new(sizes, acts, rng, name="C")
    opt = Adam(mlp.parameters(), lr=cfg.lr, beta1=0.9)
    onehot = np.eye(n_classes)
    for _ in range(cfg.steps):
        idx = fit[rng.integers(0, len(fit), size=cfg.batch)]
        opt.zero_grad()
        logp = ad.log_softmax(mlp(Tensor(d.samples[idx])))
        loss = ad.neg(ad.mul(ad.sum(ad.mul(logp, Tensor(onehot[d.labels[idx]]))), 1.0 / len(idx)))
        ad.backward(loss)
        opt.step()
    pred = mlp.predict(d.samples[hold]).argmax(axis=1)
    acc = float((pred == d.labels[hold]).mean())
    log.info("classifier held-out accuracy %.4f (floor %.2f)", acc, cfg.floor)
    clf = Classifier(mlp, n_classes, acc, cfg.floor)
    if acc < cfg.floor:
        raise MetricUnavailable(f"classifier held-out accuracy {acc:.3f} is below the floor {cfg.floor}")
    return clf


def save_classifier(clf: Classifier, path) -> None:
    with open(path, "w") as f:
        json.dump({"version": CLASSIFIER_VERSION, "kind": "classifier", "n_classes": clf.n_classes,
                   "accuracy": clf.accuracy, "floor": clf.floor, "mlp": mlp_to_dict(clf.mlp)}, f)


def load_classifier(path) -> Classifier:
    with open(path) as f:
        d = json.load(f)
    if d.get("version") != CLASSIFIER_VERSION or d.get("kind") != "classifier":
        raise ConfigError(f"{path}: not a classifier checkpoint")
    return Classifier(mlp_from_dict(d["mlp"], name="C"), d["n_classes"], d["accuracy"], d["floor"])


# ---------------------------------------------------------------------------
# scores


def _safe_log(p: np.ndarray) -> np.ndarray:
    return np.log(np.maximum(p, KL_EPS))


def kl_matrix(p: np.ndarray, q: np.ndarray, block_elems: int = 1 << 22) -> np.ndarray:
    """``out[i, j] = KL(p[i] || q[j])``.

    Written as ``sum p * (log p - log q)`` so identical rows give exactly 0.
    """
    lp, lq = _safe_log(p), _safe_log(q)
    out = np.empty((len(p), len(q)))
    step = max(1, block_elems // max(1, q.size))
    for i in range(0, len(p), step):
        sl = slice(i, i + step)
        out[sl] = (p[sl, None, :] * (lp[sl, None, :] - lq[None, :, :])).sum(axis=2)
    return out


def inception_score(p: ClassProbMatrix, splits: int = 10) -> ScoreReport:
    """``exp(E_x KL(p(y|x) || p(y)))`` over contiguous splits, p(y) estimated per split."""
    m = len(p)
    if splits < 1 or m < splits:
        raise ValueError(f"need at least {splits} samples for {splits} splits, got {m}")
    scores = []
    for chunk in np.array_split(p.probs, splits):
        # offset form keeps p(y) bit-equal to the rows when they are all identical
        py = chunk[:1] + (chunk - chunk[:1]).mean(axis=0, keepdims=True)
        scores.append(float(np.exp(kl_matrix(chunk, py)[:, 0].mean())))
    return ScoreReport(float(np.mean(scores)), float(np.std(scores)), splits,
                       protocol={"score": "is", "splits": splits})


def _mean_pair_kl(block: np.ndarray, pairs: Optional[int], rng: Optional[np.random.Generator]) -> float:
    n = len(block)
    if n == 1:
        return 0.0
    if pairs is None:
        kl = kl_matrix(block, block)
        return float((kl.sum() - np.trace(kl)) / (n * (n - 1)))
    partner = rng.integers(0, n - 1, size=(n, pairs))
    partner += partner >= np.arange(n)[:, None]     # skip j == i
    lp = _safe_log(block)
    kl = (block[:, None, :] * (lp[:, None, :] - lp[partner])).sum(axis=2)
    return float(kl.mean())


def modified_inception_score(p: ClassProbMatrix, splits: int = 10, pairs_per_sample: Optional[int] = 32,
                             rng: Optional[np.random.Generator] = None) -> ScoreReport:
    """Intra-class diversity score ``exp(E_i E_j KL(p(y|x_i) || p(y|x_j)))``.

    Partners ``x_j`` share ``x_i``'s predicted class and sit in the same split.
    ``pairs_per_sample=None`` averages over every ordered pair ``j != i``;
    otherwise each sample draws that many partners uniformly. Per-class
    mean/std are over splits; the overall mean/std are over the per-class means.
    """
    if len(p) < 2:
        raise ValueError("modified inception score needs at least 2 samples")
    if pairs_per_sample is not None and rng is None:
        raise ValueError("sampled pairing needs an rng")
    # one child stream per class column keeps pairing independent of which classes appear
    class_seeds = rng.integers(0, 2**63 - 1, size=p.n_classes) if rng is not None else None
    per_class = []
    for c in range(p.n_classes):
        idx = np.flatnonzero(p.predicted == c)
        if len(idx) == 0:
            log.info("class %d has no samples; omitted from m-IS", c)
            continue
        if len(idx) == 1:
            log.info("class %d has a single sample; its intra-class KL is 0", c)
        crng = np.random.default_rng(class_seeds[c]) if class_seeds is not None else None
        chunks = np.array_split(idx, min(splits, len(idx)))
        scores = [np.exp(_mean_pair_kl(p.probs[ch], pairs_per_sample, crng)) for ch in chunks]
        per_class.append(ClassScore(c, float(np.mean(scores)), float(np.std(scores))))
    means = np.array([s.mean for s in per_class])
    return ScoreReport(float(means.mean()), float(means.std()), splits, per_class,
                       protocol={"score": "m-is", "splits": splits,
                                 "pairs": "all" if pairs_per_sample is None else pairs_per_sample})


# ---------------------------------------------------------------------------
# toy diagnostics and retrieval


@dataclass
class ModeCoverage:
    per_mode_fraction: np.ndarray
    covered_modes: int
    void_fraction: float

    @property
    def coverage(self) -> float:
        """Share of samples that land inside some mode."""
        return 1.0 - self.void_fraction


def mode_coverage(samples: np.ndarray, spec: ToySpec, radius_sigmas: float = 3.0,
                  min_fraction: float = 0.05) -> ModeCoverage:
    """Assign each sample to the nearest mode (diagonal Mahalanobis distance) within
    ``radius_sigmas``; samples near no mode count toward the void."""
    if radius_sigmas <= 0:
        raise ValueError("radius_sigmas must be positive")
    samples = np.asarray(samples, dtype=np.float64).reshape(-1, 2)
    n_modes = len(spec.modes)
    if len(samples) == 0:
        return ModeCoverage(np.zeros(n_modes), 0, 1.0)
    u = (samples[:, None, :] - spec.means[None]) / spec.stds[None]
    dist = np.sqrt((u * u).sum(axis=2))
    nearest = dist.argmin(axis=1)
    inside = dist[np.arange(len(samples)), nearest] <= radius_sigmas
    frac = np.bincount(nearest[inside], minlength=n_modes) / len(samples)
    return ModeCoverage(frac, int((frac >= min_fraction).sum()), float(1.0 - inside.mean()))


def nearest_neighbors(generated: np.ndarray, train: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean k-NN; returns ``(indices, distances)`` each ``(G, k)``.

    Ties go to the lower training index.
    """
    generated = np.atleast_2d(np.asarray(generated, dtype=np.float64))
    train = np.atleast_2d(np.asarray(train, dtype=np.float64))
    if k < 1 or k > len(train):
        raise ConfigError(f"k must be in [1, {len(train)}], got {k}")
    if generated.shape[1] != train.shape[1]:
        raise ad.ShapeError(f"dimension mismatch: {generated.shape[1]} vs {train.shape[1]}")
    idx = np.empty((len(generated), k), dtype=np.int64)
    dist = np.empty((len(generated), k))
    for g, q in enumerate(generated):
        diff = train - q
        d2 = np.einsum("ij,ij->i", diff, diff)
        order = np.argsort(d2, kind="stable")[:k]
        idx[g] = order
        dist[g] = np.sqrt(d2[order])
    return idx, dist
