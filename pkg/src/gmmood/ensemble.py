"""Ensemble voting and uncertainty scores over sampled GMM parameter sets.

Each ensemble member classifies a feature vector by its highest
class-conditional density.  Vote entropy over the member predictions is
the epistemic score; the classical decomposition (predictive entropy =
aleatoric + mutual information) over the member posteriors provides the
comparison baselines, together with the point-estimate model's posterior
entropy and maximum posterior.  All entropies are in nats.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, xlogy

from .errors import ShapeError
from .formats import FeatureMap
from .gmm import GMMClassifier, class_log_densities, component_log_densities
from .nig import GMMParameterSample


@dataclass
class VoteRecord:
    """Histogram of ensemble votes over the C classes."""

    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 1:
            raise ShapeError(f"counts must be 1-d, got shape {self.counts.shape}")
        if np.any(self.counts < 0) or self.counts.sum() < 1:
            raise ValueError("vote counts must be nonnegative with at least one vote")

    @property
    def n(self) -> int:
        return int(self.counts.sum())


@dataclass(frozen=True)
class UncertaintyDecomposition:
    predictive_entropy: float
    aleatoric: float
    mutual_information: float


@dataclass(frozen=True)
class PixelScores:
    """All scores for one pixel."""

    predicted_class: int
    epistemic: float
    predictive_entropy: float
    aleatoric: float
    mutual_information: float
    deterministic_entropy: float
    max_posterior: float


@dataclass
class UncertaintyMap:
    """Per-pixel score grids; values are only defined where ``valid``."""

    predicted_class: np.ndarray
    epistemic: np.ndarray
    predictive_entropy: np.ndarray
    aleatoric: np.ndarray
    mutual_information: np.ndarray
    deterministic_entropy: np.ndarray
    max_posterior: np.ndarray
    valid: np.ndarray

    SCORE_CHANNELS = (
        "epistemic",
        "predictive_entropy",
        "aleatoric",
        "mutual_information",
        "deterministic_entropy",
        "max_posterior",
    )

    def at(self, row: int, col: int) -> PixelScores:
        if not self.valid[row, col]:
            raise ValueError(f"pixel ({row}, {col}) is invalid")
        return PixelScores(
            int(self.predicted_class[row, col]),
            float(self.epistemic[row, col]),
            float(self.predictive_entropy[row, col]),
            float(self.aleatoric[row, col]),
            float(self.mutual_information[row, col]),
            float(self.deterministic_entropy[row, col]),
            float(self.max_posterior[row, col]),
        )


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    """Shannon entropy of each row, with 0 * log 0 = 0."""
    return -xlogy(p, p).sum(axis=-1)


def sample_log_densities(z: np.ndarray, sample: GMMParameterSample) -> np.ndarray:
    """log p(z | c) under one sampled parameter set, shape (N, C)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != sample.feature_dim:
        raise ShapeError(
            f"feature dimension {z.shape[1]} does not match sample "
            f"dimension {sample.feature_dim}"
        )
    c = sample.num_classes
    out = np.empty((z.shape[0], c))
    with np.errstate(divide="ignore"):
        log_w = np.where(
            sample.weights > 0, np.log(np.maximum(sample.weights, 1e-300)), -np.inf
        )
    for ci in range(c):
        comp = component_log_densities(z, sample.means[ci], sample.variances[ci])
        out[:, ci] = logsumexp(comp + log_w[ci], axis=1)
    return out


def vote(z, ensemble: list[GMMParameterSample]) -> VoteRecord:
    """Classify z under every member and tally the votes."""
    if not ensemble:
        raise ValueError("ensemble must be non-empty")
    if np.asarray(z).ndim != 1:
        raise ShapeError("vote() takes a single feature vector")
    counts = np.zeros(ensemble[0].num_classes, dtype=np.int64)
    for sample in ensemble:
        ld = sample_log_densities(z, sample)[0]
        counts[int(np.argmax(ld))] += 1
    return VoteRecord(counts)


def majority_class(record: VoteRecord) -> int:
    """Most-voted class; ties go to the lowest class id."""
    return int(np.argmax(record.counts))


def vote_entropy(record: VoteRecord) -> float:
    """Entropy (nats) of the empirical vote frequencies."""
    p = record.counts / record.n
    return float(_entropy_rows(p))


def decompose_uncertainty(
    z, ensemble: list[GMMParameterSample]
) -> UncertaintyDecomposition:
    """Predictive entropy, aleatoric part, and their difference (MI).

    Per member, the class posterior at z is computed under that member's
    parameters; the predictive entropy is the entropy of the member-mean
    posterior, the aleatoric part is the mean of the member entropies,
    and the mutual information is their difference, clamped to zero
    against negative floating-point residue.
    """
    if not ensemble:
        raise ValueError("ensemble must be non-empty")
    if np.asarray(z).ndim != 1:
        raise ShapeError("decompose_uncertainty() takes a single feature vector")
    mean_post = np.zeros(ensemble[0].num_classes)
    mean_ent = 0.0
    for sample in ensemble:
        ld = sample_log_densities(z, sample)
        post = np.exp(ld - logsumexp(ld, axis=1, keepdims=True))[0]
        mean_post += post
        mean_ent += float(_entropy_rows(post))
    mean_post /= len(ensemble)
    mean_ent /= len(ensemble)
    predictive = float(_entropy_rows(mean_post))
    return UncertaintyDecomposition(predictive, mean_ent, max(predictive - mean_ent, 0.0))


@dataclass
class SampleScores:
    """Flat per-sample scores for a batch of feature vectors."""

    predicted_class: np.ndarray
    vote_counts: np.ndarray
    epistemic: np.ndarray
    predictive_entropy: np.ndarray
    aleatoric: np.ndarray
    mutual_information: np.ndarray
    deterministic_entropy: np.ndarray
    max_posterior: np.ndarray


def score_samples(
    z, model: GMMClassifier, ensemble: list[GMMParameterSample]
) -> SampleScores:
    """Vectorized scoring of an (N, D) batch under model + ensemble."""
    if not ensemble:
        raise ValueError("ensemble must be non-empty")
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != model.feature_dim:
        raise ShapeError(
            f"feature dimension {z.shape[1]} does not match model "
            f"dimension {model.feature_dim}"
        )
    n, c = z.shape[0], model.num_classes
    counts = np.zeros((n, c), dtype=np.int64)
    mean_post = np.zeros((n, c))
    mean_ent = np.zeros(n)
    rows = np.arange(n)
    for sample in ensemble:
        ld = sample_log_densities(z, sample)
        post = np.exp(ld - logsumexp(ld, axis=1, keepdims=True))
        counts[rows, np.argmax(ld, axis=1)] += 1
        mean_post += post
        mean_ent += _entropy_rows(post)
    m = len(ensemble)
    mean_post /= m
    mean_ent /= m
    predictive = _entropy_rows(mean_post)
    mi = np.maximum(predictive - mean_ent, 0.0)
    epistemic = _entropy_rows(counts / m)

    ld0 = np.atleast_2d(class_log_densities(z, model))
    post0 = np.exp(ld0 - logsumexp(ld0, axis=1, keepdims=True))
    return SampleScores(
        predicted_class=model.class_ids[np.argmax(counts, axis=1)],
        vote_counts=counts,
        epistemic=epistemic,
        predictive_entropy=predictive,
        aleatoric=mean_ent,
        mutual_information=mi,
        deterministic_entropy=_entropy_rows(post0),
        max_posterior=post0.max(axis=1),
    )


def score_feature_map(
    features: FeatureMap, model: GMMClassifier, ensemble: list[GMMParameterSample]
) -> UncertaintyMap:
    """Score every valid pixel of a feature map; invalid pixels are skipped."""
    if features.dim != model.feature_dim:
        raise ShapeError(
            f"feature map dimension {features.dim} does not match model "
            f"dimension {model.feature_dim}"
        )
    h, w = features.height, features.width
    valid = features.valid
    grids = {
        name: np.full((h, w), np.nan) for name in UncertaintyMap.SCORE_CHANNELS
    }
    predicted = np.full((h, w), -1, dtype=np.int32)
    if valid.any():
        scores = score_samples(features.values[valid].astype(np.float64), model, ensemble)
        predicted[valid] = scores.predicted_class
        for name in UncertaintyMap.SCORE_CHANNELS:
            grids[name][valid] = getattr(scores, name)
    return UncertaintyMap(predicted_class=predicted, valid=valid.copy(), **grids)
