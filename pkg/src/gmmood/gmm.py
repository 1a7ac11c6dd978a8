"""Class-conditional diagonal-covariance Gaussian mixtures.

Each semantic class is modeled as a K-component mixture of axis-aligned
Gaussians over a D-dimensional feature space.  This module provides
density evaluation in log space, the class posterior under a uniform
class prior, maximum-density prediction, and EM fitting that also emits
the responsibility-weighted sufficient statistics consumed by the
Bayesian layer.
"""

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import FormatError, InsufficientDataError, ShapeError

VARIANCE_FLOOR = 1e-6
COLLAPSE_THRESHOLD = 1e-6

GMMC_MAGIC = b"GMMC"
GMMC_VERSION = 1
_GMMC_HEADER = struct.Struct("<4sHIII")

_LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass
class ClassGMM:
    """Point-estimate mixture for one class: weights, per-dim means/variances."""

    class_id: int
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        if self.means.ndim != 2:
            raise ShapeError(f"means must be (K, D), got {self.means.shape}")
        k, d = self.means.shape
        if self.weights.shape != (k,) or self.variances.shape != (k, d):
            raise ShapeError(
                f"inconsistent mixture shapes: weights {self.weights.shape}, "
                f"means {self.means.shape}, variances {self.variances.shape}"
            )
        if np.any(self.weights < 0) or abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must be nonnegative and sum to 1")
        if np.any(self.variances < VARIANCE_FLOOR * (1 - 1e-12)):
            raise ValueError(f"variances must be floored at {VARIANCE_FLOOR}")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


@dataclass
class GMMClassifier:
    """All per-class mixtures sharing one K and D, ordered by class id."""

    classes: list[ClassGMM]

    def __post_init__(self):
        if not self.classes:
            raise ValueError("classifier needs at least one class")
        k, d = self.classes[0].n_components, self.classes[0].dim
        for gmm in self.classes:
            if gmm.n_components != k or gmm.dim != d:
                raise ShapeError("all class mixtures must share K and D")
        ids = [gmm.class_id for gmm in self.classes]
        if ids != sorted(set(ids)):
            raise ValueError("class ids must be strictly increasing")

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    @property
    def feature_dim(self) -> int:
        return self.classes[0].dim

    @property
    def components_per_class(self) -> int:
        return self.classes[0].n_components

    @property
    def class_ids(self) -> np.ndarray:
        return np.array([gmm.class_id for gmm in self.classes], dtype=np.int64)


@dataclass
class SufficientStats:
    """Responsibility-weighted statistics from the final E-step.

    ``counts[k]`` is the effective sample count of component k (shared by
    all of its dimensions), ``means`` the weighted per-dimension means and
    ``sq_devs`` the weighted sums of squared deviations around them.
    ``log_likelihoods`` and ``reseeds`` are fit diagnostics.
    """

    counts: np.ndarray
    means: np.ndarray
    sq_devs: np.ndarray
    log_likelihoods: np.ndarray = field(default_factory=lambda: np.empty(0))
    reseeds: int = 0

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.float64)
        self.means = np.asarray(self.means, dtype=np.float64)
        self.sq_devs = np.asarray(self.sq_devs, dtype=np.float64)
        if self.means.shape != self.sq_devs.shape or self.counts.shape != self.means.shape[:1]:
            raise ShapeError("inconsistent sufficient-statistic shapes")
        if np.any(self.counts < 0) or np.any(self.sq_devs < 0):
            raise ValueError("effective counts and squared deviations must be nonnegative")


def component_log_densities(z: np.ndarray, means: np.ndarray, variances: np.ndarray) -> np.ndarray:
    """Per-component diagonal-Gaussian log densities, shape (N, K)."""
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    k = means.shape[0]
    out = np.empty((z.shape[0], k))
    log_norm = np.sum(np.log(variances), axis=1) + means.shape[1] * _LOG_2PI
    for m in range(k):
        diff = z - means[m]
        out[:, m] = -0.5 * (np.sum(diff * diff / variances[m], axis=1) + log_norm[m])
    return out


def _check_features(z, dim: int) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    z2 = np.atleast_2d(z)
    if z2.ndim != 2 or z2.shape[1] != dim:
        raise ShapeError(f"expected feature vectors of dimension {dim}, got shape {z.shape}")
    return z2, single


def log_density(z, gmm: ClassGMM):
    """Mixture log density log p(z | c), numerically via log-sum-exp.

    Accepts a single D-vector (returns a float) or an (N, D) batch
    (returns an (N,) array).  Finite for any finite input because the
    variances are floored.
    """
    z2, single = _check_features(z, gmm.dim)
    comp = component_log_densities(z2, gmm.means, gmm.variances)
    with np.errstate(divide="ignore"):
        log_w = np.where(gmm.weights > 0, np.log(np.maximum(gmm.weights, 1e-300)), -np.inf)
    out = logsumexp(comp + log_w, axis=1)
    return float(out[0]) if single else out


def class_log_densities(z, model: GMMClassifier):
    """log p(z | c) for every class, shape (N, C)."""
    z2, single = _check_features(z, model.feature_dim)
    out = np.column_stack([log_density(z2, gmm) for gmm in model.classes])
    return out[0] if single else out


def class_posterior(z, model: GMMClassifier):
    """p(c | z) under a uniform class prior: p(z|c) / sum_c' p(z|c')."""
    ld = class_log_densities(z, model)
    ld = np.atleast_2d(ld)
    post = np.exp(ld - logsumexp(ld, axis=1, keepdims=True))
    return post[0] if np.asarray(z).ndim == 1 else post


def predict(z, model: GMMClassifier):
    """Class id with the highest density; ties go to the lowest id."""
    ld = class_log_densities(z, model)
    idx = np.argmax(np.atleast_2d(ld), axis=1)
    ids = model.class_ids[idx]
    return int(ids[0]) if np.asarray(z).ndim == 1 else ids


def _kmeanspp_centers(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++-style seeding: spread initial means by squared distance."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for m in range(1, k):
        total = d2.sum()
        if total > 0:
            centers[m] = x[rng.choice(n, p=d2 / total)]
        else:
            centers[m] = x[rng.integers(n)]
        d2 = np.minimum(d2, np.sum((x - centers[m]) ** 2, axis=1))
    return centers


def em_fit(
    features,
    n_components: int,
    *,
    max_iters: int = 100,
    tol: float = 1e-5,
    seed: int = 0,
    class_id: int = 0,
) -> tuple[ClassGMM, SufficientStats]:
    """Fit one class mixture by EM and return it with its final statistics.

    Soft expectation-maximization with k-means++-style seeding from
    ``seed``; M-step uses the standard maximum-likelihood (1/n) variance
    update, floored at ``VARIANCE_FLOOR``.  Stops when the relative
    log-likelihood improvement falls below ``tol`` or after ``max_iters``
    iterations.  Components whose effective count collapses below
    ``COLLAPSE_THRESHOLD`` are re-seeded to a random data point (counted
    in the returned statistics, not fatal).  The data log-likelihood is
    checked to be non-decreasing (1e-8 slack) across ordinary iterations.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"features must be (N, D), got {x.shape}")
    n, d = x.shape
    k = int(n_components)
    if n < k:
        raise InsufficientDataError(f"{n} samples cannot support {k} components")

    rng = np.random.default_rng(seed)
    means = _kmeanspp_centers(x, k, rng)
    global_var = np.maximum(x.var(axis=0), VARIANCE_FLOOR)
    variances = np.tile(global_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    ll_history: list[float] = []
    reseeds = 0
    resp = None
    prev_ll = -np.inf
    check_monotone = True
    for _ in range(max_iters):
        # E-step
        comp = component_log_densities(x, means, variances)
        with np.errstate(divide="ignore"):
            joint = comp + np.where(weights > 0, np.log(np.maximum(weights, 1e-300)), -np.inf)
        norm = logsumexp(joint, axis=1, keepdims=True)
        ll = float(norm.sum())
        if check_monotone and ll_history:
            assert ll >= prev_ll - 1e-8 * max(1.0, abs(prev_ll)), (
                f"EM log-likelihood decreased: {prev_ll} -> {ll}"
            )
        ll_history.append(ll)
        resp = np.exp(joint - norm)

        if ll_history[:-1] and abs(ll - prev_ll) < tol * max(1.0, abs(prev_ll)):
            prev_ll = ll
            break
        prev_ll = ll

        # M-step
        nk = resp.sum(axis=0)
        collapsed = nk < COLLAPSE_THRESHOLD
        alive = ~collapsed
        weights = np.where(alive, nk / n, 1.0 / n)
        weights = weights / weights.sum()
        safe_nk = np.maximum(nk, COLLAPSE_THRESHOLD)
        means = (resp.T @ x) / safe_nk[:, None]
        for m in range(k):
            if collapsed[m]:
                means[m] = x[rng.integers(n)]
                variances[m] = global_var
                reseeds += 1
            else:
                diff = x - means[m]
                variances[m] = np.maximum(
                    (resp[:, m, None] * diff * diff).sum(axis=0) / nk[m], VARIANCE_FLOOR
                )
        check_monotone = not collapsed.any()

    gmm = ClassGMM(class_id, weights, means, variances)

    # final E-step under the returned parameters feeds the Bayesian updates
    comp = component_log_densities(x, means, variances)
    with np.errstate(divide="ignore"):
        joint = comp + np.where(weights > 0, np.log(np.maximum(weights, 1e-300)), -np.inf)
    resp = np.exp(joint - logsumexp(joint, axis=1, keepdims=True))
    nk = resp.sum(axis=0)
    xbar = np.where(
        nk[:, None] > 0, (resp.T @ x) / np.maximum(nk, 1e-300)[:, None], means
    )
    sq = np.empty_like(xbar)
    for m in range(k):
        diff = x - xbar[m]
        sq[m] = (resp[:, m, None] * diff * diff).sum(axis=0)
    stats = SufficientStats(nk, xbar, sq, np.asarray(ll_history), reseeds)
    return gmm, stats


def classifier_to_bytes(model: GMMClassifier) -> bytes:
    """Serialize to the GMMC container (classes are stored positionally)."""
    c = model.num_classes
    k = model.components_per_class
    d = model.feature_dim
    parts = [_GMMC_HEADER.pack(GMMC_MAGIC, GMMC_VERSION, c, k, d)]
    for gmm in model.classes:
        parts.append(np.ascontiguousarray(gmm.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(gmm.means, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(gmm.variances, dtype="<f8").tobytes())
    return b"".join(parts)


def classifier_from_bytes(data: bytes) -> GMMClassifier:
    """Parse a GMMC container; class ids are assigned 0..C-1 in file order."""
    if len(data) < _GMMC_HEADER.size:
        raise FormatError(f"truncated GMMC container: {len(data)} bytes")
    magic, version, c, k, d = _GMMC_HEADER.unpack_from(data)
    if magic != GMMC_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {GMMC_MAGIC!r}")
    if version != GMMC_VERSION:
        raise FormatError(f"unsupported GMMC version {version}")
    per_class = k + 2 * k * d
    expected = _GMMC_HEADER.size + 8 * c * per_class
    if len(data) != expected:
        raise FormatError(f"GMMC size mismatch: declared {expected} bytes, got {len(data)}")
    body = np.frombuffer(data, dtype="<f8", offset=_GMMC_HEADER.size)
    classes = []
    for i in range(c):
        block = body[i * per_class : (i + 1) * per_class]
        weights = block[:k]
        means = block[k : k + k * d].reshape(k, d)
        variances = block[k + k * d :].reshape(k, d)
        classes.append(ClassGMM(i, weights.copy(), means.copy(), variances.copy()))
    return GMMClassifier(classes)


def save_classifier(model: GMMClassifier, path) -> None:
    Path(path).write_bytes(classifier_to_bytes(model))


def load_classifier(path) -> GMMClassifier:
    return classifier_from_bytes(Path(path).read_bytes())
