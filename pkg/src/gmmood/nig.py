"""Normal-Inverse-Gamma posteriors over mixture means and variances.

Every (class, component, dimension) cell of a fitted classifier gets a
conjugate NIG posterior for the unknown Gaussian mean and variance of
that dimension, updated from the responsibility-weighted statistics of
the EM fit.  Mixture weights are not given a prior; they stay frozen at
their EM point estimates.  Sampling a full parameter set from the bank
yields one ensemble member.
"""

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats as sstats

from .errors import FormatError, InvalidStatisticsError, ShapeError
from .gmm import GMMClassifier, SufficientStats

NIGB_MAGIC = b"NIGB"
NIGB_VERSION = 1
_NIGB_HEADER = struct.Struct("<4sHIII")


@dataclass(frozen=True)
class NIGParams:
    """One Normal-Inverse-Gamma parameter cell (prior or posterior).

    ``mu`` locates the mean, ``kappa`` is its pseudo-count, and
    ``alpha``/``beta`` are the Inverse-Gamma shape/scale of the variance
    (density proportional to x^(-alpha-1) exp(-beta/x)).
    """

    mu: float
    kappa: float
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.kappa > 0 and self.alpha > 0 and self.beta > 0):
            raise ValueError(
                f"kappa, alpha, beta must be positive, got "
                f"({self.kappa}, {self.alpha}, {self.beta})"
            )


DEFAULT_PRIOR = NIGParams(mu=0.0, kappa=1.0, alpha=2.0, beta=1.0)


@dataclass
class NIGPosteriorBank:
    """Posterior cells for all (class, component, dimension) triples.

    Parameter arrays have shape (C, K, D); ``weights`` holds the frozen
    EM mixture weights with shape (C, K).
    """

    mu: np.ndarray
    kappa: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.kappa = np.asarray(self.kappa, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        self.beta = np.asarray(self.beta, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.mu.ndim != 3:
            raise ShapeError(f"bank arrays must be (C, K, D), got {self.mu.shape}")
        for arr in (self.kappa, self.alpha, self.beta):
            if arr.shape != self.mu.shape:
                raise ShapeError("bank parameter arrays must share one shape")
        if self.weights.shape != self.mu.shape[:2]:
            raise ShapeError(
                f"weights must be (C, K) = {self.mu.shape[:2]}, got {self.weights.shape}"
            )
        if np.any(self.kappa <= 0) or np.any(self.alpha <= 0) or np.any(self.beta <= 0):
            raise ValueError("kappa, alpha, beta must be positive in every cell")

    @property
    def num_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def components_per_class(self) -> int:
        return self.mu.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.mu.shape[2]

    def cell(self, c: int, k: int, d: int) -> NIGParams:
        return NIGParams(
            float(self.mu[c, k, d]),
            float(self.kappa[c, k, d]),
            float(self.alpha[c, k, d]),
            float(self.beta[c, k, d]),
        )


@dataclass
class GMMParameterSample:
    """One drawn GMM parameter set: sampled means/variances, frozen weights."""

    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.variances = np.asarray(self.variances, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.means.shape != self.variances.shape or self.means.ndim != 3:
            raise ShapeError("sample arrays must be (C, K, D)")
        if self.weights.shape != self.means.shape[:2]:
            raise ShapeError("sample weights must be (C, K)")
        if np.any(self.variances <= 0):
            raise ValueError("sampled variances must be strictly positive")

    @property
    def num_classes(self) -> int:
        return self.means.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.means.shape[2]


def update_posterior(prior: NIGParams, n: float, xbar: float, S: float) -> NIGParams:
    """Conjugate NIG update from weighted observation statistics.

    With effective count ``n``, weighted mean ``xbar`` and weighted sum of
    squared deviations ``S``::

        kappa_n = kappa0 + n
        mu_n    = (kappa0 * mu0 + n * xbar) / kappa_n
        alpha_n = alpha0 + n / 2
        beta_n  = beta0 + S / 2 + kappa0 * n * (xbar - mu0)^2 / (2 * kappa_n)
    """
    if n < 0 or S < 0:
        raise InvalidStatisticsError(f"n and S must be nonnegative, got n={n}, S={S}")
    kappa_n = prior.kappa + n
    mu_n = (prior.kappa * prior.mu + n * xbar) / kappa_n
    alpha_n = prior.alpha + 0.5 * n
    beta_n = prior.beta + 0.5 * S + prior.kappa * n * (xbar - prior.mu) ** 2 / (2.0 * kappa_n)
    return NIGParams(mu_n, kappa_n, alpha_n, beta_n)


def build_bank(
    model: GMMClassifier,
    stats: list[SufficientStats],
    prior: NIGParams = DEFAULT_PRIOR,
) -> NIGPosteriorBank:
    """Apply the conjugate update independently to every cell of the model."""
    c = model.num_classes
    k = model.components_per_class
    d = model.feature_dim
    if len(stats) != c:
        raise ShapeError(f"{len(stats)} statistics blocks for {c} classes")
    mu = np.empty((c, k, d))
    kappa = np.empty((c, k, d))
    alpha = np.empty((c, k, d))
    beta = np.empty((c, k, d))
    weights = np.empty((c, k))
    for ci, (gmm, st) in enumerate(zip(model.classes, stats)):
        if st.means.shape != (k, d):
            raise ShapeError(
                f"class {gmm.class_id}: statistics shape {st.means.shape} != ({k}, {d})"
            )
        if np.any(st.counts < 0) or np.any(st.sq_devs < 0):
            raise InvalidStatisticsError(f"class {gmm.class_id}: negative statistics")
        n = st.counts[:, None]
        kap = prior.kappa + n
        kappa[ci] = np.broadcast_to(kap, (k, d))
        mu[ci] = (prior.kappa * prior.mu + n * st.means) / kap
        alpha[ci] = np.broadcast_to(prior.alpha + 0.5 * n, (k, d))
        beta[ci] = (
            prior.beta
            + 0.5 * st.sq_devs
            + prior.kappa * n * (st.means - prior.mu) ** 2 / (2.0 * kap)
        )
        weights[ci] = gmm.weights
    return NIGPosteriorBank(mu, kappa, alpha, beta, weights)


def sample_parameters(bank: NIGPosteriorBank, rng_seed) -> GMMParameterSample:
    """Draw one full GMM parameter set from the bank.

    Per cell, sigma^2 is the reciprocal of a Gamma(alpha, scale=1/beta)
    draw (an Inverse-Gamma(alpha, beta) variate) and the mean is then
    drawn from Normal(mu_n, sigma^2 / kappa_n).  Deterministic for a
    given seed.
    """
    rng = np.random.default_rng(rng_seed)
    gamma = np.maximum(rng.standard_gamma(bank.alpha), np.finfo(np.float64).tiny)
    variances = bank.beta / gamma
    means = rng.normal(bank.mu, np.sqrt(variances / bank.kappa))
    return GMMParameterSample(means, variances, bank.weights.copy())


def sample_ensemble(
    bank: NIGPosteriorBank, n_samples: int = 20, rng_seed: int = 0
) -> list[GMMParameterSample]:
    """Draw ``n_samples`` independent parameter sets with derived sub-seeds."""
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if isinstance(rng_seed, np.random.SeedSequence):
        root = rng_seed
    else:
        root = np.random.SeedSequence(rng_seed)
    return [sample_parameters(bank, child) for child in root.spawn(n_samples)]


def posterior_predictive_logpdf(cell: NIGParams, x):
    """Log density of the NIG posterior predictive (a Student-t).

    Degrees of freedom 2*alpha, location mu, scale
    sqrt(beta * (kappa + 1) / (alpha * kappa)).
    """
    scale = np.sqrt(cell.beta * (cell.kappa + 1.0) / (cell.alpha * cell.kappa))
    out = sstats.t.logpdf(x, df=2.0 * cell.alpha, loc=cell.mu, scale=scale)
    return float(out) if np.isscalar(x) else out


def bank_to_bytes(bank: NIGPosteriorBank) -> bytes:
    """Serialize to the NIGB container: header, per-cell (mu, kappa,
    alpha, beta) quadruples, then per-(class, component) weights."""
    c, k, d = bank.num_classes, bank.components_per_class, bank.feature_dim
    cells = np.stack([bank.mu, bank.kappa, bank.alpha, bank.beta], axis=-1)
    return (
        _NIGB_HEADER.pack(NIGB_MAGIC, NIGB_VERSION, c, k, d)
        + np.ascontiguousarray(cells, dtype="<f8").tobytes()
        + np.ascontiguousarray(bank.weights, dtype="<f8").tobytes()
    )


def bank_from_bytes(data: bytes) -> NIGPosteriorBank:
    if len(data) < _NIGB_HEADER.size:
        raise FormatError(f"truncated NIGB container: {len(data)} bytes")
    magic, version, c, k, d = _NIGB_HEADER.unpack_from(data)
    if magic != NIGB_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {NIGB_MAGIC!r}")
    if version != NIGB_VERSION:
        raise FormatError(f"unsupported NIGB version {version}")
    expected = _NIGB_HEADER.size + 8 * (4 * c * k * d + c * k)
    if len(data) != expected:
        raise FormatError(f"NIGB size mismatch: declared {expected} bytes, got {len(data)}")
    cells = np.frombuffer(data, dtype="<f8", count=4 * c * k * d, offset=_NIGB_HEADER.size)
    cells = cells.reshape(c, k, d, 4)
    weights = np.frombuffer(
        data, dtype="<f8", count=c * k, offset=_NIGB_HEADER.size + 8 * 4 * c * k * d
    ).reshape(c, k)
    return NIGPosteriorBank(
        cells[..., 0].copy(),
        cells[..., 1].copy(),
        cells[..., 2].copy(),
        cells[..., 3].copy(),
        weights.copy(),
    )


def save_bank(bank: NIGPosteriorBank, path) -> None:
    Path(path).write_bytes(bank_to_bytes(bank))


def load_bank(path) -> NIGPosteriorBank:
    return bank_from_bytes(Path(path).read_bytes())
