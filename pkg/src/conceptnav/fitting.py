"""Parameter estimation for spatial-concept models.

Both fitters return posterior-mean point estimates under the conjugate priors:
Dirichlet for the word, position-index and concept multinomials, and
Normal-Inverse-Wishart for each Gaussian position distribution.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from conceptnav.concepts import SpatialConceptModel, Vocabulary
from conceptnav.dataset import TrainingRecord, vocabulary_of
from conceptnav.errors import ValidationError

DIM = 2


@dataclass(frozen=True)
class Hyperparameters:
    alpha: float = 1.0   # concept mixture pi
    gamma: float = 1.0   # position-index multinomials phi
    beta: float = 0.1    # word multinomials W
    chi: float = 0.1     # image-feature multinomials; stored for completeness, unused
    m0: Tuple[float, float] = (0.0, 0.0)
    kappa0: float = 0.001
    nu0: float = 3.0
    V0: np.ndarray = field(default_factory=lambda: np.diag([2.0, 2.0]))

    def __post_init__(self):
        for name in ("alpha", "gamma", "beta", "chi", "kappa0"):
            if not getattr(self, name) > 0:
                raise ValidationError(f"hyperparameter {name} must be > 0")
        if not self.nu0 > DIM - 1:
            raise ValidationError(f"nu0 must exceed {DIM - 1}")
        V0 = np.asarray(self.V0, dtype=float)
        if V0.shape != (DIM, DIM) or not np.allclose(V0, V0.T) or np.linalg.eigvalsh(V0).min() <= 0:
            raise ValidationError("V0 must be a symmetric positive-definite 2x2 matrix")
        object.__setattr__(self, "V0", V0)
        object.__setattr__(self, "m0", tuple(float(v) for v in self.m0))


def dirichlet_mean(counts: np.ndarray, concentration: float) -> np.ndarray:
    """Posterior mean of a symmetric Dirichlet along the last axis."""
    counts = np.asarray(counts, dtype=float)
    return (counts + concentration) / (counts.sum(axis=-1, keepdims=True) + concentration * counts.shape[-1])


def niw_posterior_mean(points: np.ndarray, hyper: Hyperparameters) -> Tuple[np.ndarray, np.ndarray]:
    """Posterior means of (mu, Sigma) for one Gaussian under the NIW prior."""
    points = np.asarray(points, dtype=float).reshape(-1, DIM)
    n = points.shape[0]
    if n == 0:
        raise ValidationError("position distribution has no assigned points")
    m0 = np.asarray(hyper.m0)
    kappa_n = hyper.kappa0 + n
    nu_n = hyper.nu0 + n
    xbar = points.mean(axis=0)
    centered = points - xbar
    scatter = centered.T @ centered
    dev = (xbar - m0)[:, None]
    V_n = hyper.V0 + scatter + (hyper.kappa0 * n / kappa_n) * (dev @ dev.T)
    mu = (hyper.kappa0 * m0 + n * xbar) / kappa_n
    dof = nu_n - DIM - 1
    if dof <= 0:
        raise ValidationError(f"posterior degrees of freedom {nu_n} too small for a covariance mean")
    sigma = V_n / dof
    sigma = (sigma + sigma.T) / 2.0
    return mu, sigma


def _word_counts(records: Sequence[TrainingRecord], vocab: Vocabulary) -> np.ndarray:
    counts = np.zeros((len(records), len(vocab)))
    for n, rec in enumerate(records):
        for w in rec.words:
            counts[n, vocab.index(w)] += 1
    return counts


def _estimate(
    positions: np.ndarray,
    word_counts: np.ndarray,
    c: np.ndarray,
    i: np.ndarray,
    n_concepts: int,
    n_positions: int,
    hyper: Hyperparameters,
    vocab: Vocabulary,
    fallback: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> SpatialConceptModel:
    word_by_concept = np.zeros((n_concepts, word_counts.shape[1]))
    np.add.at(word_by_concept, c, word_counts)
    index_by_concept = np.zeros((n_concepts, n_positions))
    np.add.at(index_by_concept, (c, i), 1)
    concept_counts = np.bincount(c, minlength=n_concepts)

    means = np.empty((n_positions, DIM))
    covs = np.empty((n_positions, DIM, DIM))
    for k in range(n_positions):
        members = positions[i == k]
        if len(members) == 0:
            if fallback is None:
                raise ValidationError(f"position distribution {k} has no assigned points")
            means[k], covs[k] = fallback[0][k], fallback[1][k]
        else:
            means[k], covs[k] = niw_posterior_mean(members, hyper)
    return SpatialConceptModel(
        vocabulary=vocab,
        mixture=dirichlet_mean(concept_counts, hyper.alpha),
        word_dists=dirichlet_mean(word_by_concept, hyper.beta),
        position_weights=dirichlet_mean(index_by_concept, hyper.gamma),
        means=means,
        covariances=covs,
    )


def _check_contiguous(ids: np.ndarray, label: str) -> int:
    n = int(ids.max()) + 1
    if ids.min() < 0:
        raise ValidationError(f"{label} ids must be non-negative")
    missing = sorted(set(range(n)) - set(ids.tolist()))
    if missing:
        raise ValidationError(f"{label} ids are not contiguous from 0; missing {missing}")
    return n


def fit_fixed_assignments(
    records: Sequence[TrainingRecord],
    hyper: Hyperparameters = Hyperparameters(),
    vocabulary: Optional[Sequence[str]] = None,
) -> SpatialConceptModel:
    """Posterior means given known concept and position-distribution labels."""
    if not records:
        raise ValidationError("training data is empty")
    for n, r in enumerate(records):
        if r.concept_id is None or r.position_id is None:
            raise ValidationError(f"record {n} lacks concept_id/position_id")
    vocab = Vocabulary(tuple(vocabulary) if vocabulary is not None else vocabulary_of(records))
    if len(vocab) == 0:
        raise ValidationError("training data contains no words")
    c = np.array([r.concept_id for r in records])
    i = np.array([r.position_id for r in records])
    n_concepts = _check_contiguous(c, "concept")
    n_positions = _check_contiguous(i, "position-distribution")
    positions = np.array([r.position for r in records], dtype=float)
    return _estimate(positions, _word_counts(records, vocab), c, i,
                     n_concepts, n_positions, hyper, vocab)


def _sample_rows(log_weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    probs = np.exp(log_weights - logsumexp(log_weights, axis=1, keepdims=True))
    cdf = np.cumsum(probs, axis=1)
    u = rng.random(log_weights.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((cdf < u).sum(axis=1), log_weights.shape[1] - 1)


def fit_gibbs(
    records: Sequence[TrainingRecord],
    hyper: Hyperparameters = Hyperparameters(),
    n_concepts: int = 10,
    n_positions: int = 10,
    iters: int = 100,
    seed: int = 0,
    vocabulary: Optional[Sequence[str]] = None,
) -> SpatialConceptModel:
    return gibbs_sample(records, hyper, n_concepts, n_positions, iters, seed, vocabulary)[0]


def gibbs_sample(
    records: Sequence[TrainingRecord],
    hyper: Hyperparameters = Hyperparameters(),
    n_concepts: int = 10,
    n_positions: int = 10,
    iters: int = 100,
    seed: int = 0,
    vocabulary: Optional[Sequence[str]] = None,
) -> Tuple[SpatialConceptModel, np.ndarray, np.ndarray]:
    """Blocked Gibbs sampling of concept and position-index labels with a fixed truncation.

    Each sweep samples every position index from N(x|mu_i, Sigma_i) phi_{C}[i], then every
    concept from Mult(S|W_C) phi_C[i] pi_C, then refreshes the parameter point estimates.
    Position distributions left without data at the end are dropped from the model.
    Returns the model with the final concept and position labels.
    """
    if n_concepts < 1 or n_positions < 1 or iters < 1:
        raise ValidationError("n_concepts, n_positions and iters must all be >= 1")
    if not records:
        raise ValidationError("training data is empty")
    vocab = Vocabulary(tuple(vocabulary) if vocabulary is not None else vocabulary_of(records))
    if len(vocab) == 0:
        raise ValidationError("training data contains no words")
    n = len(records)
    if n_positions > n:
        warnings.warn(
            f"n_positions={n_positions} exceeds {n} data points; empty distributions will be dropped",
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    positions = np.array([r.position for r in records], dtype=float)
    word_counts = _word_counts(records, vocab)

    seeds = rng.choice(n, size=n_positions, replace=n_positions > n)
    means = positions[seeds].copy()
    covs = np.repeat(hyper.V0[None], n_positions, axis=0)
    c = rng.integers(n_concepts, size=n)
    phi = np.full((n_concepts, n_positions), 1.0 / n_positions)
    W = np.full((n_concepts, len(vocab)), 1.0 / len(vocab))
    pi = np.full(n_concepts, 1.0 / n_concepts)
    model = None
    for _ in range(iters):
        gauss = SpatialConceptModel(vocab, pi, W, phi, means, covs).gaussian_log_density(positions)
        i = _sample_rows(gauss + np.log(phi[c]), rng)
        concept_lw = word_counts @ np.log(W).T + np.log(phi[:, i]).T + np.log(pi)
        c = _sample_rows(concept_lw, rng)
        model = _estimate(positions, word_counts, c, i, n_concepts, n_positions,
                          hyper, vocab, fallback=(means, covs))
        pi, W, phi = model.mixture, model.word_dists, model.position_weights
        means, covs = model.means, model.covariances

    used = np.bincount(i, minlength=n_positions) > 0
    if not used.all():
        keep = np.flatnonzero(used)
        i = np.searchsorted(keep, i)
        model = _estimate(positions, word_counts, c, i, n_concepts, len(keep), hyper, vocab)
    return model, c, i


def assignment_report(concepts: Sequence[int], positions: Sequence[int]) -> dict:
    """Record counts per concept and per position distribution."""
    return {
        "records": len(concepts),
        "per_concept": np.bincount(np.asarray(concepts, dtype=int)).tolist(),
        "per_position": np.bincount(np.asarray(positions, dtype=int)).tolist(),
    }
