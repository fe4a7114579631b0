"""Spatial-concept model: place categories linking words to Gaussian position distributions.

A model holds, for L concepts and K position distributions over a vocabulary V:

* ``mixture``      (L,)    concept weights pi
* ``word_dists``   (L, V)  per-concept word multinomials W_l
* ``position_weights`` (L, K)  per-concept multinomials phi_l over position distributions
* ``means`` (K, 2) and ``covariances`` (K, 2, 2)  Gaussian position distributions
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, List, Mapping, Sequence, Tuple

import numpy as np
from scipy.special import logsumexp

from conceptnav.errors import InstructionError, ModelFormatError, ValidationError
from conceptnav.gridmap import CostMap

log = logging.getLogger(__name__)

MODEL_FORMAT = "conceptnav-model"
MODEL_VERSION = 1
SUM_TOL = 1e-9


def _frozen(array, dtype=float) -> np.ndarray:
    array = np.array(array, dtype=dtype, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class Vocabulary:
    words: Tuple[str, ...]

    def __post_init__(self):
        words = tuple(str(w) for w in self.words)
        if len(set(words)) != len(words):
            raise ValidationError("vocabulary words must be unique")
        object.__setattr__(self, "words", words)
        object.__setattr__(self, "_index", {w: i for i, w in enumerate(words)})

    def __len__(self):
        return len(self.words)

    def __contains__(self, word):
        return word in self._index

    def index(self, word: str) -> int:
        return self._index[word]


def check_covariance(cov, label: str = "covariance") -> np.ndarray:
    cov = np.asarray(cov, dtype=float)
    if cov.shape != (2, 2) or not np.all(np.isfinite(cov)):
        raise ValidationError(f"{label} must be a finite 2x2 matrix")
    if cov[0, 1] != cov[1, 0]:
        raise ValidationError(f"{label} is not symmetric")
    if np.linalg.eigvalsh(cov).min() <= 0:
        raise ValidationError(f"{label} is not positive-definite")
    return cov


@dataclass(frozen=True, eq=False)
class PositionDistribution:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        if mean.shape != (2,) or not np.all(np.isfinite(mean)):
            raise ValidationError("mean must be a finite 2-vector")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(check_covariance(self.covariance)))


@dataclass(frozen=True, eq=False)
class SpatialConcept:
    word_dist: np.ndarray
    position_dist: np.ndarray


def _check_simplex(values: np.ndarray, label: str) -> None:
    if values.ndim != 1 or values.size == 0:
        raise ValidationError(f"{label} must be a non-empty vector")
    if not np.all(np.isfinite(values)) or values.min() < 0:
        raise ValidationError(f"{label} has negative or non-finite entries")
    total = math.fsum(values.tolist())
    if abs(total - 1.0) > SUM_TOL:
        raise ValidationError(f"{label} sums to {total!r}, not 1")


@dataclass(frozen=True, eq=False)
class SpatialConceptModel:
    """Fitted point estimate of a spatial-concept model. Immutable."""

    vocabulary: Vocabulary
    mixture: np.ndarray
    word_dists: np.ndarray
    position_weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray

    def __post_init__(self):
        if not isinstance(self.vocabulary, Vocabulary):
            object.__setattr__(self, "vocabulary", Vocabulary(tuple(self.vocabulary)))
        if len(self.vocabulary) == 0:
            raise ValidationError("vocabulary must be non-empty")
        pi = _frozen(self.mixture)
        W = _frozen(self.word_dists)
        phi = _frozen(self.position_weights)
        mu = _frozen(self.means)
        sigma = _frozen(self.covariances)
        L, V = pi.shape[0], len(self.vocabulary)
        if W.shape != (L, V):
            raise ValidationError(f"word_dists shape {W.shape} != ({L}, {V})")
        if mu.ndim != 2 or mu.shape[1] != 2:
            raise ValidationError("means must have shape (K, 2)")
        K = mu.shape[0]
        if phi.shape != (L, K):
            raise ValidationError(f"position_weights shape {phi.shape} != ({L}, {K})")
        if sigma.shape != (K, 2, 2):
            raise ValidationError(f"covariances shape {sigma.shape} != ({K}, 2, 2)")
        _check_simplex(pi, "mixture")
        for l in range(L):
            _check_simplex(W[l], f"word_dists[{l}]")
            _check_simplex(phi[l], f"position_weights[{l}]")
        for k in range(K):
            if not np.all(np.isfinite(mu[k])):
                raise ValidationError(f"means[{k}] is not finite")
            check_covariance(sigma[k], f"covariances[{k}]")
        for name, value in (("mixture", pi), ("word_dists", W), ("position_weights", phi),
                            ("means", mu), ("covariances", sigma)):
            object.__setattr__(self, name, value)

    @property
    def n_concepts(self) -> int:
        return self.mixture.shape[0]

    @property
    def n_positions(self) -> int:
        return self.means.shape[0]

    @property
    def concepts(self) -> List[SpatialConcept]:
        return [SpatialConcept(self.word_dists[l], self.position_weights[l])
                for l in range(self.n_concepts)]

    @property
    def positions(self) -> List[PositionDistribution]:
        return [PositionDistribution(self.means[k], self.covariances[k])
                for k in range(self.n_positions)]

    def __eq__(self, other):
        if not isinstance(other, SpatialConceptModel):
            return NotImplemented
        return self.vocabulary == other.vocabulary and all(
            np.array_equal(getattr(self, a), getattr(other, a))
            for a in ("mixture", "word_dists", "position_weights", "means", "covariances")
        )

    def gaussian_log_density(self, points: np.ndarray) -> np.ndarray:
        """log N(x | mu_k, Sigma_k) for points of shape (..., 2); returns (..., K)."""
        points = np.asarray(points, dtype=float)
        diff = points[..., np.newaxis, :] - self.means  # (..., K, 2)
        prec = np.linalg.inv(self.covariances)  # (K, 2, 2)
        maha = np.einsum("...ki,kij,...kj->...k", diff, prec, diff)
        logdet = np.linalg.slogdet(self.covariances)[1]
        return -0.5 * (maha + logdet) - math.log(2 * math.pi)

    def data_log_likelihood(self, records: Sequence) -> float:
        """Sum over records of log p(x, S | model), marginalizing concept and position index."""
        total = 0.0
        for rec in records:
            counts = Instruction(Counter(rec.words)).vector(self.vocabulary, warn=False)
            with np.errstate(divide="ignore"):
                lw = np.log(self.word_dists) @ counts
            lg = self.gaussian_log_density(np.asarray(rec.position))
            with np.errstate(divide="ignore"):
                joint = (lw + np.log(self.mixture))[:, None] + np.log(self.position_weights) + lg
            total += float(logsumexp(joint))
        return total


@dataclass(frozen=True)
class Instruction:
    """Bag-of-words instruction: word -> count."""

    counts: Mapping[str, int] = field(default_factory=dict)

    def __post_init__(self):
        counts = {}
        for word, n in dict(self.counts).items():
            if int(n) != n or n < 0:
                raise InstructionError(f"count for {word!r} must be a non-negative integer")
            if n:
                counts[str(word)] = int(n)
        object.__setattr__(self, "counts", dict(sorted(counts.items())))

    @classmethod
    def from_words(cls, words: Iterable[str], stop_words: Iterable[str] = ()) -> "Instruction":
        stop = {w.lower() for w in stop_words}
        return cls(Counter(w for w in words if w.lower() not in stop))

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def vector(self, vocabulary: Vocabulary, warn: bool = True) -> np.ndarray:
        """Counts aligned to ``vocabulary``; out-of-vocabulary words are dropped."""
        vec = np.zeros(len(vocabulary))
        oov = []
        for word, n in self.counts.items():
            if word in vocabulary:
                vec[vocabulary.index(word)] += n
            else:
                oov.append(word)
        if oov and warn:
            warnings.warn(f"ignoring out-of-vocabulary words: {', '.join(oov)}", stacklevel=3)
        return vec

    def require_vector(self, vocabulary: Vocabulary) -> np.ndarray:
        if self.total == 0:
            raise InstructionError("instruction has no words")
        vec = self.vector(vocabulary)
        if vec.sum() == 0:
            raise InstructionError(
                "instruction has no in-vocabulary word: " + " ".join(self.counts)
            )
        return vec


def as_instruction(instruction) -> Instruction:
    if isinstance(instruction, Instruction):
        return instruction
    if isinstance(instruction, str):
        return Instruction.from_words(instruction.split())
    if isinstance(instruction, Mapping):
        return Instruction(instruction)
    return Instruction.from_words(instruction)


def word_likelihood(model: SpatialConceptModel, instruction, concept: int) -> float:
    """log Mult(S | W_l) without the multinomial coefficient."""
    if not 0 <= concept < model.n_concepts:
        raise ValidationError(f"concept index {concept} out of range")
    counts = as_instruction(instruction).require_vector(model.vocabulary)
    return float(_word_loglik(model, counts)[concept])


def _word_loglik(model: SpatialConceptModel, counts: np.ndarray) -> np.ndarray:
    # 0 * log 0 contributes nothing: only words actually present are summed.
    used = counts > 0
    with np.errstate(divide="ignore"):
        return np.log(model.word_dists[:, used]) @ counts[used]


def position_log_weights(model: SpatialConceptModel, instruction) -> np.ndarray:
    """log sum_C Mult(S|W_C) pi_C phi_C[i] for every position distribution i, shape (K,)."""
    counts = as_instruction(instruction).require_vector(model.vocabulary)
    lw = _word_loglik(model, counts)
    with np.errstate(divide="ignore"):
        joint = (lw + np.log(model.mixture))[:, None] + np.log(model.position_weights)
    return logsumexp(joint, axis=0)


def concept_log_likelihood(model: SpatialConceptModel, points, instruction) -> np.ndarray:
    """log p(S | x, model) up to the dropped coefficient, without the map factor.

    ``points`` has shape (..., 2); the result has shape (...).
    """
    weights = position_log_weights(model, instruction)
    return logsumexp(model.gaussian_log_density(points) + weights, axis=-1)


def emission_log_field(model: SpatialConceptModel, costmap: CostMap, instruction) -> np.ndarray:
    """Per-cell log emission: log p(x|m) + log sum_{C,i} Mult(S|W_C) pi_C N(x|mu_i,Sigma_i) phi_C[i].

    Gaussians are evaluated at cell centers. Cells with zero cost-map value are ``-inf``.
    Returned array has the grid shape ``(height, width)`` and is read-only.
    """
    semantic = concept_log_likelihood(model, costmap.grid.cell_centers(), instruction)
    with np.errstate(divide="ignore"):
        out = np.log(costmap.values) + semantic
    out[costmap.values == 0] = -np.inf
    out.setflags(write=False)
    return out


def reward_field(model: SpatialConceptModel, costmap: CostMap, instruction) -> np.ndarray:
    """Per-state reward of the control-as-inference view; identical to the emission field."""
    return emission_log_field(model, costmap, instruction)


# --------------------------------------------------------------------------- serialization


def model_to_dict(model: SpatialConceptModel) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "vocabulary": list(model.vocabulary.words),
        "pi": model.mixture.tolist(),
        "concepts": [
            {"W": model.word_dists[l].tolist(), "phi": model.position_weights[l].tolist()}
            for l in range(model.n_concepts)
        ],
        "positions": [
            {"mu": model.means[k].tolist(), "sigma": model.covariances[k].tolist()}
            for k in range(model.n_positions)
        ],
    }


def model_from_dict(doc: dict) -> SpatialConceptModel:
    if not isinstance(doc, dict):
        raise ModelFormatError("model document must be a JSON object")
    if doc.get("format") != MODEL_FORMAT:
        raise ModelFormatError(f"not a {MODEL_FORMAT} document (format={doc.get('format')!r})")
    if doc.get("version") != MODEL_VERSION:
        raise ModelFormatError(
            f"unsupported model version {doc.get('version')!r}; expected {MODEL_VERSION}"
        )
    try:
        concepts = doc["concepts"]
        positions = doc["positions"]
        kwargs = dict(
            vocabulary=Vocabulary(tuple(doc["vocabulary"])),
            mixture=np.asarray(doc["pi"], dtype=float),
            means=np.asarray([p["mu"] for p in positions], dtype=float).reshape(-1, 2),
            covariances=np.asarray([p["sigma"] for p in positions], dtype=float).reshape(-1, 2, 2),
        )
        n_words = len(kwargs["vocabulary"])
        n_pos = len(positions)
        for l, c in enumerate(concepts):
            if len(c["W"]) != n_words:
                raise ModelFormatError(f"concepts[{l}].W has {len(c['W'])} entries, expected {n_words}")
            if len(c["phi"]) != n_pos:
                raise ModelFormatError(f"concepts[{l}].phi has {len(c['phi'])} entries, expected {n_pos}")
        kwargs["word_dists"] = np.asarray([c["W"] for c in concepts], dtype=float).reshape(-1, n_words)
        kwargs["position_weights"] = np.asarray([c["phi"] for c in concepts], dtype=float).reshape(-1, n_pos)
    except ModelFormatError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"schema violation: {exc!r}") from None
    return SpatialConceptModel(**kwargs)


def save_model(model: SpatialConceptModel) -> bytes:
    return (json.dumps(model_to_dict(model), indent=1) + "\n").encode("utf-8")


def load_model(data: bytes | str) -> SpatialConceptModel:
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"model file is not valid JSON: {exc}") from None
    return model_from_dict(doc)
