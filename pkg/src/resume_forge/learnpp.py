"""Learn++ incremental ensemble over a sequence of databases.

For each database the instance weights start uniform. Each iteration
normalizes them into a distribution, draws training/testing subsets from
it, trains a weak learner, and discards the learner if its weighted error
on the drawn subsets exceeds 1/2. Accepted learners join the round's
weighted-majority composite, whose error is measured over all of the
database's instances; the composite is discarded on the same rule, and
otherwise the weights of the instances it gets right are multiplied
by its normalized error. The final hypothesis is a weighted majority over
every composite of every database, each voting ``log(1/B)``.

All weighted sums use :func:`math.fsum`, so they are correctly rounded and
independent of summation order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .data import LabeledSet
from .mlp import ModelSpec, ModelState, OptimizerConfig, backward, forward, init_model, predict, sgd_step
from .rng import Xoshiro256

BETA_FLOOR = 1e-10
# errors that exceed 1/2 only by rounding count as exactly 1/2
HALF_TOLERANCE = 1e-12
MAX_RETRIES = 10
WEAK_LEARNERS = ("stump", "mlp")


class LearnppError(ValueError):
    pass


class ZeroSize(LearnppError):
    pass


class NonPositiveWeight(LearnppError):
    pass


class EpsilonOutOfRange(LearnppError):
    pass


class InvalidBeta(LearnppError):
    pass


class InconsistentSchema(LearnppError):
    pass


class WeakLearnerStuck(RuntimeError):
    pass


class Learner(Protocol):
    def predict(self, features: np.ndarray) -> np.ndarray: ...


# -- distribution -------------------------------------------------------------


@dataclass(frozen=True)
class DistributionState:
    raw_weights: np.ndarray
    normalized: np.ndarray


def init_distribution(m: int) -> DistributionState:
    if m < 1:
        raise ZeroSize("a database needs at least one instance")
    w = np.full(m, 1.0 / m)
    return DistributionState(w, w.copy())


def normalize_distribution(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1 or w.size == 0:
        raise ZeroSize("weights must be a non-empty vector")
    if not np.all(w > 0) or not np.all(np.isfinite(w)):
        raise NonPositiveWeight("instance weights must be positive and finite")
    return w / math.fsum(w)


def sample_subsets(
    distribution, rng: Xoshiro256, tr_size: int | None = None, te_size: int | None = None
) -> tuple[np.ndarray, np.ndarray]:
    """Draw TR and TE index arrays with replacement, proportionally to ``distribution``.

    Sizes default to ``max(1, m // 2)`` each.
    """
    d = np.asarray(distribution, dtype=np.float64)
    m = d.size
    tr_size = max(1, m // 2) if tr_size is None else tr_size
    te_size = max(1, m // 2) if te_size is None else te_size
    if tr_size < 1 or te_size < 1:
        raise ValueError("subset sizes must be >= 1")
    cdf = np.cumsum(d)
    total = cdf[-1]
    draws = np.array([rng.random() * total for _ in range(tr_size + te_size)])
    idx = np.minimum(np.searchsorted(cdf, draws, side="right"), m - 1)
    return idx[:tr_size], idx[tr_size:]


# -- weak learners --------------------------------------------------------------


@dataclass(frozen=True)
class Stump:
    """Predicts ``left`` when ``x[feature] <= threshold``, else ``right``.

    ``feature == -1`` is a constant learner predicting ``left``.
    """

    feature: int
    threshold: float
    left: int
    right: int

    def predict(self, features) -> np.ndarray:
        x = np.asarray(features, dtype=np.float64)
        if self.feature < 0:
            return np.full(x.shape[0], self.left, dtype=np.int64)
        return np.where(x[:, self.feature] <= self.threshold, self.left, self.right).astype(np.int64)


@dataclass(frozen=True)
class MLPLearner:
    model: ModelState

    def predict(self, features) -> np.ndarray:
        return predict(self.model, features).astype(np.int64)


def _majority(labels: np.ndarray, n_classes: int) -> tuple[int, int]:
    counts = np.bincount(labels, minlength=n_classes)
    best = int(np.argmax(counts))
    return best, int(counts[best])


def fit_stump(data: LabeledSet) -> Stump:
    """Exhaustive search over features and midpoint thresholds.

    Each side predicts its majority class. Minimizes unweighted error;
    ties go to the lowest feature, then the lowest threshold.
    """
    x, y, c = data.features, data.labels, data.n_classes
    best: tuple[int, int, float, int, int] | None = None
    for f in range(x.shape[1]):
        values = np.unique(x[:, f])
        for lo, hi in zip(values[:-1], values[1:]):
            thr = float((lo + hi) / 2.0)
            mask = x[:, f] <= thr
            left, left_hits = _majority(y[mask], c)
            right, right_hits = _majority(y[~mask], c)
            err = data.m - left_hits - right_hits
            if best is None or err < best[0]:
                best = (err, f, thr, left, right)
    if best is None:
        label, _ = _majority(y, c)
        return Stump(-1, 0.0, label, label)
    _, f, thr, left, right = best
    return Stump(f, thr, left, right)


def fit_tiny_mlp(data: LabeledSet, seed: int, hidden: int = 4, epochs: int = 30, lr: float = 0.5) -> MLPLearner:
    """One tanh hidden layer, full-batch gradient descent with cross-entropy."""
    spec = ModelSpec((data.n_features, hidden, data.n_classes), ("tanh",), "softmax", seed)
    cfg = OptimizerConfig(lr, 0.5, "cross_entropy")
    model, opt = init_model(spec)
    targets = data.one_hot()
    for _ in range(epochs):
        grads = backward(model, forward(model, data.features), targets, cfg.loss)
        model, opt = sgd_step(model, grads, opt, cfg)
    return MLPLearner(model)


def train_weak(kind: str, data: LabeledSet, rng: Xoshiro256 | None = None) -> Learner:
    if data.m < 1:
        raise ZeroSize("training subset is empty")
    if kind == "stump":
        return fit_stump(data)
    if kind == "mlp":
        seed = rng.next_u64() if rng is not None else 0
        return fit_tiny_mlp(data, seed)
    raise ValueError(f"unknown weak learner {kind!r}; expected one of {WEAK_LEARNERS}")


# -- errors and votes -----------------------------------------------------------


def _instance_set(indices) -> np.ndarray:
    return np.unique(np.asarray(indices, dtype=np.int64))


def weighted_error(h: Learner, data: LabeledSet, indices, distribution) -> float:
    """Sum of ``distribution[i]`` over distinct misclassified ``i`` in ``indices``."""
    s = _instance_set(indices)
    d = np.asarray(distribution, dtype=np.float64)
    wrong = s[h.predict(data.features[s]) != data.labels[s]]
    return math.fsum(d[wrong])


def normalized_error(epsilon: float) -> float:
    if not 0.0 <= epsilon <= 0.5:
        raise EpsilonOutOfRange(f"normalized error needs 0 <= epsilon <= 1/2, got {epsilon!r}")
    return epsilon / (1.0 - epsilon)


def vote_weight(beta: float, beta_floor: float = BETA_FLOOR) -> float:
    return math.log(1.0 / max(beta, beta_floor))


def vote_tally(predictions, weights: Sequence[float], n_classes: int) -> np.ndarray:
    """``(n, n_classes)`` totals: voter ``v`` adds ``weights[v]`` to its predicted class."""
    preds = np.asarray(predictions, dtype=np.int64)
    if preds.ndim != 2 or preds.shape[0] != len(weights):
        raise ValueError("predictions must be (n_voters, n) with one weight per voter")
    w = [float(x) for x in weights]
    n = preds.shape[1]
    out = np.zeros((n, n_classes))
    for j in range(n):
        column = preds[:, j]
        for c in range(n_classes):
            out[j, c] = math.fsum(wv for wv, p in zip(w, column) if p == c)
    return out


def weighted_majority(predictions, weights: Sequence[float], n_classes: int) -> np.ndarray:
    """Argmax of :func:`vote_tally`; ties go to the lowest class index."""
    return np.argmax(vote_tally(predictions, weights, n_classes), axis=1)


@dataclass(frozen=True)
class WeakHypothesis:
    learner: Learner
    epsilon: float
    beta: float

    def predict(self, features) -> np.ndarray:
        return self.learner.predict(features)


def composite_predict(
    hypotheses: Sequence[WeakHypothesis], features, n_classes: int, beta_floor: float = BETA_FLOOR
) -> np.ndarray:
    if not hypotheses:
        raise ValueError("composite needs at least one hypothesis")
    preds = np.stack([h.predict(features) for h in hypotheses])
    return weighted_majority(preds, [vote_weight(h.beta, beta_floor) for h in hypotheses], n_classes)


def composite_hypothesis(
    hypotheses: Sequence[WeakHypothesis], x, n_classes: int, beta_floor: float = BETA_FLOOR
) -> int:
    """Weighted-majority label for a single instance."""
    return int(composite_predict(hypotheses, np.asarray(x, dtype=np.float64)[None, :], n_classes, beta_floor)[0])


def composite_error(
    hypotheses: Sequence[WeakHypothesis], data: LabeledSet, indices, distribution, beta_floor: float = BETA_FLOOR
) -> float:
    s = _instance_set(indices)
    d = np.asarray(distribution, dtype=np.float64)
    pred = composite_predict(hypotheses, data.features[s], data.n_classes, beta_floor)
    return math.fsum(d[s[pred != data.labels[s]]])


def update_weights(w, composite_beta: float, correct) -> np.ndarray:
    """Multiply the weights of correctly classified instances by ``composite_beta``.

    ``composite_beta == 1`` (a composite at exactly 1/2 error) leaves them as is.
    """
    w = np.asarray(w, dtype=np.float64)
    ok = np.asarray(correct, dtype=bool)
    if ok.shape != w.shape:
        raise ValueError("need one correctness flag per instance")
    if not 0.0 < composite_beta <= 1.0:
        raise InvalidBeta(f"composite beta must be in (0, 1], got {composite_beta!r}")
    return w * np.where(ok, composite_beta, 1.0)


# -- ensemble -------------------------------------------------------------------


@dataclass(frozen=True)
class EnsembleStage:
    hypotheses: tuple[WeakHypothesis, ...]
    composite_error: float
    composite_beta: float

    def predict(self, features, n_classes: int, beta_floor: float = BETA_FLOOR) -> np.ndarray:
        return composite_predict(self.hypotheses, features, n_classes, beta_floor)


@dataclass(frozen=True)
class LearnppConfig:
    rounds: int | tuple[int, ...] = 5
    tr_size: int | None = None
    te_size: int | None = None
    max_retries: int = MAX_RETRIES
    beta_floor: float = BETA_FLOOR
    weak_learner: str = "stump"
    seed: int = 0

    def __post_init__(self):
        if self.weak_learner not in WEAK_LEARNERS:
            raise ValueError(f"unknown weak learner {self.weak_learner!r}")
        if not 0 < self.beta_floor < 1:
            raise ValueError("beta_floor must be in (0, 1)")
        if self.max_retries < 0:
            raise ValueError("max_retries must be >= 0")

    def rounds_for(self, k: int) -> list[int]:
        rounds = [self.rounds] * k if isinstance(self.rounds, int) else list(self.rounds)
        if len(rounds) != k:
            raise ValueError(f"{len(rounds)} round counts given for {k} databases")
        if any(t < 1 for t in rounds):
            raise ValueError("every database needs at least one round")
        return rounds


@dataclass(frozen=True)
class IterationRecord:
    """Everything one accepted iteration computed (for audits and tests)."""

    database: int
    t: int
    weights: np.ndarray
    distribution: np.ndarray
    train_indices: np.ndarray
    test_indices: np.ndarray
    hypothesis: WeakHypothesis
    composite: EnsembleStage
    correct: np.ndarray
    next_weights: np.ndarray
    discarded: int


@dataclass
class LearnppEnsemble:
    stages: list[list[EnsembleStage]]
    n_classes: int
    config: LearnppConfig
    log: list[IterationRecord] = field(default_factory=list, repr=False)

    def all_stages(self) -> list[EnsembleStage]:
        return [s for per_db in self.stages for s in per_db]

    def predict(self, features) -> np.ndarray:
        stages = self.all_stages()
        if not stages:
            raise ValueError("ensemble has no stages")
        x = np.asarray(features, dtype=np.float64)
        preds = np.stack([s.predict(x, self.n_classes, self.config.beta_floor) for s in stages])
        weights = [vote_weight(s.composite_beta, self.config.beta_floor) for s in stages]
        return weighted_majority(preds, weights, self.n_classes)

    def upto(self, k: int) -> "LearnppEnsemble":
        """The ensemble as it stood after the first ``k`` databases."""
        return LearnppEnsemble(self.stages[:k], self.n_classes, self.config)

    def accuracy(self, data: LabeledSet) -> float:
        return float(np.mean(self.predict(data.features) == data.labels))


def final_hypothesis(ensemble: LearnppEnsemble, x) -> int:
    return int(ensemble.predict(np.asarray(x, dtype=np.float64)[None, :])[0])


def _check_schema(databases: Sequence[LabeledSet]) -> None:
    if not databases:
        raise LearnppError("need at least one database")
    first = databases[0]
    for k, db in enumerate(databases[1:], start=2):
        if db.n_features != first.n_features or db.n_classes != first.n_classes:
            raise InconsistentSchema(
                f"database {k} has {db.n_features} features/{db.n_classes} classes, "
                f"database 1 has {first.n_features}/{first.n_classes}"
            )


def learnpp_train(
    databases: Sequence[LabeledSet],
    config: LearnppConfig = LearnppConfig(),
    *,
    on_iteration: Callable[[IterationRecord], None] | None = None,
) -> LearnppEnsemble:
    _check_schema(databases)
    rounds = config.rounds_for(len(databases))
    n_classes = databases[0].n_classes
    rng = Xoshiro256(config.seed)
    ensemble = LearnppEnsemble([], n_classes, config)

    for k, db in enumerate(databases):
        w = init_distribution(db.m).raw_weights
        everyone = np.arange(db.m)
        hypotheses: list[WeakHypothesis] = []
        stages: list[EnsembleStage] = []
        for t in range(rounds[k]):
            discarded = 0
            while True:
                d = normalize_distribution(w)
                tr, te = sample_subsets(d, rng, config.tr_size, config.te_size)
                learner = train_weak(config.weak_learner, db.subset(tr), rng)
                s = np.concatenate([tr, te])
                eps = weighted_error(learner, db, s, d)
                if eps <= 0.5 + HALF_TOLERANCE:
                    eps = min(eps, 0.5)
                    h = WeakHypothesis(learner, eps, normalized_error(eps))
                    candidate = hypotheses + [h]
                    big_e = composite_error(candidate, db, everyone, d, config.beta_floor)
                    if big_e <= 0.5 + HALF_TOLERANCE:
                        big_e = min(big_e, 0.5)
                        break
                discarded += 1
                if discarded > config.max_retries:
                    raise WeakLearnerStuck(
                        f"database {k + 1}, iteration {t + 1}: no acceptable hypothesis "
                        f"after {config.max_retries} retries"
                    )
            hypotheses = candidate
            stage = EnsembleStage(tuple(hypotheses), big_e, big_e / (1.0 - big_e))
            correct = stage.predict(db.features, n_classes, config.beta_floor) == db.labels
            new_w = update_weights(w, max(stage.composite_beta, config.beta_floor), correct)
            if new_w.max() < 1e-200:
                # rescale before underflow; normalization is scale-free
                new_w = new_w / math.fsum(new_w)
            record = IterationRecord(k, t, w, d, tr, te, h, stage, correct, new_w, discarded)
            ensemble.log.append(record)
            if on_iteration is not None:
                on_iteration(record)
            stages.append(stage)
            w = new_w
        ensemble.stages.append(stages)
    return ensemble
