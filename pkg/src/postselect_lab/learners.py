"""Honest and misconduct-mode classifiers.

Honest learners (``1nn``, ``random-prototype``, ``constant``) only ever see
the fit set. Misconduct learners (``nnwt``, ``pgnn``) are handed the
validation set at training time and use it to tune per-query guesses until
every validation sample is answered correctly.

Distances are Euclidean. Nearest-neighbour ties go to the lowest dataset
index among the stored samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from postselect_lab.data import Dataset
from postselect_lab.seeding import rng_for, rng_for_bytes

HONEST = "honest"
MISCONDUCT = "misconduct"

FAMILY_MODES = {
    "1nn": HONEST,
    "random-prototype": HONEST,
    "constant": HONEST,
    "nnwt": MISCONDUCT,
    "pgnn": MISCONDUCT,
}

DEFAULT_PARAMS: dict[str, dict[str, Any]] = {
    "1nn": {},
    "random-prototype": {"prototypes": 4},
    "constant": {"label": 0},
    "nnwt": {"threshold": "auto"},
    "pgnn": {},
}


class FrozenLedgerError(RuntimeError):
    pass


@dataclass
class ResourceLedger:
    """Development-cost counters for one trained model.

    ``fit_time`` is an abstract cost: one unit per distance evaluation, per
    guess drawn and per stored sample.
    """

    guess_count: int = 0
    distance_evals: int = 0
    stored_samples: int = 0
    _frozen: bool = field(default=False, repr=False, compare=False)

    @property
    def fit_time(self) -> int:
        return self.guess_count + self.distance_evals + self.stored_samples

    @property
    def frozen(self) -> bool:
        return self._frozen

    def add(self, *, guesses: int = 0, distances: int = 0, stored: int = 0) -> None:
        if self._frozen:
            raise FrozenLedgerError("ledger is frozen after training")
        if min(guesses, distances, stored) < 0:
            raise ValueError("ledger counters only grow")
        self.guess_count += guesses
        self.distance_evals += distances
        self.stored_samples += stored

    def freeze(self) -> "ResourceLedger":
        self._frozen = True
        return self

    def to_dict(self) -> dict:
        return {
            "guess_count": self.guess_count,
            "distance_evals": self.distance_evals,
            "stored_samples": self.stored_samples,
            "fit_time": self.fit_time,
        }

    @staticmethod
    def total(ledgers: Sequence["ResourceLedger"]) -> dict:
        keys = ("guess_count", "distance_evals", "stored_samples", "fit_time")
        return {k: sum(lg.to_dict()[k] for lg in ledgers) for k in keys}


def _normalize_params(name: str, params: dict | None) -> dict:
    if name not in FAMILY_MODES:
        raise ValueError(f"unknown learner family {name!r}; expected one of {sorted(FAMILY_MODES)}")
    merged = dict(DEFAULT_PARAMS[name])
    merged.update(params or {})
    unknown = set(merged) - set(DEFAULT_PARAMS[name])
    if unknown:
        raise ValueError(f"unknown parameters for {name}: {sorted(unknown)}")
    if name == "random-prototype" and int(merged["prototypes"]) < 1:
        raise ValueError("prototype count must be positive")
    if name == "nnwt":
        t = merged["threshold"]
        if t != "auto":
            t = float(t)
            if math.isnan(t) or t < 0:
                raise ValueError("negative threshold")
            merged["threshold"] = t
    return merged


@dataclass(frozen=True)
class LearnerFamily:
    """A learner type plus architecture hyperparameters; instantiating it with a seed gives a Learner."""

    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", _normalize_params(self.name, self.params))

    @property
    def mode(self) -> str:
        return FAMILY_MODES[self.name]

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        inner = ",".join(f"{k}={_fmt_param(v)}" for k, v in sorted(self.params.items()))
        return f"{self.name}({inner})"

    def instantiate(self, seed: int) -> "Learner":
        return Learner(self.name, dict(self.params), int(seed))

    def to_dict(self) -> dict:
        return {"name": self.name, "params": {k: _fmt_param(v) for k, v in self.params.items()}, "mode": self.mode}

    @classmethod
    def from_dict(cls, payload: dict) -> "LearnerFamily":
        return cls(payload["name"], dict(payload.get("params", {})))


def _fmt_param(value: Any) -> Any:
    if isinstance(value, float) and math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return value


@dataclass(frozen=True)
class Learner:
    """Full hyperparameter record theta = (architecture params, weight seed)."""

    name: str
    params: dict
    seed: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", _normalize_params(self.name, self.params))

    @property
    def mode(self) -> str:
        return FAMILY_MODES[self.name]

    @property
    def consumes_validation(self) -> bool:
        return self.mode == MISCONDUCT

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "params": {k: _fmt_param(v) for k, v in self.params.items()},
            "seed": self.seed,
            "mode": self.mode,
            "consumes_validation": self.consumes_validation,
        }


@dataclass(frozen=True, eq=False)
class TrainedModel:
    descriptor: Learner
    ledger: ResourceLedger
    dim: int
    num_labels: int
    # stored reference points and their labels; prototypes for random-prototype
    points: np.ndarray
    point_labels: np.ndarray
    threshold: float | None = None
    guess_table: dict = field(default_factory=dict)
    saw_validation: bool = False

    def to_dict(self) -> dict:
        out = {"descriptor": self.descriptor.to_dict(), "ledger": self.ledger.to_dict(), "saw_validation": self.saw_validation}
        if self.threshold is not None:
            out["threshold"] = _fmt_param(self.threshold)
        return out


def _as_index(idx: Sequence[int]) -> np.ndarray:
    return np.asarray(sorted(int(i) for i in idx), dtype=np.int64)


def _sq_dists(queries: np.ndarray, points: np.ndarray) -> np.ndarray:
    diff = queries[:, None, :] - points[None, :, :]
    return np.einsum("qpd,qpd->qp", diff, diff)


def _nearest(queries: np.ndarray, points: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Index of and Euclidean distance to the nearest stored point (first index wins ties)."""
    sq = _sq_dists(queries, points)
    nn = np.argmin(sq, axis=1)
    return nn, np.sqrt(sq[np.arange(len(queries)), nn])


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def fit_honest(learner: Learner, dataset: Dataset, fit_idx: Sequence[int]) -> TrainedModel:
    """Fit an honest learner on the fit set only."""
    if learner.mode != HONEST:
        raise ValueError(f"{learner.name} is a misconduct learner; use fit_nnwt / fit_pgnn")
    idx = _as_index(fit_idx)
    if idx.size == 0:
        raise ValueError("empty fit set")
    X, y = dataset.features[idx], dataset.labels[idx]
    ledger = ResourceLedger()

    if learner.name == "1nn":
        points, labels = X, y
    elif learner.name == "constant":
        label = int(learner.params["label"])
        if not 0 <= label < dataset.num_labels:
            raise ValueError("constant label out of range")
        points, labels = X[:1], np.array([label])
    else:
        p = int(learner.params["prototypes"])
        if p > len(idx):
            raise ValueError(f"prototype count exceeds fit set ({p} > {len(idx)})")
        rng = rng_for(learner.seed, "prototypes")
        chosen = np.sort(rng.choice(len(idx), size=p, replace=False))
        points = X[chosen]
        owner, _ = _nearest(X, points)
        ledger.add(distances=len(idx) * p)
        # majority label of the fit samples each prototype owns; lowest label wins ties
        counts = np.zeros((p, dataset.num_labels), dtype=np.int64)
        np.add.at(counts, (owner, y), 1)
        labels = np.argmax(counts, axis=1)

    ledger.add(stored=len(points))
    return TrainedModel(
        descriptor=learner,
        ledger=ledger.freeze(),
        dim=dataset.dim,
        num_labels=dataset.num_labels,
        points=_freeze(points),
        point_labels=_freeze(labels),
    )


def construction_threshold(dataset: Dataset, fit_idx: Sequence[int], val_idx: Sequence[int]) -> float:
    """Largest threshold under which every near validation sample is answered correctly by its neighbour.

    This is the threshold a trainer holding V would post-select: the
    distance of the closest validation sample whose nearest fit neighbour
    carries the wrong label (``inf`` when there is none).
    """
    F, V = _as_index(fit_idx), _as_index(val_idx)
    nn, dist = _nearest(dataset.features[V], dataset.features[F])
    wrong = dataset.labels[F][nn] != dataset.labels[V]
    return float(dist[wrong].min()) if wrong.any() else math.inf


def _check_misconduct_inputs(dataset: Dataset, fit_idx: Sequence[int], val_idx: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    F, V = _as_index(fit_idx), _as_index(val_idx)
    if F.size == 0:
        raise ValueError("empty fit set")
    if V.size == 0:
        raise ValueError("empty validation set")
    if np.intersect1d(F, V).size:
        raise ValueError("fit and validation sets overlap")
    return F, V


def _fit_guessing(learner: Learner, dataset: Dataset, F: np.ndarray, V: np.ndarray, threshold: float) -> TrainedModel:
    X_f, y_f = dataset.features[F], dataset.labels[F]
    X_v, y_v = dataset.features[V], dataset.labels[V]
    ledger = ResourceLedger()
    ledger.add(stored=len(F))
    _, dist = _nearest(X_v, X_f)
    ledger.add(distances=len(F) * len(V))

    rng = rng_for(learner.seed, "guess-loop")
    table: dict[bytes, int] = {}
    for x, truth, r in zip(X_v, y_v, dist):
        if _is_near(r, threshold):
            continue
        key = x.tobytes()
        # draw until the guess matches the validation label; every draw is a development cost
        draws = 1
        guess = int(rng.integers(dataset.num_labels))
        while guess != truth:
            guess = int(rng.integers(dataset.num_labels))
            draws += 1
        ledger.add(guesses=draws)
        table[key] = guess

    return TrainedModel(
        descriptor=learner,
        ledger=ledger.freeze(),
        dim=dataset.dim,
        num_labels=dataset.num_labels,
        points=_freeze(X_f),
        point_labels=_freeze(y_f),
        threshold=threshold,
        guess_table=table,
        saw_validation=True,
    )


def _is_near(distance: float, threshold: float) -> bool:
    # a query identical to a stored sample is always answered by that sample
    return distance < threshold or distance == 0.0


def fit_nnwt(
    dataset: Dataset,
    fit_idx: Sequence[int],
    val_idx: Sequence[int],
    threshold: float | str = "auto",
    seed: int = 0,
) -> TrainedModel:
    """Nearest neighbour with threshold, tuned against the validation set.

    ``threshold="auto"`` uses :func:`construction_threshold`, which makes the
    validation error exactly zero. An explicit threshold is used as given;
    ``inf`` reduces the model to plain 1-NN with no guesses.
    """
    F, V = _check_misconduct_inputs(dataset, fit_idx, val_idx)
    if threshold == "auto":
        t = construction_threshold(dataset, F, V)
    else:
        t = float(threshold)
        if math.isnan(t) or t < 0:
            raise ValueError("negative threshold")
    learner = Learner("nnwt", {"threshold": threshold}, seed)
    return _fit_guessing(learner, dataset, F, V, t)


def fit_pgnn(dataset: Dataset, fit_idx: Sequence[int], val_idx: Sequence[int], seed: int = 0) -> TrainedModel:
    """Pure-guess nearest neighbour: NNWT with the threshold fixed at zero."""
    F, V = _check_misconduct_inputs(dataset, fit_idx, val_idx)
    return _fit_guessing(Learner("pgnn", {}, seed), dataset, F, V, 0.0)


def fit_learner(
    learner: Learner,
    dataset: Dataset,
    fit_idx: Sequence[int],
    val_idx: Sequence[int] | None = None,
) -> TrainedModel:
    """Dispatch on mode. Honest learners never receive ``val_idx``."""
    if learner.mode == HONEST:
        return fit_honest(learner, dataset, fit_idx)
    if val_idx is None:
        raise ValueError(f"{learner.name} needs the validation set at training time")
    if learner.name == "nnwt":
        return fit_nnwt(dataset, fit_idx, val_idx, learner.params["threshold"], learner.seed)
    return fit_pgnn(dataset, fit_idx, val_idx, learner.seed)


def _fresh_guess(model: TrainedModel, query: np.ndarray) -> int:
    return int(rng_for_bytes(model.descriptor.seed, query.tobytes()).integers(model.num_labels))


def predict_many(model: TrainedModel, queries: np.ndarray) -> np.ndarray:
    queries = np.asarray(queries, dtype=np.float64)
    if queries.ndim != 2 or queries.shape[1] != model.dim:
        raise ValueError(f"dimension mismatch: model expects {model.dim} features")
    name = model.descriptor.name
    if name == "constant":
        return np.full(len(queries), int(model.point_labels[0]), dtype=np.int64)
    nn, dist = _nearest(queries, model.points)
    out = model.point_labels[nn].astype(np.int64)
    if model.threshold is None:
        return out
    for q, (x, r) in enumerate(zip(queries, dist)):
        if _is_near(r, model.threshold):
            continue
        hit = model.guess_table.get(x.tobytes())
        out[q] = hit if hit is not None else _fresh_guess(model, x)
    return out


def predict(model: TrainedModel, query: Sequence[float] | np.ndarray) -> int:
    """Label for a single query; pure in (model, query)."""
    q = np.asarray(query, dtype=np.float64)
    if q.ndim != 1:
        raise ValueError("query must be a single feature vector")
    return int(predict_many(model, q[None, :])[0])


def evaluate_error(model: TrainedModel, dataset: Dataset, idx: Sequence[int]) -> float:
    """Fraction of misclassified samples among ``idx``."""
    I = _as_index(idx)
    if I.size == 0:
        raise ValueError("empty index set")
    preds = predict_many(model, dataset.features[I])
    return float(np.mean(preds != dataset.labels[I]))
