"""Distance matching and trained identity classifiers over scaled embeddings."""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field
from typing import Any, List, Literal, Sequence, Tuple

import joblib
import numpy as np
import xgboost as xgb
from sklearn.svm import LinearSVC

import storage
from errors import ContractViolation
from schemas import ClassifierHyper

logger = logging.getLogger(__name__)

Metric = Literal["euclidean", "manhattan", "cosine"]
METRICS: Tuple[str, ...] = ("euclidean", "manhattan", "cosine")
ClassifierKind = Literal["one_vs_all_margin", "boosted_softmax"]
CHECKPOINT_FORMAT = "classifier-checkpoint"


def distance_matrix(probes: np.ndarray, gallery: np.ndarray, metric: Metric) -> np.ndarray:
    """(P, G) distances between rows of `probes` and rows of `gallery`."""
    probes = np.atleast_2d(np.asarray(probes, dtype=np.float64))
    gallery = np.atleast_2d(np.asarray(gallery, dtype=np.float64))
    if probes.shape[1] != gallery.shape[1]:
        raise ContractViolation(
            "vectors must have equal dimensions",
            details={"probe": probes.shape[1], "gallery": gallery.shape[1]},
        )
    diff = probes[:, None, :] - gallery[None, :, :]
    if metric == "euclidean":
        return np.sqrt((diff**2).sum(axis=-1))
    if metric == "manhattan":
        return np.abs(diff).sum(axis=-1)
    if metric == "cosine":
        pn, gn = np.linalg.norm(probes, axis=1), np.linalg.norm(gallery, axis=1)
        if np.any(pn == 0) or np.any(gn == 0):
            raise ContractViolation("cosine distance is undefined for an all-zero vector")
        similarity = (probes @ gallery.T) / np.outer(pn, gn)
        return np.clip(1.0 - similarity, 0.0, 2.0)
    raise ContractViolation(f"unknown metric {metric!r}; expected one of {METRICS}")


def pairwise_distance(a: Sequence[float], b: Sequence[float], metric: Metric) -> float:
    return float(distance_matrix(np.asarray(a)[None], np.asarray(b)[None], metric)[0, 0])


def rank_gallery(
    probe: Sequence[float],
    gallery: Sequence[Tuple[str, Sequence[float]]],
    metric: Metric,
) -> List[Tuple[str, float]]:
    """Identities by ascending distance; ties keep enrolment order."""
    if not gallery:
        raise ContractViolation("gallery must not be empty")
    vectors = np.asarray([vector for _, vector in gallery], dtype=np.float64)
    distances = distance_matrix(np.asarray(probe)[None], vectors, metric)[0]
    order = np.argsort(distances, kind="stable")
    return [(gallery[i][0], float(distances[i])) for i in order]


def rank1(probes: np.ndarray, gallery: np.ndarray, gallery_labels: Sequence[str], metric: Metric) -> Tuple[List[str], np.ndarray]:
    """Closest gallery identity and its distance for each probe row."""
    distances = distance_matrix(probes, gallery, metric)
    best = np.argmin(distances, axis=1)
    return [gallery_labels[i] for i in best], distances[np.arange(len(best)), best]


@dataclass
class Classifier:
    kind: ClassifierKind
    labels: List[str]
    hyper: ClassifierHyper
    seed: int
    dim: int
    fitted_on: str = ""
    models: List[Any] = field(default_factory=list)

    def decision_scores(self, features: np.ndarray) -> np.ndarray:
        """(N, K) confidences: signed margins, or softmax probabilities."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if features.shape[1] != self.dim:
            raise ContractViolation(
                "probe dimension does not match the classifier",
                details={"expected": self.dim, "got": features.shape[1]},
            )
        if self.kind == "one_vs_all_margin":
            scores = np.column_stack([model.decision_function(features) for model in self.models])
        else:
            (booster,) = self.models
            scores = booster.predict(xgb.DMatrix(features)).reshape(len(features), len(self.labels))
        return scores

    def predict(self, features: np.ndarray) -> Tuple[List[str], np.ndarray]:
        scores = self.decision_scores(features)
        best = np.argmax(scores, axis=1)
        return [self.labels[k] for k in best], scores[np.arange(len(best)), best]


def _train_one_vs_all(features: np.ndarray, y: np.ndarray, n_classes: int, hyper: ClassifierHyper, seed: int) -> List[LinearSVC]:
    models = []
    for k in range(n_classes):
        model = LinearSVC(C=hyper.C, max_iter=hyper.max_iter, dual="auto", random_state=seed)
        model.fit(features, (y == k).astype(int))
        models.append(model)
    return models


def _train_boosted(features: np.ndarray, y: np.ndarray, n_classes: int, hyper: ClassifierHyper, seed: int) -> xgb.Booster:
    params = {
        "objective": "multi:softprob",
        "num_class": n_classes,
        "max_depth": hyper.max_depth,
        "eta": hyper.learning_rate,
        "min_child_weight": hyper.min_child_weight,
        "seed": seed,
        "nthread": hyper.nthread,
        "tree_method": "hist",
        "verbosity": 0,
    }
    return xgb.train(params, xgb.DMatrix(features, label=y), num_boost_round=hyper.n_estimators)


def train_classifier(
    features: np.ndarray,
    labels: Sequence[str],
    kind: ClassifierKind,
    hyper: ClassifierHyper | None = None,
    seed: int = 0,
    *,
    fitted_on: str = "",
) -> Classifier:
    """Fit a one-vs-all margin model or a boosted softmax ensemble."""
    hyper = hyper or ClassifierHyper()
    features = np.asarray(features, dtype=np.float64)
    classes = sorted(set(labels))
    if len(classes) < 2:
        raise ContractViolation("a classifier needs at least 2 classes", details={"classes": classes})
    if features.ndim != 2 or len(features) != len(labels):
        raise ContractViolation("features must be an (N, D) matrix with one label per row")
    index = {label: k for k, label in enumerate(classes)}
    y = np.array([index[label] for label in labels])

    if kind == "one_vs_all_margin":
        models = _train_one_vs_all(features, y, len(classes), hyper, seed)
    elif kind == "boosted_softmax":
        models = [_train_boosted(features, y, len(classes), hyper, seed)]
    else:
        raise ContractViolation(f"unknown classifier kind {kind!r}")
    logger.info(
        "classifier_trained",
        extra={"kind": kind, "classes": len(classes), "samples": len(features), "fitted_on": fitted_on},
    )
    return Classifier(kind=kind, labels=classes, hyper=hyper, seed=seed, dim=features.shape[1], fitted_on=fitted_on, models=models)


def classify(clf: Classifier, probe: Sequence[float]) -> Tuple[str, float]:
    """Most confident identity; ties go to the lowest class index."""
    labels, confidences = clf.predict(np.asarray(probe, dtype=np.float64)[None])
    return labels[0], float(confidences[0])


def save_classifier(clf: Classifier, uri: str) -> None:
    header = {
        "format": CHECKPOINT_FORMAT,
        "kind": clf.kind,
        "labels": clf.labels,
        "hyper": clf.hyper.model_dump(),
        "seed": clf.seed,
        "dim": clf.dim,
        "fitted_on": clf.fitted_on,
    }
    buffer = io.BytesIO()
    joblib.dump({"header": header, "payload": clf.models}, buffer)
    storage.write_bytes(uri, buffer.getvalue())


def load_classifier(uri: str) -> Classifier:
    data = joblib.load(io.BytesIO(storage.read_bytes(uri)))
    header = data.get("header", {})
    if header.get("format") != CHECKPOINT_FORMAT:
        raise ContractViolation(f"{uri} is not a classifier checkpoint")
    return Classifier(
        kind=header["kind"],
        labels=list(header["labels"]),
        hyper=ClassifierHyper(**header["hyper"]),
        seed=header["seed"],
        dim=header["dim"],
        fitted_on=header["fitted_on"],
        models=data["payload"],
    )
