"""Selection policies: (model, pool state, b) -> indices to annotate."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..models import (
    CHUNK_ROWS,
    ProbabilisticClassifier,
    embed,
    gradient_embedding,
    predict_proba,
    pseudo_labels,
    stochastic_predict,
)
from ..numcore import ContractError, RngStream
from .deepfool import deepfool
from .diversity import k_center_greedy, kmeans_pp_seeding
from .glister import glister_greedy
from .scores import (
    HIGHER,
    LOWER,
    ScoreTable,
    SelectionResult,
    score_bald,
    score_entropy,
    score_least_confidence,
    score_margin,
    select_by_score,
)


@dataclass
class SelectionRequest:
    batch_size: int
    unlabeled: np.ndarray
    model: ProbabilisticClassifier
    features: np.ndarray
    rng: RngStream
    labeled: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    labeled_labels: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    params: dict = field(default_factory=dict)
    n_jobs: int = 1

    def __post_init__(self):
        self.unlabeled = np.asarray(self.unlabeled, dtype=np.int64)
        self.labeled = np.asarray(self.labeled, dtype=np.int64)
        self.labeled_labels = np.asarray(self.labeled_labels, dtype=np.int64)
        self.features = np.asarray(getattr(self.features, "features", self.features))
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.batch_size > self.unlabeled.size:
            raise ContractError(
                f"batch_size {self.batch_size} exceeds {self.unlabeled.size} unlabeled samples"
            )

    def candidates(self) -> np.ndarray:
        """Unlabeled indices to score, optionally a random subset of size ``candidate_cap``."""
        cap = self.params.get("candidate_cap")
        if not cap or cap >= self.unlabeled.size:
            return self.unlabeled
        cap = max(int(cap), self.batch_size)
        sub = self.rng.child(0).choice(self.unlabeled, size=cap, replace=False)
        return np.sort(sub)


def select_random(req: SelectionRequest) -> SelectionResult:
    chosen = req.rng.child(1).choice(req.unlabeled, size=req.batch_size, replace=False)
    return SelectionResult(np.asarray(chosen, dtype=np.int64), "random")


def _uncertainty(scorer, name):
    def select(req: SelectionRequest) -> SelectionResult:
        cand = req.candidates()
        probs = predict_proba(req.model, req.features, cand, req.n_jobs)
        return select_by_score(scorer(probs, cand), req.batch_size, name)

    select.__name__ = f"select_{name}"
    return select


select_entropy = _uncertainty(score_entropy, "entropy")
select_margin = _uncertainty(score_margin, "margin")
select_least_confidence = _uncertainty(score_least_confidence, "least_confidence")


def select_bald(req: SelectionRequest) -> SelectionResult:
    cand = req.candidates()
    passes = int(req.params.get("bald_passes", 25))
    mc = stochastic_predict(req.model, req.features, cand, passes, req.rng.child(1))
    return select_by_score(score_bald(mc, cand), req.batch_size, "bald")


def score_deepfool(req: SelectionRequest, max_iters: int = 50, overshoot: float = 0.02) -> ScoreTable:
    cand = req.candidates()
    x = req.features[cand]
    norms, iters = [], []
    for start in range(0, cand.size, CHUNK_ROWS):
        n_b, it_b, _ = deepfool(req.model, x[start : start + CHUNK_ROWS], max_iters, overshoot)
        norms.append(n_b)
        iters.append(it_b)
    return ScoreTable(cand, np.concatenate(norms), LOWER, secondary=np.concatenate(iters))


def select_deepfool(req: SelectionRequest) -> SelectionResult:
    table = score_deepfool(
        req,
        int(req.params.get("deepfool_max_iters", 50)),
        float(req.params.get("deepfool_overshoot", 0.02)),
    )
    return select_by_score(table, req.batch_size, "deepfool")


def select_badge(req: SelectionRequest) -> SelectionResult:
    cand = req.candidates()
    h = embed(req.model, req.features, cand, req.n_jobs)
    probs = predict_proba(req.model, req.features, cand, req.n_jobs)
    g = gradient_embedding(probs, h, pseudo_labels(probs))
    picks = kmeans_pp_seeding(g, req.batch_size, req.rng.child(1))
    return SelectionResult(cand[picks], "badge")


def select_coreset(req: SelectionRequest) -> SelectionResult:
    if req.labeled.size == 0:
        raise ContractError("coreset selection needs a non-empty labeled set")
    cand = req.candidates()
    if req.params.get("coreset_space", "embedding") == "raw":
        pts, centers = req.features[cand], req.features[req.labeled]
    else:
        pts = embed(req.model, req.features, cand, req.n_jobs)
        centers = embed(req.model, req.features, req.labeled, req.n_jobs)
    picks = k_center_greedy(pts, centers, req.batch_size)
    return SelectionResult(cand[picks], "coreset")


def validation_shard(labeled: np.ndarray, fraction: float, rng: RngStream) -> np.ndarray:
    """Positions into ``labeled`` forming the held-out shard (at least one)."""
    size = max(1, int(round(fraction * labeled.size)))
    return np.sort(rng.choice(labeled.size, size=size, replace=False))


def select_glister(req: SelectionRequest) -> SelectionResult:
    if req.labeled.size == 0:
        raise ContractError("GLISTER needs a non-empty validation shard")
    pos = validation_shard(req.labeled, float(req.params.get("glister_val_fraction", 0.2)), req.rng.child(2))
    cand = req.candidates()
    h_cand = embed(req.model, req.features, cand, req.n_jobs)
    h_val = embed(req.model, req.features, req.labeled[pos], req.n_jobs)
    picks, scores = glister_greedy(
        h_cand,
        h_val,
        req.labeled_labels[pos],
        req.model.params["head.W"],
        req.model.params["head.b"],
        req.batch_size,
        float(req.params.get("glister_lr", 0.01)),
    )
    return SelectionResult(cand[picks], "glister", ScoreTable(cand, scores, HIGHER))


STRATEGIES = {
    "random": select_random,
    "entropy": select_entropy,
    "margin": select_margin,
    "least_confidence": select_least_confidence,
    "badge": select_badge,
    "glister": select_glister,
    "coreset": select_coreset,
    "bald": select_bald,
    "deepfool": select_deepfool,
}


def select(strategy: str, req: SelectionRequest) -> SelectionResult:
    try:
        fn = STRATEGIES[strategy]
    except KeyError:
        raise ContractError(f"unknown strategy {strategy!r}; expected one of {sorted(STRATEGIES)}") from None
    result = fn(req)
    chosen = np.asarray(result.chosen, dtype=np.int64)
    if chosen.size != req.batch_size or np.unique(chosen).size != chosen.size:
        raise AssertionError(f"{strategy} returned an invalid selection")
    result.chosen = chosen
    return result
