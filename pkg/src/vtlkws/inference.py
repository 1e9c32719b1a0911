"""Scoring under the three methods and per-warp sweeps."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from torch import nn

from .dataset import Utterance
from .features import FeatureExtractor, FrameSpec, NormStats, concat_warps
from .model import ModelCheckpoint, forward, logits
from .warp import WarpConfig, WarpGrid

FUSION_MODES = ("posterior", "logit")


class ProvenanceError(ValueError):
    pass


def fuse_scores(per_alpha) -> np.ndarray:
    """Equal-weight mean of the per-warp score vectors.

    Accepts a mapping (alpha -> vector) or a sequence of vectors. The sum is
    taken relative to the elementwise minimum with exactly rounded
    accumulation, so the result does not depend on input order and the mean
    of identical vectors is that vector bit for bit.
    """
    vecs = list(per_alpha.values()) if isinstance(per_alpha, Mapping) else list(per_alpha)
    if not vecs:
        raise ValueError("cannot fuse an empty set of scores")
    mat = np.asarray(vecs, dtype=np.float64)
    if mat.ndim != 2:
        raise ValueError("score vectors must be one-dimensional and equally long")
    ref = mat.min(axis=0)
    diffs = mat - ref
    n = mat.shape[0]
    return np.array([ref[j] + math.fsum(diffs[:, j]) / n for j in range(mat.shape[1])])


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


@dataclass
class FusedDecision:
    fused: np.ndarray
    predicted: int
    per_alpha: dict = field(default_factory=dict)


class Scorer:
    """Bundles a model with its front end and normalization stats.

    ``fusion='logit'`` averages logits instead of posteriors (ablation only).
    """

    def __init__(self, model, extractor: FeatureExtractor | None = None, stats: NormStats | None = None,
                 fusion: str = "posterior", method: str | None = None, check_provenance: bool = True):
        if fusion not in FUSION_MODES:
            raise ValueError(f"fusion must be one of {FUSION_MODES}")
        if isinstance(model, ModelCheckpoint):
            ckpt = model
            model = ckpt.model()
            if stats is None and ckpt.norm_stats:
                stats = NormStats.from_dict(ckpt.norm_stats)
            method = method or ckpt.provenance.get("method")
        self.model: nn.Module = model
        self.model.eval()
        self.extractor = extractor or FeatureExtractor()
        self.stats = stats
        self.fusion = fusion
        self.method = method
        self.check_provenance = check_provenance

    @property
    def input_dim(self) -> int:
        return self.model.cfg.input_dim

    def _prepare(self, values: np.ndarray) -> np.ndarray:
        if values.shape[1] != self.input_dim:
            raise ValueError(f"feature dim {values.shape[1]} does not match model input dim {self.input_dim}")
        return self.stats.apply(values) if self.stats is not None else values

    def _require(self, method: str) -> None:
        if self.check_provenance and self.method is not None and self.method != method:
            raise ProvenanceError(f"model was trained with method {self.method!r}, not {method!r}")

    def _decide(self, per_alpha: dict, per_alpha_logits: dict | None = None) -> FusedDecision:
        if self.fusion == "logit" and per_alpha_logits:
            fused = _softmax(fuse_scores(per_alpha_logits))
        else:
            fused = fuse_scores(per_alpha)
        return FusedDecision(fused, int(np.argmax(fused)), per_alpha)

    def score_warps(self, u: Utterance, alphas) -> FusedDecision:
        warped = self.extractor.all_warps(u, tuple(alphas))
        per_alpha, per_logit = {}, {}
        for a in sorted(warped):
            x = self._prepare(warped[a].values)
            z = logits(self.model, x)[0]
            per_logit[a] = z
            per_alpha[a] = _softmax(z)
        return self._decide(per_alpha, per_logit)

    def score_vtl_independent(self, u: Utterance, grid: WarpGrid) -> FusedDecision:
        self._require("vtl_independent")
        return self.score_warps(u, grid)

    def score_alpha_one(self, u: Utterance) -> FusedDecision:
        if self.check_provenance and self.method == "concat":
            raise ProvenanceError("concatenation models cannot score single-warp features")
        return self.score_warps(u, (1.0,))

    def score_concat(self, u: Utterance, grid: WarpGrid) -> FusedDecision:
        self._require("concat")
        x = self._prepare(concat_warps(self.extractor.all_warps(u, tuple(grid))).values)
        p = forward(self.model, x)
        return FusedDecision(p, int(np.argmax(p)), {})


def _scorer(model, spec: FrameSpec | None, cfg: WarpConfig | None, sample_rate: int, **kw) -> Scorer:
    if isinstance(model, Scorer):
        return model
    return Scorer(model, FeatureExtractor(spec, cfg, sample_rate), **kw)


def score_vtl_independent(model, u: Utterance, grid: WarpGrid, spec=None, cfg=None, **kw) -> FusedDecision:
    return _scorer(model, spec, cfg, u.sample_rate, **kw).score_vtl_independent(u, grid)


def score_alpha_one(model, u: Utterance, spec=None, cfg=None, **kw) -> FusedDecision:
    return _scorer(model, spec, cfg, u.sample_rate, **kw).score_alpha_one(u)


def score_concat(model, u: Utterance, grid: WarpGrid, spec=None, cfg=None, **kw) -> FusedDecision:
    return _scorer(model, spec, cfg, u.sample_rate, **kw).score_concat(u, grid)


METHOD_NAMES = {"vtl-independent": "vtl_independent", "alpha-one": "alpha_one",
                "baseline": "baseline", "concat": "concat"}


@dataclass
class ScoredUtterance:
    utterance_id: str
    true_label: int
    decision: FusedDecision


def score_corpus(scorer: Scorer, utterances: Iterable[Utterance], method: str, grid: WarpGrid,
                 pool=None) -> list[ScoredUtterance]:
    """Score every utterance under ``method``.

    ``method`` is one of ``vtl_independent`` (fusion over the grid),
    ``alpha_one`` / ``baseline`` (single forward at 1.00) or ``concat``.
    Results keep input order.
    """
    if method == "vtl_independent":
        fn = (lambda u: scorer.score_vtl_independent(u, grid))
    elif method in ("alpha_one", "baseline"):
        fn = scorer.score_alpha_one
    elif method == "concat":
        fn = (lambda u: scorer.score_concat(u, grid))
    else:
        raise ValueError(f"unknown scoring method {method!r}")

    def one(u):
        return ScoredUtterance(u.id, -1 if u.label is None else u.label.index, fn(u))

    utterances = list(utterances)
    return list(pool.map(one, utterances)) if pool else [one(u) for u in utterances]


def sweep_alpha(model, utterances: Iterable[Utterance], grid: WarpGrid, scorer: Scorer | None = None,
                scored: list[ScoredUtterance] | None = None) -> list[tuple[float, float]]:
    """Accuracy (%) when scoring with each single warp factor, ascending alpha."""
    if scored is None:
        scorer = scorer or (model if isinstance(model, Scorer) else Scorer(model, check_provenance=False))
        scored = [ScoredUtterance(u.id, u.label.index, scorer.score_warps(u, grid)) for u in utterances]
    rows = []
    for a in sorted(grid):
        hits = [int(np.argmax(s.decision.per_alpha[a])) == s.true_label for s in scored]
        rows.append((a, 100.0 * sum(hits) / len(hits) if hits else float("nan")))
    return rows


def score_fields(n_classes: int) -> list[str]:
    return ["utterance_id", "true_label", "predicted"] + [f"p{i:02d}" for i in range(n_classes)]


def write_scores(path, scored: list[ScoredUtterance], n_classes: int) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(score_fields(n_classes))
        for s in scored:
            w.writerow([s.utterance_id, s.true_label, s.decision.predicted]
                       + [f"{p:.9g}" for p in s.decision.fused])


def write_sweep(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["alpha", "accuracy"])
        for a, acc in rows:
            w.writerow([f"{a:.2f}", f"{acc:.6f}"])
