"""Training regimes: VTL-independent (random warp per epoch), baseline, concatenation."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch

from .augment import AugmentPolicy, Augmenter
from .dataset import Corpus, CorpusEntry
from .features import FeatureCache, FeatureExtractor, NormStats, concat_warps
from .model import (ModelCheckpoint, ModelConfig, build_model, save_checkpoint,
                    smoothed_cross_entropy)
from .warp import WarpGrid

logger = logging.getLogger(__name__)

METHODS = ("vtl_independent", "baseline", "concat")
CONCAT = "concat"
LOG_FIELDS = ("epoch", "alpha", "lr", "train_loss", "eval_acc")


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    method: str = "vtl_independent"
    epochs: int = 100
    batch_size: int = 512
    weight_decay: float = 0.1
    lr_init: float = 0.001
    warmup_epochs: int = 10
    label_smoothing: float = 0.1
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    seed_data: int = 0
    seed_init: int = 42
    per_batch_warp: bool = False
    norm_max_utterances: int = 2000
    jobs: int = 1

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ValueError(f"need 0 <= warmup ({self.warmup_epochs}) < epochs ({self.epochs})")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def make_warp_schedule(grid: WarpGrid, epochs: int, seed: int, method: str) -> list:
    """Per-epoch warp factor.

    ``vtl_independent`` draws i.i.d. uniformly from the grid for every epoch but
    the last, which is pinned to 1.00; ``baseline`` is 1.00 throughout;
    ``concat`` uses the concatenated features every epoch.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if grid is None or len(grid) == 0:
        raise ValueError("empty warp grid")
    if method == "baseline":
        return [1.0] * epochs
    if method == CONCAT:
        return [CONCAT] * epochs
    if method != "vtl_independent":
        raise ValueError(f"unknown method {method!r}")
    if 1.0 not in grid:
        raise ValueError("vtl_independent needs 1.00 in the grid")
    rng = np.random.default_rng(seed)
    picks = rng.integers(0, len(grid), size=epochs - 1)
    return [float(grid[i]) for i in picks] + [1.0]


def lr_at(epoch: float, cfg: TrainConfig) -> float:
    """Linear warmup from 0 to ``lr_init``, then half-cosine decay.

    ``epoch`` may be fractional (per-step schedules).
    """
    w, e_max, lr0 = cfg.warmup_epochs, cfg.epochs, cfg.lr_init
    if epoch < w:
        return lr0 * epoch / w
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * (epoch - w) / (e_max - w)))


class FeatureSource:
    """Normalized feature matrices for corpus entries, online or from a cache."""

    def __init__(self, corpus: Corpus, extractor: FeatureExtractor, grid: WarpGrid,
                 cache: FeatureCache | None = None, augmenter: Augmenter | None = None,
                 stats: NormStats | None = None):
        self.corpus = corpus
        self.extractor = extractor
        self.grid = grid
        self.cache = cache
        self.augmenter = augmenter
        self.stats = stats

    def raw(self, entry: CorpusEntry, alpha, epoch: int | None = None) -> np.ndarray:
        augment = self.augmenter is not None and epoch is not None
        if self.cache is not None:
            if alpha == CONCAT:
                fm = concat_warps({a: self.cache.get(entry.id, a) for a in self.grid})
            else:
                fm = self.cache.get(entry.id, alpha)
            return fm.values
        u = self.corpus.load(entry)
        if augment:
            u = self.augmenter.signal(u, epoch)
        if alpha == CONCAT:
            return concat_warps(self.extractor.all_warps(u, tuple(self.grid))).values
        return self.extractor.mfcc(u, alpha).values

    def matrix(self, entry: CorpusEntry, alpha, epoch: int | None = None) -> np.ndarray:
        v = self.raw(entry, alpha, epoch)
        if self.stats is not None:
            v = self.stats.apply(v)
        if self.augmenter is not None and epoch is not None:
            v = self.augmenter.features(v, entry.id, epoch)
        return v


@dataclass
class TrainRun:
    config: TrainConfig
    model_config: ModelConfig
    schedule: list
    log: list = field(default_factory=list)
    final: ModelCheckpoint | None = None
    best_epoch: int | None = None
    out_dir: Path | None = None


def _batched(items, size):
    for i in range(0, len(items), size):
        yield items[i:i + size]


def evaluate_entries(model, source: FeatureSource, entries, alpha, batch_size: int = 256,
                     pool: ThreadPoolExecutor | None = None) -> float:
    """Top-1 accuracy (%) of ``model`` on ``entries`` scored at a single warp (or concat)."""
    if not entries:
        return float("nan")
    model.eval()
    correct = 0
    fetch = (lambda e: source.matrix(e, alpha))
    with torch.no_grad():
        for chunk in _batched(entries, batch_size):
            mats = list(pool.map(fetch, chunk)) if pool else [fetch(e) for e in chunk]
            x = torch.as_tensor(np.stack(mats), dtype=torch.float32)
            pred = model(x).argmax(dim=1).numpy()
            correct += int(sum(int(p) == e.label.index for p, e in zip(pred, chunk)))
    return 100.0 * correct / len(entries)


def fit_norm_stats(source: FeatureSource, entries, method: str, limit: int, seed: int) -> NormStats:
    alpha = CONCAT if method == CONCAT else 1.0
    if limit and len(entries) > limit:
        idx = np.sort(np.random.default_rng(seed).choice(len(entries), size=limit, replace=False))
        entries = [entries[i] for i in idx]
    return NormStats.fit(source.raw(e, alpha) for e in entries)


def _provenance(cfg: TrainConfig, schedule, epoch, grid, extractor, corpus) -> dict:
    return {
        "method": cfg.method,
        "seed_data": cfg.seed_data,
        "seed_init": cfg.seed_init,
        "epoch": epoch,
        "warp_schedule": schedule,
        "grid": list(grid),
        "frame_spec": extractor.spec.to_dict(),
        "warp_config": extractor.cfg.to_dict(),
        "labels": corpus.label_names(),
    }


def _fmt(x) -> str:
    return x if isinstance(x, str) else f"{x:.10g}"


def train(corpus: Corpus, cfg: TrainConfig, grid: WarpGrid, policy: AugmentPolicy | None = None,
          model_cfg: ModelConfig | None = None, extractor: FeatureExtractor | None = None,
          cache: FeatureCache | None = None, noise_pool=None, out_dir=None,
          eval_split: str | None = None) -> TrainRun:
    """Train one model under ``cfg.method`` and return the run record.

    With ``cache`` set, features come from disk and only feature-level masks
    are applied; otherwise audio is decoded and augmented every epoch.
    """
    extractor = extractor or FeatureExtractor()
    policy = policy or AugmentPolicy(enabled=False)
    schedule = make_warp_schedule(grid, cfg.epochs, cfg.seed_data, cfg.method)
    width = extractor.spec.n_ceps * (len(grid) if cfg.method == CONCAT else 1)
    n_frames = extractor.spec.n_frames(corpus.target_samples, extractor.sample_rate)
    base = model_cfg or ModelConfig()
    model_cfg = ModelConfig(**{**base.to_dict(), "input_dim": width, "n_frames": n_frames,
                               "n_classes": corpus.n_classes, "label_smoothing": cfg.label_smoothing})

    train_entries = corpus.entries("train")
    if not train_entries:
        raise ValueError("training split is empty")
    if eval_split is None:
        eval_split = "valid" if corpus.splits.get("valid") else "eval"
    eval_entries = corpus.splits.get(eval_split, [])

    plain = FeatureSource(corpus, extractor, grid, cache)
    stats = fit_norm_stats(plain, train_entries, cfg.method, cfg.norm_max_utterances, cfg.seed_data)
    plain.stats = stats
    source = FeatureSource(corpus, extractor, grid, cache, Augmenter(policy, noise_pool), stats)

    torch.manual_seed(cfg.seed_init)
    model = build_model(model_cfg)
    opt = torch.optim.AdamW(model.parameters(), lr=cfg.lr_init, betas=cfg.betas, eps=cfg.eps,
                            weight_decay=cfg.weight_decay)
    rng = np.random.default_rng(cfg.seed_data)

    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps({
            "train": cfg.to_dict(), "model": model_cfg.to_dict(), "frames": extractor.spec.to_dict(),
            "warp": extractor.cfg.to_dict(), "augment": policy.to_dict(), "grid": list(grid),
            "norm_stats": stats.to_dict(), "labels": corpus.label_names(),
        }, indent=2))
        (out / "schedule.json").write_text(json.dumps(schedule))

    run = TrainRun(cfg, model_cfg, schedule, out_dir=out)
    eval_alpha = CONCAT if cfg.method == CONCAT else 1.0
    best_acc = -math.inf
    n_batches = math.ceil(len(train_entries) / cfg.batch_size)
    pool = ThreadPoolExecutor(max_workers=cfg.jobs) if cfg.jobs > 1 else None
    try:
        for epoch in range(cfg.epochs):
            t0 = time.time()
            alpha = schedule[epoch]
            order = rng.permutation(len(train_entries))
            model.train()
            total, seen = 0.0, 0
            for b, idx in enumerate(_batched(order, cfg.batch_size)):
                batch_alpha = alpha
                if cfg.per_batch_warp and cfg.method == "vtl_independent" and epoch < cfg.epochs - 1:
                    brng = np.random.default_rng([cfg.seed_data, epoch, b])
                    batch_alpha = float(grid[int(brng.integers(len(grid)))])
                entries = [train_entries[i] for i in idx]
                fetch = (lambda e, a=batch_alpha: source.matrix(e, a, epoch))
                mats = list(pool.map(fetch, entries)) if pool else [fetch(e) for e in entries]
                x = torch.as_tensor(np.stack(mats), dtype=torch.float32)
                y = torch.as_tensor([e.label.index for e in entries], dtype=torch.long)
                lr = lr_at(epoch + b / n_batches, cfg)
                for group in opt.param_groups:
                    group["lr"] = lr
                opt.zero_grad()
                loss = smoothed_cross_entropy(model(x), y, cfg.label_smoothing)
                if not torch.isfinite(loss):
                    raise TrainingDiverged(f"non-finite loss at epoch {epoch}, batch {b} (alpha={batch_alpha})")
                loss.backward()
                opt.step()
                total += float(loss.detach()) * len(entries)
                seen += len(entries)
            train_loss = total / seen
            acc = evaluate_entries(model, plain, eval_entries, eval_alpha, pool=pool)
            row = {"epoch": epoch, "alpha": alpha, "lr": lr_at(epoch, cfg),
                   "train_loss": train_loss, "eval_acc": acc}
            run.log.append(row)
            logger.info("epoch %d alpha=%s loss=%.4f eval_acc=%.2f (%.1fs)",
                        epoch, alpha, train_loss, acc, time.time() - t0)
            if out:
                _write_log(out / "log.csv", run.log)
                if not math.isnan(acc) and acc > best_acc:
                    best_acc = acc
                    run.best_epoch = epoch
                    save_checkpoint(out / "best.ckpt", model, model_cfg, stats,
                                    _provenance(cfg, schedule, epoch, grid, extractor, corpus))
    finally:
        if pool:
            pool.shutdown()

    prov = _provenance(cfg, schedule, cfg.epochs - 1, grid, extractor, corpus)
    run.final = ModelCheckpoint(model_cfg, {k: v.detach().clone() for k, v in model.state_dict().items()},
                                stats.to_dict(), prov)
    if out:
        save_checkpoint(out / "final.ckpt", model, model_cfg, stats, prov)
        if run.best_epoch is None:
            save_checkpoint(out / "best.ckpt", model, model_cfg, stats, prov)
    return run


def _write_log(path: Path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow([r["epoch"], _fmt(r["alpha"]), _fmt(r["lr"]), _fmt(r["train_loss"]), _fmt(r["eval_acc"])])


def read_log(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
