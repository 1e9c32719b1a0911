import math

import numpy as np
import pytest
import torch
from scipy import stats as sps

from oracles import gradient_relative_error
from vtlkws.augment import AugmentPolicy
from vtlkws.dataset import SplitManifest, load_corpus
from vtlkws.features import FeatureCache, FeatureExtractor
from vtlkws.model import ModelConfig, build_model, count_parameters, load_checkpoint, smoothed_cross_entropy
from vtlkws.training import (TrainConfig, TrainingDiverged, lr_at, make_warp_schedule, read_log, train)
from vtlkws.warp import WarpGrid, default_grid

TINY = ModelConfig(channels=(8, 8, 8, 8))


def toy_cfg(method, **kw):
    return TrainConfig(**{"method": method, "epochs": 5, "batch_size": 8, "warmup_epochs": 1,
                          "lr_init": 0.01, **kw})


@pytest.fixture(scope="module")
def corpus(fixture_corpus):
    return load_corpus(fixture_corpus, SplitManifest.from_list_files(fixture_corpus, fixture_corpus / "testing_list.txt"))


def test_schedule_baseline():
    assert make_warp_schedule(default_grid(), 3, 0, "baseline") == [1.0, 1.0, 1.0]


def test_schedule_vtl_independent_last_epoch():
    s = make_warp_schedule(default_grid(), 100, 0, "vtl_independent")
    assert len(s) == 100 and s[-1] == 1.0
    assert all(a in default_grid() for a in s)
    assert len(set(s[:-1])) > 5


def test_schedule_seeded():
    g = default_grid()
    assert make_warp_schedule(g, 50, 7, "vtl_independent") == make_warp_schedule(g, 50, 7, "vtl_independent")
    assert make_warp_schedule(g, 50, 7, "vtl_independent") != make_warp_schedule(g, 50, 8, "vtl_independent")


def test_schedule_concat_marker():
    assert make_warp_schedule(default_grid(), 2, 0, "concat") == ["concat", "concat"]


def test_schedule_errors():
    with pytest.raises(ValueError):
        make_warp_schedule(default_grid(), 0, 0, "baseline")
    with pytest.raises(ValueError):
        make_warp_schedule(None, 3, 0, "baseline")


def test_schedule_uniformity_chi2():
    g = default_grid()
    s = make_warp_schedule(g, 10001, 0, "vtl_independent")[:-1]
    counts = np.array([sum(1 for a in s if a == f) for f in g])
    assert counts.sum() == 10000
    assert sps.chisquare(counts).pvalue > 0.01


def test_lr_schedule_values():
    cfg = TrainConfig()
    assert lr_at(0, cfg) == 0.0
    assert lr_at(10, cfg) == 0.001
    assert lr_at(5, cfg) == pytest.approx(0.0005, abs=1e-15)
    expected = 0.001 * 0.5 * (1 + math.cos(math.pi * 89 / 90))
    assert lr_at(99, cfg) == pytest.approx(expected, abs=1e-15)
    assert lr_at(99, cfg) < 1e-6


def test_lr_continuous_at_warmup_boundary():
    cfg = TrainConfig()
    assert abs(lr_at(10 - 1e-12, cfg) - 0.001) <= 1e-12
    assert abs(lr_at(10 + 1e-12, cfg) - 0.001) <= 1e-12


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=5)  # warmup 10 >= epochs
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)
    with pytest.raises(ValueError):
        TrainConfig(method="foo")


def test_decoupled_weight_decay_zero_lr():
    torch.manual_seed(0)
    m = build_model(ModelConfig(channels=(2, 2, 2, 2), input_dim=4, n_classes=3))
    opt = torch.optim.AdamW(m.parameters(), lr=0.0, weight_decay=0.1)
    before = [p.detach().clone() for p in m.parameters()]
    loss = smoothed_cross_entropy(m(torch.randn(4, 12, 4)), torch.tensor([0, 1, 2, 0]))
    loss.backward()
    opt.step()
    for a, p in zip(before, m.parameters()):
        assert torch.equal(a, p)


def test_gradient_check_tiny_model():
    torch.manual_seed(0)
    m = build_model(ModelConfig(channels=(2, 2, 2, 2), input_dim=4, n_classes=3)).double()
    assert count_parameters(m) <= 1000
    x = torch.randn(3, 12, 4, dtype=torch.float64)
    y = torch.tensor([0, 2, 1])
    m.train()
    err = gradient_relative_error(m, lambda: smoothed_cross_entropy(m(x), y, 0.1))
    assert err <= 1e-4


def test_descent_on_frozen_batch():
    torch.manual_seed(1)
    m = build_model(TINY)
    x = torch.randn(8, 98, 40)
    y = torch.randint(0, 35, (8,))
    opt = torch.optim.AdamW(m.parameters(), lr=1e-3, weight_decay=0.1)
    m.train()
    before = float(smoothed_cross_entropy(m(x), y).detach())
    for _ in range(5):
        opt.zero_grad()
        smoothed_cross_entropy(m(x), y).backward()
        opt.step()
    assert float(smoothed_cross_entropy(m(x), y).detach()) < before


@pytest.mark.parametrize("method", ["vtl_independent", "baseline", "concat"])
def test_toy_training_descends(corpus, method, tmp_path):
    run = train(corpus, toy_cfg(method), default_grid(), AugmentPolicy(), TINY, out_dir=tmp_path)
    losses = [r["train_loss"] for r in run.log]
    assert len(run.log) == 5
    assert losses[-1] < losses[0]
    for name in ("config.json", "schedule.json", "log.csv", "best.ckpt", "final.ckpt"):
        assert (tmp_path / name).is_file()
    ck = load_checkpoint(tmp_path / "final.ckpt")
    assert ck.config.input_dim == (840 if method == "concat" else 40)
    assert ck.config.n_classes == 2
    assert ck.provenance["method"] == method


def test_toy_training_reproducible(corpus, tmp_path):
    a = train(corpus, toy_cfg("vtl_independent"), default_grid(), AugmentPolicy(), TINY, out_dir=tmp_path / "a")
    b = train(corpus, toy_cfg("vtl_independent"), default_grid(), AugmentPolicy(), TINY, out_dir=tmp_path / "b")
    assert a.schedule == b.schedule
    la, lb = read_log(tmp_path / "a" / "log.csv"), read_log(tmp_path / "b" / "log.csv")
    for ra, rb in zip(la, lb):
        assert ra["alpha"] == rb["alpha"]
        assert abs(float(ra["train_loss"]) - float(rb["train_loss"])) <= 1e-6


def test_train_from_cache(corpus, tmp_path):
    grid = WarpGrid((0.9, 1.0, 1.1))
    ex = FeatureExtractor()
    cache = FeatureCache(tmp_path / "cache")
    for split in ("train", "eval"):
        for e in corpus.entries(split):
            for fm in ex.all_warps(corpus.load(e), tuple(grid)).values():
                cache.put(fm)
    run = train(corpus, toy_cfg("vtl_independent"), grid, AugmentPolicy(), TINY, cache=cache)
    assert run.log[-1]["train_loss"] < run.log[0]["train_loss"]


def test_cache_miss_raises(corpus, tmp_path):
    with pytest.raises(KeyError):
        train(corpus, toy_cfg("baseline"), default_grid(), None, TINY, cache=FeatureCache(tmp_path / "empty"))


def test_divergence_detected(corpus):
    cfg = toy_cfg("baseline", lr_init=float("inf"), epochs=3)
    with pytest.raises(TrainingDiverged):
        train(corpus, cfg, default_grid(), None, TINY)


def test_parallel_workers_match_serial(corpus):
    serial = train(corpus, toy_cfg("baseline", epochs=2), default_grid(), AugmentPolicy(), TINY)
    threaded = train(corpus, toy_cfg("baseline", epochs=2, jobs=3), default_grid(), AugmentPolicy(), TINY)
    assert [r["train_loss"] for r in serial.log] == [r["train_loss"] for r in threaded.log]


def test_per_batch_warp(corpus):
    run = train(corpus, toy_cfg("vtl_independent", per_batch_warp=True), default_grid(), None, TINY)
    assert run.schedule[-1] == 1.0 and len(run.log) == 5
