"""``vtlkws`` command line entry point."""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import __version__
from .config import ConfigError, ToolkitConfig, default_config, load_config

logger = logging.getLogger("vtlkws")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3
TRAIN_METHODS = {"vtl-independent": "vtl_independent", "baseline": "baseline", "concat": "concat"}
EVAL_METHODS = {"vtl-independent": "vtl_independent", "alpha-one": "alpha_one",
                "baseline": "baseline", "concat": "concat"}


def toolkit_version() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return f"{__version__}+g{out.stdout.strip()}"
    except (OSError, subprocess.SubprocessError):
        pass
    return __version__


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="toolkit config JSON (schema_version 1)")
    p.add_argument("--jobs", type=int, default=None, help="worker threads for feature extraction")
    p.add_argument("--log-level", default="INFO")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = argparse.ArgumentParser(prog="vtlkws", description="VTL-warped MFCC keyword spotting toolkit")
    parser.add_argument("--version", action="version", version=f"vtlkws {toolkit_version()}")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("fetch-manifest", parents=[common], help="write the train/eval split manifest")
    p.add_argument("--root")
    p.add_argument("--eval-list")
    p.add_argument("--valid-list")
    p.add_argument("--eval-fraction", type=float, help="random split instead of list files")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("extract", parents=[common], help="populate the feature cache")
    _data_args(p)
    p.add_argument("--cache-dir")
    p.add_argument("--split", default="all", choices=["all", "train", "eval", "valid"])

    p = sub.add_parser("train", parents=[common], help="train one model")
    _data_args(p)
    p.add_argument("--method", required=True, choices=list(TRAIN_METHODS))
    p.add_argument("--epochs", type=int)
    p.add_argument("--warmup-epochs", type=int)
    p.add_argument("--seed-data", type=int)
    p.add_argument("--seed-init", type=int)
    p.add_argument("--arch", choices=["tc_resnet8", "bc_block_net"])
    p.add_argument("--cache-dir", help="read features from this cache instead of extracting online")
    p.add_argument("--noise-dir")
    p.add_argument("--per-batch-warp", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("eval", parents=[common], help="score a split and write scores.csv")
    _data_args(p)
    p.add_argument("--method", required=True, choices=list(EVAL_METHODS))
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="eval", choices=["eval", "valid", "train"])
    p.add_argument("--fusion", default="posterior", choices=["posterior", "logit"])
    p.add_argument("--no-provenance-check", action="store_true")
    p.add_argument("--out", required=True)

    p = sub.add_parser("sweep-alpha", parents=[common], help="accuracy per single warp factor")
    _data_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--split", default="eval", choices=["eval", "valid", "train"])
    p.add_argument("--out", required=True)

    p = sub.add_parser("ttest", parents=[common], help="two-sample Student's t-test on per-seed accuracies")
    p.add_argument("--runs-a", required=True)
    p.add_argument("--runs-b", required=True)
    p.add_argument("--level", type=float, default=0.05, help="significance level")
    p.add_argument("--welch", action="store_true")

    p = sub.add_parser("report", parents=[common], help="assemble accuracy, class-wise, sweep and significance tables")
    p.add_argument("--eval", action="append", default=[], metavar="NAME=DIR",
                   help="eval output directory (scores.csv, optional sweep.csv)")
    p.add_argument("--ttest", action="append", default=[], metavar="NAME=A.csv,B.csv")
    p.add_argument("--level", type=float, default=0.05)
    p.add_argument("--out", required=True)
    return parser


def _data_args(p):
    p.add_argument("--root", help="corpus root (overrides dataset.root)")
    p.add_argument("--manifest", help="manifest JSON (overrides dataset.manifest)")


# --- helpers -------------------------------------------------------------------------

def _resolve_config(args) -> ToolkitConfig:
    cfg = load_config(args.config) if args.config else default_config()
    ds = cfg.dataset
    updates = {}
    if getattr(args, "root", None):
        updates["root"] = args.root
    if getattr(args, "manifest", None):
        updates["manifest"] = args.manifest
    if updates:
        cfg = cfg.replace(dataset=dataclasses.replace(ds, **updates))
    return cfg


def _cache_dir(args, cfg: ToolkitConfig) -> str:
    return getattr(args, "cache_dir", None) or os.environ.get("VTLKWS_CACHE") or cfg.output.cache_dir


def _manifest(cfg: ToolkitConfig):
    from .dataset import CorpusError, SplitManifest

    ds = cfg.dataset
    if ds.manifest:
        return SplitManifest.from_dict(json.loads(Path(ds.manifest).read_text()))
    root = Path(ds.root)
    eval_list = root / ds.eval_list
    if not eval_list.is_file():
        raise CorpusError(f"no manifest given and {eval_list} does not exist; run `vtlkws fetch-manifest`")
    valid = root / ds.valid_list if ds.valid_list and (root / ds.valid_list).is_file() else None
    return SplitManifest.from_list_files(root, eval_list, valid)


def _corpus(cfg: ToolkitConfig):
    from .dataset import CorpusError, load_corpus

    if not cfg.dataset.root:
        raise CorpusError("no corpus root; pass --root or set dataset.root")
    return load_corpus(cfg.dataset.root, _manifest(cfg), skip_bad=cfg.dataset.skip_bad,
                       target_samples=cfg.dataset.target_samples)


def _extractor(cfg: ToolkitConfig):
    from .features import FeatureExtractor

    return FeatureExtractor(cfg.frames, cfg.warp, cfg.dataset.sample_rate)


def _jobs(args, cfg: ToolkitConfig) -> int:
    return max(1, args.jobs if args.jobs else cfg.train.jobs)


# --- subcommands --------------------------------------------------------------------

def cmd_fetch_manifest(args, cfg: ToolkitConfig) -> int:
    from .dataset import SplitManifest, manifest_by_fraction

    root = Path(args.root or cfg.dataset.root or ".")
    if args.eval_fraction is not None:
        manifest = manifest_by_fraction(root, args.eval_fraction, args.seed)
    else:
        eval_list = Path(args.eval_list) if args.eval_list else root / cfg.dataset.eval_list
        valid_list = args.valid_list or (root / cfg.dataset.valid_list if cfg.dataset.valid_list else None)
        if valid_list and not Path(valid_list).is_file():
            valid_list = None
        manifest = SplitManifest.from_list_files(root, eval_list, valid_list)
    Path(args.out).write_text(json.dumps(manifest.to_dict(), indent=1))
    print(json.dumps({"train": len(manifest.train), "eval": len(manifest.eval), "valid": len(manifest.valid)}))
    return EXIT_OK


def cmd_extract(args, cfg: ToolkitConfig) -> int:
    from .features import FeatureCache

    corpus = _corpus(cfg)
    extractor = _extractor(cfg)
    grid = cfg.warp.grid()
    cache = FeatureCache(_cache_dir(args, cfg), extractor.sample_rate)
    splits = ["train", "eval", "valid"] if args.split == "all" else [args.split]
    entries = [e for s in splits for e in corpus.splits.get(s, [])]
    written = 0

    def one(entry):
        todo = [a for a in grid if not cache.has(entry.id, a)]
        if not todo:
            return 0
        for fm in extractor.all_warps(corpus.load(entry), tuple(todo)).values():
            cache.put(fm)
        return len(todo)

    with ThreadPoolExecutor(max_workers=_jobs(args, cfg)) as pool:
        for n in pool.map(one, entries):
            written += n
    logger.info("extract: %d utterances, %d new feature files in %s", len(entries), written, cache.root)
    print(json.dumps({"utterances": len(entries), "written": written, "cache_dir": str(cache.root)}))
    return EXIT_OK


def cmd_train(args, cfg: ToolkitConfig) -> int:
    from .dataset import iter_noise_pool
    from .features import FeatureCache
    from .model import DEFAULT_CHANNELS
    from .training import TrainConfig, train

    overrides = {"method": TRAIN_METHODS[args.method]}
    for key in ("epochs", "warmup_epochs", "seed_data", "seed_init"):
        if getattr(args, key) is not None:
            overrides[key] = getattr(args, key)
    base = cfg.train
    if args.epochs is not None and args.warmup_epochs is None and base.warmup_epochs >= args.epochs:
        # keep the configured warmup fraction when --epochs is shortened below it
        overrides["warmup_epochs"] = base.warmup_epochs * args.epochs // base.epochs
        logger.warning("warmup_epochs %d >= --epochs %d; using %d", base.warmup_epochs, args.epochs,
                       overrides["warmup_epochs"])
    if args.per_batch_warp:
        overrides["per_batch_warp"] = True
    overrides["jobs"] = _jobs(args, cfg)
    try:
        tcfg = TrainConfig(**{**cfg.train.to_dict(), **overrides})
        mcfg = cfg.model
        if args.arch and args.arch != mcfg.architecture:
            mcfg = dataclasses.replace(mcfg, architecture=args.arch, channels=DEFAULT_CHANNELS[args.arch])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    corpus = _corpus(cfg)
    noise_dir = args.noise_dir or cfg.dataset.noise_dir
    noise = list(iter_noise_pool(noise_dir)) if noise_dir else None
    cache = FeatureCache(args.cache_dir, cfg.dataset.sample_rate) if args.cache_dir else None
    out = args.out or cfg.output.run_dir
    run = train(corpus, tcfg, cfg.warp.grid(), cfg.augment, mcfg, _extractor(cfg), cache=cache,
                noise_pool=noise, out_dir=out)
    last = run.log[-1]
    print(json.dumps({"run_dir": str(out), "epochs": len(run.log), "final_train_loss": last["train_loss"],
                      "final_eval_acc": last["eval_acc"], "best_epoch": run.best_epoch}))
    return EXIT_OK


def _split_utterances(corpus, split):
    return [corpus.load(e) for e in corpus.entries(split)]


def cmd_eval(args, cfg: ToolkitConfig) -> int:
    from .inference import Scorer, score_corpus, sweep_alpha, write_scores, write_sweep
    from .model import load_checkpoint
    from .stats import accuracy

    ckpt = load_checkpoint(args.model)
    corpus = _corpus(cfg)
    grid = _grid_from_ckpt(ckpt, cfg)
    method = EVAL_METHODS[args.method]
    scorer = Scorer(ckpt, _extractor(cfg), fusion=args.fusion, check_provenance=not args.no_provenance_check)
    utts = _split_utterances(corpus, args.split)
    with ThreadPoolExecutor(max_workers=_jobs(args, cfg)) as pool:
        scored = score_corpus(scorer, utts, method, grid, pool=pool)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_scores(out / "scores.csv", scored, ckpt.config.n_classes)
    if method == "vtl_independent":
        write_sweep(out / "sweep.csv", sweep_alpha(None, utts, grid, scored=scored))
    report = accuracy(out / "scores.csv", method=args.method, class_names=corpus.label_names(),
                      expected_ids=[u.id for u in utts])
    (out / "metrics.json").write_text(json.dumps(report.to_dict(), indent=1))
    print(json.dumps({"method": args.method, "top1": report.top1, "n_eval": report.n_eval}))
    return EXIT_OK


def _grid_from_ckpt(ckpt, cfg):
    from .warp import WarpGrid

    g = ckpt.provenance.get("grid")
    return WarpGrid(tuple(g)) if g else cfg.warp.grid()


def cmd_sweep(args, cfg: ToolkitConfig) -> int:
    from .inference import Scorer, sweep_alpha, write_sweep
    from .model import load_checkpoint

    ckpt = load_checkpoint(args.model)
    corpus = _corpus(cfg)
    scorer = Scorer(ckpt, _extractor(cfg), check_provenance=False)
    rows = sweep_alpha(None, _split_utterances(corpus, args.split), _grid_from_ckpt(ckpt, cfg), scorer=scorer)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_sweep(out / "sweep.csv", rows)
    print(json.dumps([[a, acc] for a, acc in rows]))
    return EXIT_OK


def cmd_ttest(args, cfg: ToolkitConfig) -> int:
    from .stats import read_runs, ttest_two_sample

    res = ttest_two_sample(read_runs(args.runs_a), read_runs(args.runs_b),
                           equal_var=not args.welch, alpha_level=args.level)
    print(json.dumps(res.to_dict(), indent=1))
    return EXIT_OK


def _pair(text: str, what: str) -> tuple[str, str]:
    if "=" not in text:
        raise ValueError(f"{what} must look like NAME=VALUE, got {text!r}")
    name, value = text.split("=", 1)
    return name, value


def cmd_report(args, cfg: ToolkitConfig) -> int:
    import csv

    from .stats import accuracy, emit_report, read_runs, ttest_two_sample

    reports, sweeps, sig = [], {}, {}
    for item in args.eval:
        name, d = _pair(item, "--eval")
        d = Path(d)
        names = None
        metrics = d / "metrics.json"
        if metrics.is_file():
            names = json.loads(metrics.read_text()).get("class_names")
        reports.append(accuracy(d / "scores.csv", method=name, class_names=names))
        if (d / "sweep.csv").is_file():
            with open(d / "sweep.csv", newline="") as fh:
                sweeps[name] = [(float(r["alpha"]), float(r["accuracy"])) for r in csv.DictReader(fh)]
    for item in args.ttest:
        name, files = _pair(item, "--ttest")
        a, b = files.split(",", 1)
        sig[name] = ttest_two_sample(read_runs(a), read_runs(b), alpha_level=args.level)
    emit_report(args.out, reports, sig, sweeps)
    print(json.dumps({"out": args.out, "reports": len(reports), "comparisons": len(sig)}))
    return EXIT_OK


COMMANDS = {
    "fetch-manifest": cmd_fetch_manifest,
    "extract": cmd_extract,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep-alpha": cmd_sweep,
    "ttest": cmd_ttest,
    "report": cmd_report,
}


def _error(kind: str, exc: BaseException) -> None:
    print(json.dumps({"error": kind, "type": type(exc).__name__, "message": str(exc)}), file=sys.stderr)


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    try:
        cfg = _resolve_config(args)
    except ConfigError as exc:
        _error("config", exc)
        return EXIT_CONFIG
    logger.info("vtlkws %s %s", toolkit_version(), args.command)
    logger.info("resolved config: %s", json.dumps(cfg.to_dict(), sort_keys=True))
    try:
        return COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        _error("config", exc)
        return EXIT_CONFIG
    except Exception as exc:  # surfaced as a structured message
        logger.debug("failure", exc_info=True)
        _error("runtime", exc)
        return EXIT_RUNTIME


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
