"""Compare the compiled and numpy feature kernels.

    python benchmarks/bench_kernels.py [--repeat 50]

Times framing, the 21-warp log filterbank stage and full all-warp MFCC
extraction of a 1 s utterance with each backend, and checks that both
produce the same numbers.
"""
import argparse
import importlib
import json
import timeit

import numpy as np

from vtlkws import features
from vtlkws.dataset import Utterance
from vtlkws.features import FeatureExtractor
from vtlkws.warp import default_grid


def _load(name):
    try:
        return importlib.import_module(name)
    except ImportError:
        return None


def bench(repeat: int) -> dict:
    py = _load("vtlkws._kernels_py")
    cy = _load("vtlkws._kernels")
    backends = {"python": py, "cython": cy} if cy else {"python": py}

    u = Utterance("bench", np.random.default_rng(0).normal(0, 0.1, 16000), 16000)
    ex = FeatureExtractor()
    grid = tuple(default_grid())
    weights, starts, stops = ex._bank_stack(grid)
    power = ex.power_spectrum(u.samples)
    args_frame = (u.samples, 480, 160, 0.97, ex.window)
    args_fb = (power, weights, starts, stops, 1e-10)

    results = {}
    outputs = {}
    for name, mod in backends.items():
        t_frame = min(timeit.repeat(lambda: mod.frame_signal(*args_frame), number=1, repeat=repeat))
        t_fb = min(timeit.repeat(lambda: mod.apply_filterbanks_log(*args_fb), number=1, repeat=repeat))
        # swap the backend module used by the extractor for the end-to-end timing
        saved = features._backend.frame_signal, features._backend.apply_filterbanks_log
        features._backend.frame_signal, features._backend.apply_filterbanks_log = (
            mod.frame_signal, mod.apply_filterbanks_log)
        try:
            t_all = min(timeit.repeat(lambda: ex.all_warps(u, grid), number=1, repeat=repeat))
            outputs[name] = np.stack([fm.values for fm in ex.all_warps(u, grid).values()])
        finally:
            features._backend.frame_signal, features._backend.apply_filterbanks_log = saved
        results[name] = {"frame_signal_ms": 1e3 * t_frame, "filterbank_21_ms": 1e3 * t_fb,
                         "all_warps_mfcc_ms": 1e3 * t_all}
    if len(outputs) == 2:
        results["max_abs_diff"] = float(np.max(np.abs(outputs["python"] - outputs["cython"])))
        for key in ("frame_signal_ms", "filterbank_21_ms", "all_warps_mfcc_ms"):
            results.setdefault("speedup", {})[key] = results["python"][key] / results["cython"][key]
    return results


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=50)
    print(json.dumps(bench(p.parse_args().repeat), indent=2))


if __name__ == "__main__":
    main()
