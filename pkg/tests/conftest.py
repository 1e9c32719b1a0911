import importlib
from pathlib import Path

import numpy as np
import pytest

from vtlkws.dataset import write_wav

RATE = 16000


def synth_keyword(kind: str, rng: np.random.Generator, n: int = RATE) -> np.ndarray:
    """Two toy 'keywords': a rising and a falling harmonic glide.

    Each example gets a random spectral scale (a stand-in for speaker VTL),
    a random onset and a little noise.
    """
    scale = rng.uniform(0.85, 1.15)
    dur = int(rng.uniform(0.45, 0.6) * RATE)
    t = np.arange(dur) / RATE
    f_start, f_end = (300.0, 900.0) if kind == "up" else (900.0, 300.0)
    f = scale * (f_start + (f_end - f_start) * t / t[-1])
    phase = 2 * np.pi * np.cumsum(f) / RATE
    voiced = sum(np.sin(k * phase) / k for k in (1, 2, 3))
    env = np.hanning(dur)
    word = 0.3 * voiced * env
    out = np.zeros(n)
    start = int(rng.integers(0, n - dur))
    out[start:start + dur] = word
    out += rng.normal(0.0, 0.003, n)
    return np.clip(out, -1, 1)


def make_fixture_corpus(root: Path, per_class: int = 20, n_eval: int = 5, seed: int = 0,
                        classes=("down", "up")) -> Path:
    rng = np.random.default_rng(seed)
    eval_ids = []
    for name in classes:
        (root / name).mkdir(parents=True, exist_ok=True)
        kind = "up" if name == "up" else "down"
        for i in range(per_class):
            n = int(rng.integers(RATE - 800, RATE + 800))
            write_wav(root / name / f"spk{i:02d}_nohash_0.wav", synth_keyword(kind, rng, n), RATE)
            if i >= per_class - n_eval:
                eval_ids.append(f"{name}/spk{i:02d}_nohash_0.wav")
    (root / "_background_noise_").mkdir(exist_ok=True)
    write_wav(root / "_background_noise_" / "white.wav", rng.normal(0, 0.1, 3 * RATE), RATE)
    (root / "testing_list.txt").write_text("\n".join(eval_ids) + "\n")
    return root


@pytest.fixture(scope="session")
def fixture_corpus(tmp_path_factory) -> Path:
    return make_fixture_corpus(tmp_path_factory.mktemp("corpus"))


@pytest.fixture(params=["python", "cython"])
def kernels(request):
    """Each kernel implementation, skipping the compiled one if it was not built."""
    if request.param == "python":
        return importlib.import_module("vtlkws._kernels_py")
    try:
        return importlib.import_module("vtlkws._kernels")
    except ImportError:
        pytest.skip("compiled kernels not built")


@pytest.fixture
def tone():
    t = np.arange(RATE) / RATE
    return 0.5 * np.sin(2 * np.pi * 440.0 * t)
