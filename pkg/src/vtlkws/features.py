"""MFCC front end with per-warp filterbanks, concatenation and normalization."""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.fft import dct

from . import _backend
from .dataset import Utterance
from .warp import WarpConfig, WarpGrid, cached_filterbank, mel_filterbank

LOG_FLOOR = 1e-10
VAR_FLOOR = 1e-8


@dataclass(frozen=True)
class FrameSpec:
    window_ms: float = 30.0
    hop_ms: float = 10.0
    window: str = "hamming"
    n_fft: int = 512
    pre_emphasis: float = 0.97
    n_filters: int = 40
    n_ceps: int = 40
    log_floor: float = LOG_FLOOR

    def __post_init__(self):
        if not self.window_ms > self.hop_ms > 0:
            raise ValueError("need window_ms > hop_ms > 0")
        if self.n_ceps > self.n_filters:
            raise ValueError("cannot keep more cepstra than filters")
        if self.window not in ("hamming", "hann", "rectangular"):
            raise ValueError(f"unknown window {self.window!r}")

    def window_samples(self, sample_rate: int) -> int:
        return int(round(self.window_ms * sample_rate / 1000.0))

    def hop_samples(self, sample_rate: int) -> int:
        return int(round(self.hop_ms * sample_rate / 1000.0))

    def n_frames(self, n_samples: int, sample_rate: int) -> int:
        w, h = self.window_samples(sample_rate), self.hop_samples(sample_rate)
        if n_samples < w:
            raise ValueError(f"signal of {n_samples} samples is shorter than one window ({w})")
        return 1 + (n_samples - w) // h

    def window_fn(self, sample_rate: int) -> np.ndarray:
        n = self.window_samples(sample_rate)
        if self.window == "hamming":
            return np.hamming(n)
        if self.window == "hann":
            return np.hanning(n)
        return np.ones(n)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class FeatureMatrix:
    values: np.ndarray  # (T, D)
    alpha: float | None
    utterance_id: str = ""

    @property
    def shape(self):
        return self.values.shape


class FeatureExtractor:
    """Holds the read-only analysis state (window, filterbanks) for one setup.

    Instances are safe to share between threads.
    """

    def __init__(self, spec: FrameSpec | None = None, cfg: WarpConfig | None = None,
                 sample_rate: int = 16000):
        self.spec = spec or FrameSpec()
        self.cfg = cfg or WarpConfig(sample_rate=sample_rate)
        self.sample_rate = sample_rate
        if self.spec.n_fft < self.spec.window_samples(sample_rate):
            raise ValueError("n_fft must be at least the window length")
        self.window = self.spec.window_fn(sample_rate)
        self._stacks: dict[tuple, tuple] = {}

    def _bank_stack(self, alphas: tuple) -> tuple:
        stack = self._stacks.get(alphas)
        if stack is None:
            banks = [cached_filterbank(a, self.cfg, self.spec.n_filters, self.spec.n_fft, self.sample_rate)
                     for a in alphas]
            weights = np.ascontiguousarray(np.stack([b.weights for b in banks]))
            supports = [b.support() for b in banks]
            starts = np.ascontiguousarray(np.stack([s for s, _ in supports]))
            stops = np.ascontiguousarray(np.stack([e for _, e in supports]))
            stack = (weights, starts, stops)
            self._stacks[alphas] = stack
        return stack

    def power_spectrum(self, samples: np.ndarray) -> np.ndarray:
        x = np.ascontiguousarray(samples, dtype=np.float64)
        frames = _backend.frame_signal(x, self.spec.window_samples(self.sample_rate),
                                       self.spec.hop_samples(self.sample_rate),
                                       self.spec.pre_emphasis, self.window)
        spec = np.fft.rfft(frames, n=self.spec.n_fft, axis=1)
        return np.ascontiguousarray(spec.real ** 2 + spec.imag ** 2)

    def cepstra(self, log_mel: np.ndarray) -> np.ndarray:
        return dct(log_mel, type=2, norm="ortho", axis=-1)[..., :self.spec.n_ceps]

    def _check(self, u: Utterance) -> None:
        if u.sample_rate != self.sample_rate:
            raise ValueError(f"utterance {u.id!r} is {u.sample_rate} Hz; extractor expects {self.sample_rate} Hz")

    def mfcc(self, u: Utterance, alpha: float) -> FeatureMatrix:
        return self.all_warps(u, (alpha,))[float(alpha)]

    def all_warps(self, u: Utterance, alphas) -> dict[float, FeatureMatrix]:
        """One FeatureMatrix per factor; the power spectrum is computed once."""
        self._check(u)
        alphas = tuple(float(a) for a in alphas)
        power = self.power_spectrum(u.samples)
        weights, starts, stops = self._bank_stack(alphas)
        log_mel = _backend.apply_filterbanks_log(power, weights, starts, stops, self.spec.log_floor)
        ceps = self.cepstra(log_mel)
        return {a: FeatureMatrix(np.ascontiguousarray(ceps[i]), a, u.id) for i, a in enumerate(alphas)}

    def unwarped_reference(self, u: Utterance) -> FeatureMatrix:
        """Plain MFCC pipeline that never touches the warp function."""
        self._check(u)
        power = self.power_spectrum(u.samples)
        fb = mel_filterbank(self.cfg, self.spec.n_filters, self.spec.n_fft, self.sample_rate)
        starts, stops = fb.support()
        log_mel = _backend.apply_filterbanks_log(power, fb.weights[None], starts[None], stops[None],
                                                 self.spec.log_floor)
        return FeatureMatrix(self.cepstra(log_mel[0]), None, u.id)


def extract_mfcc(u: Utterance, alpha: float, spec: FrameSpec | None = None,
                 cfg: WarpConfig | None = None) -> FeatureMatrix:
    return FeatureExtractor(spec, cfg, u.sample_rate).mfcc(u, alpha)


def extract_all_warps(u: Utterance, grid: WarpGrid, spec: FrameSpec | None = None,
                      cfg: WarpConfig | None = None) -> dict[float, FeatureMatrix]:
    return FeatureExtractor(spec, cfg, u.sample_rate).all_warps(u, tuple(grid))


def concat_warps(warped: dict[float, FeatureMatrix]) -> FeatureMatrix:
    """Stack per-warp features along the coefficient axis in ascending alpha order."""
    if not warped:
        raise ValueError("empty warped feature set")
    alphas = sorted(warped)
    mats = [warped[a].values for a in alphas]
    t = {m.shape[0] for m in mats}
    if len(t) != 1:
        raise ValueError(f"inconsistent frame counts across warps: {sorted(t)}")
    if len(mats) == 1:
        return warped[alphas[0]]
    uid = warped[alphas[0]].utterance_id
    return FeatureMatrix(np.concatenate(mats, axis=1), None, uid)


def split_concat(fm: FeatureMatrix, alphas, width: int) -> dict[float, FeatureMatrix]:
    """Inverse of :func:`concat_warps`."""
    alphas = sorted(alphas)
    if fm.values.shape[1] != width * len(alphas):
        raise ValueError("feature width does not match alphas x width")
    return {a: FeatureMatrix(fm.values[:, k * width:(k + 1) * width].copy(), a, fm.utterance_id)
            for k, a in enumerate(alphas)}


@dataclass(eq=False)
class NormStats:
    """Per-coefficient mean and (floored) variance from the training split."""

    mean: np.ndarray
    var: np.ndarray

    @classmethod
    def fit(cls, matrices) -> "NormStats":
        total, total_sq, count = None, None, 0
        for m in matrices:
            v = np.asarray(getattr(m, "values", m), dtype=np.float64)
            if total is None:
                total = np.zeros(v.shape[1])
                total_sq = np.zeros(v.shape[1])
            total += v.sum(axis=0)
            total_sq += (v ** 2).sum(axis=0)
            count += v.shape[0]
        if not count:
            raise ValueError("cannot fit normalization stats on zero frames")
        mean = total / count
        var = np.maximum(total_sq / count - mean ** 2, 0.0)
        return cls(mean, var)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def apply(self, values: np.ndarray) -> np.ndarray:
        return (values - self.mean) / np.sqrt(np.maximum(self.var, VAR_FLOOR))

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "var": self.var.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"], dtype=np.float64), np.asarray(d["var"], dtype=np.float64))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


def feature_stats_normalize(batch, stats: NormStats) -> list[np.ndarray]:
    return [stats.apply(np.asarray(getattr(m, "values", m))) for m in batch]


# --- on-disk feature cache -------------------------------------------------

CACHE_MAGIC = b"VTLF"
CACHE_VERSION = 1
_HEADER = struct.Struct("<4sHIIdI")  # magic, version, T, D, alpha, sample_rate
CONCAT_ALPHA = -1.0  # alpha field value for concatenated features


class CacheMiss(KeyError):
    pass


def cache_path(cache_dir, utterance_id: str, alpha: float | None) -> Path:
    tag = "concat" if alpha is None else f"a{alpha:.2f}"
    return Path(cache_dir) / tag / (utterance_id + ".feat")


def write_feature(path, fm: FeatureMatrix, sample_rate: int) -> None:
    values = np.ascontiguousarray(fm.values, dtype="<f4")
    t, d = values.shape
    alpha = CONCAT_ALPHA if fm.alpha is None else float(fm.alpha)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(_HEADER.pack(CACHE_MAGIC, CACHE_VERSION, t, d, alpha, sample_rate))
        fh.write(values.tobytes())
    tmp.replace(path)


def read_feature(path, utterance_id: str = "") -> tuple[FeatureMatrix, int]:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise ValueError(f"{path}: truncated feature file")
    magic, version, t, d, alpha, rate = _HEADER.unpack_from(data)
    if magic != CACHE_MAGIC:
        raise ValueError(f"{path}: bad magic {magic!r}")
    if version != CACHE_VERSION:
        raise ValueError(f"{path}: unsupported cache version {version}")
    body = np.frombuffer(data, dtype="<f4", offset=_HEADER.size)
    if body.size != t * d:
        raise ValueError(f"{path}: expected {t * d} values, found {body.size}")
    values = body.reshape(t, d).astype(np.float64)
    return FeatureMatrix(values, None if alpha == CONCAT_ALPHA else alpha, utterance_id), rate


class FeatureCache:
    def __init__(self, cache_dir, sample_rate: int = 16000):
        self.root = Path(cache_dir)
        self.sample_rate = sample_rate

    def path(self, utterance_id: str, alpha: float | None) -> Path:
        return cache_path(self.root, utterance_id, alpha)

    def has(self, utterance_id: str, alpha: float | None) -> bool:
        return self.path(utterance_id, alpha).is_file()

    def get(self, utterance_id: str, alpha: float | None) -> FeatureMatrix:
        p = self.path(utterance_id, alpha)
        if not p.is_file():
            raise CacheMiss(f"no cached features for {utterance_id!r} at alpha={alpha}")
        return read_feature(p, utterance_id)[0]

    def put(self, fm: FeatureMatrix) -> None:
        write_feature(self.path(fm.utterance_id, fm.alpha), fm, self.sample_rate)
