"""Seeded training-time augmentation (signal level and feature masks)."""
from __future__ import annotations

import warnings
import zlib
from dataclasses import asdict, dataclass

import numpy as np

from .dataset import SAMPLE_RATE, Utterance, canonicalize_length


class SilentSignalWarning(UserWarning):
    pass


@dataclass(frozen=True)
class AugmentPolicy:
    time_shift_ms: tuple = (-100.0, 100.0)
    resample_factor: tuple = (0.85, 1.15)
    background_volume: float = 0.1
    time_mask: int = 25
    freq_mask: int = 7
    noise_snr_db: tuple = (15.0, 10.0, 8.0, 5.0)
    probability: float = 0.5
    rng_seed: int = 0
    enabled: bool = True

    def __post_init__(self):
        for name in ("time_shift_ms", "resample_factor"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name}: empty range")
            object.__setattr__(self, name, (float(lo), float(hi)))
        if self.time_mask < 0 or self.freq_mask < 0:
            raise ValueError("mask widths must be >= 0")
        if not all(np.isfinite(s) for s in self.noise_snr_db):
            raise ValueError("SNRs must be finite")
        object.__setattr__(self, "noise_snr_db", tuple(float(s) for s in self.noise_snr_db))
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError("probability must be in [0, 1]")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("time_shift_ms", "resample_factor", "noise_snr_db"):
            d[k] = list(d[k])
        return d


def example_rng(seed: int, utterance_id: str, epoch: int) -> np.random.Generator:
    """Independent stream per (seed, utterance, epoch); stable across processes."""
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(utterance_id.encode()), epoch]))


def time_shift(samples, shift_ms: float, rate: int = SAMPLE_RATE) -> np.ndarray:
    """Delay (positive) or advance (negative) the signal, filling with zeros."""
    x = np.asarray(samples, dtype=np.float64)
    k = int(round(shift_ms * rate / 1000.0))
    out = np.zeros_like(x)
    if k == 0:
        out[:] = x
    elif abs(k) < x.size:
        if k > 0:
            out[k:] = x[:-k]
        else:
            out[:k] = x[-k:]
    return out


def stretch(samples, factor: float) -> np.ndarray:
    """Linear-interpolation resample to ``floor(N / factor)`` samples."""
    if factor <= 0:
        raise ValueError("factor must be positive")
    x = np.asarray(samples, dtype=np.float64)
    n_out = int(np.floor(x.size / factor))
    pos = np.arange(n_out) * factor
    return np.interp(pos, np.arange(x.size), x)


def resample_speed(samples, factor: float, target_samples: int | None = None) -> np.ndarray:
    """Speed perturbation: stretch by ``1 / factor`` then restore the original length."""
    x = np.asarray(samples, dtype=np.float64)
    if factor == 1.0:
        return x.copy()
    target = target_samples or x.size
    raw = Utterance("", stretch(x, factor), SAMPLE_RATE)
    return canonicalize_length(raw, target).samples.copy()


def apply_mask(values, t_start: int, t_width: int, f_start: int, f_width: int,
               fill: float = 0.0) -> np.ndarray:
    out = np.array(values, dtype=np.float64, copy=True)
    if t_width:
        out[t_start:t_start + t_width, :] = fill
    if f_width:
        out[:, f_start:f_start + f_width] = fill
    return out


def spec_mask(values, time_mask: int, freq_mask: int, rng: np.random.Generator,
              fill: float = 0.0) -> np.ndarray:
    """One time band of width U[0, time_mask] and one coefficient band of width
    U[0, freq_mask], both set to ``fill`` (the training mean after normalization).
    """
    values = np.asarray(getattr(values, "values", values))
    t, d = values.shape
    if time_mask > t or freq_mask > d:
        raise ValueError("mask width exceeds feature dimensions")
    tw = int(rng.integers(0, time_mask + 1))
    fw = int(rng.integers(0, freq_mask + 1))
    t0 = int(rng.integers(0, t - tw + 1))
    f0 = int(rng.integers(0, d - fw + 1))
    return apply_mask(values, t0, tw, f0, fw, fill)


def _power(x: np.ndarray) -> float:
    return float(np.mean(x * x))


def noise_gain(signal, noise, snr_db: float) -> float:
    """Amplitude gain putting ``noise`` at ``snr_db`` below ``signal``."""
    ps, pn = _power(np.asarray(signal, dtype=np.float64)), _power(np.asarray(noise, dtype=np.float64))
    if pn == 0:
        raise ValueError("noise buffer has zero power")
    return float(np.sqrt(ps / (pn * 10.0 ** (snr_db / 10.0))))


def _fit_noise(noise: np.ndarray, n: int) -> np.ndarray:
    if noise.size >= n:
        return noise[:n]
    return np.resize(noise, n)  # wraps around


def mix_noise(samples, noise, snr_db: float, clip: bool = True) -> np.ndarray:
    """Add ``noise`` scaled to the requested SNR; result clipped to [-1, 1].

    A silent signal is returned unchanged with a :class:`SilentSignalWarning`.
    """
    x = np.asarray(samples, dtype=np.float64)
    nz = _fit_noise(np.asarray(noise, dtype=np.float64), x.size)
    if _power(nz) == 0:
        raise ValueError("noise buffer has zero power")
    if _power(x) == 0:
        warnings.warn("silent signal; noise not mixed", SilentSignalWarning, stacklevel=2)
        return x.copy()
    out = x + noise_gain(x, nz, snr_db) * nz
    return np.clip(out, -1.0, 1.0) if clip else out


class Augmenter:
    """Applies the policy to one example using a per-example RNG stream."""

    def __init__(self, policy: AugmentPolicy, noise_pool=None):
        self.policy = policy
        self.noise_pool = [np.asarray(n, dtype=np.float64) for n in (noise_pool or []) if np.any(n)]

    def signal(self, u: Utterance, epoch: int) -> Utterance:
        p = self.policy
        if not p.enabled:
            return u
        rng = example_rng(p.rng_seed, u.id, epoch)
        x = u.samples
        if rng.random() < p.probability:
            x = resample_speed(x, float(rng.uniform(*p.resample_factor)))
        if rng.random() < p.probability:
            x = time_shift(x, float(rng.uniform(*p.time_shift_ms)), u.sample_rate)
        if self.noise_pool and rng.random() < p.probability:
            noise = self.noise_pool[int(rng.integers(len(self.noise_pool)))]
            if noise.size > x.size:
                start = int(rng.integers(0, noise.size - x.size + 1))
                noise = noise[start:start + x.size]
            if rng.random() < 0.5:
                x = np.clip(x + float(rng.uniform(0.0, p.background_volume)) * _fit_noise(noise, x.size), -1, 1)
            elif np.any(x):
                x = mix_noise(x, noise, float(rng.choice(p.noise_snr_db)))
        return Utterance(u.id, np.clip(x, -1.0, 1.0), u.sample_rate, u.label)

    def features(self, values: np.ndarray, utterance_id: str, epoch: int) -> np.ndarray:
        p = self.policy
        if not p.enabled:
            return values
        rng = example_rng(p.rng_seed + 1, utterance_id, epoch)
        if rng.random() >= p.probability:
            return values
        t, d = values.shape
        return spec_mask(values, min(p.time_mask, t), min(p.freq_mask, d), rng)
