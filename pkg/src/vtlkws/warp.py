"""Piecewise-linear VTL frequency warping and warped mel filterbanks."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np

ALPHA_MIN = 0.80
ALPHA_MAX = 1.20


@dataclass(frozen=True)
class WarpConfig:
    """Warp knee ``f0_hz`` and upper warp limit ``f_m`` plus grid bounds.

    ``f_m`` is ``fm_fraction_of_nyquist`` times the Nyquist frequency of
    ``sample_rate`` (6800 Hz for 16 kHz audio with the default 0.85).
    """

    f0_hz: float = 20.0
    fm_fraction_of_nyquist: float = 0.85
    alpha_min: float = 0.80
    alpha_max: float = 1.20
    alpha_step: float = 0.02
    sample_rate: int = 16000

    def __post_init__(self):
        self.validate()

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    @property
    def f_m(self) -> float:
        return self.fm_fraction_of_nyquist * self.nyquist

    def validate(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")
        if not 0.0 < self.fm_fraction_of_nyquist <= 1.0:
            raise ValueError("fm_fraction_of_nyquist must be in (0, 1]")
        if not 0.0 < self.f0_hz < self.f_m:
            raise ValueError(f"need 0 < f0 < f_m, got f0={self.f0_hz}, f_m={self.f_m}")
        if not (ALPHA_MIN <= self.alpha_min <= self.alpha_max <= ALPHA_MAX):
            raise ValueError(f"alpha bounds must lie in [{ALPHA_MIN}, {ALPHA_MAX}]")
        if self.alpha_step <= 0:
            raise ValueError("alpha_step must be positive")
        if self.alpha_max * self.f0_hz >= self.f_m:
            raise ValueError("alpha * f0 must stay below f_m for every grid factor")

    def grid(self) -> "WarpGrid":
        n = int(round((self.alpha_max - self.alpha_min) / self.alpha_step)) + 1
        return WarpGrid(tuple(round(self.alpha_min + i * self.alpha_step, 10) for i in range(n)))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class WarpGrid:
    factors: tuple = field(default_factory=tuple)

    def __post_init__(self):
        factors = tuple(float(a) for a in self.factors)
        if not factors:
            raise ValueError("warp grid is empty")
        for a in factors:
            check_alpha(a)
        if any(b <= a for a, b in zip(factors, factors[1:])):
            raise ValueError("warp grid must be strictly increasing")
        object.__setattr__(self, "factors", factors)

    def __len__(self):
        return len(self.factors)

    def __iter__(self):
        return iter(self.factors)

    def __getitem__(self, i):
        return self.factors[i]

    def __contains__(self, alpha):
        return any(abs(a - alpha) < 1e-9 for a in self.factors)

    def index(self, alpha: float) -> int:
        for i, a in enumerate(self.factors):
            if abs(a - alpha) < 1e-9:
                return i
        raise KeyError(f"alpha {alpha} not in grid")


def default_grid() -> WarpGrid:
    """The 21 factors 0.80, 0.82, ..., 1.20."""
    return WarpConfig().grid()


def check_alpha(alpha: float) -> float:
    if not ALPHA_MIN - 1e-12 <= alpha <= ALPHA_MAX + 1e-12:
        raise ValueError(f"warp factor {alpha} outside [{ALPHA_MIN}, {ALPHA_MAX}]")
    return alpha


def warp_frequency(alpha, f, cfg: WarpConfig, extend: bool = False):
    """Map frequency ``f`` (Hz, scalar or array) through the piecewise-linear warp.

    Below the knee the warp is ``alpha * f``; between the knee and ``f_m`` it is
    the line through ``(f0, alpha * f0)`` and ``(f_m, f_m)``. Frequencies above
    ``f_m`` raise unless ``extend`` is set, in which case they map to themselves.
    """
    check_alpha(alpha)
    f0, fm = float(cfg.f0_hz), float(cfg.f_m)
    arr = np.asarray(f, dtype=np.float64)
    if np.any(arr < 0) or (not extend and np.any(arr > fm)):
        raise ValueError(f"frequency outside [0, {fm}] Hz")
    slope = (fm - alpha * f0) / (fm - f0)
    # written as identity plus corrections so alpha == 1 is bit-exact
    upper = arr + (slope - 1.0) * (arr - f0) + (alpha - 1.0) * f0
    out = np.where(arr <= f0, alpha * arr, upper)
    if extend:
        out = np.where(arr > fm, arr, out)
    return float(out) if out.ndim == 0 else out


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_edges(n_filters: int, f_max: float, f_min: float = 0.0) -> np.ndarray:
    """``n_filters + 2`` mel-spaced edge frequencies on ``[f_min, f_max]``."""
    mels = np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_filters + 2)
    edges = mel_to_hz(mels)
    edges[0], edges[-1] = f_min, f_max
    return edges


@dataclass(frozen=True, eq=False)
class MelFilterbank:
    weights: np.ndarray  # (n_filters, n_fft // 2 + 1)
    edges_hz: np.ndarray  # (n_filters + 2,)
    alpha: float = 1.0

    @property
    def n_filters(self) -> int:
        return self.weights.shape[0]

    @property
    def centers_hz(self) -> np.ndarray:
        return self.edges_hz[1:-1]

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """Half-open nonzero bin range ``[start, stop)`` of every filter."""
        nz = self.weights > 0
        starts = nz.argmax(axis=1)
        stops = nz.shape[1] - nz[:, ::-1].argmax(axis=1)
        return starts.astype(np.int64), stops.astype(np.int64)


def rasterize(edges_hz, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters with the given edges evaluated on rFFT bin frequencies."""
    edges = np.asarray(edges_hz, dtype=np.float64)
    bins = np.arange(n_fft // 2 + 1) * (sample_rate / n_fft)
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins[None, :] - lo) / (mid - lo)
    falling = (hi - bins[None, :]) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(weights.sum(axis=1) <= 0)
    if empty.size:
        raise ValueError(f"filters {empty.tolist()} cover no FFT bin; use fewer filters or a larger n_fft")
    return weights


def _check_fb_args(cfg: WarpConfig, n_filters: int, n_fft: int, sample_rate: int) -> None:
    if n_filters < 1:
        raise ValueError("n_filters must be >= 1")
    if n_fft < 2 or n_fft & (n_fft - 1):
        raise ValueError("n_fft must be a power of two")
    if cfg.f_m > sample_rate / 2.0 + 1e-9:
        raise ValueError(f"f_m={cfg.f_m} exceeds the Nyquist frequency of {sample_rate} Hz")


def mel_filterbank(cfg: WarpConfig, n_filters: int, n_fft: int, sample_rate: int) -> MelFilterbank:
    """Unwarped reference filterbank on ``[0, f_m]``."""
    _check_fb_args(cfg, n_filters, n_fft, sample_rate)
    edges = mel_edges(n_filters, cfg.f_m)
    return MelFilterbank(rasterize(edges, n_fft, sample_rate), edges, 1.0)


def build_warped_filterbank(alpha: float, cfg: WarpConfig, n_filters: int, n_fft: int,
                            sample_rate: int) -> MelFilterbank:
    """Mel filterbank whose edge frequencies are moved by :func:`warp_frequency`."""
    _check_fb_args(cfg, n_filters, n_fft, sample_rate)
    edges = warp_frequency(alpha, mel_edges(n_filters, cfg.f_m), cfg)
    return MelFilterbank(rasterize(edges, n_fft, sample_rate), edges, float(alpha))


@lru_cache(maxsize=256)
def cached_filterbank(alpha: float, cfg: WarpConfig, n_filters: int, n_fft: int,
                      sample_rate: int) -> MelFilterbank:
    fb = build_warped_filterbank(alpha, cfg, n_filters, n_fft, sample_rate)
    fb.weights.flags.writeable = False
    return fb
