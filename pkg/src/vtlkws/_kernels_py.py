"""Pure-numpy versions of the hot feature kernels.

Used when the compiled extension is unavailable or when
``VTLKWS_PURE_PYTHON=1`` is set.
"""
import numpy as np


def frame_signal(x, win_len, hop, preemph, window):
    """Pre-emphasize ``x`` and cut it into windowed frames.

    Pre-emphasis treats the sample before ``x[0]`` as zero. Returns an array
    of shape ``(1 + (len(x) - win_len) // hop, win_len)``.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if win_len <= 0 or hop <= 0:
        raise ValueError("win_len and hop must be positive")
    n = x.shape[0]
    if n < win_len:
        raise ValueError(f"signal of {n} samples is shorter than one window ({win_len})")
    if len(window) != win_len:
        raise ValueError("window length mismatch")
    emph = np.empty_like(x)
    emph[0] = x[0]
    emph[1:] = x[1:] - preemph * x[:-1]
    n_frames = 1 + (n - win_len) // hop
    idx = np.arange(win_len)[None, :] + hop * np.arange(n_frames)[:, None]
    return emph[idx] * np.asarray(window, dtype=np.float64)


def apply_filterbanks_log(power, weights, starts, stops, floor):
    """Log filterbank energies for a stack of filterbanks.

    ``power`` is ``(T, K)``, ``weights`` is ``(A, M, K)``; returns ``(A, T, M)``
    holding ``log(max(power @ weights[a].T, floor))``. ``starts``/``stops``
    are accepted for signature parity; the dense product ignores them.
    """
    power = np.asarray(power, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape[2] != power.shape[1]:
        raise ValueError("filterbank width does not match the power spectrum")
    energies = np.einsum("tk,amk->atm", power, weights, optimize=True)
    return np.log(np.maximum(energies, floor))
