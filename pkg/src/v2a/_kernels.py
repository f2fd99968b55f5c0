"""Inner loops of the DSP front-end.

Each kernel has a numba implementation and a pure-numpy one with the same
signature. The numba path is used when numba imports and the environment
variable ``V2A_DISABLE_NUMBA`` is unset (or ``0``). Both paths agree to
floating-point summation-order error; each is deterministic on its own.
"""

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None


def _flag_disabled() -> bool:
    return os.environ.get("V2A_DISABLE_NUMBA", "0").strip().lower() not in ("", "0", "false", "no")


USE_NUMBA = numba is not None and not _flag_disabled()


# ---------------------------------------------------------------- polyphase


def polyphase_numpy(x, h, up, down, delay, out_len):
    """y[m] = up * sum_n x[n] * h[m*down + delay - n*up]."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    taps = len(h)
    # phase-major view: every output only touches ceil(taps/up) input samples
    width = -(-taps // up) + 1
    t = np.arange(out_len, dtype=np.int64) * down + delay
    n_hi = np.floor_divide(t, up)
    n = n_hi[:, None] - np.arange(width, dtype=np.int64)[None, :]
    k = t[:, None] - n * up
    valid = (n >= 0) & (n < len(x)) & (k >= 0) & (k < taps)
    xs = np.where(valid, x[np.clip(n, 0, len(x) - 1)], 0.0)
    hs = np.where(valid, h[np.clip(k, 0, taps - 1)], 0.0)
    return up * np.sum(xs * hs, axis=1)


def _polyphase_loop(x, h, up, down, delay, out_len):
    taps = h.shape[0]
    nx = x.shape[0]
    y = np.zeros(out_len, dtype=np.float64)
    for m in range(out_len):
        t = m * down + delay
        n = t // up
        acc = 0.0
        while n >= 0:
            k = t - n * up
            if k >= taps:
                break
            if n < nx:
                acc += x[n] * h[k]
            n -= 1
        y[m] = up * acc
    return y


# ---------------------------------------------------------------- overlap-add


def overlap_add_numpy(frames, hop, out_len):
    """Sum rows of ``frames`` into a signal, row t starting at t*hop."""
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    n_frames, width = frames.shape
    idx = np.arange(n_frames)[:, None] * hop + np.arange(width)[None, :]
    keep = idx < out_len
    out = np.zeros(out_len, dtype=np.float64)
    np.add.at(out, idx[keep], frames[keep])
    return out


def _overlap_add_loop(frames, hop, out_len):
    n_frames, width = frames.shape
    out = np.zeros(out_len, dtype=np.float64)
    for t in range(n_frames):
        start = t * hop
        for j in range(width):
            i = start + j
            if i >= out_len:
                break
            out[i] += frames[t, j]
    return out


if numba is not None:
    polyphase_numba = numba.njit(cache=True, nogil=True)(_polyphase_loop)
    overlap_add_numba = numba.njit(cache=True, nogil=True)(_overlap_add_loop)
else:  # pragma: no cover
    polyphase_numba = None
    overlap_add_numba = None


def polyphase(x, h, up, down, delay, out_len):
    x = np.ascontiguousarray(x, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    if USE_NUMBA:
        return polyphase_numba(x, h, int(up), int(down), int(delay), int(out_len))
    return polyphase_numpy(x, h, up, down, delay, out_len)


def overlap_add(frames, hop, out_len):
    frames = np.ascontiguousarray(frames, dtype=np.float64)
    if USE_NUMBA:
        return overlap_add_numba(frames, int(hop), int(out_len))
    return overlap_add_numpy(frames, hop, out_len)
