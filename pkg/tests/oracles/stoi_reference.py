"""Brute-force STOI / ESTOI written straight from the metric definitions.

Deliberately loop-based and self-contained (explicit DFT, explicit
overlap-add, explicit band sums) so it shares no code with the package.
Inputs must already be sampled at 10 kHz.
"""

import math

import numpy as np

FS = 10000
N_FRAME = 256
HOP = 128
NFFT = 512
J = 15
CF0 = 150.0
N_SEG = 30
BETA = -15.0
RANGE_DB = 40.0
TINY = np.finfo(float).eps


def _win():
    # Hann window without its two zero end points
    return np.array([0.5 - 0.5 * math.cos(2 * math.pi * (n + 1) / (N_FRAME + 1)) for n in range(N_FRAME)])


def _frame_starts(length):
    starts, s = [], 0
    while s < length - N_FRAME:
        starts.append(s)
        s += HOP
    return starts


def _drop_silence(x, y):
    w = _win()
    starts = _frame_starts(len(x))
    xs = [w * x[s:s + N_FRAME] for s in starts]
    ys = [w * y[s:s + N_FRAME] for s in starts]
    level = [20 * math.log10(math.sqrt(sum(v * v for v in f)) + TINY) for f in xs]
    top = max(level)
    kept = [i for i, e in enumerate(level) if e > top - RANGE_DB]
    out_len = (len(kept) - 1) * HOP + N_FRAME
    xo, yo = np.zeros(out_len), np.zeros(out_len)
    for k, i in enumerate(kept):
        for n in range(N_FRAME):
            xo[k * HOP + n] += xs[i][n]
            yo[k * HOP + n] += ys[i][n]
    return xo, yo


def _dft_power(frame):
    n = np.arange(N_FRAME)
    out = np.empty(NFFT // 2 + 1)
    for k in range(NFFT // 2 + 1):
        ang = -2j * np.pi * k * n / NFFT
        out[k] = abs(np.sum(frame * np.exp(ang))) ** 2
    return out


def _bands():
    bins = [k * FS / NFFT for k in range(NFFT // 2 + 1)]
    edges = []
    for j in range(J):
        lo_f = CF0 * 2 ** ((2 * j - 1) / 6)
        hi_f = CF0 * 2 ** ((2 * j + 1) / 6)
        lo = min(range(len(bins)), key=lambda k: (bins[k] - lo_f) ** 2)
        hi = min(range(len(bins)), key=lambda k: (bins[k] - hi_f) ** 2)
        edges.append((lo, hi))
    return edges


def _envelopes(x):
    w = _win()
    edges = _bands()
    cols = []
    for s in _frame_starts(len(x)):
        p = _dft_power(w * x[s:s + N_FRAME])
        cols.append([math.sqrt(sum(p[lo:hi])) for lo, hi in edges])
    return np.array(cols).T  # bands x frames


def _segments(x, y):
    if len(x) != len(y):
        raise ValueError("length mismatch")
    x, y = _drop_silence(np.asarray(x, float), np.asarray(y, float))
    X, Y = _envelopes(x), _envelopes(y)
    if X.shape[1] < N_SEG:
        raise ValueError("too short")
    return [(X[:, m - N_SEG:m], Y[:, m - N_SEG:m]) for m in range(N_SEG, X.shape[1] + 1)]


def _corr(a, b):
    a = a - sum(a) / len(a)
    b = b - sum(b) / len(b)
    return float(np.dot(a / (np.linalg.norm(a) + TINY), b / (np.linalg.norm(b) + TINY)))


def stoi_reference(x, y):
    c = 10 ** (-BETA / 20)
    total, count = 0.0, 0
    for Xs, Ys in _segments(x, y):
        for j in range(J):
            xr, yr = Xs[j], Ys[j]
            alpha = math.sqrt(sum(v * v for v in xr)) / (math.sqrt(sum(v * v for v in yr)) + TINY)
            yc = np.array([min(alpha * yv, (1 + c) * xv) for xv, yv in zip(xr, yr)])
            total += _corr(xr, yc)
            count += 1
    return total / count


def _normalize_rows_then_cols(S):
    S = S.copy()
    for j in range(S.shape[0]):
        r = S[j] - S[j].mean()
        S[j] = r / (np.linalg.norm(r) + TINY)
    for n in range(S.shape[1]):
        col = S[:, n] - S[:, n].mean()
        S[:, n] = col / (np.linalg.norm(col) + TINY)
    return S


def estoi_reference(x, y):
    segs = _segments(x, y)
    total = 0.0
    for Xs, Ys in segs:
        Xn, Yn = _normalize_rows_then_cols(Xs), _normalize_rows_then_cols(Ys)
        total += sum(float(np.dot(Xn[:, n], Yn[:, n])) for n in range(N_SEG)) / N_SEG
    return total / len(segs)
