"""Objective intelligibility and distance metrics plus directory evaluation.

STOI and ESTOI follow the standard definitions: 10 kHz analysis, 256-sample
Hann frames with 50% overlap, 512-point FFT, silent frames (40 dB below the
loudest clean frame) removed, 15 one-third-octave bands from 150 Hz, 30-frame
(384 ms) segments and, for STOI, clipping at -15 dB SDR.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _kernels, dsp, losses
from .dsp import AudioClip
from .errors import InsufficientLength, InvalidArgument, V2AError

STOI_RATE = 10000
FRAME_LEN = 256
STOI_NFFT = 512
STOI_HOP = FRAME_LEN // 2
N_BANDS = 15
MIN_FREQ = 150.0
SEGMENT = 30  # frames per 384 ms segment
BETA_DB = -15.0
DYN_RANGE_DB = 40.0
EPS = np.finfo(np.float64).eps

REPORT_FIELDS = ("filename", "stoi", "estoi", "mr_stft", "mel_l1", "pesq", "wer")


@functools.lru_cache(maxsize=4)
def third_octave_matrix(fs: int = STOI_RATE, nfft: int = STOI_NFFT, n_bands: int = N_BANDS,
                        min_freq: float = MIN_FREQ) -> np.ndarray:
    """Band-by-bin 0/1 matrix; band edges snap to the nearest FFT bin."""
    freqs = np.linspace(0, fs, nfft + 1)[: nfft // 2 + 1]
    k = np.arange(n_bands)
    low = min_freq * 2.0 ** ((2 * k - 1) / 6)
    high = min_freq * 2.0 ** ((2 * k + 1) / 6)
    obm = np.zeros((n_bands, len(freqs)))
    for i in range(n_bands):
        lo = int(np.argmin((freqs - low[i]) ** 2))
        hi = int(np.argmin((freqs - high[i]) ** 2))
        obm[i, lo:hi] = 1.0
    obm.setflags(write=False)
    return obm


def _window():
    return np.hanning(FRAME_LEN + 2)[1:-1]


def _frames(x):
    starts = range(0, len(x) - FRAME_LEN, STOI_HOP)
    return np.array([x[i:i + FRAME_LEN] for i in starts]).reshape(-1, FRAME_LEN) * _window()


def remove_silent_frames(x, y):
    """Drop frames more than 40 dB below the loudest clean frame, then overlap-add."""
    xf, yf = _frames(x), _frames(y)
    if len(xf) == 0:
        return xf.reshape(-1), yf.reshape(-1)
    energy = 20 * np.log10(np.linalg.norm(xf, axis=1) + EPS)
    keep = (energy.max() - DYN_RANGE_DB - energy) < 0
    xf, yf = xf[keep], yf[keep]
    out_len = (len(xf) - 1) * STOI_HOP + FRAME_LEN
    return _kernels.overlap_add(xf, STOI_HOP, out_len), _kernels.overlap_add(yf, STOI_HOP, out_len)


def _band_envelopes(x):
    spec = np.fft.rfft(_frames(x), n=STOI_NFFT, axis=1)  # [frames, bins]
    return np.sqrt(third_octave_matrix() @ (np.abs(spec) ** 2).T)  # [bands, frames]


def _segments(tob):
    n = tob.shape[1]
    return np.stack([tob[:, m - SEGMENT:m] for m in range(SEGMENT, n + 1)])  # [M, J, N]


def _prepare(clean, degraded, fs):
    x = np.asarray(clean.samples if isinstance(clean, AudioClip) else clean, dtype=np.float64)
    y = np.asarray(degraded.samples if isinstance(degraded, AudioClip) else degraded, dtype=np.float64)
    if isinstance(clean, AudioClip):
        fs = clean.sample_rate
    if isinstance(degraded, AudioClip) and degraded.sample_rate != fs:
        raise InvalidArgument(f"sample rates differ: {fs} vs {degraded.sample_rate}")
    if x.shape != y.shape or x.ndim != 1:
        raise InvalidArgument(f"clean and degraded must be 1-D with equal length, got {x.shape} vs {y.shape}")
    if fs != STOI_RATE:
        x = dsp.resample_array(x, fs, STOI_RATE)
        y = dsp.resample_array(y, fs, STOI_RATE)
    x, y = remove_silent_frames(x, y)
    if len(x) < FRAME_LEN + STOI_HOP:
        raise InsufficientLength("not enough non-silent signal for one 384 ms segment")
    x_tob, y_tob = _band_envelopes(x), _band_envelopes(y)
    if x_tob.shape[1] < SEGMENT:
        raise InsufficientLength(f"{x_tob.shape[1]} active frames, need at least {SEGMENT}")
    return _segments(x_tob), _segments(y_tob)


def stoi(clean, degraded, fs: int = dsp.SAMPLE_RATE) -> float:
    x, y = _prepare(clean, degraded, fs)
    scale = np.linalg.norm(x, axis=2, keepdims=True) / (np.linalg.norm(y, axis=2, keepdims=True) + EPS)
    clip = 10 ** (-BETA_DB / 20)
    y = np.minimum(y * scale, x * (1 + clip))
    x = x - x.mean(axis=2, keepdims=True)
    y = y - y.mean(axis=2, keepdims=True)
    x = x / (np.linalg.norm(x, axis=2, keepdims=True) + EPS)
    y = y / (np.linalg.norm(y, axis=2, keepdims=True) + EPS)
    return float(np.sum(x * y) / (x.shape[0] * x.shape[1]))


def _row_col_normalize(s):
    s = s - s.mean(axis=2, keepdims=True)
    s = s / (np.linalg.norm(s, axis=2, keepdims=True) + EPS)
    s = s - s.mean(axis=1, keepdims=True)
    return s / (np.linalg.norm(s, axis=1, keepdims=True) + EPS)


def estoi(clean, degraded, fs: int = dsp.SAMPLE_RATE) -> float:
    x, y = _prepare(clean, degraded, fs)
    x, y = _row_col_normalize(x), _row_col_normalize(y)
    return float(np.sum(x * y) / (SEGMENT * x.shape[0]))


# ---------------------------------------------------------------- directory evaluation


@dataclass
class MetricReport:
    records: list = field(default_factory=list)
    unmatched: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    @property
    def warning_status(self) -> int:
        return int(bool(self.unmatched or self.warnings or not self.records))

    def aggregate(self) -> dict:
        out = {"pairs": len(self.records)}
        for key in REPORT_FIELDS[1:]:
            values = [r[key] for r in self.records if r.get(key) is not None]
            out[key] = float(np.mean(values)) if values else None
        return out

    def __getattr__(self, name):
        if name in REPORT_FIELDS[1:5]:
            return self.aggregate()[name]
        raise AttributeError(name)

    def lines(self) -> list[str]:
        rows = [json.dumps({k: r.get(k) for k in REPORT_FIELDS}) for r in self.records]
        footer = {"aggregate": self.aggregate(), "unmatched": self.unmatched,
                  "warnings": self.warnings, "warning_status": self.warning_status}
        if not self.records:
            footer["error"] = "no matched pairs"
        return rows + [json.dumps(footer)]

    def write(self, path):
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text("\n".join(self.lines()) + "\n", encoding="utf-8")


def _safe(fn, *args):
    try:
        value = float(fn(*args))
    except (V2AError, ArithmeticError) as exc:
        return None, str(exc)
    return (value if math.isfinite(value) else None), None


def pair_metrics(reference: AudioClip, generated: AudioClip) -> tuple[dict, list]:
    """Metrics for one pair; lengths are cut to the shorter clip."""
    ref = dsp.resample(reference, dsp.SAMPLE_RATE)
    gen = dsp.resample(generated, dsp.SAMPLE_RATE)
    n = min(len(ref), len(gen))
    ref = AudioClip(ref.samples[:n], dsp.SAMPLE_RATE)
    gen = AudioClip(gen.samples[:n], dsp.SAMPLE_RATE)
    rec, notes = {}, []
    for key, fn in (("stoi", stoi), ("estoi", estoi),
                    ("mr_stft", losses.multi_resolution_stft_loss),
                    ("mel_l1", lambda a, b: losses.mel_l1_loss(dsp.log_mel_spectrogram(a),
                                                               dsp.log_mel_spectrogram(b)))):
        rec[key], err = _safe(fn, ref, gen)
        if err:
            notes.append(f"{key}: {err}")
    return rec, notes


def evaluate_pairs(generated_dir, reference_dir) -> MetricReport:
    """Match files by name (``.wav`` audio, ``.v2ax`` mel matrices) and score each pair."""
    from .data import read_features, read_wav  # data imports models; keep metrics light

    gen_dir, ref_dir = Path(generated_dir), Path(reference_dir)
    for d in (gen_dir, ref_dir):
        if not d.is_dir():
            raise InvalidArgument(f"not a directory: {d}")

    def listing(d):
        return {p.name: p for p in d.iterdir() if p.suffix in (".wav", ".v2ax")}

    gen, ref = listing(gen_dir), listing(ref_dir)
    report = MetricReport(unmatched=sorted(set(gen) ^ set(ref)))
    for name in sorted(set(gen) & set(ref)):
        rec = {k: None for k in REPORT_FIELDS}
        rec["filename"] = name
        if name.endswith(".wav"):
            values, notes = pair_metrics(read_wav(ref[name]), read_wav(gen[name]))
            rec.update(values)
        else:
            a, b = read_features(ref[name]), read_features(gen[name])
            rows = min(len(a), len(b))
            values, err = _safe(losses.mel_l1_loss, a[:rows], b[:rows])
            rec["mel_l1"] = values
            notes = [f"mel_l1: {err}"] if err else []
        report.warnings += [f"{name}: {n}" for n in notes]
        report.records.append(rec)
    return report
