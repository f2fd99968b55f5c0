"""Signal-processing front-end: STFT, mel filterbank, log-mel, MFCC, resampling
and Griffin-Lim inversion.

Everything here is a pure function of its inputs. Audio samples are stored as
float32 but all arithmetic runs in float64.
"""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft

from . import _kernels
from .errors import InvalidArgument, SampleRateMismatch

SAMPLE_RATE = 24000
N_MELS = 80
FFT_SIZE = 2048
HOP_SIZE = 300  # 12.5 ms
WIN_LENGTH = 1200  # 50 ms
MEL_FRAME_RATE = SAMPLE_RATE // HOP_SIZE
F_MIN = 0.0
F_MAX = 12000.0
# log-mel: base 10, magnitudes floored at 1e-10, clipped to [-6, 6] then /6
LOG_MEL_FLOOR = 1e-10
LOG_MEL_CLIP = 6.0
# MFCC: natural log over the same floor
MFCC_FLOOR = 1e-10
N_MFCC = 25

RESAMPLE_HALF_TAPS = 32  # per phase, each side of the centre tap
RESAMPLE_KAISER_BETA = 5.0


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float32)
        if samples.ndim != 1:
            raise InvalidArgument(f"audio must be 1-D, got shape {samples.shape}")
        if samples.size < 1:
            raise InvalidArgument("audio must contain at least one sample")
        if not np.all(np.isfinite(samples)):
            raise InvalidArgument("audio contains non-finite samples")
        if int(self.sample_rate) <= 0:
            raise InvalidArgument(f"sample rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration(self) -> float:
        return len(self) / self.sample_rate


@dataclass(frozen=True)
class StftParams:
    fft_size: int = FFT_SIZE
    hop_size: int = HOP_SIZE
    win_length: int = WIN_LENGTH
    window: str = "hann"
    center_pad: bool = True

    def __post_init__(self):
        if self.window != "hann":
            raise InvalidArgument(f"unsupported window {self.window!r}")
        if self.hop_size < 1:
            raise InvalidArgument("hop_size must be >= 1")
        if self.win_length > self.fft_size:
            raise InvalidArgument("win_length must not exceed fft_size")
        if self.hop_size > self.win_length:
            raise InvalidArgument("hop_size must not exceed win_length")

    @property
    def n_bins(self) -> int:
        return self.fft_size // 2 + 1


@dataclass(frozen=True)
class MelSpectrogram:
    """Log-mel matrix ``[frames x 80]``. Values from the front-end lie in [-1, 1]."""

    values: np.ndarray
    frame_rate: float = MEL_FRAME_RATE

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[1] != N_MELS or values.shape[0] < 1:
            raise InvalidArgument(f"mel must be [frames x {N_MELS}], got {values.shape}")
        object.__setattr__(self, "values", values)

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class MfccMatrix:
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 2 or values.shape[1] != N_MFCC:
            raise InvalidArgument(f"mfcc must be [frames x {N_MFCC}], got {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidArgument("mfcc contains non-finite entries")
        object.__setattr__(self, "values", values)


PIPELINE_STFT = StftParams()


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window, ``w[k] = 0.5 * (1 - cos(2 pi k / n))``."""
    if n < 1:
        raise InvalidArgument(f"window length must be >= 1, got {n}")
    k = np.arange(n, dtype=np.float64)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * k / n))


@functools.lru_cache(maxsize=16)
def _padded_window(fft_size: int, win_length: int) -> np.ndarray:
    w = np.zeros(fft_size, dtype=np.float64)
    left = (fft_size - win_length) // 2
    w[left:left + win_length] = hann_window(win_length)
    w.setflags(write=False)
    return w


def frame_count(n_samples: int, params: StftParams) -> int:
    if params.center_pad:
        return n_samples // params.hop_size + 1
    if n_samples < params.fft_size:
        return 0
    return (n_samples - params.fft_size) // params.hop_size + 1


def _stft_array(x: np.ndarray, params: StftParams) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if params.center_pad:
        x = np.pad(x, params.fft_size // 2, mode="reflect")
    if x.shape[0] < params.fft_size:
        raise InvalidArgument("signal shorter than one FFT frame without center padding")
    frames = np.lib.stride_tricks.sliding_window_view(x, params.fft_size)[::params.hop_size]
    return np.fft.rfft(frames * _padded_window(params.fft_size, params.win_length), axis=-1)


def stft(audio: AudioClip, params: StftParams = PIPELINE_STFT) -> np.ndarray:
    """Complex STFT, shape ``[frames x (fft_size/2 + 1)]``.

    With center padding the signal is reflect-padded by ``fft_size // 2`` on
    both sides, giving ``len // hop + 1`` frames.
    """
    return _stft_array(audio.samples, params)


@functools.lru_cache(maxsize=16)
def _mel_filterbank_cached(n_mels, fft_size, sample_rate, f_min, f_max):
    def hz_to_mel(f):
        return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)

    def mel_to_hz(m):
        return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)

    edges = mel_to_hz(np.linspace(hz_to_mel(f_min), hz_to_mel(f_max), n_mels + 2))
    freqs = np.arange(fft_size // 2 + 1) * sample_rate / fft_size
    lower = (freqs[None, :] - edges[:-2, None]) / (edges[1:-1] - edges[:-2])[:, None]
    upper = (edges[2:, None] - freqs[None, :]) / (edges[2:] - edges[1:-1])[:, None]
    fb = np.maximum(0.0, np.minimum(lower, upper))
    empty = np.flatnonzero(fb.sum(axis=1) <= 0)
    if empty.size:
        raise InvalidArgument(
            f"mel filters {empty.tolist()} cover no FFT bin; increase fft_size or reduce n_mels"
        )
    fb.setflags(write=False)
    return fb


def mel_filterbank(n_mels: int = N_MELS, fft_size: int = FFT_SIZE, sample_rate: int = SAMPLE_RATE,
                   f_min: float = F_MIN, f_max: float = F_MAX) -> np.ndarray:
    """Triangular HTK-mel filterbank, shape ``[n_mels x (fft_size/2 + 1)]``, peak weight 1."""
    if not 0 <= f_min < f_max:
        raise InvalidArgument(f"need 0 <= f_min < f_max, got f_min={f_min}, f_max={f_max}")
    if f_max > sample_rate / 2:
        raise InvalidArgument(f"f_max {f_max} exceeds Nyquist {sample_rate / 2}")
    return _mel_filterbank_cached(int(n_mels), int(fft_size), int(sample_rate), float(f_min), float(f_max))


def _check_rate(audio: AudioClip):
    if audio.sample_rate != SAMPLE_RATE:
        raise SampleRateMismatch(f"expected {SAMPLE_RATE} Hz audio, got {audio.sample_rate} Hz")


def mel_frames(n_samples: int) -> int:
    """Frames kept by the pipeline: the trailing centre-padded frame is dropped."""
    return max(1, n_samples // HOP_SIZE)


def _mel_magnitudes(x: np.ndarray) -> np.ndarray:
    mag = np.abs(_stft_array(x, PIPELINE_STFT))[: mel_frames(len(x))]
    return mag @ mel_filterbank().T


def log_mel_spectrogram(audio: AudioClip) -> MelSpectrogram:
    _check_rate(audio)
    mel = _mel_magnitudes(audio.samples)
    logmel = np.log10(np.maximum(mel, LOG_MEL_FLOOR))
    logmel = np.clip(logmel, -LOG_MEL_CLIP, LOG_MEL_CLIP) / LOG_MEL_CLIP
    return MelSpectrogram(logmel.astype(np.float32), MEL_FRAME_RATE)


def mfcc(audio: AudioClip) -> MfccMatrix:
    """25 MFCCs per frame: orthonormal DCT-II of the natural-log mel magnitudes."""
    _check_rate(audio)
    logmel = np.log(np.maximum(_mel_magnitudes(audio.samples), MFCC_FLOOR))
    coeffs = scipy.fft.dct(logmel, type=2, norm="ortho", axis=-1)[:, :N_MFCC]
    return MfccMatrix(coeffs.astype(np.float32))


@functools.lru_cache(maxsize=16)
def resampling_filter(up: int, down: int) -> np.ndarray:
    """Kaiser-windowed sinc lowpass at ``min(rates)/2``, 64 taps per phase."""
    half = RESAMPLE_HALF_TAPS * up
    k = np.arange(-half, half + 1, dtype=np.float64)
    cutoff = 0.5 / max(up, down)  # cycles per sample at the upsampled rate
    h = 2.0 * cutoff * np.sinc(2.0 * cutoff * k) * np.kaiser(2 * half + 1, RESAMPLE_KAISER_BETA)
    h.setflags(write=False)
    return h


def resample_array(x: np.ndarray, source_rate: int, target_rate: int) -> np.ndarray:
    """Polyphase resampling of a float array; returns float64."""
    if source_rate <= 0 or target_rate <= 0:
        raise InvalidArgument(f"rates must be positive, got {source_rate} -> {target_rate}")
    x = np.asarray(x, dtype=np.float64)
    if source_rate == target_rate:
        return x.copy()
    g = math.gcd(int(source_rate), int(target_rate))
    up, down = target_rate // g, source_rate // g
    h = resampling_filter(up, down)
    out_len = int(math.floor(len(x) * up / down + 0.5))
    return _kernels.polyphase(x, h, up, down, (len(h) - 1) // 2, out_len)


def resample(audio: AudioClip, target_rate: int) -> AudioClip:
    if target_rate <= 0:
        raise InvalidArgument(f"target rate must be positive, got {target_rate}")
    if target_rate == audio.sample_rate:
        return audio
    y = resample_array(audio.samples, audio.sample_rate, target_rate)
    return AudioClip(y.astype(np.float32), target_rate)


# ---------------------------------------------------------------- Griffin-Lim


def _gla_analysis(x, n_frames, w):
    pad = FFT_SIZE // 2
    xp = np.pad(x, (pad, pad))
    frames = np.lib.stride_tricks.sliding_window_view(xp, FFT_SIZE)[::HOP_SIZE][:n_frames]
    return np.fft.rfft(frames * w, axis=-1)


def _gla_synthesis(spec, n_samples, w, norm):
    frames = np.fft.irfft(spec, n=FFT_SIZE, axis=-1) * w
    pad = FFT_SIZE // 2
    y = _kernels.overlap_add(frames, HOP_SIZE, n_samples + 2 * pad)
    return y[pad:pad + n_samples] / norm


def griffin_lim(mel: MelSpectrogram, iterations: int = 32, seed: int = 0, return_errors: bool = False):
    """Approximate inverse of :func:`log_mel_spectrogram`.

    Returns audio of ``frames * 300`` samples at 24 kHz; with ``return_errors``
    also the per-iteration distance between the STFT magnitude of the current
    estimate and the target magnitude (full-spectrum Frobenius norm).
    """
    if iterations < 1:
        raise InvalidArgument("iterations must be >= 1")
    n_frames = mel.n_frames
    n_samples = n_frames * HOP_SIZE
    mel_mag = 10.0 ** (mel.values.astype(np.float64) * LOG_MEL_CLIP)
    target = np.maximum(mel_mag @ np.linalg.pinv(mel_filterbank()).T, 0.0)

    w = _padded_window(FFT_SIZE, WIN_LENGTH)
    norm = _kernels.overlap_add(np.tile(w * w, (n_frames, 1)), HOP_SIZE, n_samples + FFT_SIZE)
    norm = norm[FFT_SIZE // 2:FFT_SIZE // 2 + n_samples]
    # interior rfft bins stand for two conjugate bins of the full spectrum
    bin_weight = np.full(FFT_SIZE // 2 + 1, 2.0)
    bin_weight[0] = bin_weight[-1] = 1.0

    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(target.shape))
    errors = []
    x = None
    for _ in range(iterations):
        x = _gla_synthesis(target * phase, n_samples, w, norm)
        spec = _gla_analysis(x, n_frames, w)
        mag = np.abs(spec)
        errors.append(float(np.sqrt(np.sum(bin_weight * (mag - target) ** 2))))
        phase = np.where(mag > 0, spec / np.where(mag > 0, mag, 1.0), 1.0)
    audio = AudioClip(np.clip(x, -1.0, 1.0).astype(np.float32), SAMPLE_RATE)
    if return_errors:
        return audio, errors
    return audio
