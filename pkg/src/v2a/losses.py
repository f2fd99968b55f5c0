"""Training objectives.

The STFT-based losses are written in torch so they can be back-propagated
through; they accept :class:`~v2a.dsp.AudioClip`, numpy arrays or tensors of
shape ``[L]`` or ``[B, L]``. Batched inputs are reduced per item and averaged.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.fft
import torch

from . import dsp
from .dsp import AudioClip, MelSpectrogram, StftParams
from .errors import DivisionGuardError, InvalidArgument

# natural log, magnitudes floored before the log
MAG_FLOOR = 1e-10


@dataclass(frozen=True)
class LossWeights:
    lambda1: float = 1.0  # adversarial
    lambda2: float = 80.0  # multi-resolution STFT
    lambda3: float = 15.0  # MFCC

    def __post_init__(self):
        if min(self.lambda1, self.lambda2, self.lambda3) < 0:
            raise InvalidArgument("loss weights must be non-negative")


LOSS_PRESETS = {
    "default": LossWeights(1.0, 80.0, 15.0),
    "perceptual": LossWeights(2.5, 1.0, 0.1),
}

DEFAULT_RESOLUTIONS = (
    StftParams(1024, 120, 600),
    StftParams(2048, 240, 1200),
    StftParams(512, 50, 240),
)


def loss_weights(name: str) -> LossWeights:
    try:
        return LOSS_PRESETS[name]
    except KeyError:
        raise InvalidArgument(f"unknown loss preset {name!r}; known: {sorted(LOSS_PRESETS)}") from None


def _as_batch(x, like: torch.Tensor | None = None) -> torch.Tensor:
    if isinstance(x, AudioClip):
        x = x.samples
    if isinstance(x, MelSpectrogram):
        x = x.values
    if not torch.is_tensor(x):
        x = torch.as_tensor(np.asarray(x))
        if like is not None:
            x = x.to(like.dtype)
        elif not torch.is_floating_point(x):
            x = x.float()
    return x.unsqueeze(0) if x.dim() == 1 else x


def _pair(x, y):
    xt = _as_batch(x) if torch.is_tensor(x) or not torch.is_tensor(y) else _as_batch(x, y)
    yt = _as_batch(y, xt)
    if xt.dtype != yt.dtype:
        yt = yt.to(xt.dtype)
    if xt.shape != yt.shape:
        raise InvalidArgument(f"shape mismatch: {tuple(xt.shape)} vs {tuple(yt.shape)}")
    return xt, yt


# ---------------------------------------------------------------- adversarial


def lsgan_generator_loss(fake_scores: Sequence[torch.Tensor]) -> torch.Tensor:
    """Sum over scales of ``mean((D_k(fake) - 1)^2)``."""
    if len(fake_scores) == 0:
        raise InvalidArgument("need at least one score map")
    return sum(torch.mean((torch.as_tensor(s) - 1.0) ** 2) for s in fake_scores)


def lsgan_discriminator_loss(real_scores: Sequence[torch.Tensor],
                             fake_scores: Sequence[torch.Tensor]) -> torch.Tensor:
    if len(real_scores) != len(fake_scores):
        raise InvalidArgument(f"{len(real_scores)} real vs {len(fake_scores)} fake score maps")
    if len(real_scores) == 0:
        raise InvalidArgument("need at least one score map")
    real = sum(torch.mean((torch.as_tensor(s) - 1.0) ** 2) for s in real_scores)
    fake = sum(torch.mean(torch.as_tensor(s) ** 2) for s in fake_scores)
    return real + fake


# ---------------------------------------------------------------- spectral


def stft_magnitude(x: torch.Tensor, params: StftParams) -> torch.Tensor:
    """``|STFT(x)|`` of a ``[B, L]`` tensor as ``[B, frames, bins]``, floored at MAG_FLOOR."""
    window = torch.hann_window(params.win_length, periodic=True, dtype=x.dtype, device=x.device)
    spec = torch.stft(x, params.fft_size, params.hop_size, params.win_length, window=window,
                      center=params.center_pad, pad_mode="reflect", return_complex=True)
    power = spec.real ** 2 + spec.imag ** 2
    return torch.sqrt(torch.clamp(power, min=MAG_FLOOR ** 2)).transpose(1, 2)


def _sc(mag_x, mag_y):
    num = torch.linalg.vector_norm(mag_x - mag_y, dim=(1, 2))
    den = torch.linalg.vector_norm(mag_x, dim=(1, 2))
    return num / den


def _log_mag(mag_x, mag_y):
    return torch.mean(torch.abs(torch.log(mag_x) - torch.log(mag_y)), dim=(1, 2))


def _guard_reference(x: torch.Tensor):
    silent = torch.all(x == 0, dim=1)
    if bool(silent.any()):
        raise DivisionGuardError("spectral convergence needs a non-silent reference signal")


def spectral_convergence(x, x_hat, params: StftParams = dsp.PIPELINE_STFT) -> torch.Tensor:
    """``|| |S(x)| - |S(x_hat)| ||_F / || |S(x)| ||_F``."""
    x, x_hat = _pair(x, x_hat)
    _guard_reference(x)
    return _sc(stft_magnitude(x, params), stft_magnitude(x_hat, params)).mean()


def log_stft_magnitude_loss(x, x_hat, params: StftParams = dsp.PIPELINE_STFT) -> torch.Tensor:
    x, x_hat = _pair(x, x_hat)
    return _log_mag(stft_magnitude(x, params), stft_magnitude(x_hat, params)).mean()


def single_stft_loss(x, x_hat, params: StftParams) -> torch.Tensor:
    x, x_hat = _pair(x, x_hat)
    _guard_reference(x)
    mx, my = stft_magnitude(x, params), stft_magnitude(x_hat, params)
    return (_sc(mx, my) + _log_mag(mx, my)).mean()


def multi_resolution_stft_loss(x, x_hat, resolutions: Sequence[StftParams] = DEFAULT_RESOLUTIONS) -> torch.Tensor:
    if len(resolutions) == 0:
        raise InvalidArgument("resolution set must not be empty")
    if len(set(resolutions)) != len(resolutions):
        raise InvalidArgument("resolutions must be distinct")
    x, x_hat = _pair(x, x_hat)
    return sum(single_stft_loss(x, x_hat, p) for p in resolutions) / len(resolutions)


# ---------------------------------------------------------------- cepstral


@functools.lru_cache(maxsize=4)
def _mfcc_constants(dtype_name: str):
    dtype = getattr(torch, dtype_name)
    fb = torch.as_tensor(np.array(dsp.mel_filterbank()), dtype=dtype)
    dct = scipy.fft.dct(np.eye(dsp.N_MELS), type=2, norm="ortho", axis=0)[:dsp.N_MFCC]
    return fb, torch.as_tensor(dct, dtype=dtype)


def mfcc_features(x: torch.Tensor) -> torch.Tensor:
    """Differentiable twin of :func:`v2a.dsp.mfcc` for ``[B, L]`` tensors."""
    fb, dct = _mfcc_constants(str(x.dtype).removeprefix("torch."))
    n_frames = dsp.mel_frames(x.shape[-1])
    mag = stft_magnitude(x, dsp.PIPELINE_STFT)[:, :n_frames]
    mel = torch.clamp(mag @ fb.T, min=dsp.MFCC_FLOOR)
    return torch.log(mel) @ dct.T


def mfcc_loss(x, x_hat) -> torch.Tensor:
    """Mean absolute difference between 25-coefficient MFCC matrices."""
    for clip in (x, x_hat):
        if isinstance(clip, AudioClip) and clip.sample_rate != dsp.SAMPLE_RATE:
            raise InvalidArgument(f"mfcc loss expects {dsp.SAMPLE_RATE} Hz audio")
    x, x_hat = _pair(x, x_hat)
    return torch.mean(torch.abs(mfcc_features(x) - mfcc_features(x_hat)))


# ---------------------------------------------------------------- totals


def wavegan_generator_total(adv, mrstft, mfcc, weights: LossWeights = LOSS_PRESETS["default"]):
    return weights.lambda1 * adv + weights.lambda2 * mrstft + weights.lambda3 * mfcc


def mel_l1_loss(target, predicted, mask: torch.Tensor | None = None) -> torch.Tensor:
    """Mean ``|X - X_hat|`` over elements; ``mask`` (``[B, T]``) restricts to valid frames."""
    target, predicted = _pair(target, predicted)
    diff = torch.abs(target - predicted)
    if mask is None:
        return diff.mean()
    mask = mask.to(diff.dtype)
    while mask.dim() < diff.dim():
        mask = mask.unsqueeze(-1)
    return (diff * mask).sum() / (mask.expand_as(diff).sum())
