import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from v2a import dsp
from v2a.dsp import AudioClip, MelSpectrogram, StftParams
from v2a.errors import InvalidArgument, SampleRateMismatch


def tone(freq, seconds=1.0, rate=24000, amp=0.5):
    t = np.arange(int(round(seconds * rate))) / rate
    return AudioClip((amp * np.sin(2 * np.pi * freq * t)).astype(np.float32), rate)


# ---------------------------------------------------------------- types


def test_audio_clip_validation():
    with pytest.raises(InvalidArgument):
        AudioClip(np.zeros(0))
    with pytest.raises(InvalidArgument):
        AudioClip(np.array([0.0, np.nan]))
    with pytest.raises(InvalidArgument):
        AudioClip(np.zeros(4), 0)
    with pytest.raises(InvalidArgument):
        AudioClip(np.zeros((2, 2)))
    assert AudioClip(np.zeros(3)).samples.dtype == np.float32


def test_stft_params_validation():
    with pytest.raises(InvalidArgument):
        StftParams(512, 100, 1024)
    with pytest.raises(InvalidArgument):
        StftParams(512, 0, 256)
    with pytest.raises(InvalidArgument):
        StftParams(512, 300, 256)


def test_mel_spectrogram_shape_check():
    with pytest.raises(InvalidArgument):
        MelSpectrogram(np.zeros((4, 40)))


# ---------------------------------------------------------------- window


def test_hann_small_cases():
    assert dsp.hann_window(1).tolist() == [0.0]
    np.testing.assert_allclose(dsp.hann_window(4), [0.0, 0.5, 1.0, 0.5], atol=1e-15)
    with pytest.raises(InvalidArgument):
        dsp.hann_window(0)


def test_hann_2048_peak_and_symmetry():
    w = dsp.hann_window(2048)
    assert int(np.argmax(w)) == 1024 and w[1024] == 1.0
    np.testing.assert_allclose(w[1:1024], w[2047:1024:-1], atol=1e-15)


# ---------------------------------------------------------------- stft


def test_stft_frame_count_one_second():
    # reflect padding adds fft/2 each side: 1 + (24000 + 2048 - 2048) // 300
    padded = 24000 + 2 * 1024
    assert dsp.stft(tone(440)).shape == ((padded - 2048) // 300 + 1, 1025) == (81, 1025)


def test_stft_zero_and_empty():
    assert np.all(np.abs(dsp.stft(AudioClip(np.zeros(2400)))) == 0)
    with pytest.raises(InvalidArgument):
        dsp.stft(AudioClip(np.zeros(0)))


def test_stft_matches_direct_dft():
    rng = np.random.default_rng(0)
    x = rng.uniform(-0.5, 0.5, 700).astype(np.float32)
    params = StftParams(256, 64, 200)
    spec = dsp.stft(AudioClip(x), params)
    xp = np.pad(x.astype(np.float64), 128, mode="reflect")
    w = np.zeros(256)
    w[28:228] = 0.5 * (1 - np.cos(2 * np.pi * np.arange(200) / 200))
    k = np.arange(129)[:, None] * np.arange(256)[None, :]
    basis = np.exp(-2j * np.pi * k / 256)
    for f in (0, 3, spec.shape[0] - 1):
        frame = xp[f * 64:f * 64 + 256] * w
        np.testing.assert_allclose(spec[f], basis @ frame, atol=1e-9)


@given(arrays(np.float32, 512, elements=st.floats(-1, 1, width=32)),
       st.floats(0.01, 1.0))
def test_stft_linearity(x, a):
    params = StftParams(256, 64, 256)
    s1 = np.abs(dsp.stft(AudioClip(x), params))
    s2 = np.abs(dsp.stft(AudioClip((x * np.float32(a))), params))
    ref = abs(np.float32(a)) * s1
    np.testing.assert_allclose(s2, ref, rtol=1e-6, atol=1e-6 * max(1.0, float(ref.max())))


# ---------------------------------------------------------------- mel filterbank


def test_mel_filterbank_shape_and_rows():
    fb = dsp.mel_filterbank()
    assert fb.shape == (80, 1025)
    assert np.all(fb >= 0)
    assert np.all(fb.sum(axis=1) > 0)


def test_mel_filterbank_covers_every_bin():
    fb = dsp.mel_filterbank()
    freqs = np.arange(1025) * 24000 / 2048
    # open interval: the end points of the outermost triangles carry zero weight
    inner = np.flatnonzero((freqs > 0) & (freqs < 12000))
    assert np.all(fb[:, inner].max(axis=0) > 0)


def test_mel_filterbank_centres_follow_htk_scale():
    fb = dsp.mel_filterbank()
    mel_max = 2595 * math.log10(1 + 12000 / 700)
    centres = [700 * (10 ** (mel_max * (i + 1) / 81 / 2595) - 1) for i in range(80)]
    freqs = np.arange(1025) * 24000 / 2048
    peaks = freqs[np.argmax(fb, axis=1)]
    assert np.all(np.abs(peaks - centres) <= 24000 / 2048)


def test_mel_filterbank_errors():
    with pytest.raises(InvalidArgument):
        dsp.mel_filterbank(f_min=1000, f_max=500)
    with pytest.raises(InvalidArgument):
        dsp.mel_filterbank(f_max=20000)


# ---------------------------------------------------------------- log-mel and mfcc


def test_log_mel_silence_is_minus_one():
    mel = dsp.log_mel_spectrogram(AudioClip(np.zeros(24000)))
    assert mel.values.shape == (80, 80)
    assert np.all(mel.values == -1.0)
    assert mel.frame_rate == 80


@pytest.mark.parametrize("seconds", [1, 2, 3])
def test_log_mel_frame_rate_contract(seconds):
    mel = dsp.log_mel_spectrogram(tone(300, seconds))
    assert mel.n_frames == 80 * seconds


def test_log_mel_rejects_other_rates():
    with pytest.raises(SampleRateMismatch):
        dsp.log_mel_spectrogram(tone(300, rate=16000))
    with pytest.raises(SampleRateMismatch):
        dsp.mfcc(tone(300, rate=16000))


def test_log_mel_hand_computed_value():
    # a full-scale 1 kHz tone: compare one bin with log10 of the mel-weighted |STFT|
    clip = tone(1000)
    mel = dsp.log_mel_spectrogram(clip).values
    mag = np.abs(dsp.stft(clip))[40]
    expected = np.clip(np.log10(max(float(dsp.mel_filterbank()[20] @ mag), 1e-10)), -6, 6) / 6
    assert mel[40, 20] == pytest.approx(expected, abs=1e-6)


@given(arrays(np.float32, 3000, elements=st.floats(-1, 1, width=32)), st.floats(1.0, 1e4))
def test_log_mel_bounded(x, gain):
    # any finite input, including out-of-range amplitudes, stays in [-1, 1]
    mel = dsp.log_mel_spectrogram(AudioClip(x * np.float32(gain)))
    assert np.all(np.abs(mel.values) <= 1.0)


def test_pipeline_is_pure():
    clip = tone(523)
    a = dsp.log_mel_spectrogram(clip).values.tobytes()
    b = dsp.log_mel_spectrogram(clip).values.tobytes()
    assert a == b
    assert dsp.mfcc(clip).values.tobytes() == dsp.mfcc(clip).values.tobytes()
    assert dsp.stft(clip).tobytes() == dsp.stft(clip).tobytes()
    assert dsp.resample(clip, 10000).samples.tobytes() == dsp.resample(clip, 10000).samples.tobytes()


def test_mfcc_silence():
    m = dsp.mfcc(AudioClip(np.zeros(24000))).values
    assert m.shape == (80, 25)
    assert np.all(m[:, 0] == m[0, 0])
    assert np.max(np.abs(m[:, 1:])) < 1e-6


def test_mfcc_matches_explicit_dct():
    clip = tone(700)
    mag = np.abs(dsp.stft(clip))[:80]
    logmel = np.log(np.maximum(mag @ dsp.mel_filterbank().T, 1e-10))
    n = np.arange(80)
    basis = np.cos(np.pi * (n[None, :] + 0.5) * np.arange(25)[:, None] / 80) * math.sqrt(2 / 80)
    basis[0] /= math.sqrt(2)
    np.testing.assert_allclose(dsp.mfcc(clip).values, logmel @ basis.T, atol=2e-4, rtol=1e-5)


# ---------------------------------------------------------------- resample


def test_resample_identity_passthrough():
    clip = tone(440)
    assert dsp.resample(clip, 24000) is clip


def test_resample_length_and_peak():
    out = dsp.resample(tone(440), 10000)
    assert len(out) == 10000 and out.sample_rate == 10000
    spectrum = np.abs(np.fft.rfft(out.samples))
    freqs = np.fft.rfftfreq(len(out.samples), 1 / 10000)
    assert abs(freqs[np.argmax(spectrum)] - 440) <= freqs[1]


@pytest.mark.parametrize("n,src,dst", [(24000, 24000, 10000), (1001, 24000, 16000), (7, 8000, 24000)])
def test_resample_lengths(n, src, dst):
    assert len(dsp.resample_array(np.zeros(n), src, dst)) == round(n * dst / src)


def test_resample_suppresses_aliasing():
    # 7 kHz lies above the 5 kHz Nyquist of the target rate
    out = dsp.resample(tone(7000), 10000)
    assert np.sqrt(np.mean(out.samples[200:-200] ** 2)) < 0.01


def test_resample_errors():
    with pytest.raises(InvalidArgument):
        dsp.resample(tone(440), 0)


# ---------------------------------------------------------------- griffin-lim


def test_griffin_lim_length_and_monotone():
    mel = dsp.log_mel_spectrogram(tone(440, 0.5))
    audio, errors = dsp.griffin_lim(mel, iterations=32, seed=3, return_errors=True)
    assert audio.sample_rate == 24000
    assert abs(len(audio) - mel.n_frames * 300) <= 1200
    assert all(b <= a * (1 + 1e-9) for a, b in zip(errors, errors[1:]))


def test_griffin_lim_silence():
    audio = dsp.griffin_lim(MelSpectrogram(-np.ones((40, 80))), iterations=4)
    assert np.sqrt(np.mean(audio.samples.astype(np.float64) ** 2)) < 1e-3


def test_griffin_lim_recovers_tone_frequency():
    audio = dsp.griffin_lim(dsp.log_mel_spectrogram(tone(1000)), iterations=16)
    spectrum = np.abs(np.fft.rfft(audio.samples))
    freqs = np.fft.rfftfreq(len(audio), 1 / 24000)
    assert abs(freqs[np.argmax(spectrum)] - 1000) < 100


def test_griffin_lim_needs_iterations():
    with pytest.raises(InvalidArgument):
        dsp.griffin_lim(MelSpectrogram(-np.ones((4, 80))), iterations=0)
