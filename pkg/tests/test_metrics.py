"""STOI / ESTOI against a brute-force reference, and directory evaluation."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stoi_fixtures import FS, add_noise, fixture_pairs, speechlike
from oracles.stoi_reference import estoi_reference, stoi_reference
from v2a import dsp, metrics
from v2a.data import write_features, write_wav
from v2a.dsp import AudioClip
from v2a.errors import InsufficientLength, InvalidArgument

PAIRS = fixture_pairs()


@pytest.mark.parametrize("i", range(len(PAIRS)))
def test_stoi_matches_reference(i):
    x, y = PAIRS[i]
    assert abs(metrics.stoi(x, y, fs=FS) - stoi_reference(x, y)) <= 1e-6


@pytest.mark.parametrize("i", range(len(PAIRS)))
def test_estoi_matches_reference(i):
    x, y = PAIRS[i]
    assert abs(metrics.estoi(x, y, fs=FS) - estoi_reference(x, y)) <= 1e-6


@pytest.mark.parametrize("fn", [metrics.stoi, metrics.estoi])
def test_identity_is_one(fn):
    for seed in range(3):
        x = speechlike(seed)
        assert abs(fn(x, x, fs=FS) - 1.0) <= 1e-6
    clip = AudioClip(dsp.resample_array(speechlike(0), FS, dsp.SAMPLE_RATE), dsp.SAMPLE_RATE)
    assert abs(fn(clip, clip) - 1.0) <= 1e-6


def test_stoi_examples():
    x = speechlike(3)
    assert 0.5 < metrics.stoi(x, add_noise(x, 20, 1), fs=FS) < 1.0
    noise = np.random.default_rng(5).standard_normal(len(x))
    # Clipping ties the noisy envelope to the clean one, so STOI sits well above 0 here;
    # the value is pinned by the reference, and ESTOI (no clipping) is near 0.
    assert abs(metrics.stoi(x, noise, fs=FS) - stoi_reference(x, noise)) <= 1e-6
    assert metrics.stoi(x, noise, fs=FS) < metrics.stoi(x, add_noise(x, 0, 1), fs=FS)
    assert abs(metrics.estoi(x, noise, fs=FS)) < 0.1


def test_estoi_monotone_in_snr():
    x = speechlike(4)
    values = [metrics.estoi(x, add_noise(x, snr, 9), fs=FS) for snr in (20, 10, 0)]
    assert values[0] > values[1] > values[2]


@settings(max_examples=15)
@given(st.integers(0, 10 ** 6), st.floats(-10, 30))
def test_range_property(seed, snr):
    x = speechlike(seed % 50)
    y = add_noise(x, snr, seed)
    for fn in (metrics.stoi, metrics.estoi):
        assert -1.0 <= fn(x, y, fs=FS) <= 1.0


def test_metrics_are_pure():
    x, y = PAIRS[2]
    x0, y0 = x.copy(), y.copy()
    assert metrics.stoi(x, y, fs=FS) == metrics.stoi(x, y, fs=FS)
    assert np.array_equal(x, x0) and np.array_equal(y, y0)


def test_errors():
    x = speechlike(0)
    with pytest.raises(InsufficientLength):
        metrics.stoi(x[:3000], x[:3000], fs=FS)
    with pytest.raises(InvalidArgument):
        metrics.stoi(x, x[:-1], fs=FS)
    with pytest.raises(InvalidArgument):
        metrics.estoi(AudioClip(x, FS), AudioClip(x, 16000))


def test_third_octave_bands():
    obm = metrics.third_octave_matrix()
    assert obm.shape == (15, 257)
    first = np.flatnonzero(obm[0]) * FS / metrics.STOI_NFFT
    assert first.min() <= 150 <= first.max() + FS / metrics.STOI_NFFT
    assert np.all(obm.sum(axis=1) >= 1)


def test_agrees_with_pystoi():
    pystoi = pytest.importorskip("pystoi")
    for x, y in PAIRS[:4]:
        assert abs(metrics.stoi(x, y, fs=FS) - pystoi.stoi(x, y, FS)) <= 1e-6
        assert abs(metrics.estoi(x, y, fs=FS) - pystoi.stoi(x, y, FS, extended=True)) <= 1e-6


# ---------------------------------------------------------------- directory evaluation


def _clip(seed):
    return AudioClip(dsp.resample_array(speechlike(seed), FS, dsp.SAMPLE_RATE).astype(np.float32), dsp.SAMPLE_RATE)


def _write_dir(d, names, seeds):
    d.mkdir(parents=True, exist_ok=True)
    for name, seed in zip(names, seeds):
        write_wav(d / name, _clip(seed))
    return d


def test_identical_directories(tmp_path):
    ref = _write_dir(tmp_path / "ref", ["b.wav", "a.wav"], [1, 2])
    gen = _write_dir(tmp_path / "gen", ["b.wav", "a.wav"], [1, 2])
    report = metrics.evaluate_pairs(gen, ref)
    assert [r["filename"] for r in report.records] == ["a.wav", "b.wav"]
    for r in report.records:
        assert abs(r["stoi"] - 1) <= 1e-6 and abs(r["estoi"] - 1) <= 1e-6
        assert r["mr_stft"] == 0.0 and r["mel_l1"] == 0.0
        assert r["pesq"] is None and r["wer"] is None
    assert report.warning_status == 0
    assert report.stoi == pytest.approx(1.0, abs=1e-6)


def test_report_is_deterministic(tmp_path):
    ref = _write_dir(tmp_path / "ref", ["a.wav", "b.wav"], [1, 2])
    gen = _write_dir(tmp_path / "gen", ["a.wav", "b.wav"], [3, 4])
    first = metrics.evaluate_pairs(gen, ref).lines()
    assert first == metrics.evaluate_pairs(gen, ref).lines()
    rows = [json.loads(line) for line in first]
    assert [r["filename"] for r in rows[:-1]] == ["a.wav", "b.wav"]
    assert rows[-1]["aggregate"]["pairs"] == 2
    for r in rows[:-1]:
        assert -1 <= r["stoi"] <= 1 and r["mr_stft"] > 0 and r["mel_l1"] > 0


def test_unmatched_and_empty(tmp_path):
    ref = _write_dir(tmp_path / "ref", ["a.wav", "c.wav"], [1, 2])
    gen = _write_dir(tmp_path / "gen", ["a.wav", "d.wav"], [1, 2])
    report = metrics.evaluate_pairs(gen, ref)
    assert report.unmatched == ["c.wav", "d.wav"] and len(report.records) == 1
    assert report.warning_status == 1
    empty = metrics.evaluate_pairs(_write_dir(tmp_path / "x", ["q.wav"], [1]), ref)
    assert empty.records == [] and empty.warning_status == 1
    footer = json.loads(empty.lines()[-1])
    assert footer["error"] == "no matched pairs" and footer["aggregate"]["stoi"] is None
    with pytest.raises(InvalidArgument):
        metrics.evaluate_pairs(tmp_path / "missing", ref)


def test_mel_files_and_write(tmp_path):
    (tmp_path / "ref").mkdir()
    (tmp_path / "gen").mkdir()
    write_features(tmp_path / "ref" / "m.v2ax", -np.ones((80, 80), np.float32))
    write_features(tmp_path / "gen" / "m.v2ax", np.ones((80, 80), np.float32))
    report = metrics.evaluate_pairs(tmp_path / "gen", tmp_path / "ref")
    assert report.records[0]["mel_l1"] == 2.0 and report.records[0]["stoi"] is None
    out = tmp_path / "out" / "report.jsonl"
    report.write(out)
    assert out.read_text().splitlines() == report.lines()


def test_short_pair_records_warning(tmp_path):
    (tmp_path / "ref").mkdir()
    (tmp_path / "gen").mkdir()
    short = AudioClip(np.zeros(2400, np.float32), dsp.SAMPLE_RATE)
    write_wav(tmp_path / "ref" / "s.wav", short)
    write_wav(tmp_path / "gen" / "s.wav", short)
    report = metrics.evaluate_pairs(tmp_path / "gen", tmp_path / "ref")
    assert report.records[0]["stoi"] is None and report.warnings
    assert report.warning_status == 1
