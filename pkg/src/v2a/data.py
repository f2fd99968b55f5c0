"""Audio/feature file formats, manifests, batching and the synthetic A/V generator.

Binary layouts (all little-endian):

* frame tensors: ``b"V2AF"``, then u32 ``version, N, C, H, W``, then ``N*C*H*W`` float32
* feature matrices: ``b"V2AX"``, then u32 ``version, rows, cols``, then ``rows*cols`` float32

Manifests are JSON lines with keys ``id, speaker_id, audio_path, video_path,
split, group``; relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import hashlib
import json
import struct
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
import scipy.io.wavfile
import torch

from . import dsp
from .dsp import AudioClip
from .errors import InvalidArgument, ParseError, UnsupportedFormat
from .models import IDENTITY_DIMS, SAMPLES_PER_FRAME, VIDEO_FPS, pseudo_embedding

FORMAT_VERSION = 1
FRAME_MAGIC = b"V2AF"
FEATURE_MAGIC = b"V2AX"
SPLITS = ("train", "val", "test")
GROUPS = ("clean", "noisy")
MAX_SECONDS = 3.0
CROP_SAMPLES = dsp.SAMPLE_RATE

# ---------------------------------------------------------------- wav


def read_wav(path) -> AudioClip:
    """Mono PCM16 or float32 WAV. Stereo files keep the first channel."""
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(12)
    if len(head) < 12 or head[:4] != b"RIFF" or head[8:12] != b"WAVE":
        raise ParseError(f"{path}: not a RIFF/WAVE file")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", scipy.io.wavfile.WavFileWarning)
            rate, data = scipy.io.wavfile.read(path)
    except ValueError as exc:
        msg = str(exc).lower()
        if "format" in msg or "not supported" in msg or "unsupported" in msg:
            raise UnsupportedFormat(f"{path}: {exc}") from exc
        raise ParseError(f"{path}: {exc}") from exc
    if data.ndim == 2:
        warnings.warn(f"{path}: {data.shape[1]} channels, using the first", stacklevel=2)
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float32) / 32768.0
    elif data.dtype == np.float32:
        samples = data
    else:
        raise UnsupportedFormat(f"{path}: sample type {data.dtype} (need PCM16 or float32)")
    if samples.size == 0:
        raise ParseError(f"{path}: no samples")
    return AudioClip(np.ascontiguousarray(samples), int(rate))


def write_wav(path, audio: AudioClip):
    """Write 32-bit float mono."""
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    scipy.io.wavfile.write(path, audio.sample_rate, np.asarray(audio.samples, dtype="<f4"))


# ---------------------------------------------------------------- tensor files


def _write_blob(path, magic, dims, values):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(magic + struct.pack(f"<{1 + len(dims)}I", FORMAT_VERSION, *dims))
        fh.write(values.tobytes())


def _read_blob(path, magic, n_dims):
    raw = Path(path).read_bytes()
    head = 4 + 4 * (1 + n_dims)
    if len(raw) < head or raw[:4] != magic:
        raise ParseError(f"{path}: bad magic or truncated header")
    version, *dims = struct.unpack(f"<{1 + n_dims}I", raw[4:head])
    if version != FORMAT_VERSION:
        raise UnsupportedFormat(f"{path}: format version {version}")
    count = int(np.prod(dims))
    if len(raw) != head + 4 * count:
        raise ParseError(f"{path}: payload has {len(raw) - head} bytes, header implies {4 * count}")
    return np.frombuffer(raw, dtype="<f4", offset=head).reshape(dims).astype(np.float32)


def write_frames(path, frames: np.ndarray):
    frames = np.asarray(frames)
    if frames.ndim != 4:
        raise InvalidArgument(f"frames must be [N, C, H, W], got shape {frames.shape}")
    _write_blob(path, FRAME_MAGIC, frames.shape, frames)


def read_frames(path) -> np.ndarray:
    return _read_blob(path, FRAME_MAGIC, 4)


def write_features(path, matrix: np.ndarray):
    matrix = np.asarray(matrix)
    if matrix.ndim != 2:
        raise InvalidArgument(f"feature matrix must be 2-D, got shape {matrix.shape}")
    _write_blob(path, FEATURE_MAGIC, matrix.shape, matrix)


def read_features(path) -> np.ndarray:
    return _read_blob(path, FEATURE_MAGIC, 2)


# ---------------------------------------------------------------- manifest


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    speaker_id: str
    audio_path: str
    video_path: str | None = None
    split: str = "train"
    group: str = "clean"

    def __post_init__(self):
        if not self.id:
            raise InvalidArgument("manifest entry needs an id")
        if not self.audio_path:
            raise InvalidArgument(f"entry {self.id}: audio_path is required")
        if self.split not in SPLITS:
            raise InvalidArgument(f"entry {self.id}: split must be one of {SPLITS}")
        if self.group not in GROUPS:
            raise InvalidArgument(f"entry {self.id}: group must be one of {GROUPS}")


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry]
    root: Path = field(default_factory=Path)

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise InvalidArgument(f"duplicate manifest ids: {dup[:5]}")

    def resolve(self, rel: str | None) -> Path | None:
        return None if rel is None else (self.root / rel)

    def check_paths(self):
        for e in self.entries:
            for rel in (e.audio_path, e.video_path):
                if rel is not None and not self.resolve(rel).exists():
                    raise InvalidArgument(f"entry {e.id}: missing file {self.resolve(rel)}")

    def select(self, split=None, group=None) -> "DatasetManifest":
        keep = [e for e in self.entries
                if (split is None or e.split == split) and (group is None or e.group == group)]
        return DatasetManifest(keep, self.root)

    def save(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            for e in self.entries:
                fh.write(json.dumps(asdict(e), sort_keys=False) + "\n")

    @classmethod
    def load(cls, path, check_paths: bool = True) -> "DatasetManifest":
        path = Path(path)
        if not path.is_file():
            raise InvalidArgument(f"manifest not found: {path}")
        entries = []
        for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                entries.append(ManifestEntry(**record))
            except (json.JSONDecodeError, TypeError) as exc:
                raise ParseError(f"{path}:{lineno}: {exc}") from exc
        manifest = cls(entries, path.parent)
        if check_paths:
            manifest.check_paths()
        return manifest


# ---------------------------------------------------------------- synthetic pairs

SEGMENT_SECONDS = 0.2
FRAMES_PER_SEGMENT = int(round(SEGMENT_SECONDS * VIDEO_FPS))  # 5
LEVELS = 16  # quantization of frequency and amplitude indices
F_LOW, F_HIGH = 150.0, 4000.0
N_HARMONICS = 3
PEAK = 0.8


@dataclass(frozen=True)
class SyntheticPairSpec:
    seed: int = 0
    duration_s: float = 1.0
    n_sinusoids: int = 4
    frame_size: tuple = (32, 32)
    speaker_id: str = "spk0"

    def __post_init__(self):
        segments = self.duration_s / SEGMENT_SECONDS
        if self.duration_s <= 0 or abs(segments - round(segments)) > 1e-9:
            raise InvalidArgument("duration must be a positive multiple of 0.2 s")
        h, w = self.frame_size
        if h < 16 or w < 16:
            raise InvalidArgument("frames must be at least 16x16")
        if not 1 <= self.n_sinusoids <= w:
            raise InvalidArgument("need 1 <= n_sinusoids <= frame width")

    @property
    def n_segments(self):
        return int(round(self.duration_s / SEGMENT_SECONDS))

    @property
    def n_frames(self):
        return self.n_segments * FRAMES_PER_SEGMENT


def frequency_grid() -> np.ndarray:
    return F_LOW * (F_HIGH / F_LOW) ** (np.arange(LEVELS) / (LEVELS - 1))


def speaker_timbre(speaker_id) -> np.ndarray:
    """Harmonic weights (summing to 1) keyed by speaker."""
    digest = hashlib.sha256(f"timbre:{speaker_id}".encode()).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    w = np.concatenate([[1.0], rng.uniform(0.05, 0.6, N_HARMONICS - 1)])
    return w / w.sum()


def draw_parameters(spec: SyntheticPairSpec):
    """Per-segment ``(freq_idx, amp_idx)``, each ``[segments, n_sinusoids]``."""
    rng = np.random.default_rng(spec.seed)
    freq = rng.integers(0, LEVELS, size=(spec.n_segments, spec.n_sinusoids))
    amp = rng.integers(0, LEVELS, size=(spec.n_segments, spec.n_sinusoids))
    return freq, amp


def render_audio(freq_idx, amp_idx, speaker_id) -> np.ndarray:
    """Sum of harmonic sinusoids with phase carried across segment boundaries."""
    freq_idx, amp_idx = np.asarray(freq_idx), np.asarray(amp_idx)
    seg_len = int(round(SEGMENT_SECONDS * dsp.SAMPLE_RATE))
    n_seg, n_sin = freq_idx.shape
    f0 = frequency_grid()[freq_idx]  # [seg, n]
    amp = PEAK * (amp_idx + 1) / (LEVELS * n_sin)
    timbre = speaker_timbre(speaker_id)
    # instantaneous phase, sample-accurate and continuous
    omega = np.repeat(2 * np.pi * f0 / dsp.SAMPLE_RATE, seg_len, axis=0)  # [L, n]
    phase = np.cumsum(omega, axis=0) - omega[0]
    amp_t = np.repeat(amp, seg_len, axis=0)
    out = np.zeros(n_seg * seg_len)
    nyquist = dsp.SAMPLE_RATE / 2
    for h, weight in enumerate(timbre, start=1):
        alive = np.repeat(h * f0 < 0.9 * nyquist, seg_len, axis=0)
        out += np.sum(np.where(alive, weight * amp_t * np.sin(h * phase), 0.0), axis=1)
    return out.astype(np.float32)


def render_frames(freq_idx, amp_idx, frame_size) -> np.ndarray:
    """Column blocks per sinusoid; channel 0 = frequency level, 1 = amplitude level."""
    freq_idx, amp_idx = np.asarray(freq_idx), np.asarray(amp_idx)
    n_seg, n_sin = freq_idx.shape
    h, w = frame_size
    block = w // n_sin
    frames = np.zeros((n_seg * FRAMES_PER_SEGMENT, 3, h, w), dtype=np.float32)
    scale = np.float32(LEVELS - 1)
    for k in range(n_sin):
        cols = slice(k * block, (k + 1) * block)
        f = np.repeat(freq_idx[:, k].astype(np.float32) / scale, FRAMES_PER_SEGMENT)
        a = np.repeat(amp_idx[:, k].astype(np.float32) / scale, FRAMES_PER_SEGMENT)
        frames[:, 0, :, cols] = f[:, None, None]
        frames[:, 1, :, cols] = a[:, None, None]
        frames[:, 2, :, cols] = 0.5
    return frames


def decode_frames(frames: np.ndarray, n_sinusoids: int):
    """Invert :func:`render_frames`: per-segment ``(freq_idx, amp_idx)``."""
    frames = np.asarray(frames)
    block = frames.shape[-1] // n_sinusoids
    centres = [k * block + block // 2 for k in range(n_sinusoids)]
    first = frames[::FRAMES_PER_SEGMENT]
    freq = np.rint(first[:, 0, frames.shape[2] // 2, centres] * (LEVELS - 1)).astype(np.int64)
    amp = np.rint(first[:, 1, frames.shape[2] // 2, centres] * (LEVELS - 1)).astype(np.int64)
    return freq, amp


def synth_pair(spec: SyntheticPairSpec):
    """Seeded ``(frames [N, 3, H, W], AudioClip)`` pair at 25 fps / 24 kHz.

    Frames depend on the seed only; the speaker changes the harmonic timbre.
    """
    freq, amp = draw_parameters(spec)
    audio = render_audio(freq, amp, spec.speaker_id)
    frames = render_frames(freq, amp, spec.frame_size)
    return frames, AudioClip(audio, dsp.SAMPLE_RATE)


def add_noise(audio: AudioClip, snr_db: float, seed: int) -> AudioClip:
    """White noise at ``snr_db`` relative to the clip's power."""
    rng = np.random.default_rng(seed)
    x = audio.samples.astype(np.float64)
    noise = rng.standard_normal(len(x))
    gain = np.sqrt(np.mean(x ** 2) / (np.mean(noise ** 2) * 10 ** (snr_db / 10)))
    return AudioClip((x + gain * noise).astype(np.float32), audio.sample_rate)


# ---------------------------------------------------------------- in-memory samples


@dataclass
class Sample:
    id: str
    speaker_id: str
    audio: np.ndarray
    frames: np.ndarray | None = None
    group: str = "clean"
    split: str = "train"
    mel: np.ndarray | None = field(default=None, repr=False)  # cached full-clip log-mel

    def log_mel(self) -> np.ndarray:
        if self.mel is None:
            self.mel = dsp.log_mel_spectrogram(AudioClip(self.audio, dsp.SAMPLE_RATE)).values
        return self.mel


def synthetic_corpus(n_clips: int, duration_s: float = 1.0, seed: int = 0, n_speakers: int = 2,
                     noisy: bool = False, split: str = "train", n_sinusoids: int = 4,
                     frame_size=(32, 32), with_frames: bool = True) -> list[Sample]:
    """``n_clips`` seeded pairs; the noisy group adds white noise at 5-20 dB SNR."""
    group = "noisy" if noisy else "clean"
    rng = np.random.default_rng([seed, SPLITS.index(split), GROUPS.index(group)])
    clip_seeds = rng.integers(0, 2 ** 31, size=n_clips)
    samples = []
    for i, clip_seed in enumerate(clip_seeds):
        speaker = f"spk{i % n_speakers}"
        spec = SyntheticPairSpec(int(clip_seed), duration_s, n_sinusoids, tuple(frame_size), speaker)
        frames, audio = synth_pair(spec)
        if noisy:
            audio = add_noise(audio, float(rng.uniform(5.0, 20.0)), int(clip_seed) + 1)
        samples.append(Sample(f"{split}-{group}-{i:05d}", speaker, audio.samples,
                              frames if with_frames else None, group, split))
    return samples


def materialize(samples: Sequence[Sample], out_dir) -> Path:
    """Write wav/frame files plus ``manifest.jsonl`` under ``out_dir``."""
    out_dir = Path(out_dir)
    entries = []
    for s in samples:
        audio_rel = f"audio/{s.id}.wav"
        write_wav(out_dir / audio_rel, AudioClip(s.audio, dsp.SAMPLE_RATE))
        video_rel = None
        if s.frames is not None:
            video_rel = f"frames/{s.id}.v2af"
            write_frames(out_dir / video_rel, s.frames)
        entries.append(ManifestEntry(s.id, s.speaker_id, audio_rel, video_rel, s.split, s.group))
    manifest_path = out_dir / "manifest.jsonl"
    DatasetManifest(entries, out_dir).save(manifest_path)
    return manifest_path


def load_samples(manifest: DatasetManifest, split=None, group=None, need_video=False) -> list[Sample]:
    samples = []
    for e in manifest.select(split, group).entries:
        clip = read_wav(manifest.resolve(e.audio_path))
        if clip.sample_rate != dsp.SAMPLE_RATE:
            clip = dsp.resample(clip, dsp.SAMPLE_RATE)
        frames = read_frames(manifest.resolve(e.video_path)) if e.video_path else None
        if need_video and frames is None:
            raise InvalidArgument(f"entry {e.id} has no video frames")
        samples.append(Sample(e.id, e.speaker_id, clip.samples, frames, e.group, e.split))
    return samples


# ---------------------------------------------------------------- batching


@dataclass
class Batch:
    ids: list
    speaker_ids: list
    audio: torch.Tensor  # [B, 960 N]
    audio_mask: torch.Tensor  # [B, 960 N] bool
    frames: torch.Tensor | None = None  # [B, N, C, H, W]
    frame_mask: torch.Tensor | None = None  # [B, N]
    mel: torch.Tensor | None = None  # [B, T, 80]
    mel_mask: torch.Tensor | None = None  # [B, T]
    identity: torch.Tensor | None = None  # [B, dim]

    @property
    def size(self):
        return self.audio.shape[0]

    @property
    def audio_lengths(self):
        return self.audio_mask.sum(dim=1)


def mel_target_frames(n_video_frames: int) -> int:
    """Mel rows produced from N video frames: round(3.2 N)."""
    return (2 * n_video_frames * dsp.MEL_FRAME_RATE + VIDEO_FPS) // (2 * VIDEO_FPS)


def collate(samples: Sequence[Sample], max_seconds: float = MAX_SECONDS, identity_kind: str = "none",
            with_mel: bool = True, with_frames: bool | None = None) -> Batch:
    """Truncate to ``max_seconds`` (whole video frames), right-pad to the longest, build masks."""
    if len(samples) == 0:
        raise InvalidArgument("cannot collate an empty sample list")
    if identity_kind not in IDENTITY_DIMS:
        raise InvalidArgument(f"unknown identity kind {identity_kind!r}")
    if with_frames is None:
        with_frames = all(s.frames is not None for s in samples)
    max_frames = int(round(max_seconds * VIDEO_FPS))
    n_frames = []
    for s in samples:
        n = -(-len(s.audio) // SAMPLES_PER_FRAME)
        if with_frames:
            if s.frames is None:
                raise InvalidArgument(f"sample {s.id} has no frames")
            n = len(s.frames)
        n_frames.append(min(n, max_frames))
    n_max = max(n_frames)
    b = len(samples)
    audio = torch.zeros(b, n_max * SAMPLES_PER_FRAME)
    audio_mask = torch.zeros(b, n_max * SAMPLES_PER_FRAME, dtype=torch.bool)
    batch = Batch([s.id for s in samples], [s.speaker_id for s in samples], audio, audio_mask)
    for i, (s, n) in enumerate(zip(samples, n_frames)):
        clip = np.asarray(s.audio, dtype=np.float32)[: n * SAMPLES_PER_FRAME]
        audio[i, : len(clip)] = torch.from_numpy(clip)
        audio_mask[i, : len(clip)] = True
    if with_frames:
        shape = samples[0].frames.shape[1:]
        batch.frames = torch.zeros(b, n_max, *shape)
        batch.frame_mask = torch.zeros(b, n_max, dtype=torch.bool)
        for i, (s, n) in enumerate(zip(samples, n_frames)):
            if s.frames.shape[1:] != shape:
                raise InvalidArgument("all samples in a batch need the same frame shape")
            batch.frames[i, :n] = torch.from_numpy(np.asarray(s.frames[:n], dtype=np.float32))
            batch.frame_mask[i, :n] = True
    if with_mel:
        t_max = mel_target_frames(n_max)
        batch.mel = torch.full((b, t_max, dsp.N_MELS), -1.0)
        batch.mel_mask = torch.zeros(b, t_max, dtype=torch.bool)
        for i, s in enumerate(samples):
            length = int(audio_mask[i].sum())
            if length == len(s.audio):
                mel = s.log_mel()
            else:  # truncated or padded clip: analyse exactly what the batch holds
                mel = dsp.log_mel_spectrogram(AudioClip(audio[i, :length].numpy(), dsp.SAMPLE_RATE)).values
            rows = min(len(mel), t_max)
            batch.mel[i, :rows] = torch.from_numpy(mel[:rows])
            batch.mel_mask[i, :rows] = True
    if identity_kind != "none":
        batch.identity = torch.stack([torch.from_numpy(pseudo_embedding(identity_kind, s.speaker_id).vector)
                                      for s in samples])
    return batch


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    """Sample order for one epoch, a pure function of ``(seed, epoch)``."""
    return np.random.default_rng([seed, epoch]).permutation(n)


def iterate_batches(samples: Sequence[Sample], batch_size: int, seed: int, epoch: int,
                    shuffle: bool = True, **collate_kwargs) -> Iterator[Batch]:
    if batch_size < 1:
        raise InvalidArgument("batch size must be >= 1")
    order = epoch_order(len(samples), seed, epoch) if shuffle else np.arange(len(samples))
    for start in range(0, len(order), batch_size):
        yield collate([samples[i] for i in order[start:start + batch_size]], **collate_kwargs)


# ---------------------------------------------------------------- augmentation


def horizontal_flip_augment(frames, probability: float = 0.5, rng: np.random.Generator | None = None):
    """Flip the whole clip along width with ``probability`` (one draw per clip)."""
    if not 0.0 <= probability <= 1.0:
        raise InvalidArgument("probability must be in [0, 1]")
    rng = rng if rng is not None else np.random.default_rng()
    if rng.random() >= probability:
        return frames
    if torch.is_tensor(frames):
        return torch.flip(frames, dims=(-1,))
    return np.ascontiguousarray(np.flip(frames, axis=-1))


def _crop_offsets(lengths, rng):
    return [int(rng.integers(0, max(0, n - CROP_SAMPLES) + 1)) for n in lengths]


def random_1s_crop(real, fake, rng: np.random.Generator, lengths=None):
    """Aligned random 24000-sample windows of ``real`` and ``fake``.

    Accepts AudioClips, 1-D arrays or ``[B, L]`` tensors. ``lengths`` limits
    each row's window to its unpadded payload. Short inputs are zero-padded.
    """
    if isinstance(real, AudioClip) or isinstance(fake, AudioClip):
        r = real.samples if isinstance(real, AudioClip) else np.asarray(real)
        f = fake.samples if isinstance(fake, AudioClip) else np.asarray(fake)
        if len(r) != len(f):
            raise InvalidArgument(f"length mismatch: {len(r)} vs {len(f)}")
        rc, fc = random_1s_crop(torch.from_numpy(r)[None], torch.from_numpy(f)[None], rng)
        return AudioClip(rc[0].numpy(), real.sample_rate if isinstance(real, AudioClip) else dsp.SAMPLE_RATE), \
            AudioClip(fc[0].detach().numpy(), dsp.SAMPLE_RATE)
    if not torch.is_tensor(real):
        real = torch.as_tensor(np.asarray(real))
    if not torch.is_tensor(fake):
        fake = torch.as_tensor(np.asarray(fake))
    squeeze = real.dim() == 1
    if squeeze:
        real, fake = real[None], fake[None]
    if real.shape != fake.shape:
        raise InvalidArgument(f"shape mismatch: {tuple(real.shape)} vs {tuple(fake.shape)}")
    if lengths is None:
        lengths = [real.shape[1]] * real.shape[0]
    lengths = [int(n) for n in lengths]
    offsets = _crop_offsets(lengths, rng)
    out_r, out_f = [], []
    for i, (off, n) in enumerate(zip(offsets, lengths)):
        end = min(off + CROP_SAMPLES, n)
        pad = CROP_SAMPLES - (end - off)
        out_r.append(torch.nn.functional.pad(real[i, off:end], (0, pad)))
        out_f.append(torch.nn.functional.pad(fake[i, off:end], (0, pad)))
    real_c, fake_c = torch.stack(out_r), torch.stack(out_f)
    return (real_c[0], fake_c[0]) if squeeze else (real_c, fake_c)
