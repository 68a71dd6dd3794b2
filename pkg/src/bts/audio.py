"""Cycle extraction, duration standardization and resampling."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from fractions import Fraction
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.io import wavfile
from scipy.signal import firwin, resample_poly

from .errors import EmptySegment, InvalidRate, OutOfBounds
from .icbhi import CycleAnnotation, ManifestEntry

TARGET_RATE = 48_000
TARGET_SECONDS = 8.0
# Each polyphase branch of the interpolation kernel spans this many input samples.
KERNEL_SPAN = 64
KAISER_BETA = 8.0


@dataclass(frozen=True)
class WaveSegment:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.samples.ndim != 1:
            raise ValueError("WaveSegment holds mono audio only")

    @property
    def duration_s(self) -> float:
        return len(self.samples) / self.sample_rate

    def __len__(self):
        return len(self.samples)


@dataclass(frozen=True)
class PrepParams:
    target_s: float = TARGET_SECONDS
    target_rate: int = TARGET_RATE
    pad_mode: str = "cyclic"
    # None means one sample period of the source recording.
    end_tolerance_s: Optional[float] = None

    def fingerprint(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


def _to_float(data: np.ndarray) -> np.ndarray:
    if data.dtype == np.uint8:
        return (data.astype(np.float64) - 128.0) / 128.0
    if np.issubdtype(data.dtype, np.integer):
        return data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    return data.astype(np.float64)


def load_wav(path: str | Path) -> WaveSegment:
    """Decode a PCM wav file to mono float samples in [-1, 1].

    Multi-channel files are averaged down to one channel.
    """
    rate, data = wavfile.read(str(path))
    samples = _to_float(data)
    if samples.ndim == 2:
        samples = samples.mean(axis=1)
    return WaveSegment(np.clip(samples, -1.0, 1.0), int(rate))


def save_wav(path: str | Path, seg: WaveSegment) -> None:
    pcm = np.round(np.clip(seg.samples, -1.0, 1.0) * 32767).astype(np.int16)
    wavfile.write(str(path), seg.sample_rate, pcm)


def extract_cycle(
    recording: WaveSegment,
    ann: CycleAnnotation,
    end_tolerance_s: Optional[float] = None,
) -> WaveSegment:
    """Samples of ``recording`` within ``[ann.start_s, ann.end_s)``.

    An end time past the recording end is clamped when the overshoot is within
    ``end_tolerance_s`` (one sample period by default).
    """
    sr = recording.sample_rate
    n = len(recording)
    start = int(round(ann.start_s * sr))
    end = int(round(ann.end_s * sr))
    if start >= n:
        raise OutOfBounds(f"cycle starts at {ann.start_s}s, recording lasts {recording.duration_s:.4f}s")
    if end > n:
        tol = 1.0 / sr if end_tolerance_s is None else end_tolerance_s
        if ann.end_s - recording.duration_s > tol + 1e-12:
            raise OutOfBounds(f"cycle ends at {ann.end_s}s, recording lasts {recording.duration_s:.4f}s")
        end = n
    return WaveSegment(recording.samples[start:end], sr)


def standardize_duration(seg: WaveSegment, target_s: float = TARGET_SECONDS, pad_mode: str = "cyclic") -> WaveSegment:
    """Truncate to the first ``target_s`` seconds or pad up to it.

    ``pad_mode="cyclic"`` repeats the segment from its start;
    ``pad_mode="zero"`` appends silence.
    """
    n = len(seg)
    if n == 0:
        raise EmptySegment("cannot standardize an empty segment")
    target = int(round(target_s * seg.sample_rate))
    if n >= target:
        return WaveSegment(seg.samples[:target], seg.sample_rate)
    if pad_mode == "cyclic":
        out = np.resize(seg.samples, target)
    elif pad_mode == "zero":
        out = np.concatenate([seg.samples, np.zeros(target - n, dtype=seg.samples.dtype)])
    else:
        raise ValueError(f"unknown pad_mode {pad_mode!r}")
    return WaveSegment(out, seg.sample_rate)


@lru_cache(maxsize=32)
def _kernel(up: int, down: int) -> np.ndarray:
    max_rate = max(up, down)
    half_len = KERNEL_SPAN // 2 * max_rate
    return firwin(2 * half_len + 1, 1.0 / max_rate, window=("kaiser", KAISER_BETA))


def resample(seg: WaveSegment, target_rate: int = TARGET_RATE) -> WaveSegment:
    """Band-limited polyphase resampling with a Kaiser-windowed sinc kernel.

    Output is clamped to the input peak: the sinc kernel rings next to
    discontinuities (segment edges, cyclic-padding seams), and clamping keeps
    that ringing from raising the peak amplitude.
    """
    if seg.sample_rate < 1 or target_rate < 1:
        raise InvalidRate(f"sample rates must be positive: {seg.sample_rate} -> {target_rate}")
    if seg.sample_rate == target_rate:
        return seg
    ratio = Fraction(target_rate, seg.sample_rate)
    up, down = ratio.numerator, ratio.denominator
    out = resample_poly(seg.samples.astype(np.float64), up, down, window=_kernel(up, down), padtype="line")
    n_out = int(round(len(seg) * target_rate / seg.sample_rate))
    if len(out) >= n_out:
        out = out[:n_out]
    else:
        out = np.concatenate([out, np.zeros(n_out - len(out))])
    peak = float(np.abs(seg.samples).max(initial=0.0))
    return WaveSegment(np.clip(out, -peak, peak), target_rate)


def prepare_cycle(recording: WaveSegment, ann: CycleAnnotation, params: PrepParams = PrepParams()) -> WaveSegment:
    """extract -> standardize -> resample; the encoder-ready segment."""
    seg = extract_cycle(recording, ann, params.end_tolerance_s)
    seg = standardize_duration(seg, params.target_s, params.pad_mode)
    return resample(seg, params.target_rate)


class SegmentCache:
    """On-disk store of prepared segments keyed by a content hash.

    The key covers the recording bytes, the annotation row and the
    preprocessing parameters, so any change to one of them misses the cache.
    """

    def __init__(self, root: str | Path, params: PrepParams = PrepParams()):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.params = params
        self._file_hashes: dict[str, str] = {}
        self._recording: tuple[str, WaveSegment] | None = None

    def _file_hash(self, path: str) -> str:
        if path not in self._file_hashes:
            self._file_hashes[path] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        return self._file_hashes[path]

    def key(self, entry: ManifestEntry) -> str:
        a = entry.annotation
        payload = "|".join(
            [
                self._file_hash(entry.audio_path),
                repr((a.start_s, a.end_s, a.crackle, a.wheeze)),
                self.params.fingerprint(),
            ]
        )
        return hashlib.sha256(payload.encode()).hexdigest()

    def _load_recording(self, path: str) -> WaveSegment:
        if self._recording is None or self._recording[0] != path:
            self._recording = (path, load_wav(path))
        return self._recording[1]

    def get(self, entry: ManifestEntry) -> WaveSegment:
        path = self.root / f"{self.key(entry)}.npy"
        if path.is_file():
            return WaveSegment(np.load(path), self.params.target_rate)
        seg = prepare_cycle(self._load_recording(entry.audio_path), entry.annotation, self.params)
        samples = seg.samples.astype(np.float32)
        tmp = path.with_suffix(".tmp.npy")
        np.save(tmp, samples)
        tmp.replace(path)
        return WaveSegment(samples, seg.sample_rate)
