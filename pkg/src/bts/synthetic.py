"""Synthetic ICBHI-shaped data for tests and offline demos.

``python -m bts.synthetic OUT_DIR`` writes a small dataset tree (wav files,
annotations, demographics, split list) that ``bts prepare`` accepts.
"""

from __future__ import annotations

import argparse
import itertools
from pathlib import Path

import numpy as np

from .audio import WaveSegment, save_wav
from .icbhi import (
    AcquisitionMode,
    AgeGroup,
    Device,
    LOCATION_CODES,
    FilenameInfo,
    Label,
    Location,
    RecordingMeta,
    Sex,
    Split,
    render_filename,
)
from .model import SEGMENT_SAMPLES
from .train import Samples

# One tone per class; a stub encoder can separate them from the spectrum.
CLASS_TONES_HZ = {Label.NORMAL: 150.0, Label.CRACKLE: 600.0, Label.WHEEZE: 1200.0, Label.BOTH: 2400.0}


def tone(freq: float, seconds: float, rate: int, rng: np.random.Generator, amp: float = 0.5, noise: float = 0.05) -> np.ndarray:
    t = np.arange(int(round(seconds * rate))) / rate
    x = amp * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    return x + noise * rng.standard_normal(len(t))


def random_meta(rng: np.random.Generator, patient_id: int, split: Split = Split.TRAIN) -> RecordingMeta:
    return RecordingMeta(
        patient_id=patient_id,
        recording_index="1b1",
        location=list(Location)[rng.integers(len(Location))],
        acquisition_mode=AcquisitionMode.SINGLE_CHANNEL,
        device=list(Device)[rng.integers(len(Device))],
        age_group=list(AgeGroup)[rng.integers(2)],
        sex=list(Sex)[rng.integers(2)],
        bmi=float(np.round(rng.uniform(15, 35), 2)),
        split=split,
    )


def synthetic_samples(n: int, seed: int = 0, split: Split = Split.TRAIN) -> Samples:
    """``n`` encoder-ready 8 s / 48 kHz cycles with balanced labels."""
    rng = np.random.default_rng(seed)
    labels = np.array([i % len(Label) for i in range(n)], dtype=np.int64)
    rng.shuffle(labels)
    waves = [tone(CLASS_TONES_HZ[Label(y)], SEGMENT_SAMPLES / 48_000, 48_000, rng).astype(np.float32) for y in labels]
    metas = [random_meta(rng, 100 + i, split) for i in range(n)]
    return Samples([f"synthetic-{i}" for i in range(n)], metas, labels, waves)


def write_icbhi_tree(root: str | Path, n_patients: int = 8, cycles_per_recording: int = 4, rate: int = 4000, seed: int = 0) -> Path:
    """Write a miniature dataset; returns the split-list path.

    Patients alternate between train and test; labels cycle through all four
    classes so both splits contain every class.
    """
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    locs = itertools.cycle(LOCATION_CODES)
    devices = itertools.cycle(list(Device))
    demo_rows, split_rows = [], []
    for k in range(n_patients):
        pid = 101 + k
        split = Split.TRAIN if k % 2 == 0 else Split.TEST
        code = next(locs)
        info = FilenameInfo(pid, "1b1", LOCATION_CODES[code], AcquisitionMode.SINGLE_CHANNEL, next(devices))
        stem = render_filename(info)
        pieces, ann_rows, t = [], [], 0.0
        for c in range(cycles_per_recording):
            label = Label((k + c) % len(Label))
            dur = float(np.round(rng.uniform(1.0, 3.0), 3))
            pieces.append(tone(CLASS_TONES_HZ[label], dur, rate, rng))
            crackle, wheeze = label.to_flags()
            ann_rows.append(f"{t:.3f}\t{t + dur:.3f}\t{int(crackle)}\t{int(wheeze)}")
            t += dur
        save_wav(root / f"{stem}.wav", WaveSegment(np.clip(np.concatenate(pieces), -1, 1), rate))
        (root / f"{stem}.txt").write_text("\n".join(ann_rows) + "\n")
        if k % 3 == 0:
            demo_rows.append(f"{pid}\t{rng.integers(2, 18)}\t{'MF'[k % 2]}\tNA\t{rng.integers(12, 40)}\t{rng.integers(90, 160)}")
        else:
            demo_rows.append(f"{pid}\t{rng.integers(19, 90)}\t{'MF'[k % 2]}\t{rng.uniform(17, 35):.2f}\tNA\tNA")
        split_rows.append(f"{stem}\t{split.value}")
    (root / "demographic_info.txt").write_text("\n".join(demo_rows) + "\n")
    split_path = root / "ICBHI_challenge_train_test.txt"
    split_path.write_text("\n".join(split_rows) + "\n")
    return split_path


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--patients", type=int, default=8)
    ap.add_argument("--cycles", type=int, default=4)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    split = write_icbhi_tree(args.out_dir, args.patients, args.cycles, seed=args.seed)
    print(f"wrote synthetic dataset to {args.out_dir} (split list {split})")


if __name__ == "__main__":
    main()
