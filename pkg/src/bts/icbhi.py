"""Parsing of the ICBHI respiratory sound database into a cycle manifest.

Expected layout under ``data_root``::

    <patient>_<index>_<loc>_<mode>_<device>.wav
    <patient>_<index>_<loc>_<mode>_<device>.txt     # cycle annotations
    <demographics file>                             # one row per patient

plus an official split list of ``<recording_stem>\t<train|test>`` lines.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Iterable, Optional

from .errors import (
    DuplicatePatient,
    InvalidAge,
    MalformedFilename,
    MalformedRow,
    MissingAnnotation,
    MissingDemographics,
    NonMonotoneInterval,
    SplitMismatch,
    UnknownCode,
    UnparsableRow,
)


class Label(IntEnum):
    NORMAL = 0
    CRACKLE = 1
    WHEEZE = 2
    BOTH = 3

    @classmethod
    def from_flags(cls, crackle: bool, wheeze: bool) -> "Label":
        return cls(int(crackle) + 2 * int(wheeze))

    def to_flags(self) -> tuple[bool, bool]:
        return bool(self.value & 1), bool(self.value & 2)

    @property
    def title(self) -> str:
        return self.name.capitalize()


class Location(str, Enum):
    TRACHEA = "Trachea"
    LEFT_ANTERIOR = "LeftAnterior"
    RIGHT_ANTERIOR = "RightAnterior"
    LEFT_POSTERIOR = "LeftPosterior"
    RIGHT_POSTERIOR = "RightPosterior"
    LEFT_LATERAL = "LeftLateral"
    RIGHT_LATERAL = "RightLateral"


class AcquisitionMode(str, Enum):
    SINGLE_CHANNEL = "single_channel"
    MULTI_CHANNEL = "multi_channel"


class Device(str, Enum):
    MEDITRON = "Meditron"
    LITTC2SE = "LittC2SE"
    LITT3200 = "Litt3200"
    AKGC417L = "AKGC417L"


class AgeGroup(str, Enum):
    ADULT = "Adult"
    PEDIATRIC = "Pediatric"


class Sex(str, Enum):
    MALE = "Male"
    FEMALE = "Female"


class Split(str, Enum):
    TRAIN = "train"
    TEST = "test"


LOCATION_CODES = {
    "Tc": Location.TRACHEA,
    "Al": Location.LEFT_ANTERIOR,
    "Ar": Location.RIGHT_ANTERIOR,
    "Pl": Location.LEFT_POSTERIOR,
    "Pr": Location.RIGHT_POSTERIOR,
    "Ll": Location.LEFT_LATERAL,
    "Lr": Location.RIGHT_LATERAL,
}
MODE_CODES = {"sc": AcquisitionMode.SINGLE_CHANNEL, "mc": AcquisitionMode.MULTI_CHANNEL}
DEVICE_CODES = {d.value: d for d in Device}
SEX_CODES = {"M": Sex.MALE, "F": Sex.FEMALE}
NA_TOKENS = frozenset({"NA", "", "-"})

DEMOGRAPHICS_FILENAMES = (
    "ICBHI_Challenge_demographic_information.txt",
    "demographic_info.txt",
)

# Per-split per-class cycle counts of the official release.
OFFICIAL_COUNTS = {
    Split.TRAIN: {Label.NORMAL: 2063, Label.CRACKLE: 1215, Label.WHEEZE: 501, Label.BOTH: 363},
    Split.TEST: {Label.NORMAL: 1579, Label.CRACKLE: 649, Label.WHEEZE: 385, Label.BOTH: 143},
}


@dataclass(frozen=True)
class FilenameInfo:
    patient_id: int
    recording_index: str
    location: Location
    acquisition_mode: AcquisitionMode
    device: Device


@dataclass(frozen=True)
class RecordingMeta:
    patient_id: int
    recording_index: str
    location: Location
    acquisition_mode: AcquisitionMode
    device: Device
    age_group: AgeGroup
    sex: Sex
    bmi: Optional[float]
    split: Split

    def __post_init__(self):
        if self.bmi is not None and not (math.isfinite(self.bmi) and self.bmi > 0):
            raise ValueError(f"bmi must be positive and finite, got {self.bmi}")

    @property
    def stem(self) -> str:
        return render_filename(
            FilenameInfo(
                self.patient_id,
                self.recording_index,
                self.location,
                self.acquisition_mode,
                self.device,
            )
        )


@dataclass(frozen=True)
class CycleAnnotation:
    start_s: float
    end_s: float
    crackle: bool
    wheeze: bool

    @property
    def label(self) -> Label:
        return Label.from_flags(self.crackle, self.wheeze)


@dataclass(frozen=True)
class Demographics:
    age_years: Optional[float]
    sex: Optional[Sex]
    adult_bmi: Optional[float] = None
    child_weight_kg: Optional[float] = None
    child_height_cm: Optional[float] = None


@dataclass(frozen=True)
class ManifestEntry:
    audio_path: str
    annotation: CycleAnnotation
    meta: RecordingMeta

    @property
    def label(self) -> Label:
        return self.annotation.label

    @property
    def sample_id(self) -> str:
        return f"{Path(self.audio_path).stem}@{self.annotation.start_s:.3f}-{self.annotation.end_s:.3f}"

    def to_record(self) -> dict:
        meta = asdict(self.meta)
        for k, v in meta.items():
            if isinstance(v, Enum):
                meta[k] = v.value
        return {
            "audio_path": self.audio_path,
            "start_s": self.annotation.start_s,
            "end_s": self.annotation.end_s,
            "crackle": self.annotation.crackle,
            "wheeze": self.annotation.wheeze,
            "label": self.label.name.lower(),
            **meta,
        }

    @classmethod
    def from_record(cls, rec: dict) -> "ManifestEntry":
        ann = CycleAnnotation(float(rec["start_s"]), float(rec["end_s"]), bool(rec["crackle"]), bool(rec["wheeze"]))
        meta = RecordingMeta(
            patient_id=int(rec["patient_id"]),
            recording_index=str(rec["recording_index"]),
            location=Location(rec["location"]),
            acquisition_mode=AcquisitionMode(rec["acquisition_mode"]),
            device=Device(rec["device"]),
            age_group=AgeGroup(rec["age_group"]),
            sex=Sex(rec["sex"]),
            bmi=None if rec.get("bmi") is None else float(rec["bmi"]),
            split=Split(rec["split"]),
        )
        return cls(str(rec["audio_path"]), ann, meta)


@dataclass
class Manifest:
    entries: list[ManifestEntry] = field(default_factory=list)

    def __len__(self):
        return len(self.entries)

    @property
    def counts(self) -> dict[Split, dict[Label, int]]:
        tally = Counter((e.meta.split, e.label) for e in self.entries)
        return {s: {lab: tally[(s, lab)] for lab in Label} for s in Split}

    def split(self, which: Split | str) -> "Manifest":
        which = Split(which)
        return Manifest([e for e in self.entries if e.meta.split is which])

    def patient_overlap(self) -> set[int]:
        train = {e.meta.patient_id for e in self.entries if e.meta.split is Split.TRAIN}
        test = {e.meta.patient_id for e in self.entries if e.meta.split is Split.TEST}
        return train & test

    def matches_official_counts(self) -> bool:
        return self.counts == OFFICIAL_COUNTS

    def count_summary(self) -> str:
        c = self.counts
        parts = []
        for s in Split:
            per = ", ".join(f"{lab.title} {c[s][lab]}" for lab in Label)
            parts.append(f"{s.value}: {sum(c[s].values())} ({per})")
        return "; ".join(parts)

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            for e in self.entries:
                fh.write(json.dumps(e.to_record(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "Manifest":
        with open(path) as fh:
            return cls([ManifestEntry.from_record(json.loads(line)) for line in fh if line.strip()])


def parse_filename(name: str) -> FilenameInfo:
    """Parse ``<patient>_<index>_<loc>_<mode>_<device>[.wav|.txt]``."""
    stem = Path(name).name
    if "." in stem:
        stem = stem.rsplit(".", 1)[0]
    fields = stem.split("_")
    if len(fields) != 5:
        raise MalformedFilename(f"{name!r}: expected 5 underscore-delimited fields, got {len(fields)}")
    pid, index, loc, mode, device = fields
    if not pid.isdigit():
        raise MalformedFilename(f"{name!r}: patient id {pid!r} is not an integer")
    if not index:
        raise MalformedFilename(f"{name!r}: empty recording index")
    try:
        location = LOCATION_CODES[loc]
    except KeyError:
        raise UnknownCode(f"{name!r}: unknown chest location code {loc!r}") from None
    try:
        acq = MODE_CODES[mode]
    except KeyError:
        raise UnknownCode(f"{name!r}: unknown acquisition mode {mode!r}") from None
    try:
        dev = DEVICE_CODES[device]
    except KeyError:
        raise UnknownCode(f"{name!r}: unknown recording device {device!r}") from None
    return FilenameInfo(int(pid), index, location, acq, dev)


_LOCATION_TO_CODE = {v: k for k, v in LOCATION_CODES.items()}
_MODE_TO_CODE = {v: k for k, v in MODE_CODES.items()}


def render_filename(info: FilenameInfo) -> str:
    return "_".join(
        [
            str(info.patient_id),
            info.recording_index,
            _LOCATION_TO_CODE[info.location],
            _MODE_TO_CODE[info.acquisition_mode],
            info.device.value,
        ]
    )


def parse_annotation(text: str) -> list[CycleAnnotation]:
    cycles = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        cols = line.split()
        if len(cols) != 4:
            raise MalformedRow(f"line {lineno}: expected 4 columns, got {len(cols)}: {line!r}")
        try:
            start, end = float(cols[0]), float(cols[1])
            crackle, wheeze = int(cols[2]), int(cols[3])
        except ValueError:
            raise MalformedRow(f"line {lineno}: non-numeric column in {line!r}") from None
        if crackle not in (0, 1) or wheeze not in (0, 1):
            raise MalformedRow(f"line {lineno}: flags must be 0 or 1: {line!r}")
        if not (math.isfinite(start) and math.isfinite(end)) or start < 0:
            raise MalformedRow(f"line {lineno}: invalid interval {line!r}")
        if end <= start:
            raise NonMonotoneInterval(f"line {lineno}: end {end} <= start {start}")
        cycles.append(CycleAnnotation(start, end, bool(crackle), bool(wheeze)))
    return cycles


def _optional_float(token: str, row: str) -> Optional[float]:
    if token in NA_TOKENS:
        return None
    try:
        value = float(token)
    except ValueError:
        raise UnparsableRow(f"cannot parse {token!r} as a number in row {row!r}") from None
    if not math.isfinite(value):
        raise UnparsableRow(f"non-finite value {token!r} in row {row!r}")
    return value


def parse_demographics(text: str) -> dict[int, Demographics]:
    """Parse the per-patient demographics table.

    Columns are patient id, age, sex, adult BMI, child weight (kg) and child
    height (cm). Tab-separated rows may carry empty cells; otherwise any
    whitespace separates columns. Missing trailing columns read as NA.
    """
    out: dict[int, Demographics] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        cols = [c.strip() for c in line.rstrip("\r\n").split("\t")] if "\t" in line else line.split()
        if len(cols) < 2 or len(cols) > 6:
            raise UnparsableRow(f"expected 2-6 columns, got {len(cols)}: {line!r}")
        cols += ["NA"] * (6 - len(cols))
        try:
            pid = int(cols[0])
        except ValueError:
            raise UnparsableRow(f"bad patient id in row {line!r}") from None
        if pid in out:
            raise DuplicatePatient(f"patient {pid} appears more than once")
        sex_token = cols[2]
        if sex_token in NA_TOKENS:
            sex = None
        elif sex_token in SEX_CODES:
            sex = SEX_CODES[sex_token]
        else:
            raise UnparsableRow(f"bad sex token {sex_token!r} in row {line!r}")
        out[pid] = Demographics(
            age_years=_optional_float(cols[1], line),
            sex=sex,
            adult_bmi=_optional_float(cols[3], line),
            child_weight_kg=_optional_float(cols[4], line),
            child_height_cm=_optional_float(cols[5], line),
        )
    return out


def derive_bmi(record: Demographics) -> Optional[float]:
    """Adult BMI as recorded, else weight / height² from the pediatric columns."""
    if record.adult_bmi is not None:
        return record.adult_bmi
    w, h = record.child_weight_kg, record.child_height_cm
    if w is None or h is None or w <= 0 or h <= 0:
        return None
    return w / (h / 100.0) ** 2


def binarize_age(age_years: float) -> AgeGroup:
    if age_years is None or not math.isfinite(age_years) or age_years < 0:
        raise InvalidAge(f"invalid age {age_years!r}")
    return AgeGroup.ADULT if age_years > 18 else AgeGroup.PEDIATRIC


def parse_split_list(text: str) -> dict[str, Split]:
    splits: dict[str, Split] = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        cols = line.split()
        if len(cols) != 2:
            raise SplitMismatch(f"split list row must have 2 columns: {line!r}")
        stem, which = cols
        try:
            s = Split(which.lower())
        except ValueError:
            raise SplitMismatch(f"unknown split {which!r} for {stem}") from None
        if splits.get(stem, s) is not s:
            raise SplitMismatch(f"recording {stem} assigned to both splits")
        splits[stem] = s
    return splits


def find_demographics(data_root: Path) -> Path:
    for name in DEMOGRAPHICS_FILENAMES:
        if (data_root / name).is_file():
            return data_root / name
    raise MissingDemographics(f"no demographics file ({' or '.join(DEMOGRAPHICS_FILENAMES)}) in {data_root}")


def _wav_files(data_root: Path) -> Iterable[Path]:
    return sorted(p for p in data_root.iterdir() if p.suffix.lower() == ".wav")


def build_manifest(
    data_root: str | Path,
    split_list: str | Path,
    demographics: str | Path | None = None,
) -> Manifest:
    data_root = Path(data_root)
    wavs = list(_wav_files(data_root))
    missing = [w.name for w in wavs if not w.with_suffix(".txt").is_file()]
    if missing or not wavs:
        listing = ", ".join(missing) if missing else f"no .wav recordings found in {data_root}"
        raise MissingAnnotation(f"missing annotation files: {listing}")

    demo_path = Path(demographics) if demographics is not None else find_demographics(data_root)
    demo = parse_demographics(demo_path.read_text())
    splits = parse_split_list(Path(split_list).read_text())

    entries = []
    for wav in wavs:
        info = parse_filename(wav.name)
        try:
            cycles = parse_annotation(wav.with_suffix(".txt").read_text())
        except (MalformedRow, NonMonotoneInterval) as exc:
            raise type(exc)(f"{wav.with_suffix('.txt')}: {exc}") from None
        rec = demo.get(info.patient_id)
        if rec is None:
            raise MissingDemographics(f"{wav.name}: patient {info.patient_id} not in {demo_path.name}")
        if rec.age_years is None or rec.sex is None:
            raise MissingDemographics(f"{wav.name}: patient {info.patient_id} lacks age or sex")
        if wav.stem not in splits:
            raise SplitMismatch(f"{wav.stem} is absent from the split list")
        meta = RecordingMeta(
            patient_id=info.patient_id,
            recording_index=info.recording_index,
            location=info.location,
            acquisition_mode=info.acquisition_mode,
            device=info.device,
            age_group=binarize_age(rec.age_years),
            sex=rec.sex,
            bmi=derive_bmi(rec),
            split=splits[wav.stem],
        )
        entries.extend(ManifestEntry(str(wav), ann, meta) for ann in cycles)

    entries.sort(key=lambda e: (e.audio_path, e.annotation.start_s))
    manifest = Manifest(entries)
    overlap = manifest.patient_overlap()
    if overlap:
        raise SplitMismatch(f"patients present in both splits: {sorted(overlap)}")
    return manifest

