"""Metadata-to-text rendering and test-time metadata scenarios.

Lone demographic attributes render as ``This patient is a(n) ... patient.``;
anything involving the recording location or device renders as one
``This sound was recorded ...`` sentence with absent attributes elided.
"""

from __future__ import annotations

import itertools
import json
import re
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import MissingAttribute, MissingBmi
from .icbhi import AgeGroup, Device, Location, Sex

UNKNOWN = "Unknown"
NO_DESCRIPTION = "No description."
PARTIAL_PROBABILITY = 0.10
TOKEN_BUDGET = 64

ATTRIBUTES = ("age", "sex", "loc", "dev")
_ATTR_FIELD = {"age": "age_group", "sex": "sex", "loc": "location", "dev": "device"}
_ATTR_TITLE = {"age": "Age", "sex": "Sex", "loc": "Loc", "dev": "Dev"}

AGE_WORDS = {AgeGroup.ADULT: "adult", AgeGroup.PEDIATRIC: "pediatric"}
SEX_WORDS = {Sex.MALE: "male", Sex.FEMALE: "female"}
LOCATION_PHRASES = {
    Location.TRACHEA: "the trachea",
    Location.LEFT_ANTERIOR: "the left anterior chest",
    Location.RIGHT_ANTERIOR: "the right anterior chest",
    Location.LEFT_POSTERIOR: "the left posterior chest",
    Location.RIGHT_POSTERIOR: "the right posterior chest",
    Location.LEFT_LATERAL: "the left lateral chest",
    Location.RIGHT_LATERAL: "the right lateral chest",
}
UNKNOWN_LOCATION_PHRASE = "an Unknown location"


class Scenario(str, Enum):
    STANDARD = "Standard"
    BMI_INJECTED = "BmiInjected"
    PARTIAL_METADATA = "PartialMetadata"
    NO_METADATA = "NoMetadata"


@dataclass(frozen=True)
class AttributeSubset:
    include_age: bool = True
    include_sex: bool = True
    include_loc: bool = True
    include_dev: bool = True

    @property
    def attributes(self) -> tuple[str, ...]:
        return tuple(a for a in ATTRIBUTES if getattr(self, f"include_{a}"))

    @property
    def name(self) -> str:
        attrs = self.attributes
        if len(attrs) == len(ATTRIBUTES):
            return "All"
        if not attrs:
            return "None"
        return "-".join(_ATTR_TITLE[a] for a in attrs)

    @classmethod
    def parse(cls, name: str) -> "AttributeSubset":
        """``"All"``, ``"None"`` or a dash-joined list such as ``"Age-Loc-Dev"``."""
        if name.strip().lower() == "all":
            return cls()
        if name.strip().lower() == "none":
            return cls(False, False, False, False)
        wanted = {p.strip().lower() for p in name.split("-") if p.strip()}
        unknown = wanted - set(ATTRIBUTES)
        if unknown:
            raise ValueError(f"unknown attributes {sorted(unknown)} in subset {name!r}")
        return cls(*(a in wanted for a in ATTRIBUTES))

    @classmethod
    def all_nonempty(cls) -> list["AttributeSubset"]:
        return [cls(*flags) for flags in itertools.product((True, False), repeat=4) if any(flags)]


ALL = AttributeSubset()
NONE = AttributeSubset(False, False, False, False)


@dataclass(frozen=True)
class TextDescription:
    text: str
    source_subset: AttributeSubset
    scenario: Scenario = Scenario.STANDARD
    unknown_attribute: Optional[str] = None

    def __post_init__(self):
        if not self.text:
            raise ValueError("description text must be non-empty")


def _article(word: str) -> str:
    return "an" if word[:1].lower() in "aeiou" else "a"


def render(age: Optional[str] = None, sex: Optional[str] = None, loc: Optional[str] = None, dev: Optional[str] = None) -> str:
    """Assemble a description from already-surfaced attribute words."""
    people = [w for w in (age, sex) if w]
    patient = f"{_article(people[0])} {' '.join(people)} patient" if people else None
    if not loc and not dev:
        if patient is None:
            raise MissingAttribute("nothing to describe: empty attribute set")
        return f"This patient is {patient}."
    if dev and not (loc or patient):
        return f"This sound was recorded with {_article(dev)} {dev} stethoscope."
    text = "This sound was recorded from"
    if loc:
        text += f" {loc}"
        if patient:
            text += f" of {patient}"
    else:
        text += f" {patient}"
    if dev:
        text += f", using {_article(dev)} {dev} stethoscope"
    return text + "."


def _surface(attr: str, value) -> str:
    if attr == "age":
        return AGE_WORDS[AgeGroup(value)]
    if attr == "sex":
        return SEX_WORDS[Sex(value)]
    if attr == "loc":
        return LOCATION_PHRASES[Location(value)]
    return Device(value).value


def _unknown_surface(attr: str) -> str:
    return UNKNOWN_LOCATION_PHRASE if attr == "loc" else UNKNOWN


def _words(meta, subset: AttributeSubset, unknown: Optional[str] = None) -> dict[str, str]:
    words = {}
    for attr in subset.attributes:
        if attr == unknown:
            words[attr] = _unknown_surface(attr)
            continue
        value = getattr(meta, _ATTR_FIELD[attr], None)
        if value is None:
            raise MissingAttribute(f"metadata lacks {_ATTR_FIELD[attr]!r} required by subset {subset.name}")
        words[attr] = _surface(attr, value)
    return words


def describe(meta, subset: AttributeSubset = ALL) -> TextDescription:
    """Render ``meta`` restricted to ``subset``.

    ``meta`` is anything exposing ``age_group``, ``sex``, ``location`` and
    ``device`` attributes (a :class:`~bts.icbhi.RecordingMeta` in practice);
    attributes outside the subset may be ``None``.
    """
    if not subset.attributes:
        return TextDescription(NO_DESCRIPTION, subset, Scenario.NO_METADATA)
    return TextDescription(render(**_words(meta, subset)), subset)


def enumerate_descriptions(include_unknown: bool = False) -> set[str]:
    """Every renderable description over all non-empty subsets and values."""
    choices = {
        "age": [AGE_WORDS[v] for v in AgeGroup],
        "sex": [SEX_WORDS[v] for v in Sex],
        "loc": [LOCATION_PHRASES[v] for v in Location],
        "dev": [d.value for d in Device],
    }
    if include_unknown:
        for attr in ATTRIBUTES:
            choices[attr].append(_unknown_surface(attr))
    out = set()
    for subset in AttributeSubset.all_nonempty():
        attrs = subset.attributes
        for values in itertools.product(*(choices[a] for a in attrs)):
            out.add(render(**dict(zip(attrs, values))))
    return out


def _rng(rng_seed) -> np.random.Generator:
    if isinstance(rng_seed, np.random.Generator):
        return rng_seed
    return np.random.default_rng(rng_seed)


def apply_scenario(desc: TextDescription, meta, scenario: Scenario | str, rng_seed=0) -> TextDescription:
    """Transform a standard description for a test-time metadata scenario.

    ``rng_seed`` seeds the one draw used by the partial-metadata scenario; it
    may be an int, a sequence of ints (e.g. ``(seed, sample_index)``) or a
    ``numpy.random.Generator``.
    """
    scenario = Scenario(scenario)
    if scenario is Scenario.STANDARD:
        return desc
    if scenario is Scenario.NO_METADATA:
        return TextDescription(NO_DESCRIPTION, desc.source_subset, scenario)
    if scenario is Scenario.BMI_INJECTED:
        bmi = getattr(meta, "bmi", None)
        if bmi is None:
            raise MissingBmi(f"no BMI available for patient {getattr(meta, 'patient_id', '?')}")
        return replace(desc, text=f"{desc.text} The BMI of the patient was {bmi:.2f}.", scenario=scenario)

    attrs = desc.source_subset.attributes
    rng = _rng(rng_seed)
    if not attrs or rng.random() >= PARTIAL_PROBABILITY:
        return replace(desc, scenario=scenario)
    dropped = attrs[rng.integers(len(attrs))]
    text = render(**_words(meta, desc.source_subset, unknown=dropped))
    return TextDescription(text, desc.source_subset, scenario, unknown_attribute=dropped)


def scenario_descriptions(
    metas: Sequence, subset: AttributeSubset, scenario: Scenario | str, seed: int = 0, missing_bmi: str = "raise"
) -> list[TextDescription]:
    """Describe every sample, then apply ``scenario`` with one draw per sample.

    With ``missing_bmi="keep"`` a patient without a BMI keeps the standard
    description under the BMI scenario instead of raising.
    """
    out = []
    for i, m in enumerate(metas):
        desc = describe(m, subset)
        try:
            out.append(apply_scenario(desc, m, scenario, (seed, i)))
        except MissingBmi:
            if missing_bmi != "keep":
                raise
            out.append(desc)
    return out


_TOKEN_RE = re.compile(r"\w+|[^\w\s]")


def simple_token_count(text: str) -> int:
    """Word/punctuation count plus begin and end markers."""
    return len(_TOKEN_RE.findall(text)) + 2


def write_description_table(path: str | Path, sample_ids: Iterable[str], descs: Iterable[TextDescription], seed: int) -> None:
    with open(path, "w") as fh:
        for sid, d in zip(sample_ids, descs):
            row = {"sample_id": sid, "text": d.text, "scenario": d.scenario.value, "seed": seed}
            fh.write(json.dumps(row, sort_keys=True) + "\n")
