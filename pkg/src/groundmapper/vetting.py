"""User vetting of detected features before anything is uploaded.

Every capture gets one vetting record holding a verdict per detected class:

    AGREE    keep the class's instances, minus explicitly rejected ones
    DISCARD  drop the whole class for this capture
    MISSING  keep like AGREE, but flag that the segmenter overlooked
             instances of this class so the area can be resurveyed

Records also carry whether the measured sidewalk width attribute was
accepted. The default record agrees with everything, matching the
hands-off capture flow.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence, TypeVar

from .errors import IncompleteVetting, InvalidVerdict, UnknownInstance
from .stabilize import FeatureClass

T = TypeVar("T")


class Verdict(str, Enum):
    AGREE = "agree"
    DISCARD = "discard"
    MISSING = "missing"


@dataclass(frozen=True)
class ClassVerdict:
    """One reviewer's decision about one class within one capture."""

    feature_class: FeatureClass
    verdict: Verdict
    rejected_instances: frozenset = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "rejected_instances", frozenset(self.rejected_instances))
        if any(i < 0 for i in self.rejected_instances):
            raise InvalidVerdict("instance indices must be non-negative")
        if self.verdict is Verdict.DISCARD and self.rejected_instances:
            raise InvalidVerdict("DISCARD drops the class; per-instance rejections make no sense")


@dataclass(frozen=True)
class VettingRecord:
    """All verdicts for one capture."""

    capture_id: str
    verdicts: Mapping[FeatureClass, ClassVerdict]
    width_accepted: bool = True
    completed: bool = False

    def __post_init__(self):
        object.__setattr__(self, "verdicts", dict(self.verdicts))
        for cls, verdict in self.verdicts.items():
            if verdict.feature_class != cls:
                raise InvalidVerdict(f"verdict keyed {cls} but states {verdict.feature_class}")

    def to_payload(self) -> dict:
        return {
            "capture_id": self.capture_id,
            "width_accepted": self.width_accepted,
            "verdicts": {
                cls.wire_name: {
                    "verdict": v.verdict.value,
                    "rejected_instances": sorted(v.rejected_instances),
                }
                for cls, v in sorted(self.verdicts.items())
            },
        }

    @classmethod
    def from_payload(cls, payload: Mapping) -> "VettingRecord":
        verdicts = {}
        for name, doc in payload.get("verdicts", {}).items():
            feature = FeatureClass.from_wire(name)
            verdicts[feature] = ClassVerdict(
                feature_class=feature,
                verdict=Verdict(str(doc.get("verdict", "")).lower()),
                rejected_instances=frozenset(doc.get("rejected_instances", [])),
            )
        return cls(
            capture_id=str(payload["capture_id"]),
            verdicts=verdicts,
            width_accepted=bool(payload.get("width_accepted", True)),
            completed=True,
        )


@dataclass(frozen=True)
class VettedCapture:
    """Outcome of applying a record: surviving instances plus missing flags."""

    capture_id: str
    accepted: tuple
    missing_flags: frozenset
    width_accepted: bool


def default_record(capture_id: str, detections: Mapping[FeatureClass, Sequence]) -> VettingRecord:
    """The agree-with-everything record used when no reviewer weighs in."""
    verdicts = {
        cls: ClassVerdict(feature_class=cls, verdict=Verdict.AGREE)
        for cls, instances in detections.items()
        if len(instances) > 0
    }
    return VettingRecord(capture_id=capture_id, verdicts=verdicts, completed=True)


def apply_vetting(
    detections: Mapping[FeatureClass, Sequence[T]],
    record: VettingRecord,
) -> VettedCapture:
    """Filter detections through a completed vetting record.

    Every detected class must have a verdict; refusing to guess here is what
    makes partially reviewed captures unsubmittable. Rejection indices refer
    to the detection list order, so callers must keep that order stable
    between review and application.
    """
    if not record.completed:
        raise IncompleteVetting(f"record for {record.capture_id} is not complete")

    detected = {cls: list(seq) for cls, seq in detections.items() if len(seq) > 0}
    missing_verdicts = set(detected) - set(record.verdicts)
    if missing_verdicts:
        names = ", ".join(sorted(c.wire_name for c in missing_verdicts))
        raise IncompleteVetting(f"no verdict for detected class(es): {names}")

    accepted = []
    flags = set()
    for cls in sorted(detected, key=int):
        verdict = record.verdicts[cls]
        instances = detected[cls]
        stale = [i for i in verdict.rejected_instances if i >= len(instances)]
        if stale:
            raise UnknownInstance(
                f"{cls.wire_name} has {len(instances)} instance(s); rejected index {min(stale)} is stale"
            )
        if verdict.verdict is Verdict.DISCARD:
            continue
        if verdict.verdict is Verdict.MISSING:
            flags.add(cls)
        accepted.extend(
            inst for i, inst in enumerate(instances) if i not in verdict.rejected_instances
        )
    return VettedCapture(
        capture_id=record.capture_id,
        accepted=tuple(accepted),
        missing_flags=frozenset(flags),
        width_accepted=record.width_accepted,
    )
