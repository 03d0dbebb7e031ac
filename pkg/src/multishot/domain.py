"""Core data model: scripts, storyboards, entities, and run artifacts.

Everything here is a plain value type; parsing and validation of the
storyboard interchange document also lives here.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Mapping, Sequence

from .errors import ParseError, ValidationError
from .hashing import fnv1a64, sha256_file, sha256_frame_sequence

SHOT_FIELDS = ("scene", "scene_description", "plot", "characters", "key_props", "environment_info")

VIDEO_PROMPT_MAX_CHARS = 500

_FENCE_RE = re.compile(r"```[a-zA-Z0-9_-]*\n(.*?)```", re.DOTALL)


def extract_payload(text: str) -> str:
    """Return the first fenced block of an LLM response, or the whole text.

    Anything outside the fence (greetings, commentary) is discarded.
    """
    match = _FENCE_RE.search(text)
    if match:
        return match.group(1).strip()
    return text.strip()


@dataclass(frozen=True)
class Synopsis:
    """Free-form story text driving a whole run."""

    text: str
    title: str | None = None

    def __post_init__(self):
        if not self.text.strip():
            raise ValidationError("synopsis text is empty", field_path="text")


class EntityCategory(str, Enum):
    CHARACTER = "character"
    PROP = "prop"
    BACKGROUND = "background"

    @property
    def store_name(self) -> str:
        return {"character": "characters", "prop": "props", "background": "backgrounds"}[self.value]


# Presentation order when assembling keyframe reference lists.
CATEGORY_ORDER = (EntityCategory.CHARACTER, EntityCategory.PROP, EntityCategory.BACKGROUND)


@dataclass(frozen=True)
class AttributeState:
    """Textual semantic state of an entity in one shot.

    ``attributes`` is an open map (age, outfit, era, condition, ...); the
    closed part of the contract is only its key discipline: lowercase,
    non-empty, unique.
    """

    attributes: Mapping[str, str]
    summary: str

    def __post_init__(self):
        seen: set[str] = set()
        for name in self.attributes:
            if not name or name != name.lower():
                raise ValidationError(f"attribute name {name!r} must be lowercase and non-empty", field_path=f"attributes.{name}")
            if name in seen:
                raise ValidationError(f"duplicate attribute {name!r}", field_path=f"attributes.{name}")
            seen.add(name)
        if not self.summary.strip():
            raise ValidationError("attribute summary is empty", field_path="summary")
        object.__setattr__(self, "attributes", dict(self.attributes))

    def canonical_serialization(self) -> str:
        """Order-independent serialization used for key digests."""
        return "\n".join(f"{k}={self.attributes[k]}" for k in sorted(self.attributes))

    def to_dict(self) -> dict:
        return {"attributes": dict(self.attributes), "summary": self.summary}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "AttributeState":
        return cls(attributes=dict(data["attributes"]), summary=data["summary"])


def canonical_entity_key(name: str, state: AttributeState) -> str:
    """Deterministic store key for an entity state.

    Lowercased name with whitespace collapsed to underscores, plus an
    8-hex-digit digest (low 32 bits of FNV-1a 64) of the canonical attribute
    serialization. Identical ``(name, state)`` pairs always produce identical
    keys, in any implementation of this scheme.
    """
    if not name.strip():
        raise ValidationError("entity name is empty", field_path="name")
    base = re.sub(r"\s+", "_", name.strip().lower())
    digest = fnv1a64(state.canonical_serialization().encode("utf-8")) & 0xFFFFFFFF
    return f"{base}_{digest:08x}"


@dataclass(frozen=True)
class EntitySpec:
    """One entity lineage member: who/what it is and its current state."""

    name: str
    category: EntityCategory
    state: AttributeState

    def __post_init__(self):
        if not self.name.strip():
            raise ValidationError("entity name is empty", field_path="name")

    @property
    def key(self) -> str:
        return canonical_entity_key(self.name, self.state)

    def to_dict(self) -> dict:
        return {"name": self.name, "category": self.category.value, "state": self.state.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EntitySpec":
        return cls(
            name=data["name"],
            category=EntityCategory(data["category"]),
            state=AttributeState.from_dict(data["state"]),
        )


@dataclass(frozen=True)
class AssetRef:
    """Pointer to an on-disk asset with a content digest.

    ``kind`` is ``image`` (single file) or ``frame-sequence`` (directory of
    ``frame_*.png`` files, digested in frame order).
    """

    path: str
    kind: str
    digest: str

    def __post_init__(self):
        if self.kind not in ("image", "frame-sequence"):
            raise ValidationError(f"unknown asset kind {self.kind!r}", field_path="kind")

    @classmethod
    def for_image(cls, path: Path | str) -> "AssetRef":
        return cls(path=str(path), kind="image", digest=sha256_file(path))

    @classmethod
    def for_frames(cls, directory: Path | str, frames: Sequence[Path | str]) -> "AssetRef":
        return cls(path=str(directory), kind="frame-sequence", digest=sha256_frame_sequence(frames))

    def frame_paths(self) -> list[Path]:
        if self.kind != "frame-sequence":
            raise ValidationError("not a frame sequence", field_path="kind")
        return sorted(Path(self.path).glob("frame_*.png"))

    def verify(self) -> bool:
        """Recompute the digest from disk and compare."""
        if self.kind == "image":
            return Path(self.path).is_file() and sha256_file(self.path) == self.digest
        return Path(self.path).is_dir() and sha256_frame_sequence(self.frame_paths()) == self.digest

    def to_dict(self, base: Path | None = None) -> dict:
        path = self.path
        if base is not None:
            try:
                path = Path(self.path).relative_to(base).as_posix()
            except ValueError:
                pass
        return {"path": path, "kind": self.kind, "digest": self.digest}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base: Path | None = None) -> "AssetRef":
        path = Path(data["path"])
        if base is not None and not path.is_absolute():
            path = base / path
        return cls(path=str(path), kind=data["kind"], digest=data["digest"])


@dataclass(frozen=True)
class ShotDescription:
    """One planned shot, as emitted by the storyboard planner."""

    index: int
    scene: str
    scene_description: str
    plot: str
    characters: tuple[str, ...]
    key_props: tuple[str, ...]
    environment_info: str
    extras: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for label, names in (("characters", self.characters), ("key_props", self.key_props)):
            if len(set(names)) != len(names):
                raise ValidationError(
                    f"duplicate entity mention in {label}",
                    field_path=label,
                    shot_index=self.index,
                )
        object.__setattr__(self, "characters", tuple(self.characters))
        object.__setattr__(self, "key_props", tuple(self.key_props))
        object.__setattr__(self, "extras", dict(self.extras))

    @property
    def mentions(self) -> tuple[str, ...]:
        return self.characters + self.key_props

    def to_dict(self) -> dict:
        data = {
            "index": self.index,
            "scene": self.scene,
            "scene_description": self.scene_description,
            "plot": self.plot,
            "characters": list(self.characters),
            "key_props": list(self.key_props),
            "environment_info": self.environment_info,
        }
        data.update(self.extras)
        return data


@dataclass(frozen=True)
class Storyboard:
    """Ordered shot plan for one synopsis."""

    synopsis: Synopsis
    shots: tuple[ShotDescription, ...]

    def __post_init__(self):
        if not self.shots:
            raise ValidationError("storyboard has no shots", field_path="shots")
        object.__setattr__(self, "shots", tuple(self.shots))

    def to_dict(self) -> dict:
        return {
            "title": self.synopsis.title,
            "synopsis": self.synopsis.text,
            "shots": [shot.to_dict() for shot in self.shots],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _parse_shot(item: Any, position: int) -> ShotDescription:
    where = f"shots[{position}]"
    if not isinstance(item, dict):
        raise ValidationError(f"{where} is not an object", field_path=where, shot_index=position + 1)
    index = item.get("index", position + 1)
    if not isinstance(index, int) or index < 1:
        raise ValidationError(f"{where}.index must be a positive integer", field_path=f"{where}.index", shot_index=position + 1)
    values: dict[str, Any] = {}
    for name in SHOT_FIELDS:
        if name not in item:
            raise ValidationError(f"missing field {name!r} in shot {index}", field_path=f"{where}.{name}", shot_index=index)
        values[name] = item[name]
    for list_field in ("characters", "key_props"):
        raw = values[list_field]
        if not isinstance(raw, list) or not all(isinstance(x, str) for x in raw):
            raise ValidationError(
                f"{list_field} must be a list of strings in shot {index}",
                field_path=f"{where}.{list_field}",
                shot_index=index,
            )
    extras = {k: v for k, v in item.items() if k not in SHOT_FIELDS and k != "index"}
    return ShotDescription(
        index=index,
        scene=str(values["scene"]),
        scene_description=str(values["scene_description"]),
        plot=str(values["plot"]),
        characters=tuple(values["characters"]),
        key_props=tuple(values["key_props"]),
        environment_info=str(values["environment_info"]),
        extras=extras,
    )


def parse_storyboard(raw: str, synopsis: Synopsis | None = None) -> Storyboard:
    """Parse and validate a storyboard document.

    Accepts either a bare JSON list of shot objects or an object carrying
    ``shots`` plus optional ``synopsis``/``title``. Unknown shot fields are
    preserved in ``extras`` and otherwise ignored. A fenced payload is
    unwrapped first, so raw planner responses can be fed in directly.
    """
    payload = extract_payload(raw)
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise ParseError(f"malformed storyboard document: {exc}") from exc

    title = None
    if isinstance(doc, list):
        shot_items = doc
    elif isinstance(doc, dict):
        if "shots" not in doc:
            raise ValidationError("missing field 'shots'", field_path="shots")
        shot_items = doc["shots"]
        title = doc.get("title")
        if doc.get("synopsis"):
            synopsis = Synopsis(text=doc["synopsis"], title=title)
    else:
        raise ValidationError("storyboard document must be a list or object", field_path="")
    if not isinstance(shot_items, list) or not shot_items:
        raise ValidationError("'shots' must be a non-empty list", field_path="shots")
    if synopsis is None:
        raise ValidationError("no synopsis in document and none supplied", field_path="synopsis")

    shots = [_parse_shot(item, i) for i, item in enumerate(shot_items)]
    indices = sorted(shot.index for shot in shots)
    expected = list(range(1, len(shots) + 1))
    if indices != expected:
        missing = sorted(set(expected) - set(indices))
        if missing:
            raise ValidationError(f"shot indices are not contiguous: missing shot {missing[0]}", field_path="shots", shot_index=missing[0])
        dupes = sorted({i for i in indices if indices.count(i) > 1})
        raise ValidationError(f"duplicate shot index {dupes[0]}", field_path="shots", shot_index=dupes[0])
    shots.sort(key=lambda s: s.index)
    return Storyboard(synopsis=synopsis, shots=tuple(shots))


@dataclass(frozen=True)
class ResolvedEntity:
    """An entity spec bound to its reference asset for one shot."""

    spec: EntitySpec
    reference: AssetRef
    provenance: str  # "reused" | "generated"

    def __post_init__(self):
        if self.provenance not in ("reused", "generated"):
            raise ValidationError(f"unknown provenance {self.provenance!r}", field_path="provenance")

    def to_dict(self, base: Path | None = None) -> dict:
        return {
            "spec": self.spec.to_dict(),
            "reference": self.reference.to_dict(base),
            "provenance": self.provenance,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base: Path | None = None) -> "ResolvedEntity":
        return cls(
            spec=EntitySpec.from_dict(data["spec"]),
            reference=AssetRef.from_dict(data["reference"], base),
            provenance=data["provenance"],
        )


@dataclass(frozen=True)
class ShotRecord:
    """Everything produced for one shot during a run."""

    shot: ShotDescription
    resolved_entities: tuple[ResolvedEntity, ...]
    keyframe_prompt: str
    keyframe: AssetRef
    video_prompt: str
    video: AssetRef

    def __post_init__(self):
        if len(self.video_prompt) > VIDEO_PROMPT_MAX_CHARS:
            raise ValidationError(
                f"video prompt exceeds {VIDEO_PROMPT_MAX_CHARS} characters",
                field_path="video_prompt",
                shot_index=self.shot.index,
            )
        resolved_names = {e.spec.name.lower() for e in self.resolved_entities}
        for mention in self.shot.mentions:
            if mention.lower() not in resolved_names:
                raise ValidationError(
                    f"mention {mention!r} has no resolved entity",
                    field_path="resolved_entities",
                    shot_index=self.shot.index,
                )
        object.__setattr__(self, "resolved_entities", tuple(self.resolved_entities))

    def to_dict(self, base: Path | None = None) -> dict:
        return {
            "shot": self.shot.to_dict(),
            "resolved_entities": [e.to_dict(base) for e in self.resolved_entities],
            "keyframe_prompt": self.keyframe_prompt,
            "keyframe": self.keyframe.to_dict(base),
            "video_prompt": self.video_prompt,
            "video": self.video.to_dict(base),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any], base: Path | None = None) -> "ShotRecord":
        return cls(
            shot=_parse_shot(data["shot"], data["shot"]["index"] - 1),
            resolved_entities=tuple(ResolvedEntity.from_dict(e, base) for e in data["resolved_entities"]),
            keyframe_prompt=data["keyframe_prompt"],
            keyframe=AssetRef.from_dict(data["keyframe"], base),
            video_prompt=data["video_prompt"],
            video=AssetRef.from_dict(data["video"], base),
        )
