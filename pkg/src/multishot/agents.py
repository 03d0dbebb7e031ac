"""The three pipeline agents as prompt templates plus response parsers.

Agents are stateless: each call consumes exactly one synopsis or one shot and
all cross-shot state lives in the memory bank. Structured responses must be
fenced JSON; everything outside the fence is discarded before parsing. Parse
failures are re-prompted with the error appended, up to three attempts.
"""

from __future__ import annotations

import functools
import json
import logging
import re
import string
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Sequence

from .domain import (
    VIDEO_PROMPT_MAX_CHARS,
    AssetRef,
    AttributeState,
    CATEGORY_ORDER,
    EntityCategory,
    EntitySpec,
    ShotDescription,
    Storyboard,
    Synopsis,
    extract_payload,
    parse_storyboard,
)
from .errors import (
    AnalysisError,
    ConsistencyError,
    MissingReference,
    MultishotError,
    PlanningError,
    PromptError,
)

logger = logging.getLogger(__name__)

AGENT_ATTEMPTS = 3

_RETRY_SUFFIX = (
    "\n\nYour previous response could not be parsed: {error}\n"
    "Return only the corrected fenced JSON document."
)


@dataclass(frozen=True)
class PromptTemplate:
    """Named text template with ``${placeholder}`` slots."""

    name: str
    body: str
    required_placeholders: frozenset[str] = field(default_factory=frozenset)

    def render(self, **bindings: str) -> str:
        missing = self.required_placeholders - set(bindings)
        if missing:
            raise PromptError(f"template {self.name!r} missing bindings: {sorted(missing)}")
        try:
            return string.Template(self.body).substitute(**bindings)
        except KeyError as exc:
            raise PromptError(f"template {self.name!r} has unbound placeholder {exc}") from exc


_REQUIRED = {
    "storyboard_agent": frozenset({"synopsis"}),
    "memory_agent": frozenset({"shot_json"}),
    "visualization_agent": frozenset({"plot"}),
}


def load_template(name: str, config_dir: Path | str | None = None) -> PromptTemplate:
    """Load a shipped template, or an override from ``config_dir``."""
    if config_dir is not None:
        override = Path(config_dir) / f"{name}.txt"
        if override.is_file():
            return PromptTemplate(name=name, body=override.read_text(encoding="utf-8"), required_placeholders=_REQUIRED.get(name, frozenset()))
    body = resources.files("multishot").joinpath(f"prompts/{name}.txt").read_text(encoding="utf-8")
    return PromptTemplate(name=name, body=body, required_placeholders=_REQUIRED.get(name, frozenset()))


def load_banned_terms(config_dir: Path | str | None = None) -> list[str]:
    if config_dir is not None:
        override = Path(config_dir) / "banned_terms.txt"
        if override.is_file():
            text = override.read_text(encoding="utf-8")
        else:
            text = resources.files("multishot").joinpath("prompts/banned_terms.txt").read_text(encoding="utf-8")
    else:
        text = resources.files("multishot").joinpath("prompts/banned_terms.txt").read_text(encoding="utf-8")
    terms = [line.strip() for line in text.splitlines() if line.strip() and not line.startswith("#")]
    # Longest first so "camera follows" is removed before "camera" matches.
    return sorted(terms, key=len, reverse=True)


@functools.lru_cache(maxsize=8)
def _banned_patterns(terms: tuple[str, ...]) -> tuple[tuple[str, re.Pattern], ...]:
    return tuple((term, re.compile(rf"\b{re.escape(term)}\b", re.IGNORECASE)) for term in terms)


@functools.lru_cache(maxsize=1)
def _default_terms() -> tuple[str, ...]:
    return tuple(load_banned_terms())


def strip_banned_terms(text: str, terms: Sequence[str] | None = None) -> tuple[str, list[str]]:
    """Remove banned vocabulary, returning the clean text and what was found."""
    if terms is None:
        terms = _default_terms()
    found: list[str] = []
    for term, pattern in _banned_patterns(tuple(terms)):
        if pattern.search(text):
            found.append(term)
            text = pattern.sub(" ", text)
    text = re.sub(r"\s+", " ", text)
    text = re.sub(r"\s+([.,;:!?])", r"\1", text).strip()
    return text, found


def _collapse(text: str) -> str:
    return re.sub(r"\s+", " ", text).strip()


def storyboard_plan(synopsis: Synopsis, llm, template: PromptTemplate | None = None) -> Storyboard:
    """Expand a synopsis into a validated storyboard via the text backend."""
    template = template or load_template("storyboard_agent")
    prompt = template.render(synopsis=synopsis.text)
    last_response = ""
    last_error: Exception | None = None
    for attempt in range(1, AGENT_ATTEMPTS + 1):
        last_response = llm.complete(prompt, meta={"template": "storyboard_agent", "attempt": attempt})
        try:
            return parse_storyboard(last_response, synopsis=synopsis)
        except MultishotError as exc:
            last_error = exc
            logger.warning("storyboard parse attempt %d/%d failed: %s", attempt, AGENT_ATTEMPTS, exc)
            prompt = template.render(synopsis=synopsis.text) + _RETRY_SUFFIX.format(error=exc)
    raise PlanningError(
        f"storyboard planning failed after {AGENT_ATTEMPTS} attempts: {last_error}",
        last_response=last_response,
    )


@dataclass(frozen=True)
class EntityAnalysis:
    """Entities extracted from one shot, with their current states."""

    shot_index: int
    entities: tuple[EntitySpec, ...]

    @property
    def background(self) -> EntitySpec | None:
        for entity in self.entities:
            if entity.category is EntityCategory.BACKGROUND:
                return entity
        return None


def _parse_analysis(payload: str, shot: ShotDescription) -> list[EntitySpec]:
    try:
        doc = json.loads(payload)
    except json.JSONDecodeError as exc:
        raise AnalysisError(f"malformed analysis document: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("entities"), list):
        raise AnalysisError("analysis document must carry an 'entities' list")
    entities: list[EntitySpec] = []
    for item in doc["entities"]:
        try:
            name = item["name"]
            category = EntityCategory(item["category"])
            attributes = {str(k).lower(): str(v) for k, v in item.get("attributes", {}).items()}
            summary = _collapse(str(item.get("summary", ""))) or name
            entities.append(EntitySpec(name=name, category=category, state=AttributeState(attributes=attributes, summary=summary)))
        except (KeyError, TypeError, ValueError, MultishotError) as exc:
            raise AnalysisError(f"bad entity record {item!r}: {exc}") from exc
    return entities


def _check_analysis(entities: list[EntitySpec], shot: ShotDescription) -> list[EntitySpec]:
    by_name = {e.name.lower(): e for e in entities}
    for mention, category in [(m, EntityCategory.CHARACTER) for m in shot.characters] + [
        (m, EntityCategory.PROP) for m in shot.key_props
    ]:
        entity = by_name.get(mention.lower())
        if entity is None:
            raise ConsistencyError(f"analysis of shot {shot.index} omits listed entity {mention!r}")
        if entity.category is not category:
            raise ConsistencyError(f"entity {mention!r} in shot {shot.index} has category {entity.category.value}, expected {category.value}")
    backgrounds = [e for e in entities if e.category is EntityCategory.BACKGROUND]
    if len(backgrounds) > 1:
        raise ConsistencyError(f"analysis of shot {shot.index} has {len(backgrounds)} background entities")
    allowed = {m.lower() for m in shot.mentions} | {b.name.lower() for b in backgrounds}
    for entity in entities:
        if entity.name.lower() not in allowed:
            raise ConsistencyError(f"analysis of shot {shot.index} invented entity {entity.name!r}")
    if not backgrounds:
        entities = entities + [
            EntitySpec(
                name=shot.scene,
                category=EntityCategory.BACKGROUND,
                state=AttributeState(attributes={}, summary=_collapse(shot.scene_description) or shot.scene),
            )
        ]
    return entities


def memory_analyze_shot(shot: ShotDescription, llm, template: PromptTemplate | None = None) -> EntityAnalysis:
    """Extract the entities of one shot with category labels and states.

    Unparseable responses are re-prompted up to three attempts; a parseable
    response that omits or invents entities fails immediately.
    """
    template = template or load_template("memory_agent")
    shot_json = json.dumps(shot.to_dict(), indent=2, sort_keys=True)
    prompt = template.render(shot_json=shot_json)
    last_error: Exception | None = None
    for attempt in range(1, AGENT_ATTEMPTS + 1):
        response = llm.complete(prompt, meta={"template": "memory_agent", "shot_index": shot.index, "attempt": attempt})
        try:
            entities = _parse_analysis(extract_payload(response), shot)
        except AnalysisError as exc:
            last_error = exc
            logger.warning("analysis parse attempt %d/%d failed for shot %d: %s", attempt, AGENT_ATTEMPTS, shot.index, exc)
            prompt = template.render(shot_json=shot_json) + _RETRY_SUFFIX.format(error=exc)
            continue
        entities = _check_analysis(entities, shot)
        ordered = sorted(entities, key=lambda e: CATEGORY_ORDER.index(e.category))
        return EntityAnalysis(shot_index=shot.index, entities=tuple(ordered))
    raise AnalysisError(f"shot {shot.index} analysis failed after {AGENT_ATTEMPTS} attempts: {last_error}")


@dataclass(frozen=True)
class KeyframeRequest:
    """Prompt plus ordered reference assets for keyframe generation."""

    prompt: str
    references: tuple[AssetRef, ...]
    warnings: tuple[str, ...] = ()


def build_keyframe_request(
    shot: ShotDescription,
    refs: Sequence[tuple[EntitySpec, AssetRef]],
    banned_terms: Sequence[str] | None = None,
) -> KeyframeRequest:
    """Compose the factual keyframe prompt and order the reference assets.

    References are ordered characters, then props, then background; banned
    camera/style vocabulary is stripped from the prompt and recorded as a
    warning rather than an error.
    """
    if not refs:
        raise MissingReference(f"shot {shot.index} has no entity references")
    for spec, asset in refs:
        if not Path(asset.path).is_file():
            raise MissingReference(f"reference asset for {spec.name!r} missing: {asset.path}")
    ordered = sorted(refs, key=lambda pair: CATEGORY_ORDER.index(pair[0].category))
    names = ", ".join(f"{spec.name} ({spec.state.summary})" for spec, _ in ordered)
    raw = f"{_collapse(shot.scene_description)} {_collapse(shot.plot)} Entities shown: {names}."
    prompt, found = strip_banned_terms(_collapse(raw), banned_terms)
    warnings = tuple(f"stripped banned term {term!r} from keyframe prompt of shot {shot.index}" for term in found)
    for message in warnings:
        logger.warning("%s", message)
    return KeyframeRequest(prompt=prompt, references=tuple(asset for _, asset in ordered), warnings=warnings)


def _truncate_at_word(text: str, limit: int) -> str:
    if len(text) <= limit:
        return text
    cut = text.rfind(" ", 0, limit + 1)
    if cut <= 0:
        cut = limit
    return text[:cut].rstrip()


def build_video_prompt(shot: ShotDescription, llm=None, template: PromptTemplate | None = None) -> str:
    """Derive the motion prompt for a shot, never exceeding 500 characters.

    Over-length plots get one re-summarization attempt through the text
    backend, then a hard truncation at the last word boundary.
    """
    prompt, found = strip_banned_terms(_collapse(shot.plot))
    for term in found:
        logger.warning("stripped banned term %r from video prompt of shot %d", term, shot.index)
    if len(prompt) <= VIDEO_PROMPT_MAX_CHARS:
        return prompt
    if llm is not None:
        template = template or load_template("visualization_agent")
        try:
            summarized = _collapse(llm.complete(template.render(plot=prompt), meta={"template": "visualization_agent", "shot_index": shot.index}))
            summarized, _ = strip_banned_terms(summarized)
            if summarized:
                prompt = summarized
        except Exception as exc:  # noqa: BLE001 - summarization is best effort
            logger.warning("video prompt summarization failed for shot %d: %s", shot.index, exc)
    if len(prompt) > VIDEO_PROMPT_MAX_CHARS:
        logger.warning("video prompt for shot %d truncated to %d characters", shot.index, VIDEO_PROMPT_MAX_CHARS)
        prompt = _truncate_at_word(prompt, VIDEO_PROMPT_MAX_CHARS)
    return prompt
