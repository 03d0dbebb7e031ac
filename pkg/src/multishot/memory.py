"""The entity memory bank: three keyed stores with retrieve-or-generate
semantics, per-entity history, and an inspectable on-disk layout.

Retrieval is two-phase: an exact canonical-key lookup first (deterministic
fast path), then a pluggable semantic matcher restricted to entries of the
same entity name lineage. Among several matcher-accepted candidates the most
recent one (highest sequence) wins.
"""

from __future__ import annotations

import json
import logging
import shutil
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol, Sequence

from .domain import AssetRef, AttributeState, EntityCategory, EntitySpec, canonical_entity_key
from .errors import CorruptIndex, DuplicateKey, GenerationError, MatcherError, MissingAsset
from .hashing import sha256_file

logger = logging.getLogger(__name__)

STORE_NAMES = ("characters", "props", "backgrounds")
GENERATOR_ATTEMPTS = 3


@dataclass(frozen=True)
class MemoryEntry:
    """One stored entity state: spec, reference image, and bookkeeping."""

    key: str
    entity: EntitySpec
    reference: AssetRef
    created_at_shot: int
    sequence: int

    def __post_init__(self):
        if self.key != canonical_entity_key(self.entity.name, self.entity.state):
            raise ValueError(f"key {self.key!r} does not match the entity state")
        if self.reference.kind != "image":
            raise ValueError("memory references must be images")


@dataclass(frozen=True)
class MatchDecision:
    """Outcome of a semantic matching pass over a candidate lineage."""

    matched: bool
    key: str | None = None
    rationale: str = ""


class SemanticMatcher(Protocol):
    """Decides whether a queried entity state means the same as a stored one."""

    def match(self, spec: EntitySpec, candidates: Sequence[MemoryEntry]) -> MatchDecision: ...


class BaseMatcher:
    """Per-candidate accept/reject with a most-recent-wins tie break."""

    def accepts(self, spec: EntitySpec, entry: MemoryEntry) -> bool:
        raise NotImplementedError

    def match(self, spec: EntitySpec, candidates: Sequence[MemoryEntry]) -> MatchDecision:
        accepted = [entry for entry in candidates if self.accepts(spec, entry)]
        if not accepted:
            return MatchDecision(matched=False, rationale="no candidate accepted")
        best = max(accepted, key=lambda entry: entry.sequence)
        return MatchDecision(matched=True, key=best.key, rationale=f"{len(accepted)} candidate(s) accepted; newest wins")


class ExactMatcher(BaseMatcher):
    """Deterministic matcher: accepts only identical canonical keys.

    Since exact keys already hit in phase one, this makes retrieval pure
    exact-match mode - the reproducible default for tests and CI.
    """

    def accepts(self, spec: EntitySpec, entry: MemoryEntry) -> bool:
        return entry.key == spec.key


class LlmMatcher(BaseMatcher):
    """Asks a text backend a yes/no same-state question per candidate."""

    def __init__(self, llm):
        self._llm = llm

    def accepts(self, spec: EntitySpec, entry: MemoryEntry) -> bool:
        prompt = (
            "Two descriptions of the same named entity follow. Answer YES if they "
            "describe the same visual state (possibly phrased differently), NO otherwise.\n"
            f"Entity: {spec.name}\n"
            f"Description A: {spec.state.summary} | {spec.state.canonical_serialization()}\n"
            f"Description B: {entry.entity.state.summary} | {entry.entity.state.canonical_serialization()}\n"
            "Answer with a single word: YES or NO."
        )
        try:
            response = self._llm.complete(prompt, meta={"template": "semantic_matcher"})
        except Exception as exc:
            raise MatcherError(f"matcher backend failed: {exc}") from exc
        verdict = response.strip().split()[0].upper() if response.strip() else ""
        if verdict not in ("YES", "NO"):
            raise MatcherError(f"unrecognized matcher verdict: {response!r}")
        return verdict == "YES"


class ReferenceGenerator(Protocol):
    """Creates a new reference image for an entity state.

    ``history`` is the ordered list of this entity's earlier states so the
    generator can preserve identity through temporal change.
    """

    def generate(self, spec: EntitySpec, history: Sequence[MemoryEntry]) -> AssetRef: ...


class MemoryBank:
    """Three keyed stores of :class:`MemoryEntry` with a shared sequence."""

    def __init__(self):
        self.stores: dict[str, dict[str, MemoryEntry]] = {name: {} for name in STORE_NAMES}
        self.next_sequence = 0

    # -- queries ------------------------------------------------------------

    def store_for(self, category: EntityCategory) -> dict[str, MemoryEntry]:
        return self.stores[category.store_name]

    def size(self) -> int:
        return sum(len(store) for store in self.stores.values())

    def history(self, name: str, category: EntityCategory) -> list[MemoryEntry]:
        """All same-category entries of this name lineage, oldest first."""
        wanted = name.strip().lower()
        entries = [e for e in self.store_for(category).values() if e.entity.name.strip().lower() == wanted]
        return sorted(entries, key=lambda e: e.sequence)

    def retrieve(self, spec: EntitySpec, matcher: SemanticMatcher) -> MemoryEntry | None:
        """Exact key lookup, then semantic matching over the name lineage."""
        store = self.store_for(spec.category)
        hit = store.get(spec.key)
        if hit is not None:
            return hit
        candidates = self.history(spec.name, spec.category)
        if not candidates:
            return None
        decision = matcher.match(spec, candidates)
        if decision.matched:
            if decision.key not in store:
                raise MatcherError(f"matcher returned unknown key {decision.key!r}")
            return store[decision.key]
        return None

    # -- mutations ----------------------------------------------------------

    def insert(self, spec: EntitySpec, reference: AssetRef, shot_index: int) -> MemoryEntry:
        if not Path(reference.path).is_file():
            raise MissingAsset(f"reference image missing: {reference.path}")
        store = self.store_for(spec.category)
        key = spec.key
        if key in store:
            raise DuplicateKey(f"key already present in {spec.category.store_name}: {key}")
        entry = MemoryEntry(key=key, entity=spec, reference=reference, created_at_shot=shot_index, sequence=self.next_sequence)
        store[key] = entry
        self.next_sequence += 1
        return entry

    def retrieve_or_generate(
        self,
        spec: EntitySpec,
        shot_index: int,
        matcher: SemanticMatcher,
        generator: ReferenceGenerator,
    ) -> tuple[AssetRef, str]:
        """Return ``(reference, provenance)``; the bank only changes on a miss."""
        hit = self.retrieve(spec, matcher)
        if hit is not None:
            return hit.reference, "reused"
        past = self.history(spec.name, spec.category)
        last_error: Exception | None = None
        for attempt in range(1, GENERATOR_ATTEMPTS + 1):
            try:
                reference = generator.generate(spec, past)
                break
            except Exception as exc:  # noqa: BLE001 - retried, then surfaced
                last_error = exc
                logger.warning("reference generation attempt %d/%d failed for %s: %s", attempt, GENERATOR_ATTEMPTS, spec.key, exc)
        else:
            raise GenerationError(f"reference generation failed after {GENERATOR_ATTEMPTS} attempts for {spec.key}") from last_error
        self.insert(spec, reference, shot_index)
        return reference, "generated"

    # -- persistence ----------------------------------------------------------

    def save(self, root: Path | str) -> None:
        """Write one index file plus an images directory per store.

        Entry references are rebound to the bank layout so a save/load round
        trip is the identity on every field.
        """
        root = Path(root)
        for store_name, store in self.stores.items():
            store_dir = root / store_name
            images_dir = store_dir / "images"
            images_dir.mkdir(parents=True, exist_ok=True)
            entries = []
            for key, entry in list(store.items()):
                target = images_dir / f"{key}.png"
                source = Path(entry.reference.path)
                if source.resolve() != target.resolve():
                    shutil.copyfile(source, target)
                    entry = replace(entry, reference=replace(entry.reference, path=str(target)))
                    store[key] = entry
                entries.append(
                    {
                        "key": key,
                        "name": entry.entity.name,
                        "category": entry.entity.category.value,
                        "attributes": dict(entry.entity.state.attributes),
                        "summary": entry.entity.state.summary,
                        "image": f"images/{key}.png",
                        "digest": entry.reference.digest,
                        "created_at_shot": entry.created_at_shot,
                        "sequence": entry.sequence,
                    }
                )
            entries.sort(key=lambda item: item["sequence"])
            index_path = store_dir / "index.json"
            index_path.write_text(json.dumps({"entries": entries}, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, root: Path | str) -> "MemoryBank":
        """Load a persisted bank; an absent root yields an empty bank."""
        root = Path(root)
        bank = cls()
        if not root.exists():
            return bank
        max_sequence = -1
        for store_name in STORE_NAMES:
            index_path = root / store_name / "index.json"
            if not index_path.is_file():
                continue
            try:
                index = json.loads(index_path.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise CorruptIndex(f"unreadable index for {store_name}: {exc}") from exc
            for item in index.get("entries", []):
                key = item["key"]
                image_path = root / store_name / item["image"]
                if not image_path.is_file():
                    raise CorruptIndex(f"missing image for key {key}: {image_path}")
                if sha256_file(image_path) != item["digest"]:
                    raise CorruptIndex(f"digest mismatch for key {key}: {image_path}")
                spec = EntitySpec(
                    name=item["name"],
                    category=EntityCategory(item["category"]),
                    state=AttributeState(attributes=item["attributes"], summary=item["summary"]),
                )
                entry = MemoryEntry(
                    key=key,
                    entity=spec,
                    reference=AssetRef(path=str(image_path), kind="image", digest=item["digest"]),
                    created_at_shot=item["created_at_shot"],
                    sequence=item["sequence"],
                )
                bank.stores[store_name][key] = entry
                max_sequence = max(max_sequence, entry.sequence)
        bank.next_sequence = max_sequence + 1
        return bank

    def __eq__(self, other):
        if not isinstance(other, MemoryBank):
            return NotImplemented
        return self.stores == other.stores and self.next_sequence == other.next_sequence
