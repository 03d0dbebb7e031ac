"""End-to-end shot loop: plan once, then per shot analyze, resolve entity
references through the memory bank, generate a keyframe, and animate it.

Shots are strictly sequential; any agent or backend error marks the current
shot failed, persists the manifest, and halts so a later resume continues
from a coherent bank state.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

from .agents import build_keyframe_request, build_video_prompt, memory_analyze_shot, storyboard_plan
from .backends import ImageBackend, TextBackend, VideoBackend
from .domain import (
    AssetRef,
    EntityCategory,
    EntitySpec,
    ResolvedEntity,
    ShotRecord,
    Storyboard,
    Synopsis,
    parse_storyboard,
)
from .errors import GenerationError, MultishotError, SnapshotMismatch
from .hashing import fnv1a64, sha256_file
from .memory import GENERATOR_ATTEMPTS, MemoryBank, SemanticMatcher, STORE_NAMES

logger = logging.getLogger(__name__)


@dataclass
class Backends:
    text: TextBackend
    image: ImageBackend
    video: VideoBackend


@dataclass
class RunConfig:
    output_root: Path
    memory_root: Path | None = None  # default: <run dir>/memory (fresh bank per run)
    enable_character_bank: bool = True
    enable_prop_bank: bool = True
    enable_background_bank: bool = True
    ablation_no_memory: bool = False
    frames_per_shot: int = 5
    run_id: str | None = None
    profile: str = "mock"

    def bank_enabled(self, category: EntityCategory) -> bool:
        if self.ablation_no_memory:
            return False
        return {
            EntityCategory.CHARACTER: self.enable_character_bank,
            EntityCategory.PROP: self.enable_prop_bank,
            EntityCategory.BACKGROUND: self.enable_background_bank,
        }[category]

    def echo(self) -> dict:
        return {
            "enable_character_bank": self.enable_character_bank,
            "enable_prop_bank": self.enable_prop_bank,
            "enable_background_bank": self.enable_background_bank,
            "ablation_no_memory": self.ablation_no_memory,
            "frames_per_shot": self.frames_per_shot,
            "profile": self.profile,
        }


@dataclass
class ShotEntry:
    index: int
    status: str = "pending"  # pending | done | failed
    error: str | None = None
    record: ShotRecord | None = None
    bank_snapshot: dict[str, str] | None = None


@dataclass
class RunManifest:
    run_id: str
    run_dir: Path
    memory_root: Path
    synopsis: Synopsis
    storyboard: Storyboard
    config_echo: dict
    shots: list[ShotEntry] = field(default_factory=list)

    @property
    def path(self) -> Path:
        return self.run_dir / "manifest.json"

    def first_incomplete(self) -> int | None:
        for i, entry in enumerate(self.shots):
            if entry.status != "done":
                return i
        return None

    def last_done_snapshot(self) -> dict[str, str] | None:
        snapshot = None
        for entry in self.shots:
            if entry.status == "done" and entry.bank_snapshot:
                snapshot = entry.bank_snapshot
        return snapshot

    def videos(self) -> list[AssetRef]:
        """The run's final artifact: shot videos in narrative order."""
        return [entry.record.video for entry in self.shots if entry.record is not None]

    def to_dict(self) -> dict:
        base = self.run_dir
        try:
            memory = self.memory_root.relative_to(base).as_posix()
        except ValueError:
            memory = str(self.memory_root)
        return {
            "run_id": self.run_id,
            "memory_root": memory,
            "config": self.config_echo,
            "storyboard": self.storyboard.to_dict(),
            "shots": [
                {
                    "index": entry.index,
                    "status": entry.status,
                    "error": entry.error,
                    "record": entry.record.to_dict(base) if entry.record else None,
                    "bank_snapshot": entry.bank_snapshot,
                }
                for entry in self.shots
            ],
        }

    def save(self) -> None:
        self.run_dir.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, manifest_path: Path | str) -> "RunManifest":
        manifest_path = Path(manifest_path)
        run_dir = manifest_path.parent
        data = json.loads(manifest_path.read_text(encoding="utf-8"))
        storyboard = parse_storyboard(json.dumps(data["storyboard"]))
        memory_root = Path(data["memory_root"])
        if not memory_root.is_absolute():
            memory_root = run_dir / memory_root
        shots = []
        for item in data["shots"]:
            record = ShotRecord.from_dict(item["record"], run_dir) if item.get("record") else None
            shots.append(
                ShotEntry(
                    index=item["index"],
                    status=item["status"],
                    error=item.get("error"),
                    record=record,
                    bank_snapshot=item.get("bank_snapshot"),
                )
            )
        return cls(
            run_id=data["run_id"],
            run_dir=run_dir,
            memory_root=memory_root,
            synopsis=storyboard.synopsis,
            storyboard=storyboard,
            config_echo=data["config"],
            shots=shots,
        )


def default_run_id(synopsis: Synopsis) -> str:
    return f"run-{fnv1a64(synopsis.text.encode('utf-8')) & 0xFFFFFFFF:08x}"


def _safe_name(name: str) -> str:
    return re.sub(r"[^a-z0-9_-]+", "_", name.strip().lower())


class _BankGenerator:
    """Reference generator bound to a bank store directory.

    Passes the full ordered history as conditioning images so temporal change
    preserves identity.
    """

    def __init__(self, image_backend: ImageBackend, memory_root: Path, category: EntityCategory):
        self._image = image_backend
        self._dir = memory_root / category.store_name / "images"

    def generate(self, spec: EntitySpec, history) -> AssetRef:
        references = [entry.reference for entry in history]
        return self._image.generate(
            reference_prompt(spec, len(references)),
            references,
            self._dir / f"{spec.key}.png",
        )


def reference_prompt(spec: EntitySpec, history_size: int) -> str:
    attrs = spec.state.canonical_serialization().replace("\n", ", ")
    prompt = f"Reference image of {spec.category.value} {spec.name}: {spec.state.summary}"
    if attrs:
        prompt += f" ({attrs})"
    if history_size:
        prompt += f". Preserve the identity shown in the {history_size} earlier reference image(s); apply the described change."
    return prompt


def _bank_snapshot(memory_root: Path) -> dict[str, str]:
    snapshot = {}
    for store in STORE_NAMES:
        index = memory_root / store / "index.json"
        if index.is_file():
            snapshot[store] = sha256_file(index)
    return snapshot


def _resolve_entity(
    spec: EntitySpec,
    shot_index: int,
    bank: MemoryBank,
    config: RunConfig,
    backends: Backends,
    matcher: SemanticMatcher,
    manifest: RunManifest,
) -> ResolvedEntity:
    if config.bank_enabled(spec.category):
        generator = _BankGenerator(backends.image, manifest.memory_root, spec.category)
        reference, provenance = bank.retrieve_or_generate(spec, shot_index, matcher, generator)
        return ResolvedEntity(spec=spec, reference=reference, provenance=provenance)
    # Disabled bank: always generate fresh, shot-salted, never insert. The
    # salt models the per-shot drift a real generator exhibits without reuse.
    out_path = manifest.run_dir / "shots" / str(shot_index) / "refs" / f"{_safe_name(spec.name)}.png"
    last_error: Exception | None = None
    for _ in range(GENERATOR_ATTEMPTS):
        try:
            reference = backends.image.generate(reference_prompt(spec, 0), [], out_path, salt=f"shot-{shot_index}")
            return ResolvedEntity(spec=spec, reference=reference, provenance="generated")
        except Exception as exc:  # noqa: BLE001
            last_error = exc
    raise GenerationError(f"unbanked reference generation failed for {spec.key}") from last_error


def _execute_shots(manifest: RunManifest, bank: MemoryBank, config: RunConfig, backends: Backends, matcher: SemanticMatcher) -> RunManifest:
    start = manifest.first_incomplete()
    if start is None:
        return manifest
    for entry in manifest.shots[start:]:
        if entry.status == "failed":
            entry.status = "pending"
            entry.error = None
    manifest.save()
    for position in range(start, len(manifest.shots)):
        entry = manifest.shots[position]
        shot = manifest.storyboard.shots[position]
        shot_dir = manifest.run_dir / "shots" / str(shot.index)
        try:
            analysis = memory_analyze_shot(shot, backends.text)
            resolved = tuple(
                _resolve_entity(spec, shot.index, bank, config, backends, matcher, manifest)
                for spec in analysis.entities
            )
            request = build_keyframe_request(shot, [(r.spec, r.reference) for r in resolved])
            keyframe = backends.image.generate(request.prompt, request.references, shot_dir / "keyframe.png")
            video_prompt = build_video_prompt(shot, llm=backends.text)
            video = backends.video.animate(keyframe, video_prompt, shot_dir / "video")
            entry.record = ShotRecord(
                shot=shot,
                resolved_entities=resolved,
                keyframe_prompt=request.prompt,
                keyframe=keyframe,
                video_prompt=video_prompt,
                video=video,
            )
            bank.save(manifest.memory_root)
            entry.bank_snapshot = _bank_snapshot(manifest.memory_root)
            entry.status = "done"
            manifest.save()
            logger.info("shot %d done (%d entities)", shot.index, len(resolved))
        except MultishotError as exc:
            entry.status = "failed"
            entry.error = str(exc)
            manifest.save()
            logger.error("shot %d failed, halting run: %s", shot.index, exc)
            break
    return manifest


def run(
    synopsis: Synopsis,
    config: RunConfig,
    backends: Backends,
    matcher: SemanticMatcher,
    storyboard: Storyboard | None = None,
) -> RunManifest:
    """Execute a full run; returns the manifest whatever the final status.

    A pre-existing ``config.memory_root`` warm-starts the bank; the default is
    a fresh bank under the run directory.
    """
    if storyboard is None:
        storyboard = storyboard_plan(synopsis, backends.text)
    run_id = config.run_id or default_run_id(synopsis)
    run_dir = Path(config.output_root) / run_id
    memory_root = Path(config.memory_root) if config.memory_root else run_dir / "memory"
    bank = MemoryBank.load(memory_root)
    manifest = RunManifest(
        run_id=run_id,
        run_dir=run_dir,
        memory_root=memory_root,
        synopsis=synopsis,
        storyboard=storyboard,
        config_echo={"run_id": run_id, **config.echo()},
        shots=[ShotEntry(index=shot.index) for shot in storyboard.shots],
    )
    return _execute_shots(manifest, bank, config, backends, matcher)


def resume(
    manifest_path: Path | str,
    config: RunConfig,
    backends: Backends,
    matcher: SemanticMatcher,
) -> RunManifest:
    """Continue a halted run from its first non-done shot.

    Completed shot records are never regenerated; the persisted bank must
    match the digests recorded with the last done shot.
    """
    manifest = RunManifest.load(manifest_path)
    if manifest.first_incomplete() is None:
        return manifest
    recorded = manifest.last_done_snapshot()
    if recorded is not None:
        current = _bank_snapshot(manifest.memory_root)
        if current != recorded:
            raise SnapshotMismatch(
                f"memory bank at {manifest.memory_root} does not match the manifest snapshot: {recorded} != {current}"
            )
    bank = MemoryBank.load(manifest.memory_root)
    return _execute_shots(manifest, bank, config, backends, matcher)
