"""Benchmark case schema, suite loader/validator, and scaffolding helpers.

A suite is a directory of one JSON file per case, mirrored as a 3x3 grid:
``<suite>/<subclass>/<NN>_shots/<case>.json``. The full suite holds 54 cases:
3 subclasses x 3 shot lengths x 6 samples.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .errors import LayoutError

SUBCLASS_MODES = {"character": "char", "prop": "prop", "background": "bg"}
SHOT_LENGTHS = (4, 8, 12)
SAMPLES_PER_CELL = 6


@dataclass(frozen=True)
class BenchmarkCase:
    """One scripted consistency test: shots plus the persistent target."""

    case_id: str
    subclass: str  # character | prop | background
    required_shots: int
    shot_texts: tuple[str, ...]
    target: str  # character description / prop phrase / scene label

    def to_dict(self) -> dict:
        return {
            "id": self.case_id,
            "subclass": self.subclass,
            "required_shots": self.required_shots,
            "shots": list(self.shot_texts),
            "target": self.target,
        }


@dataclass(frozen=True)
class BenchmarkSuite:
    cases: tuple[BenchmarkCase, ...]
    complete: bool

    def by_id(self) -> dict[str, BenchmarkCase]:
        return {case.case_id: case for case in self.cases}


def _load_case(path: Path, violations: list[str]) -> BenchmarkCase | None:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        violations.append(f"{path}: unreadable case file ({exc})")
        return None
    problems = []
    case_id = data.get("id")
    if not isinstance(case_id, str) or not case_id:
        problems.append("missing or empty 'id'")
        case_id = path.stem
    subclass = data.get("subclass")
    if subclass not in SUBCLASS_MODES:
        problems.append(f"bad subclass tag {subclass!r} (expected one of {sorted(SUBCLASS_MODES)})")
    required = data.get("required_shots")
    if required not in SHOT_LENGTHS:
        problems.append(f"required_shots {required!r} not in {SHOT_LENGTHS}")
    shots = data.get("shots")
    if not isinstance(shots, list) or not all(isinstance(s, str) and s.strip() for s in shots):
        problems.append("'shots' must be a list of non-empty strings")
    elif required in SHOT_LENGTHS and len(shots) != required:
        problems.append(f"claims {required} shots but lists {len(shots)}")
    target = data.get("target")
    if not isinstance(target, str) or not target.strip():
        problems.append("missing or empty 'target'")
    if problems:
        violations.extend(f"{path} [{case_id}]: {p}" for p in problems)
        return None
    return BenchmarkCase(
        case_id=case_id,
        subclass=subclass,
        required_shots=required,
        shot_texts=tuple(shots),
        target=target,
    )


def validate_suite_layout(directory: Path | str, expect_full: bool = False) -> BenchmarkSuite:
    """Load all case files under ``directory`` and verify the layout.

    With ``expect_full`` every (subclass, shot-length) cell must hold exactly
    six cases. Raises :class:`LayoutError` listing every violation found.
    """
    directory = Path(directory)
    if not directory.is_dir():
        raise LayoutError([f"suite directory does not exist: {directory}"])
    violations: list[str] = []
    cases: list[BenchmarkCase] = []
    seen_ids: set[str] = set()
    for path in sorted(directory.rglob("*.json")):
        if path.name == "suite.json":
            continue
        case = _load_case(path, violations)
        if case is None:
            continue
        if case.case_id in seen_ids:
            violations.append(f"{path}: duplicate case id {case.case_id!r}")
            continue
        seen_ids.add(case.case_id)
        cases.append(case)
    counts = {(subclass, n): 0 for subclass in SUBCLASS_MODES for n in SHOT_LENGTHS}
    for case in cases:
        counts[(case.subclass, case.required_shots)] += 1
    complete = all(count == SAMPLES_PER_CELL for count in counts.values())
    if expect_full and not complete:
        for (subclass, n), count in sorted(counts.items()):
            if count != SAMPLES_PER_CELL:
                violations.append(f"cell ({subclass}, {n} shots) has {count} cases, expected {SAMPLES_PER_CELL}")
    if violations:
        raise LayoutError(violations)
    return BenchmarkSuite(cases=tuple(sorted(cases, key=lambda c: c.case_id)), complete=complete)


def scaffold_suite(directory: Path | str, force: bool = False) -> list[Path]:
    """Write the 3x3 grid of cell directories with one case template each."""
    directory = Path(directory)
    if directory.exists() and any(directory.iterdir()) and not force:
        raise LayoutError([f"target directory is not empty: {directory} (use force to overwrite)"])
    written = []
    for subclass in SUBCLASS_MODES:
        for n in SHOT_LENGTHS:
            cell = directory / subclass / f"{n:02d}_shots"
            cell.mkdir(parents=True, exist_ok=True)
            template = {
                "id": f"{subclass}_{n:02d}_01",
                "subclass": subclass,
                "required_shots": n,
                "shots": ["" for _ in range(n)],
                "target": "",
            }
            path = cell / "case_template.json"
            path.write_text(json.dumps(template, indent=2) + "\n", encoding="utf-8")
            written.append(path)
    return written


STORY_PROMPT = """\
Role:
You are a professional film screenwriter.

Task:
Generate 54 short story scripts: 6 separate samples for each of the 9
combinations of total shot count and persistent core element listed below.

Combinations:
- (4 shots, character persistent)   - (4 shots, prop persistent)   - (4 shots, scene persistent)
- (8 shots, character persistent)   - (8 shots, prop persistent)   - (8 shots, scene persistent)
- (12 shots, character persistent)  - (12 shots, prop persistent)  - (12 shots, scene persistent)

Structure and length:
- Each story must have exactly 4, 8, or 12 shots.
- Each story must follow a clear three-act structure, with shots allocated
  rationally across the acts (roughly 20-30% / 40-60% / 20-30%).

Character and prop:
- Exactly one character, whose age must be greater than 20.
- Exactly one prop. Its color must be bright and high-contrast (for example
  bright red, vivid yellow, neon green); it must be at least as large as a
  backpack or a large book, visually prominent, and easy to separate from the
  background.

Content tone:
- The story must be family-friendly; violent, gory, sexual, or disturbing
  content is strictly forbidden.

Persistence rules (critical):
- Character persistent: the character appears in all shots with unchanged
  appearance; the scene differs in every shot; the prop changes status
  across shots (appears in some shots and not in others).
- Prop persistent: the prop appears in all shots with unchanged appearance;
  the scene differs in every shot; the character changes status across shots.
- Scene persistent: every shot takes place in the same location; both the
  character and the prop change status across shots (for example:
  SHOT 1 - character + prop, SHOT 2 - character only, SHOT 3 - prop only,
  SHOT 4 - neither).

Formatting:
- Output only the shot content. Each shot is a single separate paragraph
  beginning with SHOT [number] (SHOT 1, SHOT 2, ...); no bullet points.
- Shot descriptions must read like natural screenplay scene description:
  what is seen on screen, what the character does, what happens. Technical
  camera terms (close-up, pan, camera follows, and similar) are strictly
  forbidden.
- On the first appearance of the character or prop, give a detailed
  description in parentheses right after the name (character: age over 20
  plus appearance and clothing; prop: detailed appearance including its
  bright color and relative size). After the first appearance the
  appearance must remain unchanged and must never be re-described in
  parentheses.
"""


def emit_story_prompt() -> str:
    """The generation prompt used to author the 54 benchmark scripts."""
    return STORY_PROMPT
