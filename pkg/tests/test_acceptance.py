"""End-to-end acceptance checks. Run with ``pytest tests/test_acceptance.py -s``
to see one pass/fail line per criterion.

Each criterion is timed and asserted against its runtime budget in addition
to its functional tolerance.
"""

import json
import math
import random
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest

from multishot.agents import build_video_prompt, load_banned_terms
from multishot.benchmark import BenchmarkCase, validate_suite_layout
from multishot.domain import AssetRef, AttributeState, EntityCategory, EntitySpec, ShotDescription
from multishot.errors import LayoutError
from multishot.evaluation import FeatureVector, MockEmbedder, sequence_score
from multishot.hashing import sha256_file
from multishot.memory import ExactMatcher, MemoryBank

from conftest import (
    background_persistent_shots,
    character_persistent_shots,
    make_rules,
    make_shot,
    mock_stack,
    prop_persistent_shots,
    run_fixture,
)


@contextmanager
def criterion(number, description, limit_seconds):
    start = time.monotonic()
    try:
        yield
    except BaseException:
        print(f"criterion {number:2d}: FAIL - {description}")
        raise
    elapsed = time.monotonic() - start
    assert elapsed < limit_seconds, f"criterion {number} took {elapsed:.2f}s, budget {limit_seconds}s"
    print(f"criterion {number:2d}: PASS - {description} ({elapsed:.2f}s)")


class TableEmbedder:
    """Embedder returning preset vectors keyed by frame stem; None = undetected."""

    def __init__(self, table, dim):
        self.table = table
        self.dim = dim

    def identity(self):
        return {"embedder": "table", "dim": self.dim}

    def embed(self, mode, frame, prop_text=None):
        values = self.table[Path(frame).stem]
        if values is None:
            return FeatureVector(values=None, detected=False)
        return FeatureVector(values=tuple(float(v) for v in values), detected=True)


def make_case(case_id, subclass, required, target):
    return BenchmarkCase(
        case_id=case_id,
        subclass=subclass,
        required_shots=required,
        shot_texts=tuple(f"SHOT {i + 1}" for i in range(required)),
        target=target,
    )


def single_frames(names):
    return [[Path(f"{name}.png")] for name in names]


def score_run(manifest, subclass, target):
    case = make_case(f"{subclass}_{manifest.run_id}", subclass, len(manifest.shots), target)
    sequences = [video.frame_paths() for video in manifest.videos()]
    return sequence_score(case, sequences, MockEmbedder()).score


def test_criterion_01_normalization_worked_example():
    with criterion(1, "fixed-denominator normalization, 6 of 8 shots -> sum of 5 sims / 7", 1.0):
        case = make_case("character_08_x", "character", 8, "t")
        # all produced shots identical to the reference: exactly 5/7
        perfect = TableEmbedder({f"p{i}": (0.6, 0.8) for i in range(6)}, dim=2)
        score = sequence_score(case, single_frames([f"p{i}" for i in range(6)]), perfect)
        assert abs(score.score - 5.0 / 7.0) <= 1e-12
        assert score.n_out == 6
        # constructed non-trivial similarities: score == sum(raw sims)/7 exactly
        angles = [0.1, 0.4, 0.9, 1.2, 0.2]
        table = {"q0": (1.0, 0.0)}
        table.update({f"q{i + 1}": (math.cos(a), math.sin(a)) for i, a in enumerate(angles)})
        varied = sequence_score(case, single_frames([f"q{i}" for i in range(6)]), TableEmbedder(table, dim=2))
        assert len(varied.per_shot_similarities) == 5
        assert varied.score == sum(varied.per_shot_similarities) / 7.0


def test_criterion_02_scoring_oracle_equivalence():
    with criterion(2, "cosine + sequence scoring matches brute-force oracle on 1200 instances", 30.0):
        rng = random.Random(20240817)
        worst = 0.0
        for trial in range(1200):
            required = rng.choice((4, 8, 12))
            n_out = rng.randrange(1, required + 4)
            vectors = [
                None if rng.random() < 0.1 else tuple(rng.uniform(-1, 1) for _ in range(3))
                for _ in range(n_out)
            ]
            vectors = [v if v is None or any(v) else (1.0, 0.0, 0.0) for v in vectors]
            table = {f"f{i}": v for i, v in enumerate(vectors)}
            case = make_case(f"character_{required:02d}_{trial}", "character", required, "t")
            score = sequence_score(case, single_frames(list(table)), TableEmbedder(table, dim=3))
            usable = vectors[:required]
            expected = 0.0
            if usable[0] is not None:
                ref = np.array(usable[0])
                for v in usable[1:]:
                    if v is None:
                        continue
                    sim = float(ref @ np.array(v) / (np.linalg.norm(ref) * np.linalg.norm(v)))
                    expected += max(sim, 0.0)
                expected /= required - 1
            worst = max(worst, abs(score.score - expected))
        assert worst <= 1e-9, f"max deviation {worst}"


def test_criterion_03_memory_vs_no_memory(tmp_path):
    with criterion(3, "4-shot character fixture: score 1.0 with memory, < 1.0 without", 10.0):
        shots = character_persistent_shots(4)
        with_memory, _ = run_fixture(tmp_path, shots, out_name="with-memory")
        assert abs(score_run(with_memory, "character", "Mira") - 1.0) <= 1e-6
        without, _ = run_fixture(tmp_path, shots, out_name="no-memory", ablation_no_memory=True)
        assert score_run(without, "character", "Mira") < 1.0


def test_criterion_04_per_bank_ablation_direction(tmp_path):
    with criterion(4, "disabling only the prop bank drops the prop score and nothing else", 30.0):
        fixtures = {
            "character": (character_persistent_shots(4), "Mira"),
            "prop": (prop_persistent_shots(4), "red kite"),
            "background": (background_persistent_shots(4), "old lighthouse"),
        }
        scores = {}
        for subclass, (shots, target) in fixtures.items():
            full, _ = run_fixture(tmp_path, shots, out_name=f"{subclass}-full")
            ablated, _ = run_fixture(tmp_path, shots, out_name=f"{subclass}-noprop", enable_prop_bank=False)
            scores[subclass] = (score_run(full, subclass, target), score_run(ablated, subclass, target))
        assert scores["prop"][1] < scores["prop"][0]
        assert abs(scores["character"][1] - scores["character"][0]) <= 1e-12
        assert abs(scores["background"][1] - scores["background"][0]) <= 1e-12


def test_criterion_05_reuse_economy(tmp_path):
    with criterion(5, "8 persistent shots: 1 character reference, 8 keyframes, 8 videos", 10.0):
        manifest, backends = run_fixture(tmp_path, character_persistent_shots(8))
        assert all(e.status == "done" for e in manifest.shots)
        char_refs = [c for c in backends.image.calls if "/characters/images/" in c.out_path]
        keyframes = [c for c in backends.image.calls if c.out_path.endswith("keyframe.png")]
        assert len(char_refs) == 1
        assert len(keyframes) == 8
        assert len(backends.video.calls) == 8


def test_criterion_06_temporal_update(tmp_path):
    with criterion(6, "time jump creates a second bank entry conditioned on one prior state", 5.0):
        from PIL import Image

        histories = []

        class Generator:
            def generate(self, spec, history):
                histories.append(list(history))
                path = tmp_path / f"gen_{len(histories)}.png"
                Image.new("RGB", (8, 8), (len(histories) * 40, 0, 0)).save(path)
                return AssetRef.for_image(path)

        def anna(age):
            return EntitySpec(
                name="Anna",
                category=EntityCategory.CHARACTER,
                state=AttributeState(attributes={"age": age}, summary=f"Anna at {age}"),
            )

        bank = MemoryBank()
        bank.retrieve_or_generate(anna("20"), 1, ExactMatcher(), Generator())
        bank.retrieve_or_generate(anna("60"), 2, ExactMatcher(), Generator())
        assert len(bank.store_for(EntityCategory.CHARACTER)) == 2
        assert len(histories) == 2
        assert len(histories[1]) == 1
        assert histories[1][0].entity.state.attributes["age"] == "20"


def test_criterion_07_persistence_and_resume(tmp_path):
    with criterion(7, "bank round-trip equality; resume never touches completed shots", 10.0):
        from multishot.pipeline import RunConfig, RunManifest, resume, run
        from multishot.domain import Synopsis

        # round-trip equality on a populated bank
        first, _ = run_fixture(tmp_path, character_persistent_shots(3), out_name="seed")
        bank = MemoryBank.load(first.memory_root)
        assert bank.size() >= 2
        copy_root = tmp_path / "bank-copy"
        bank.save(copy_root)
        assert MemoryBank.load(copy_root) == bank

        # halted run, then resume: earlier artifacts byte-identical, no regeneration
        shots = character_persistent_shots(4)
        rules = make_rules(shots)
        rules[("memory_agent", 3)] = "broken"
        halted = run(
            Synopsis(text="A quiet story."),
            RunConfig(output_root=tmp_path / "halt"),
            mock_stack(rules),
            ExactMatcher(),
        )
        assert [e.status for e in halted.shots] == ["done", "done", "failed", "pending"]
        before = {
            str(p.relative_to(halted.run_dir)): sha256_file(p)
            for p in (halted.run_dir / "shots").rglob("*")
            if p.is_file()
        }
        fresh = mock_stack(make_rules(shots))
        resumed = resume(halted.path, RunConfig(output_root=tmp_path / "halt"), fresh, ExactMatcher())
        assert all(e.status == "done" for e in resumed.shots)
        for rel, digest in before.items():
            assert sha256_file(resumed.run_dir / rel) == digest, rel
        assert not any("/shots/1/" in c.out_path or "/shots/2/" in c.out_path for c in fresh.image.calls)
        again = RunManifest.load(resumed.path)
        assert all(e.status == "done" for e in again.shots)


def _write_case(directory, case_id, subclass, required, shots=None, target="t", overrides=None):
    cell = directory / subclass / f"{required:02d}_shots"
    cell.mkdir(parents=True, exist_ok=True)
    data = {
        "id": case_id,
        "subclass": subclass,
        "required_shots": required,
        "shots": shots if shots is not None else [f"SHOT {i + 1}: text." for i in range(required)],
        "target": target,
    }
    data.update(overrides or {})
    (cell / f"{case_id}.json").write_text(json.dumps(data))


def test_criterion_08_benchmark_layout(tmp_path):
    with criterion(8, "54-case suite accepted; shot-count, cell, and tag defects each rejected", 5.0):
        suite_dir = tmp_path / "suite"
        for subclass in ("character", "prop", "background"):
            for n in (4, 8, 12):
                for sample in range(6):
                    _write_case(suite_dir, f"{subclass}_{n:02d}_{sample:02d}", subclass, n)
        suite = validate_suite_layout(suite_dir, expect_full=True)
        assert suite.complete and len(suite.cases) == 54

        # wrong shot count
        bad = tmp_path / "bad-count"
        _write_case(bad, "c1", "character", 8, shots=["SHOT 1: x"] * 4)
        with pytest.raises(LayoutError) as err:
            validate_suite_layout(bad)
        assert "claims 8 shots but lists 4" in "\n".join(err.value.violations)

        # missing cell under expect_full
        sparse = tmp_path / "sparse"
        _write_case(sparse, "c2", "character", 4)
        with pytest.raises(LayoutError) as err:
            validate_suite_layout(sparse, expect_full=True)
        assert any("has 0 cases" in v for v in err.value.violations)

        # bad subclass tag
        tagged = tmp_path / "bad-tag"
        _write_case(tagged, "c3", "character", 4, overrides={"subclass": "scenery"})
        with pytest.raises(LayoutError) as err:
            validate_suite_layout(tagged)
        assert any("scenery" in v for v in err.value.violations)


def test_criterion_09_prompt_contract():
    with criterion(9, "video prompts <= 500 chars and free of camera vocabulary over 10^4 plots", 30.0):
        terms = load_banned_terms()
        words = (
            "lantern river runs walks quietly bright evening stone door ladder "
            "garden wind letter table harbor slowly turns lifts waits holds"
        ).split()
        rng = random.Random(5150)
        import re

        patterns = [re.compile(rf"\b{re.escape(t)}\b", re.IGNORECASE) for t in terms]
        for i in range(10_000):
            plot_words = rng.choices(words, k=rng.randrange(3, 160))
            if rng.random() < 0.5:
                for _ in range(rng.randrange(1, 4)):
                    plot_words.insert(rng.randrange(len(plot_words)), rng.choice(terms))
            shot = ShotDescription(
                index=1,
                scene="room",
                scene_description="A room.",
                plot=" ".join(plot_words),
                characters=(),
                key_props=(),
                environment_info="",
            )
            prompt = build_video_prompt(shot)
            assert len(prompt) <= 500, i
            assert not any(p.search(prompt) for p in patterns), (i, prompt)


def test_criterion_10_determinism(tmp_path):
    with criterion(10, "identical runs produce digest-identical artifacts and reports", 30.0):
        from multishot.benchmark import BenchmarkSuite
        from multishot.evaluation import evaluate_suite

        shots = [make_shot(i, characters=["Mira"], key_props=["red kite"]) for i in range(1, 5)]
        reports = []
        for out_name in ("first", "second"):
            manifest, _ = run_fixture(tmp_path, shots, out_name=out_name)
            files = sorted(p.relative_to(manifest.run_dir) for p in manifest.run_dir.rglob("*") if p.is_file())
            digests = {str(rel): sha256_file(manifest.run_dir / rel) for rel in files}
            case = make_case("character_04_det", "character", 4, "Mira")
            suite = BenchmarkSuite(cases=(case,), complete=False)
            outputs = {case.case_id: [v.frame_paths() for v in manifest.videos()]}
            report = evaluate_suite(suite, outputs, MockEmbedder())
            reports.append((digests, report.to_json()))
        assert reports[0] == reports[1]


def test_criterion_11_sidecar_protocol():
    sidecar = pytest.importorskip(
        "embed_sidecar", reason="secondary embedder sidecar not installed; primary suite stands alone"
    )
    with criterion(11, "sidecar handshake, detection behavior, and vector fidelity", 60.0):
        import subprocess
        import sys

        from PIL import Image
        import tempfile

        from multishot.evaluation import SidecarEmbedder

        face = sidecar.fixture_path("face.png")
        assert face.is_file(), "sidecar face fixture missing"
        with tempfile.TemporaryDirectory() as tmp:
            blank = Path(tmp) / "blank.png"
            Image.new("RGB", (64, 64), (255, 255, 255)).save(blank)
            with SidecarEmbedder([sys.executable, "-m", "embed_sidecar", "serve"]) as embedder:
                assert embedder.dim == int(embedder.identity()["dim"])
                missing = embedder.embed("char", blank)
                assert not missing.detected
                found = embedder.embed("char", face)
                assert found.detected
                assert len(found.values) == embedder.dim
                norm = math.sqrt(sum(v * v for v in found.values))
                assert abs(norm - 1.0) <= 1e-6
                # vectors survive the wire with at least 9 significant digits
                again = embedder.embed("char", face)
                assert found.values == again.values
        check = subprocess.run(
            [sys.executable, "-m", "embed_sidecar", "selfcheck"],
            capture_output=True,
            text=True,
            timeout=120,
        )
        assert check.returncode == 0, check.stdout + check.stderr
