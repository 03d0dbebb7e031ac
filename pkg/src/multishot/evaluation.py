"""Consistency evaluation: middle-frame selection, reference-based cosine
scoring with the fixed-denominator normalization rule, and report
aggregation over a benchmark suite.

Feature extraction goes through a pluggable embedder: an in-process mock that
reads pixel statistics, or an external sidecar process speaking a
newline-delimited JSON protocol over stdio.
"""

from __future__ import annotations

import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Protocol, Sequence

from .benchmark import BenchmarkCase, BenchmarkSuite, SUBCLASS_MODES
from .errors import DimensionMismatch, EmbedderError, EmptyShot, ZeroVector

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-length descriptor; ``values`` is absent when nothing was detected."""

    values: tuple[float, ...] | None
    detected: bool

    def __post_init__(self):
        if self.detected and self.values is None:
            raise ValueError("detected vector must carry values")
        if not self.detected and self.values is not None:
            raise ValueError("undetected vector must not carry values")


class Embedder(Protocol):
    """Deterministic frame-to-feature extractor, one of three modes."""

    @property
    def dim(self) -> int: ...

    def identity(self) -> dict: ...

    def embed(self, mode: str, frame: Path, prop_text: str | None = None) -> FeatureVector: ...


def middle_frame(frames: Sequence[Path]) -> Path:
    """Frame at zero-based index floor((F-1)/2); the earlier central frame."""
    if not frames:
        raise EmptyShot("shot has no frames")
    return frames[(len(frames) - 1) // 2]


def cosine(u: FeatureVector, v: FeatureVector) -> float:
    """Standard cosine similarity of two detected vectors."""
    if not u.detected or not v.detected:
        raise EmbedderError("cosine requires two detected vectors")
    if len(u.values) != len(v.values):
        raise DimensionMismatch(f"vector lengths differ: {len(u.values)} != {len(v.values)}")
    dot = math.fsum(a * b for a, b in zip(u.values, v.values))
    nu = math.sqrt(math.fsum(a * a for a in u.values))
    nv = math.sqrt(math.fsum(b * b for b in v.values))
    if nu == 0.0 or nv == 0.0:
        raise ZeroVector("cosine is undefined for an all-zero vector")
    return dot / (nu * nv)


def _features(mode: str, frame: Path, embedder: Embedder, target: str | None) -> FeatureVector:
    vector = embedder.embed(mode, frame, prop_text=target if mode == "prop" else None)
    if vector.detected and len(vector.values) != embedder.dim:
        raise EmbedderError(f"embedder returned {len(vector.values)} values, declared dim {embedder.dim}")
    return vector


def char_features(frame: Path, embedder: Embedder) -> FeatureVector:
    """Aggregated face descriptor of a frame; undetected when no faces."""
    return _features("char", frame, embedder, None)


def prop_features(frame: Path, embedder: Embedder, prop_text: str) -> FeatureVector:
    """Descriptor of the text-grounded prop region; undetected when absent."""
    return _features("prop", frame, embedder, prop_text)


def bg_features(frame: Path, embedder: Embedder) -> FeatureVector:
    """Full-frame descriptor; always detected on a readable frame."""
    return _features("bg", frame, embedder, None)


@dataclass(frozen=True)
class CaseScore:
    """Per-case consistency score with its per-shot evidence."""

    case_id: str
    subclass: str
    score: float
    per_shot_similarities: tuple[float | None, ...]  # raw, shots 2..; None = not detected
    per_shot_detected: tuple[bool, ...]  # shots 1.. (reference first)
    n_out: int
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "case_id": self.case_id,
            "subclass": self.subclass,
            "score": self.score,
            "per_shot_similarities": list(self.per_shot_similarities),
            "per_shot_detected": list(self.per_shot_detected),
            "n_out": self.n_out,
            "warnings": list(self.warnings),
        }


def sequence_score(case: BenchmarkCase, shot_sequences: Sequence[Sequence[Path]], embedder: Embedder) -> CaseScore:
    """Score one produced sequence against its case.

    Reference features come from the middle frame of the first shot. Shots
    beyond the requested count are discarded; under-generation and failed
    detections contribute zero similarity. The denominator is always
    ``required_shots - 1``, and negative similarities are clamped to zero in
    the sum (raw values are kept for audit).
    """
    if not shot_sequences:
        raise EmptyShot(f"case {case.case_id} has no shots")
    mode = SUBCLASS_MODES[case.subclass]
    n_out = len(shot_sequences)
    warnings: list[str] = []
    usable = list(shot_sequences)
    if n_out > case.required_shots:
        usable = usable[: case.required_shots]
        warnings.append(f"discarded {n_out - case.required_shots} extra shot(s)")
    reference = _features(mode, middle_frame(usable[0]), embedder, case.target)
    detected = [reference.detected]
    raw: list[float | None] = []
    total = 0.0
    if not reference.detected:
        warnings.append("target not detected in reference frame; score forced to 0")
        for frames in usable[1:]:
            vector = _features(mode, middle_frame(frames), embedder, case.target)
            detected.append(vector.detected)
            raw.append(None)
    else:
        for i, frames in enumerate(usable[1:], start=2):
            vector = _features(mode, middle_frame(frames), embedder, case.target)
            detected.append(vector.detected)
            if not vector.detected:
                raw.append(None)
                warnings.append(f"target not detected in shot {i}; contributes 0")
                continue
            sim = cosine(reference, vector)
            raw.append(sim)
            total += max(sim, 0.0)
    if n_out == 1:
        warnings.append("single shot produced; no comparison shots")
    if n_out < case.required_shots:
        warnings.append(f"under-generation: {n_out} of {case.required_shots} shots")
    score = total / (case.required_shots - 1)
    return CaseScore(
        case_id=case.case_id,
        subclass=case.subclass,
        score=score,
        per_shot_similarities=tuple(raw),
        per_shot_detected=tuple(detected),
        n_out=n_out,
        warnings=tuple(warnings),
    )


# --------------------------------------------------------------------------
# Embedders
# --------------------------------------------------------------------------


class MockEmbedder:
    """Embeds a frame as its L2-normalized mean-RGB vector (length 3).

    Pairs with the solid-color mock image backend: byte-identical frames give
    identical vectors and different generator colors give cosine < 1, closing
    the end-to-end consistency loop without any vision model.
    """

    dim = 3

    def identity(self) -> dict:
        return {"embedder": "mock-mean-rgb", "dim": self.dim}

    def embed(self, mode: str, frame: Path, prop_text: str | None = None) -> FeatureVector:
        from PIL import Image, ImageStat

        try:
            with Image.open(frame) as img:
                rgb = img.convert("RGB")
                width, height = rgb.size
                if width == 0 or height == 0:
                    return FeatureVector(values=None, detected=False)
                means = ImageStat.Stat(rgb).mean
        except OSError as exc:
            raise EmbedderError(f"cannot read frame {frame}: {exc}") from exc
        norm = math.sqrt(sum(m * m for m in means))
        if norm == 0.0:
            return FeatureVector(values=(0.0, 0.0, 0.0), detected=True)
        return FeatureVector(values=tuple(m / norm for m in means), detected=True)


class SidecarEmbedder:
    """Client for an external embedder process over newline-delimited JSON.

    Protocol: the sidecar prints one handshake record declaring ``dim`` and
    its model identity, then answers one response record per request line.
    Request: ``{"mode", "frame_path", "prop_text"?}``; response:
    ``{"detected", "vector"?, "dim", "error"?}``.
    """

    def __init__(self, command: Sequence[str]):
        try:
            self._proc = subprocess.Popen(
                list(command),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as exc:
            raise EmbedderError(f"cannot start sidecar {command!r}: {exc}") from exc
        handshake = self._read_record()
        if handshake.get("type") != "handshake" or "dim" not in handshake:
            raise EmbedderError(f"bad sidecar handshake: {handshake!r}")
        self._handshake = handshake
        self._dim = int(handshake["dim"])

    @property
    def dim(self) -> int:
        return self._dim

    def identity(self) -> dict:
        return dict(self._handshake)

    def _read_record(self) -> dict:
        line = self._proc.stdout.readline()
        if not line:
            raise EmbedderError("sidecar closed its output stream")
        try:
            return json.loads(line)
        except json.JSONDecodeError as exc:
            raise EmbedderError(f"bad sidecar record: {line!r}") from exc

    def embed(self, mode: str, frame: Path, prop_text: str | None = None) -> FeatureVector:
        request: dict = {"mode": mode, "frame_path": str(frame)}
        if prop_text is not None:
            request["prop_text"] = prop_text
        try:
            self._proc.stdin.write(json.dumps(request) + "\n")
            self._proc.stdin.flush()
        except (OSError, ValueError) as exc:
            raise EmbedderError(f"cannot reach sidecar: {exc}") from exc
        response = self._read_record()
        if response.get("error"):
            raise EmbedderError(f"sidecar error: {response['error']}")
        if int(response.get("dim", -1)) != self._dim:
            raise EmbedderError(f"response dim {response.get('dim')} != handshake dim {self._dim}")
        if not response.get("detected"):
            return FeatureVector(values=None, detected=False)
        return FeatureVector(values=tuple(float(x) for x in response["vector"]), detected=True)

    def close(self) -> None:
        if self._proc.stdin:
            self._proc.stdin.close()
        self._proc.wait(timeout=10)

    def __enter__(self):
        return self

    def __exit__(self, *exc_info):
        self.close()


# --------------------------------------------------------------------------
# Suite evaluation
# --------------------------------------------------------------------------

SHOT_LENGTHS = (4, 8, 12)


@dataclass
class EvalReport:
    """Scores per case plus the (subclass x shot-length) aggregation table."""

    embedder_identity: dict
    case_scores: list[CaseScore] = field(default_factory=list)
    missing: list[str] = field(default_factory=list)
    required_shots: dict[str, int] = field(default_factory=dict)

    def cells(self) -> dict[str, dict[str, float | None]]:
        table: dict[str, dict[str, float | None]] = {}
        for subclass in SUBCLASS_MODES:
            row: dict[str, float | None] = {}
            subclass_scores = [s for s in self.case_scores if s.subclass == subclass]
            for n in SHOT_LENGTHS:
                cell = [s.score for s in subclass_scores if self.required_shots.get(s.case_id) == n]
                row[str(n)] = sum(cell) / len(cell) if cell else None
            row["avg"] = sum(s.score for s in subclass_scores) / len(subclass_scores) if subclass_scores else None
            table[subclass] = row
        return table

    def to_dict(self) -> dict:
        return {
            "embedder": self.embedder_identity,
            "cases": [score.to_dict() for score in self.case_scores],
            "cells": self.cells(),
            "scored": len(self.case_scores),
            "missing": sorted(self.missing),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = [f"{'subclass':<12}" + "".join(f"{n:>8}" for n in SHOT_LENGTHS) + f"{'avg':>8}"]
        for subclass, row in self.cells().items():
            cells = [row[str(n)] for n in SHOT_LENGTHS] + [row["avg"]]
            rendered = "".join(f"{c:8.3f}" if c is not None else f"{'-':>8}" for c in cells)
            lines.append(f"{subclass:<12}{rendered}")
        lines.append(f"scored: {len(self.case_scores)}  missing: {len(self.missing)}")
        return "\n".join(lines)


def evaluate_suite(
    suite: BenchmarkSuite,
    outputs: Mapping[str, Sequence[Sequence[Path]] | None],
    embedder: Embedder,
) -> EvalReport:
    """Score every case with an available output; flag the rest as missing."""
    report = EvalReport(embedder_identity=embedder.identity())
    for case in suite.cases:
        report.required_shots[case.case_id] = case.required_shots
        shot_sequences = outputs.get(case.case_id)
        if not shot_sequences:
            logger.warning("case %s has no run output", case.case_id)
            report.missing.append(case.case_id)
            continue
        report.case_scores.append(sequence_score(case, shot_sequences, embedder))
    return report
