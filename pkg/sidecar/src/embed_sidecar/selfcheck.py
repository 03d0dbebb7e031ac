"""Diagnostic run over the bundled fixtures plus golden-transcript replay."""

from __future__ import annotations

import json
import math
import time
from pathlib import Path

from . import fixture_path
from .config import SidecarConfig
from .features import FeatureEngine, FrameReadError
from .server import handle_request, handshake_record

SIGNIFICANT_DIGITS = 9
TRANSCRIPT_NAME = "golden_transcript.jsonl"


def floats_match(a: float, b: float, digits: int = SIGNIFICANT_DIGITS) -> bool:
    """True when the values agree to ``digits`` significant digits."""
    if a == b:
        return True
    scale = max(abs(a), abs(b))
    return math.isclose(a, b, rel_tol=10.0 ** (1 - digits), abs_tol=10.0 ** (-digits) * scale if scale else 0.0)


def responses_match(expected: dict, actual: dict) -> list[str]:
    """Field-by-field comparison; vectors at 9 significant digits."""
    problems = []
    for key in ("detected", "dim"):
        if expected.get(key) != actual.get(key):
            problems.append(f"field {key!r}: expected {expected.get(key)!r}, got {actual.get(key)!r}")
    # error text may embed machine-local paths; only its presence must agree
    if bool(expected.get("error")) != bool(actual.get("error")):
        problems.append(f"error presence differs: {expected.get('error')!r} vs {actual.get('error')!r}")
    expected_vec = expected.get("vector")
    actual_vec = actual.get("vector")
    if (expected_vec is None) != (actual_vec is None):
        problems.append("vector presence differs")
    elif expected_vec is not None:
        if len(expected_vec) != len(actual_vec):
            problems.append(f"vector length {len(actual_vec)} != {len(expected_vec)}")
        else:
            for i, (e, a) in enumerate(zip(expected_vec, actual_vec)):
                if not floats_match(float(e), float(a)):
                    problems.append(f"vector[{i}] {a!r} != {e!r} at {SIGNIFICANT_DIGITS} significant digits")
                    break
    return problems


def _mode_checks(engine: FeatureEngine, fixtures: Path) -> list[dict]:
    cases = [
        ("char detects the bundled face", "char", "face.png", None, True),
        ("char rejects a blank frame", "char", "blank.png", None, False),
        ("prop grounds its color keyword", "prop", "prop.png", "bright red kite", True),
        ("prop rejects an absent color", "prop", "prop.png", "neon green banner", False),
        ("bg embeds the full frame", "bg", "scene.png", None, True),
    ]
    results = []
    for label, mode, name, prop_text, expect_detected in cases:
        frame = fixtures / name
        start = time.monotonic()
        try:
            vector = engine.extract(mode, str(frame), prop_text)
        except (FrameReadError, ValueError, OSError) as exc:
            results.append({"check": label, "ok": False, "error": str(exc)})
            continue
        elapsed_ms = (time.monotonic() - start) * 1000.0
        detected = vector is not None
        ok = detected == expect_detected
        entry = {"check": label, "ok": ok, "mode": mode, "detected": detected, "latency_ms": round(elapsed_ms, 2)}
        if detected:
            entry["dim"] = len(vector)
            norm = math.sqrt(sum(float(x) ** 2 for x in vector))
            entry["norm"] = norm
            if abs(norm - 1.0) > 1e-9 and norm != 0.0:
                entry["ok"] = False
                entry["error"] = f"vector norm {norm} is not 1"
            if len(vector) != engine.dim:
                entry["ok"] = False
                entry["error"] = f"dim {len(vector)} != handshake dim {engine.dim}"
        results.append(entry)
    return results


def _replay_transcript(engine: FeatureEngine, fixtures: Path, transcript: Path) -> list[dict]:
    results = []
    lines = [json.loads(l) for l in transcript.read_text(encoding="utf-8").splitlines() if l.strip()]
    if not lines or "handshake" not in lines[0]:
        return [{"check": "transcript starts with a handshake", "ok": False}]
    recorded = lines[0]["handshake"]
    actual = handshake_record(engine)
    problems = [f"handshake field {k!r} differs: {actual.get(k)!r} != {v!r}" for k, v in recorded.items() if actual.get(k) != v]
    results.append({"check": "handshake matches recording", "ok": not problems, "problems": problems})
    pending_request = None
    exchange = 0
    for record in lines[1:]:
        if "request" in record:
            if pending_request is not None:
                results.append({"check": "transcript alternates request/response", "ok": False})
                return results
            pending_request = record["request"]
        elif "response" in record:
            if pending_request is None:
                results.append({"check": "transcript alternates request/response", "ok": False})
                return results
            exchange += 1
            request = dict(pending_request)
            request["frame_path"] = str(fixtures / request["frame_path"])
            response = handle_request(engine, json.dumps(request))
            problems = responses_match(record["response"], response)
            results.append({"check": f"transcript exchange {exchange}", "ok": not problems, "problems": problems})
            pending_request = None
    if pending_request is not None:
        results.append({"check": "transcript ends on a response", "ok": False})
    return results


def run_selfcheck(config: SidecarConfig, fixtures: Path | None = None, transcript: Path | None = None) -> dict:
    """Run every diagnostic; the report's ``ok`` drives the exit code."""
    engine = FeatureEngine(config)
    fixtures = fixtures or fixture_path("face.png").parent
    transcript = transcript or fixtures / TRANSCRIPT_NAME
    checks = _mode_checks(engine, fixtures)
    if transcript.is_file():
        checks.extend(_replay_transcript(engine, fixtures, transcript))
    else:
        checks.append({"check": "golden transcript present", "ok": False, "error": f"missing {transcript}"})
    return {
        "handshake": handshake_record(engine),
        "checks": checks,
        "ok": all(c["ok"] for c in checks),
    }
