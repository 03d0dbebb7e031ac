"""Model-backend contracts plus deterministic mocks and HTTP adapters.

Every contract has a mock whose outputs are pure functions of its inputs, so
entire pipeline runs are bit-reproducible without any model in the loop. The
HTTP adapters speak a deliberately thin JSON scheme; provider-specific request
shapes belong in per-provider config profiles, not in code.
"""

from __future__ import annotations

import base64
import logging
import os
import shutil
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping, Protocol, Sequence

import requests

from .domain import AssetRef
from .errors import DecodeError, HttpStatus, IoError, QueueExhausted, Timeout, ValidationError
from .hashing import fnv1a64

logger = logging.getLogger(__name__)

MOCK_IMAGE_SIZE = 64


class TextBackend(Protocol):
    def complete(self, prompt: str, attachments: Sequence[AssetRef] = (), meta: Mapping[str, Any] | None = None) -> str: ...


class ImageBackend(Protocol):
    def generate(self, prompt: str, references: Sequence[AssetRef], out_path: Path, salt: str | None = None) -> AssetRef: ...


class VideoBackend(Protocol):
    def animate(self, keyframe: AssetRef, prompt: str, out_dir: Path) -> AssetRef: ...


@dataclass(frozen=True)
class BackendConfig:
    """Connection settings for a remote backend; secrets only by env var NAME."""

    endpoint: str
    model: str
    timeout: float = 60.0
    max_retries: int = 2
    api_key_env: str | None = None
    backoff_base: float = 0.5

    def __post_init__(self):
        if not self.endpoint:
            raise ValidationError("endpoint must be non-empty", field_path="endpoint")
        if self.timeout <= 0:
            raise ValidationError("timeout must be positive", field_path="timeout")
        if self.max_retries < 0:
            raise ValidationError("max_retries must be >= 0", field_path="max_retries")


# --------------------------------------------------------------------------
# Mocks
# --------------------------------------------------------------------------


@dataclass
class TextCall:
    prompt: str
    meta: dict


class MockTextBackend:
    """Scripted text backend: a consumable queue or a (template, shot) rule table.

    Rule keys are ``(template, shot_index)``; a rule with ``shot_index`` None
    matches any shot of that template.
    """

    def __init__(self, queue: Sequence[str] | None = None, rules: Mapping[tuple[str, int | None], str] | None = None):
        if (queue is None) == (rules is None):
            raise ValidationError("provide exactly one of queue or rules")
        self._queue = list(queue) if queue is not None else None
        self._rules = dict(rules) if rules is not None else None
        self._lock = threading.Lock()
        self.calls: list[TextCall] = []

    def complete(self, prompt: str, attachments: Sequence[AssetRef] = (), meta: Mapping[str, Any] | None = None) -> str:
        meta = dict(meta or {})
        with self._lock:
            self.calls.append(TextCall(prompt=prompt, meta=meta))
            if self._queue is not None:
                if not self._queue:
                    raise QueueExhausted("mock text queue is empty")
                return self._queue.pop(0)
            template = meta.get("template")
            shot_index = meta.get("shot_index")
            for key in ((template, shot_index), (template, None)):
                if key in self._rules:
                    return self._rules[key]
            raise QueueExhausted(f"no rule for template={template!r} shot_index={shot_index!r}")


@dataclass
class ImageCall:
    prompt: str
    reference_digests: tuple[str, ...]
    out_path: str
    salt: str | None


class MockImageBackend:
    """Writes a fixed-size solid-color PNG whose color is a hash of the inputs.

    Color = low 24 bits of FNV-1a 64 over prompt ++ reference digests ++ salt,
    so identical requests produce byte-identical files and any change to the
    conditioning changes the pixels. The salt simulates the run-to-run drift
    of a real generator when memory reuse is disabled.
    """

    def __init__(self):
        self.calls: list[ImageCall] = []
        self._lock = threading.Lock()

    @staticmethod
    def color_for(prompt: str, reference_digests: Sequence[str], salt: str | None) -> tuple[int, int, int]:
        material = prompt.encode("utf-8") + "".join(reference_digests).encode("ascii")
        if salt is not None:
            material += salt.encode("utf-8")
        h = fnv1a64(material) & 0xFFFFFF
        return (h >> 16) & 0xFF, (h >> 8) & 0xFF, h & 0xFF

    def generate(self, prompt: str, references: Sequence[AssetRef], out_path: Path, salt: str | None = None) -> AssetRef:
        from PIL import Image

        out_path = Path(out_path)
        digests = tuple(ref.digest for ref in references)
        color = self.color_for(prompt, digests, salt)
        try:
            out_path.parent.mkdir(parents=True, exist_ok=True)
            Image.new("RGB", (MOCK_IMAGE_SIZE, MOCK_IMAGE_SIZE), color).save(out_path, format="PNG")
        except OSError as exc:
            raise IoError(f"cannot write mock image {out_path}: {exc}") from exc
        with self._lock:
            self.calls.append(ImageCall(prompt=prompt, reference_digests=digests, out_path=str(out_path), salt=salt))
        return AssetRef.for_image(out_path)


class MockVideoBackend:
    """Emits a frame-sequence directory of byte-copies of the keyframe."""

    def __init__(self, frames: int = 5):
        if frames < 1:
            raise ValidationError("frames must be >= 1", field_path="frames")
        self.frames = frames
        self.calls: list[dict] = []
        self._lock = threading.Lock()

    def animate(self, keyframe: AssetRef, prompt: str, out_dir: Path) -> AssetRef:
        out_dir = Path(out_dir)
        source = Path(keyframe.path)
        if not source.is_file():
            raise IoError(f"keyframe missing: {source}")
        try:
            out_dir.mkdir(parents=True, exist_ok=True)
            frame_paths = []
            for i in range(self.frames):
                frame = out_dir / f"frame_{i:04d}.png"
                shutil.copyfile(source, frame)
                frame_paths.append(frame)
        except OSError as exc:
            raise IoError(f"cannot write mock frames under {out_dir}: {exc}") from exc
        with self._lock:
            self.calls.append({"keyframe": keyframe.digest, "prompt": prompt, "out_dir": str(out_dir)})
        return AssetRef.for_frames(out_dir, frame_paths)


# --------------------------------------------------------------------------
# HTTP adapters
# --------------------------------------------------------------------------


def _redact(text: str, secret: str | None) -> str:
    if secret:
        return text.replace(secret, "[REDACTED]")
    return text


class _HttpBase:
    """Shared request machinery: auth header, bounded retries, redacted log."""

    def __init__(self, config: BackendConfig):
        self.config = config
        self.request_log: list[dict] = []

    def _secret(self) -> str | None:
        if self.config.api_key_env:
            return os.environ.get(self.config.api_key_env)
        return None

    def _post(self, payload: dict) -> dict:
        headers = {}
        secret = self._secret()
        if secret:
            headers["Authorization"] = f"Bearer {secret}"
        last_error: Exception | None = None
        attempts = self.config.max_retries + 1
        for attempt in range(attempts):
            if attempt:
                time.sleep(self.config.backoff_base * (2 ** (attempt - 1)))
            entry = {"endpoint": self.config.endpoint, "model": self.config.model, "attempt": attempt + 1}
            try:
                response = requests.post(self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout)
            except requests.Timeout:
                last_error = Timeout(f"request to {self.config.endpoint} timed out")
                entry["error"] = "timeout"
                self.request_log.append(entry)
                continue
            except requests.RequestException as exc:
                last_error = Timeout(_redact(f"request failed: {exc}", secret))
                entry["error"] = _redact(str(exc), secret)
                self.request_log.append(entry)
                continue
            entry["status"] = response.status_code
            self.request_log.append(entry)
            if 400 <= response.status_code < 500:
                raise HttpStatus(response.status_code, _redact(response.text[:500], secret))
            if response.status_code >= 500:
                last_error = HttpStatus(response.status_code, _redact(response.text[:500], secret))
                continue
            try:
                return response.json()
            except ValueError:
                last_error = DecodeError(f"non-JSON response from {self.config.endpoint}")
                entry["error"] = "decode"
                continue
        assert last_error is not None
        raise last_error


def _b64_file(path: Path | str) -> str:
    return base64.b64encode(Path(path).read_bytes()).decode("ascii")


class HttpTextBackend(_HttpBase):
    def complete(self, prompt: str, attachments: Sequence[AssetRef] = (), meta: Mapping[str, Any] | None = None) -> str:
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "attachments": [_b64_file(a.path) for a in attachments],
        }
        doc = self._post(payload)
        text = doc.get("text")
        if not isinstance(text, str) or not text:
            raise DecodeError("text response missing non-empty 'text' field")
        return text


class HttpImageBackend(_HttpBase):
    def generate(self, prompt: str, references: Sequence[AssetRef], out_path: Path, salt: str | None = None) -> AssetRef:
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "references": [_b64_file(r.path) for r in references],
        }
        doc = self._post(payload)
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        if "image_b64" in doc:
            try:
                out_path.write_bytes(base64.b64decode(doc["image_b64"]))
            except (ValueError, OSError) as exc:
                raise DecodeError(f"bad image payload: {exc}") from exc
        elif "url" in doc:
            fetched = requests.get(doc["url"], timeout=self.config.timeout)
            if fetched.status_code != 200:
                raise HttpStatus(fetched.status_code, "asset fetch failed")
            out_path.write_bytes(fetched.content)
        else:
            raise DecodeError("image response carries neither 'image_b64' nor 'url'")
        return AssetRef.for_image(out_path)


class HttpVideoBackend(_HttpBase):
    def animate(self, keyframe: AssetRef, prompt: str, out_dir: Path) -> AssetRef:
        payload = {
            "model": self.config.model,
            "prompt": prompt,
            "keyframe_b64": _b64_file(keyframe.path),
        }
        doc = self._post(payload)
        frames_b64 = doc.get("frames")
        if not isinstance(frames_b64, list) or not frames_b64:
            raise DecodeError("video response missing non-empty 'frames' list")
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        frame_paths = []
        for i, blob in enumerate(frames_b64):
            frame = out_dir / f"frame_{i:04d}.png"
            try:
                frame.write_bytes(base64.b64decode(blob))
            except (ValueError, OSError) as exc:
                raise DecodeError(f"bad frame payload {i}: {exc}") from exc
            frame_paths.append(frame)
        return AssetRef.for_frames(out_dir, frame_paths)
