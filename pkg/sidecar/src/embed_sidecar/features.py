"""Feature extraction for the three request modes.

char: pretrained LBP frontal-face cascade finds faces; each face crop is
embedded and the crops are mean-aggregated then re-normalized, so the client
never has to aggregate.

prop: the prop phrase is grounded by its color keyword; the tightest box
around pixels near that color prototype is embedded when the region is pure
enough, otherwise detected=false.

bg: the whole frame is embedded.

The embedder is a fixed patch descriptor (8x8 RGB, L2-normalized), chosen so
results are bit-reproducible on CPU with no downloadable weights.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image
from skimage import data as skdata
from skimage.feature import Cascade

from .config import SidecarConfig

logger = logging.getLogger(__name__)

PATCH_SIZE = 8
EMBED_DIM = PATCH_SIZE * PATCH_SIZE * 3

# Bright, high-contrast prototypes matching the benchmark's prop palette,
# plus common basics. Order matters: first keyword found in the phrase wins.
COLOR_PROTOTYPES: dict[str, tuple[int, int, int]] = {
    "red": (220, 40, 40),
    "orange": (240, 130, 30),
    "yellow": (240, 220, 40),
    "green": (60, 220, 60),
    "cyan": (60, 210, 220),
    "blue": (50, 90, 230),
    "purple": (150, 60, 200),
    "pink": (240, 110, 180),
    "white": (245, 245, 245),
    "black": (15, 15, 15),
}

_COLOR_DISTANCE = 110.0  # RGB Euclidean radius around a prototype
_MIN_REGION_FRACTION = 0.002  # regions smaller than this are noise


class FrameReadError(Exception):
    """Raised when a frame path cannot be loaded as an image."""


def load_frame(path: Path | str, max_dim: int) -> np.ndarray:
    """Read a frame as HxWx3 uint8, downscaled so max(H, W) <= max_dim."""
    try:
        with Image.open(path) as img:
            rgb = img.convert("RGB")
            if max(rgb.size) > max_dim:
                rgb.thumbnail((max_dim, max_dim), Image.BILINEAR)
            return np.asarray(rgb, dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise FrameReadError(f"cannot read frame {path}: {exc}") from exc


@dataclass(frozen=True)
class Region:
    """Pixel box (top, left, height, width) with grounding confidence."""

    top: int
    left: int
    height: int
    width: int
    confidence: float


class PatchEmbedder:
    """Fixed-grid RGB descriptor; identical inputs give identical vectors."""

    name = "patch-rgb-8x8"
    dim = EMBED_DIM

    def embed(self, region: np.ndarray) -> np.ndarray:
        if region.size == 0:
            raise ValueError("cannot embed an empty region")
        patch = Image.fromarray(region).resize((PATCH_SIZE, PATCH_SIZE), Image.BILINEAR)
        values = np.asarray(patch, dtype=np.float64).reshape(-1) / 255.0
        norm = float(np.linalg.norm(values))
        if norm == 0.0:
            return values
        return values / norm


class FaceDetector:
    """Pretrained LBP frontal-face cascade shipped with scikit-image."""

    name = "lbp-frontal-face"

    def __init__(self):
        self._cascade = Cascade(skdata.lbp_frontal_face_cascade_filename())

    def detect(self, image: np.ndarray) -> list[Region]:
        height, width = image.shape[:2]
        min_side = max(24, min(height, width) // 10)
        raw = self._cascade.detect_multi_scale(
            img=image,
            scale_factor=1.2,
            step_ratio=1.3,
            min_size=(min_side, min_side),
            max_size=(height, width),
        )
        regions = [
            Region(top=d["r"], left=d["c"], height=d["height"], width=d["width"], confidence=1.0)
            for d in raw
        ]
        # deterministic order regardless of cascade internals
        return sorted(regions, key=lambda r: (r.top, r.left, r.height, r.width))


class ColorGrounder:
    """Grounds a prop phrase to the image region matching its color keyword.

    Confidence is the purity of the bounding box: the fraction of its pixels
    that actually match the prototype color. Boxes below the configured
    threshold, or covering almost no pixels, count as not detected.
    """

    name = "color-keyword"

    def ground(self, image: np.ndarray, prop_text: str, threshold: float) -> Region | None:
        keyword = self._keyword(prop_text)
        if keyword is None:
            logger.debug("no color keyword in %r", prop_text)
            return None
        prototype = np.array(COLOR_PROTOTYPES[keyword], dtype=np.float64)
        distances = np.linalg.norm(image.astype(np.float64) - prototype, axis=2)
        mask = distances < _COLOR_DISTANCE
        matched = int(mask.sum())
        if matched < mask.size * _MIN_REGION_FRACTION:
            return None
        rows = np.flatnonzero(mask.any(axis=1))
        cols = np.flatnonzero(mask.any(axis=0))
        top, bottom = int(rows[0]), int(rows[-1]) + 1
        left, right = int(cols[0]), int(cols[-1]) + 1
        purity = matched / ((bottom - top) * (right - left))
        if purity < threshold:
            return None
        return Region(top=top, left=left, height=bottom - top, width=right - left, confidence=float(purity))

    @staticmethod
    def _keyword(prop_text: str) -> str | None:
        lowered = prop_text.lower()
        for keyword in COLOR_PROTOTYPES:
            if keyword in lowered:
                return keyword
        return None


class FeatureEngine:
    """Executes one request: load frame, locate the target, embed it."""

    def __init__(self, config: SidecarConfig):
        self.config = config
        self._embedder = PatchEmbedder()
        self._detector = FaceDetector()
        self._grounder = ColorGrounder()

    @property
    def dim(self) -> int:
        return self._embedder.dim

    def identity(self) -> dict:
        return {
            "model": f"{self._detector.name}+{self._grounder.name}+{self._embedder.name}",
            "device": self.config.device,
            "aggregation": "mean-l2",
            "prop_region": "tight-crop",
            "grounding_threshold": self.config.grounding_threshold,
            "max_image_dim": self.config.max_image_dim,
        }

    def extract(self, mode: str, frame_path: str, prop_text: str | None = None) -> np.ndarray | None:
        """Feature vector for the target, or None when it is not present."""
        image = load_frame(frame_path, self.config.max_image_dim)
        if mode == "char":
            faces = self._detector.detect(image)
            if not faces:
                return None
            vectors = [
                self._embedder.embed(image[r.top : r.top + r.height, r.left : r.left + r.width])
                for r in faces
            ]
            mean = np.mean(vectors, axis=0)
            norm = float(np.linalg.norm(mean))
            return mean if norm == 0.0 else mean / norm
        if mode == "prop":
            if not prop_text:
                raise ValueError("prop mode requires prop_text")
            region = self._grounder.ground(image, prop_text, self.config.grounding_threshold)
            if region is None:
                return None
            crop = image[region.top : region.top + region.height, region.left : region.left + region.width]
            return self._embedder.embed(crop)
        if mode == "bg":
            return self._embedder.embed(image)
        raise ValueError(f"unknown mode {mode!r}")
