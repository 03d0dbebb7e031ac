import math

import numpy as np
import pytest
from PIL import Image

from embed_sidecar import fixture_path
from embed_sidecar.config import SidecarConfig
from embed_sidecar.features import (
    COLOR_PROTOTYPES,
    ColorGrounder,
    EMBED_DIM,
    FaceDetector,
    FeatureEngine,
    FrameReadError,
    PatchEmbedder,
    load_frame,
)


@pytest.fixture(scope="module")
def engine():
    return FeatureEngine(SidecarConfig())


def red_prop_image():
    canvas = np.full((120, 160, 3), 128, dtype=np.uint8)
    canvas[30:90, 50:130] = (220, 40, 40)
    return canvas


def test_config_validation():
    with pytest.raises(ValueError):
        SidecarConfig(transport="carrier-pigeon")
    with pytest.raises(ValueError):
        SidecarConfig(transport="socket")  # needs a path
    with pytest.raises(ValueError):
        SidecarConfig(grounding_threshold=1.5)
    with pytest.raises(ValueError):
        SidecarConfig(max_image_dim=4)


def test_config_from_file(tmp_path):
    path = tmp_path / "config.json"
    path.write_text('{"grounding_threshold": 0.5, "max_image_dim": 256}')
    config = SidecarConfig.from_file(path)
    assert config.grounding_threshold == 0.5
    assert config.max_image_dim == 256
    path.write_text('{"bogus": 1}')
    with pytest.raises(ValueError):
        SidecarConfig.from_file(path)


def test_load_frame_downscales_and_rejects_garbage(tmp_path):
    big = tmp_path / "big.png"
    Image.new("RGB", (900, 300), (1, 2, 3)).save(big)
    image = load_frame(big, max_dim=512)
    assert max(image.shape[:2]) <= 512
    bad = tmp_path / "bad.png"
    bad.write_bytes(b"not an image")
    with pytest.raises(FrameReadError):
        load_frame(bad, max_dim=512)


def test_patch_embedder_unit_norm_and_determinism():
    embedder = PatchEmbedder()
    rng = np.random.default_rng(3)
    region = rng.integers(0, 256, size=(37, 53, 3), dtype=np.uint8)
    a = embedder.embed(region)
    b = embedder.embed(region)
    assert a.shape == (EMBED_DIM,)
    assert np.array_equal(a, b)
    assert math.isclose(float(np.linalg.norm(a)), 1.0, abs_tol=1e-12)


def test_patch_embedder_all_black_is_zero_vector():
    vector = PatchEmbedder().embed(np.zeros((8, 8, 3), dtype=np.uint8))
    assert float(np.linalg.norm(vector)) == 0.0


def test_face_detector_finds_bundled_face():
    image = load_frame(fixture_path("face.png"), max_dim=512)
    regions = FaceDetector().detect(image)
    assert len(regions) >= 1
    r = regions[0]
    assert r.height > 0 and r.width > 0
    assert 0 <= r.top < image.shape[0] and 0 <= r.left < image.shape[1]


def test_face_detector_rejects_blank_and_gradient():
    detector = FaceDetector()
    assert detector.detect(load_frame(fixture_path("blank.png"), 512)) == []
    assert detector.detect(load_frame(fixture_path("scene.png"), 512)) == []


def test_grounder_finds_red_region():
    region = ColorGrounder().ground(red_prop_image(), "a bright red kite", threshold=0.35)
    assert region is not None
    assert (region.top, region.left) == (30, 50)
    assert (region.height, region.width) == (60, 80)
    assert region.confidence == pytest.approx(1.0)


def test_grounder_misses_absent_color_and_unknown_phrase():
    grounder = ColorGrounder()
    assert grounder.ground(red_prop_image(), "neon green banner", threshold=0.35) is None
    assert grounder.ground(red_prop_image(), "a mysterious object", threshold=0.35) is None


def test_grounder_threshold_applies_to_region_purity():
    # scattered red speckles: the enclosing box is mostly background
    canvas = np.full((100, 100, 3), 128, dtype=np.uint8)
    rng = np.random.default_rng(11)
    rows = rng.integers(0, 100, size=120)
    cols = rng.integers(0, 100, size=120)
    canvas[rows, cols] = (220, 40, 40)
    grounder = ColorGrounder()
    assert grounder.ground(canvas, "red marble", threshold=0.35) is None
    low = grounder.ground(canvas, "red marble", threshold=0.001)
    assert low is not None and low.confidence < 0.35


def test_grounder_keyword_priority_is_first_match():
    assert ColorGrounder._keyword("a red and yellow scarf") == "red"
    assert ColorGrounder._keyword("vivid YELLOW umbrella") == "yellow"
    assert set(COLOR_PROTOTYPES) >= {"red", "yellow", "green", "blue"}


def test_engine_char_mode_aggregates_to_unit_norm(engine):
    vector = engine.extract("char", str(fixture_path("face.png")))
    assert vector is not None
    assert len(vector) == engine.dim == EMBED_DIM
    assert math.isclose(float(np.linalg.norm(vector)), 1.0, abs_tol=1e-9)
    again = engine.extract("char", str(fixture_path("face.png")))
    assert np.array_equal(vector, again)


def test_engine_char_mode_no_face(engine):
    assert engine.extract("char", str(fixture_path("blank.png"))) is None


def test_engine_prop_mode(engine):
    vector = engine.extract("prop", str(fixture_path("prop.png")), "bright red kite")
    assert vector is not None and len(vector) == engine.dim
    assert engine.extract("prop", str(fixture_path("prop.png")), "blue bucket") is None
    with pytest.raises(ValueError):
        engine.extract("prop", str(fixture_path("prop.png")), None)


def test_engine_bg_mode_and_bad_mode(engine):
    vector = engine.extract("bg", str(fixture_path("scene.png")))
    assert vector is not None and len(vector) == engine.dim
    with pytest.raises(ValueError):
        engine.extract("portrait", str(fixture_path("scene.png")))


def test_engine_identity_declares_decisions(engine):
    identity = engine.identity()
    assert identity["aggregation"] == "mean-l2"
    assert identity["prop_region"] == "tight-crop"
    assert identity["grounding_threshold"] == 0.35
