"""Shared fixture builders: canned storyboards, scripted agent responses,
and ready-to-run mock pipelines."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from multishot.backends import MockImageBackend, MockTextBackend, MockVideoBackend
from multishot.domain import Synopsis
from multishot.memory import ExactMatcher
from multishot.pipeline import Backends, RunConfig


def make_shot(index, scene="sunlit studio", characters=(), key_props=(), plot=None, scene_description=None, environment_info=""):
    return {
        "index": index,
        "scene": scene,
        "scene_description": scene_description if scene_description is not None else f"A {scene} with warm light.",
        "plot": plot if plot is not None else "The figure stands quietly at the center of the room.",
        "characters": list(characters),
        "key_props": list(key_props),
        "environment_info": environment_info,
    }


def make_storyboard_doc(shots, synopsis_text="A quiet story.", title="fixture"):
    return {"title": title, "synopsis": synopsis_text, "shots": shots}


def make_analysis(shot, attribute_overrides=None):
    """Default analysis response for a shot: mentions plus one background."""
    attribute_overrides = attribute_overrides or {}
    entities = []
    for name in shot["characters"]:
        entities.append(
            {
                "name": name,
                "category": "character",
                "attributes": attribute_overrides.get(name, {}),
                "summary": f"{name}, unchanged baseline appearance",
            }
        )
    for name in shot["key_props"]:
        entities.append(
            {
                "name": name,
                "category": "prop",
                "attributes": attribute_overrides.get(name, {}),
                "summary": f"{name}, unchanged baseline appearance",
            }
        )
    entities.append(
        {
            "name": shot["scene"],
            "category": "background",
            "attributes": attribute_overrides.get(shot["scene"], {}),
            "summary": shot["scene_description"],
        }
    )
    return {"entities": entities}


def make_rules(shots, synopsis_text="A quiet story.", analyses=None):
    """Rule table driving the whole pipeline for a fixture storyboard."""
    doc = make_storyboard_doc(shots, synopsis_text=synopsis_text)
    rules = {("storyboard_agent", None): json.dumps(doc)}
    for shot in shots:
        if analyses and shot["index"] in analyses:
            response = analyses[shot["index"]]
        else:
            response = json.dumps(make_analysis(shot))
        rules[("memory_agent", shot["index"])] = response
    return rules


def character_persistent_shots(n=4, character="Mira"):
    """One character, constant scene and plot: the persistence fixture."""
    return [make_shot(i, characters=[character]) for i in range(1, n + 1)]


def prop_persistent_shots(n=4, prop="red kite"):
    return [make_shot(i, key_props=[prop]) for i in range(1, n + 1)]


def background_persistent_shots(n=4, scene="old lighthouse"):
    return [make_shot(i, scene=scene) for i in range(1, n + 1)]


def mock_stack(rules, frames=5):
    return Backends(
        text=MockTextBackend(rules=rules),
        image=MockImageBackend(),
        video=MockVideoBackend(frames=frames),
    )


def run_fixture(tmp_path: Path, shots, synopsis_text="A quiet story.", analyses=None, frames=5, **config_kwargs):
    """Run the pipeline on a fixture; returns (manifest, backends)."""
    from multishot.pipeline import run

    rules = make_rules(shots, synopsis_text=synopsis_text, analyses=analyses)
    backends = mock_stack(rules, frames=frames)
    config = RunConfig(output_root=tmp_path / config_kwargs.pop("out_name", "out"), frames_per_shot=frames, **config_kwargs)
    synopsis = Synopsis(text=synopsis_text)
    manifest = run(synopsis, config, backends, ExactMatcher())
    return manifest, backends


@pytest.fixture
def solid_image(tmp_path):
    """Factory writing small solid-color PNGs."""
    from PIL import Image

    counter = {"n": 0}

    def _make(color=(200, 30, 30), size=(64, 64), name=None):
        counter["n"] += 1
        path = tmp_path / (name or f"solid_{counter['n']}.png")
        Image.new("RGB", size, color).save(path)
        return path

    return _make
