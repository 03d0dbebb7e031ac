"""Command-line surface for scripted and CI use.

All commands are non-interactive and exit-code disciplined: 0 on success,
1 on operational failure, 2 on usage errors. Secrets come exclusively from
environment variables named in the config file.
"""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click
import yaml

from . import benchmark as bench_mod
from .backends import (
    BackendConfig,
    HttpImageBackend,
    HttpTextBackend,
    HttpVideoBackend,
    MockImageBackend,
    MockTextBackend,
    MockVideoBackend,
)
from .domain import Synopsis, parse_storyboard
from .errors import CorruptIndex, LayoutError, MultishotError
from .evaluation import MockEmbedder, SidecarEmbedder, evaluate_suite
from .memory import ExactMatcher, LlmMatcher, MemoryBank
from .pipeline import Backends, RunConfig, RunManifest, resume as pipeline_resume, run as pipeline_run

logger = logging.getLogger(__name__)


def _load_config(path: str | None) -> dict:
    if not path:
        return {}
    try:
        return yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise click.ClickException(f"cannot read config {path}: {exc}")


def _load_rules(path: str) -> MockTextBackend:
    data = json.loads(Path(path).read_text(encoding="utf-8"))
    if "queue" in data:
        return MockTextBackend(queue=[_as_text(r) for r in data["queue"]])
    rules = {}
    for rule in data.get("rules", []):
        rules[(rule["template"], rule.get("shot_index"))] = _as_text(rule["response"])
    return MockTextBackend(rules=rules)


def _as_text(response) -> str:
    return response if isinstance(response, str) else json.dumps(response)


def _build_backends(config: dict, profile: str, frames: int | None) -> tuple[Backends, object]:
    spec = (config.get("profiles") or {}).get(profile)
    if spec is None:
        if profile != "mock":
            raise click.ClickException(f"profile {profile!r} not found in config")
        spec = {}
    text_spec = spec.get("text", {"type": "mock"})
    image_spec = spec.get("image", {"type": "mock"})
    video_spec = spec.get("video", {"type": "mock"})

    if text_spec.get("type", "mock") == "mock":
        if "rules_file" in text_spec or "responses_file" in text_spec:
            text = _load_rules(text_spec.get("rules_file") or text_spec["responses_file"])
        else:
            text = MockTextBackend(rules={})
    else:
        text = HttpTextBackend(_backend_config(text_spec))

    if image_spec.get("type", "mock") == "mock":
        image = MockImageBackend()
    else:
        image = HttpImageBackend(_backend_config(image_spec))

    if video_spec.get("type", "mock") == "mock":
        video = MockVideoBackend(frames=frames or int(video_spec.get("frames", 5)))
    else:
        video = HttpVideoBackend(_backend_config(video_spec))

    matcher = LlmMatcher(text) if spec.get("matcher") == "llm" else ExactMatcher()
    return Backends(text=text, image=image, video=video), matcher


def _backend_config(spec: dict) -> BackendConfig:
    return BackendConfig(
        endpoint=spec["endpoint"],
        model=spec.get("model", ""),
        timeout=float(spec.get("timeout", 60)),
        max_retries=int(spec.get("max_retries", 2)),
        api_key_env=spec.get("api_key_env"),
        backoff_base=float(spec.get("backoff_base", 0.5)),
    )


@click.group()
@click.option("--config", "config_path", type=click.Path(), default=None, help="Config file with backend profiles.")
@click.option("--profile", default="mock", show_default=True, help="Backend profile name.")
@click.option("--verbose", "-v", is_flag=True, help="Verbose logging.")
@click.pass_context
def main(ctx, config_path, profile, verbose):
    """Multi-shot video pipeline with an entity memory bank."""
    logging.basicConfig(level=logging.DEBUG if verbose else logging.WARNING, stream=sys.stderr)
    ctx.ensure_object(dict)
    ctx.obj["config"] = _load_config(config_path)
    ctx.obj["profile"] = profile


@main.command()
@click.argument("synopsis_file", type=click.Path(exists=True, dir_okay=False))
@click.option("--out", type=click.Path(), required=True, help="Output storyboard file.")
@click.option("--title", default=None)
@click.pass_context
def plan(ctx, synopsis_file, out, title):
    """Expand a synopsis file into a storyboard document."""
    from .agents import storyboard_plan
    from .errors import PlanningError

    backends, _ = _build_backends(ctx.obj["config"], ctx.obj["profile"], None)
    synopsis = Synopsis(text=Path(synopsis_file).read_text(encoding="utf-8"), title=title)
    try:
        storyboard = storyboard_plan(synopsis, backends.text)
    except PlanningError as exc:
        logger.error("last raw response: %s", exc.last_response)
        raise click.ClickException(f"planning failed: {exc}")
    Path(out).write_text(storyboard.to_json() + "\n", encoding="utf-8")
    click.echo(f"wrote {len(storyboard.shots)}-shot storyboard to {out}")


@main.command()
@click.argument("synopsis_file", type=click.Path(exists=True, dir_okay=False), required=False)
@click.option("--storyboard", "storyboard_file", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out", type=click.Path(), required=True, help="Output root directory.")
@click.option("--memory-root", type=click.Path(), default=None, help="Warm-start memory bank root.")
@click.option("--no-memory", is_flag=True, help="Disable all memory reuse (ablation mode).")
@click.option("--disable-bank", "disabled_banks", multiple=True, type=click.Choice(["char", "prop", "bg"]))
@click.option("--resume", "resume_manifest", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--frames", type=int, default=None, help="Frames per shot (mock video).")
@click.option("--run-id", default=None)
@click.pass_context
def generate(ctx, synopsis_file, storyboard_file, out, memory_root, no_memory, disabled_banks, resume_manifest, frames, run_id):
    """Run the full shot loop for a synopsis or storyboard."""
    backends, matcher = _build_backends(ctx.obj["config"], ctx.obj["profile"], frames)
    config = RunConfig(
        output_root=Path(out),
        memory_root=Path(memory_root) if memory_root else None,
        enable_character_bank="char" not in disabled_banks,
        enable_prop_bank="prop" not in disabled_banks,
        enable_background_bank="bg" not in disabled_banks,
        ablation_no_memory=no_memory,
        frames_per_shot=frames or 5,
        run_id=run_id,
        profile=ctx.obj["profile"],
    )
    try:
        if resume_manifest:
            manifest = pipeline_resume(resume_manifest, config, backends, matcher)
        else:
            storyboard = None
            if storyboard_file:
                storyboard = parse_storyboard(Path(storyboard_file).read_text(encoding="utf-8"))
                synopsis = storyboard.synopsis
            elif synopsis_file:
                synopsis = Synopsis(text=Path(synopsis_file).read_text(encoding="utf-8"))
            else:
                raise click.UsageError("provide a synopsis file, --storyboard, or --resume")
            manifest = pipeline_run(synopsis, config, backends, matcher, storyboard=storyboard)
    except MultishotError as exc:
        raise click.ClickException(str(exc))
    for entry in manifest.shots:
        click.echo(f"shot {entry.index}: {entry.status}" + (f" ({entry.error})" if entry.error else ""))
    click.echo(f"manifest: {manifest.path}")
    if any(entry.status != "done" for entry in manifest.shots):
        raise click.ClickException("run incomplete; resume with --resume")


@main.group()
def memory():
    """Inspect and verify a persisted memory bank."""


@memory.command("list")
@click.option("--root", type=click.Path(exists=True, file_okay=False), required=True)
def memory_list(root):
    bank = _load_bank(root)
    for store_name, store in bank.stores.items():
        click.echo(f"{store_name} ({len(store)}):")
        for entry in sorted(store.values(), key=lambda e: e.sequence):
            click.echo(f"  {entry.key}  shot={entry.created_at_shot}  {entry.entity.state.summary}")


@memory.command("show")
@click.argument("key")
@click.option("--root", type=click.Path(exists=True, file_okay=False), required=True)
def memory_show(key, root):
    bank = _load_bank(root)
    for store in bank.stores.values():
        if key in store:
            entry = store[key]
            click.echo(json.dumps(
                {
                    "key": entry.key,
                    "name": entry.entity.name,
                    "category": entry.entity.category.value,
                    "attributes": dict(entry.entity.state.attributes),
                    "summary": entry.entity.state.summary,
                    "image": entry.reference.path,
                    "digest": entry.reference.digest,
                    "created_at_shot": entry.created_at_shot,
                    "sequence": entry.sequence,
                },
                indent=2,
            ))
            return
    raise click.ClickException(f"key not found: {key}")


@memory.command("verify")
@click.option("--root", type=click.Path(exists=True, file_okay=False), required=True)
def memory_verify(root):
    bank = _load_bank(root)
    click.echo(f"bank at {root} is consistent ({bank.size()} entries)")


def _load_bank(root) -> MemoryBank:
    try:
        return MemoryBank.load(root)
    except CorruptIndex as exc:
        raise click.ClickException(str(exc))


@main.command("eval")
@click.argument("suite_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("runs_dir", type=click.Path(exists=True, file_okay=False))
@click.option("--embedder", default="mock", show_default=True, help="'mock' or a sidecar command line.")
@click.option("--report", "report_path", type=click.Path(), default=None)
@click.option("--full", "expect_full", is_flag=True, help="Require the complete 54-case suite.")
def eval_cmd(suite_dir, runs_dir, embedder, report_path, expect_full):
    """Score benchmark runs and emit the aggregation table."""
    try:
        suite = bench_mod.validate_suite_layout(suite_dir, expect_full=expect_full)
    except LayoutError as exc:
        raise click.ClickException("suite layout invalid:\n" + "\n".join(exc.violations))
    outputs = {}
    for case in suite.cases:
        manifest_path = Path(runs_dir) / case.case_id / "manifest.json"
        if not manifest_path.is_file():
            outputs[case.case_id] = None
            continue
        manifest = RunManifest.load(manifest_path)
        outputs[case.case_id] = [video.frame_paths() for video in manifest.videos()]
    sidecar = None
    try:
        if embedder == "mock":
            engine = MockEmbedder()
        else:
            sidecar = SidecarEmbedder(embedder.split())
            engine = sidecar
        try:
            report = evaluate_suite(suite, outputs, engine)
        except MultishotError as exc:
            raise click.ClickException(str(exc))
    finally:
        if sidecar is not None:
            sidecar.close()
    click.echo(report.summary())
    if report_path:
        Path(report_path).write_text(report.to_json() + "\n", encoding="utf-8")
        click.echo(f"report: {report_path}")


@main.group()
def bench():
    """Benchmark suite tooling."""


@bench.command("scaffold")
@click.argument("directory", type=click.Path())
@click.option("--force", is_flag=True)
def bench_scaffold(directory, force):
    try:
        written = bench_mod.scaffold_suite(directory, force=force)
    except LayoutError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"scaffolded {len(written)} cell templates under {directory}")


@bench.command("emit-prompt")
@click.option("--out", type=click.Path(), default=None)
def bench_emit_prompt(out):
    prompt = bench_mod.emit_story_prompt()
    if out:
        Path(out).write_text(prompt, encoding="utf-8")
        click.echo(f"wrote story generation prompt to {out}")
    else:
        click.echo(prompt)


if __name__ == "__main__":
    main()
