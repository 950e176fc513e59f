"""Command-line workbench.

Four subcommands: `fit` runs the optimization loop from a project
config, `mesh` extracts and textures a surface from a saved cloud,
`metrics` compares two images, and `prompt` runs the candidate-prompt
optimization loop with the built-in procedural clients.

Exit codes: 0 success, 2 bad input (config, paths, sizes), 3 empty
isosurface from `mesh`.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys

import requests

from .baking import bake_texture, default_baking_cameras
from .cameras import Camera
from .config import ConfigError, GUIDANCE_MODES, ProjectConfig, load_project_config
from .density import sample_density
from .gaussians import init_cloud
from .guidance import ReferenceGuidance, RemoteGuidance
from .losses import LossReport, psnr, ssim
from .meshing import marching_cubes
from .prompt import (
    CONDITION_KINDS,
    CoverageEvaluator,
    ProceduralT2I,
    PromptClients,
    TemplateLLM,
    UserRequest,
    optimize,
)
from .providers import FileDepthPrior, FileMaskPrior
from .rasterizer import render
from .storage import (
    load_cloud,
    load_image,
    save_cloud,
    save_image,
    save_mesh,
    turntable_strip,
)
from .trainer import TrainingProviders, train
from .unwrap import uv_unwrap

TOKEN_ENV = "SPLATFORGE_TOKEN"


def _fail(message: str, code: int = 2) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _build_providers(project: ProjectConfig) -> TrainingProviders:
    """Instantiate guidance and file priors; raises FileNotFoundError
    for any missing input so fit can fail before training starts."""
    settings = project.providers
    guidance = None
    if settings.guidance == "local" and project.inputs.references:
        guidance = ReferenceGuidance()
        for ref in project.inputs.references:
            guidance.register(ref.azimuth, load_image(ref.path))
    elif settings.guidance == "remote":
        session = requests.Session()
        token = os.environ.get(TOKEN_ENV)
        if token:
            session.headers["Authorization"] = f"Bearer {token}"
        guidance = RemoteGuidance(
            endpoint=settings.endpoint,
            deadline=settings.deadline,
            seed=project.train.seed,
            session=session,
        )

    depth_prior = None
    if project.inputs.depths:
        depth_prior = FileDepthPrior()
        for entry in project.inputs.depths:
            depth_prior.register(entry.azimuth, entry.path)
    mask_prior = None
    if project.inputs.masks:
        mask_prior = FileMaskPrior()
        for entry in project.inputs.masks:
            mask_prior.register(entry.azimuth, entry.path)

    return TrainingProviders(
        guidance=guidance, depth_prior=depth_prior, mask_prior=mask_prior
    )


def cmd_fit(args) -> int:
    try:
        project = load_project_config(args.config)
    except FileNotFoundError:
        return _fail(f"config not found: {args.config}")
    except ConfigError as exc:
        return _fail(str(exc))

    if args.seed is not None:
        project.train = dataclasses.replace(project.train, seed=args.seed)
    if args.guidance is not None:
        project.providers.guidance = args.guidance
    if args.endpoint is not None:
        project.providers.endpoint = args.endpoint
    if project.providers.guidance == "remote" and not project.providers.endpoint:
        return _fail("remote guidance needs an endpoint")
    config = project.train

    heldout_image = None
    try:
        providers = _build_providers(project)
        if project.inputs.heldout is not None:
            heldout_image = load_image(project.inputs.heldout.path)
    except FileNotFoundError as exc:
        return _fail(str(exc))

    result = train(init_cloud(project.init_points, config.seed), config, providers)

    outdir = project.output_dir
    os.makedirs(outdir, exist_ok=True)
    cloud_path = os.path.join(outdir, "cloud.sfc")
    save_cloud(result.cloud, cloud_path)

    report_fields = [f.name for f in dataclasses.fields(LossReport)]
    losses_path = os.path.join(outdir, "losses.csv")
    with open(losses_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["step"] + report_fields)
        for step, report in enumerate(result.reports):
            writer.writerow([step] + [repr(getattr(report, name)) for name in report_fields])

    size = config.resolutions[-1]
    strip = turntable_strip(
        lambda cam: render(result.cloud, cam, config.background).color,
        width=size,
        height=size,
    )
    turntable_path = os.path.join(outdir, "turntable.png")
    save_image(strip, turntable_path)

    run_log = project.resolved()
    run_log["metrics"] = {}
    if heldout_image is not None:
        held = project.inputs.heldout
        h, w = heldout_image.data.shape[:2]
        cam = Camera.orbit(
            held.azimuth,
            held.elevation,
            radius=config.radius,
            fov_y_deg=config.fov_y_deg,
            width=w,
            height=h,
        )
        view = render(result.cloud, cam, config.background).color
        held_psnr = psnr(view, heldout_image)
        run_log["metrics"]["heldout_psnr"] = held_psnr
        print(f"held-out PSNR: {held_psnr:.2f} dB")
    run_path = os.path.join(outdir, "run.json")
    with open(run_path, "w") as f:
        json.dump(run_log, f, indent=2, sort_keys=True)
        f.write("\n")

    written = [cloud_path, losses_path, turntable_path, run_path]
    if result.mesh is not None:
        mesh_base = os.path.join(outdir, "mesh")
        save_mesh(result.mesh.mesh, mesh_base, texture=result.mesh.texture)
        written.append(f"{mesh_base}.obj")
    for path in written:
        print(f"wrote {path}")
    return 0


def cmd_mesh(args) -> int:
    try:
        cloud = load_cloud(args.cloud)
    except FileNotFoundError:
        return _fail(f"cloud not found: {args.cloud}")
    except ValueError as exc:
        return _fail(str(exc))

    grid = sample_density(cloud, args.grid)
    mesh = marching_cubes(grid, iso=args.iso)
    if mesh.is_empty:
        iso_label = "auto" if args.iso is None else f"{args.iso:g}"
        return _fail(
            f"empty isosurface (iso={iso_label}, max density "
            f"{grid.samples.max():.6g}, grid {args.grid}^3); "
            "lower --iso or check the cloud",
            code=3,
        )
    mesh, report = uv_unwrap(mesh, texture_size=args.texture_size)
    views = [
        (cam, render(cloud, cam).color)
        for cam in default_baking_cameras(size=args.texture_size)
    ]
    textured = bake_texture(mesh, views, texture_size=args.texture_size)

    base = args.out or os.path.splitext(args.cloud)[0] + "_mesh"
    save_mesh(textured.mesh, base, texture=textured.texture)
    print(
        f"{len(mesh)} triangles, {report.charts} charts, "
        f"{int(textured.written.sum())} texels written"
    )
    for suffix in (".obj", ".mtl", ".png"):
        print(f"wrote {base}{suffix}")
    return 0


def cmd_metrics(args) -> int:
    try:
        a = load_image(args.image_a)
        b = load_image(args.image_b)
    except FileNotFoundError as exc:
        return _fail(str(exc))
    if a.data.shape != b.data.shape:
        ha, wa = a.data.shape[:2]
        hb, wb = b.data.shape[:2]
        return _fail(f"size mismatch: {wa}x{ha} vs {wb}x{hb}")
    print(f"PSNR {psnr(a, b):.2f}, SSIM {ssim(a.data, b.data):.4f}")
    print("LPIPS omitted: this build ships no learned perceptual metric.")
    return 0


def cmd_prompt(args) -> int:
    conditions = []
    for condition in args.condition or []:
        kind, sep, path = condition.partition("=")
        if not sep or not path:
            return _fail(f"condition must look like kind=path, got {condition!r}")
        if kind not in CONDITION_KINDS:
            return _fail(
                f"unknown condition kind {kind!r}; expected one of "
                + ", ".join(CONDITION_KINDS)
            )
        try:
            conditions.append((kind, load_image(path)))
        except FileNotFoundError as exc:
            return _fail(str(exc))

    try:
        request = UserRequest(
            text=args.text,
            conditions=conditions,
            rounds=args.rounds,
            candidates_per_round=args.n,
        )
    except ValueError as exc:
        return _fail(str(exc))

    clients = PromptClients(
        llm=TemplateLLM(), t2i=ProceduralT2I(), evaluator=CoverageEvaluator()
    )
    transcript = optimize(request, clients, seed=args.seed)

    os.makedirs(args.out, exist_ok=True)
    transcript_path = os.path.join(args.out, "transcript.json")
    with open(transcript_path, "w") as f:
        json.dump(
            {
                "records": [
                    {
                        "round": r.round_index,
                        "prompt": r.prompt,
                        "score": r.score,
                        "critique": r.critique,
                        "selected": r.selected,
                    }
                    for r in transcript.records
                ],
                "reflections": transcript.reflections,
                "best_prompt": transcript.best_prompt,
                "best_score": transcript.best_score,
                "failure": transcript.failure,
            },
            f,
            indent=2,
            sort_keys=True,
        )
        f.write("\n")
    written = [transcript_path]
    if transcript.best_image is not None:
        best_path = os.path.join(args.out, "best.png")
        save_image(transcript.best_image, best_path)
        written.append(best_path)

    if transcript.failure:
        print(f"stopped early: {transcript.failure}")
    print(f"best prompt ({transcript.best_score:.2f}/10): {transcript.best_prompt}")
    for path in written:
        print(f"wrote {path}")
    return 0


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="splatforge",
        description="Fit, mesh, and inspect gaussian-splat scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    fit = sub.add_parser("fit", help="optimize a cloud from a project config")
    fit.add_argument("--config", required=True, help="project YAML path")
    fit.add_argument("--seed", type=int, default=None, help="override the config seed")
    fit.add_argument("--guidance", choices=GUIDANCE_MODES, default=None)
    fit.add_argument("--endpoint", default=None, help="remote guidance URL")
    fit.set_defaults(func=cmd_fit)

    mesh = sub.add_parser("mesh", help="extract a textured mesh from a saved cloud")
    mesh.add_argument("--cloud", required=True, help="cloud file path")
    mesh.add_argument("--iso", type=float, default=None, help="absolute iso level")
    mesh.add_argument("--grid", type=int, default=64, help="density grid resolution")
    mesh.add_argument("--texture-size", type=int, default=256)
    mesh.add_argument("--out", default=None, help="output base path (no extension)")
    mesh.set_defaults(func=cmd_mesh)

    metrics = sub.add_parser("metrics", help="PSNR/SSIM between two images")
    metrics.add_argument("image_a")
    metrics.add_argument("image_b")
    metrics.set_defaults(func=cmd_metrics)

    prompt = sub.add_parser("prompt", help="run the prompt optimization loop")
    prompt.add_argument("--text", required=True, help="what the object should be")
    prompt.add_argument(
        "--condition",
        action="append",
        metavar="KIND=PATH",
        help="condition image, kind one of " + ", ".join(CONDITION_KINDS),
    )
    prompt.add_argument("--rounds", type=int, default=3)
    prompt.add_argument("--n", type=int, default=4, help="candidates per round")
    prompt.add_argument("--seed", type=int, default=0)
    prompt.add_argument("--out", default="prompt_run", help="output directory")
    prompt.set_defaults(func=cmd_prompt)
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
