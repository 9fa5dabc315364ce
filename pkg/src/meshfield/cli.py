"""Command-line interface.

Configuration resolution: built-in defaults < flat-JSON config file
(``--config``) < explicit command-line flags. The fully resolved
configuration is echoed into the run's ``report.json`` so every run is
reproducible from its artifacts. Exit codes: 0 success, 1 runtime failure,
2 usage error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .bench import (
    BenchConfig,
    DEFAULT_ITS_THRESHOLD,
    eval_cameras,
    generate_sample_meshes,
    load_manifest,
    mes,
    run_benchmark,
    view_name,
)
from .embed import make_backend
from .errors import MeshFieldError
from .field import FieldConfig
from .meshio import apply_offsets, load_mesh, normalize_and_init
from .optim import Objective, TrainConfig, make_target_embedding, stylize
from .render import SoftSettings, render_views, save_png

ENV_BACKEND_URL = "MESHFIELD_BACKEND_URL"

DEFAULTS: dict = {
    "frequencies": 256,
    "sigma": 12.0,
    "reduction": 8,
    "rank": 30,
    "text_dim": 512,
    "head_hidden": 256,
    "iterations": 1200,
    "n_views": 5,
    "lr": 5e-4,
    "seed": 0,
    "image_size": 64,
    "eval_image_size": 224,
    "metric_every": 10,
    "snapshot_every": 50,
    "sigma_soft": 1e-4,
    "gamma_depth": 1e-4,
    "augment": True,
    "geometry": True,
    "attention": True,
    "walltime": True,
    "its_threshold": DEFAULT_ITS_THRESHOLD,
    "workers": 1,
    "backend": None,  # resolved to toy or remote:$MESHFIELD_BACKEND_URL
}


def _add_common_options(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", help="flat JSON config file")
    sub.add_argument("--seed", type=int)
    sub.add_argument("--backend", help="toy | remote:<url> (default: toy, or the "
                                       f"URL in ${ENV_BACKEND_URL})")
    sub.add_argument("--iterations", type=int)
    sub.add_argument("--n-views", dest="n_views", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--image-size", dest="image_size", type=int)
    sub.add_argument("--eval-image-size", dest="eval_image_size", type=int)
    sub.add_argument("--metric-every", dest="metric_every", type=int)
    sub.add_argument("--snapshot-every", dest="snapshot_every", type=int)
    sub.add_argument("--frequencies", type=int, help="positional-encoding frequency count")
    sub.add_argument("--sigma", type=float, help="positional-encoding frequency scale")
    sub.add_argument("--reduction", type=int, help="attention bottleneck factor")
    sub.add_argument("--rank", type=int, help="hypernetwork factorization rank")
    sub.add_argument("--text-dim", dest="text_dim", type=int)
    sub.add_argument("--sigma-soft", dest="sigma_soft", type=float)
    sub.add_argument("--no-augment", dest="augment", action="store_false", default=None)
    sub.add_argument("--no-geometry", dest="geometry", action="store_false", default=None)
    sub.add_argument("--ablate-tdam", dest="attention", action="store_false", default=None,
                     help="run the static-MLP baseline (attention bypassed)")
    sub.add_argument("--no-walltime", dest="walltime", action="store_false", default=None,
                     help="write wall_ms as 0 for byte-reproducible history files")


def resolve_config(args: argparse.Namespace, parser: argparse.ArgumentParser) -> dict:
    """defaults < config file < explicit flags."""
    resolved = dict(DEFAULTS)
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            parser.error(f"config file not found: {path}")
        try:
            file_values = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            parser.error(f"config file {path} is not valid JSON: {exc}")
        unknown = set(file_values) - set(DEFAULTS)
        if unknown:
            parser.error(f"unknown config keys in {path}: {sorted(unknown)}")
        resolved.update(file_values)
    for key in DEFAULTS:
        value = getattr(args, key, None)
        if value is not None:
            resolved[key] = value
    if resolved["backend"] is None:
        url = os.environ.get(ENV_BACKEND_URL)
        resolved["backend"] = f"remote:{url}" if url else "toy"
    return resolved


def _field_config(cfg: dict) -> FieldConfig:
    return FieldConfig(frequencies=cfg["frequencies"], frequency_scale=cfg["sigma"],
                       reduction=cfg["reduction"], rank=cfg["rank"],
                       text_dim=cfg["text_dim"], head_hidden=cfg["head_hidden"],
                       seed=cfg["seed"])


def _train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(iterations=cfg["iterations"], n_views=cfg["n_views"],
                       seed=cfg["seed"], snapshot_every=cfg["snapshot_every"],
                       lr=cfg["lr"], image_size=cfg["image_size"],
                       metric_every=cfg["metric_every"], geometry=cfg["geometry"],
                       use_attention=cfg["attention"], augment_enabled=cfg["augment"],
                       record_walltime=cfg["walltime"])


def _soft_settings(cfg: dict) -> SoftSettings:
    return SoftSettings(sigma=cfg["sigma_soft"], gamma=cfg["gamma_depth"])


def _require_file(parser: argparse.ArgumentParser, path_str: str, what: str) -> Path:
    path = Path(path_str)
    if not path.exists():
        parser.error(f"{what} not found: {path}")
    return path


def _load_stylized(path: Path):
    mesh = load_mesh(path)
    return apply_offsets(mesh, np.zeros_like(mesh.colors), np.zeros_like(mesh.colors))


def cmd_stylize(args, parser) -> int:
    cfg = resolve_config(args, parser)
    mesh_path = _require_file(parser, args.mesh, "mesh file")
    if bool(args.prompt) == bool(args.target_from):
        parser.error("exactly one of --prompt or --target-from is required")

    backend = make_backend(cfg["backend"], seed=cfg["seed"], dim=cfg["text_dim"])
    mesh = normalize_and_init(load_mesh(mesh_path))
    settings = _soft_settings(cfg)

    if args.prompt:
        objective = Objective.from_prompt(args.prompt)
        prompt_for_metric = args.prompt
    else:
        ref_path = _require_file(parser, args.target_from, "reference mesh")
        reference = _load_stylized(ref_path)
        target = make_target_embedding(
            reference, backend, eval_cameras(cfg["eval_image_size"]), settings)
        objective = Objective.from_target(target)
        prompt_for_metric = None

    run_dir = Path(args.out)
    train_backend = backend
    if not backend.differentiable:
        train_backend = make_backend("toy", seed=cfg["seed"], dim=cfg["text_dim"])
        print(f"backend {backend.name} is evaluation-only; training with {train_backend.name}")
    stylized, history, _ = stylize(mesh, objective, _train_config(cfg), train_backend,
                                   field_config=_field_config(cfg), settings=settings,
                                   run_dir=run_dir)

    final_mes = None
    if prompt_for_metric is not None:
        final_mes = mes(stylized, prompt_for_metric, backend,
                        image_size=cfg["eval_image_size"], settings=settings)
    report_path = run_dir / "report.json"
    report = json.loads(report_path.read_text())
    report["resolved_config"] = cfg
    report["mes_final"] = final_mes
    report["mes_final_x100"] = None if final_mes is None else 100.0 * final_mes
    report_path.write_text(json.dumps(report, indent=2))

    loss_text = f"{history.losses[-1]:.6f}" if history.losses else "n/a"
    print(f"final loss: {loss_text}")
    if final_mes is not None:
        print(f"MES: {final_mes:.6f} ({100.0 * final_mes:.2f} x100)")
    print(f"run directory: {run_dir}")
    return 0


def cmd_eval(args, parser) -> int:
    cfg = resolve_config(args, parser)
    mesh_path = _require_file(parser, args.mesh, "mesh file")
    backend = make_backend(cfg["backend"], seed=cfg["seed"], dim=cfg["text_dim"])
    stylized = _load_stylized(mesh_path)
    settings = _soft_settings(cfg)

    value = mes(stylized, args.prompt, backend, image_size=cfg["eval_image_size"],
                settings=settings)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    cams = eval_cameras(cfg["eval_image_size"])
    for cam, view in zip(cams, render_views(stylized, cams, settings)):
        save_png(view, out_dir / f"{view_name(cam)}.png")
    (out_dir / "eval.json").write_text(json.dumps({
        "prompt": args.prompt, "mes": value, "mes_x100": 100.0 * value,
        "backend": backend.name, "resolved_config": cfg,
        "cameras": [c.to_dict() for c in cams],
    }, indent=2))
    print(f"MES: {value:.6f} ({100.0 * value:.2f} x100)")
    print(f"renders: {out_dir}")
    return 0


def cmd_bench(args, parser) -> int:
    cfg = resolve_config(args, parser)
    manifest_path = _require_file(parser, args.manifest, "manifest")
    manifest = load_manifest(manifest_path)
    bench_config = BenchConfig(train=_train_config(cfg), field=_field_config(cfg),
                               its_threshold=cfg["its_threshold"],
                               eval_image_size=cfg["eval_image_size"],
                               workers=cfg["workers"])
    out_dir = Path(args.out)
    report = run_benchmark(manifest, bench_config, backend_spec=cfg["backend"],
                           backend_seed=cfg["seed"], out_dir=out_dir)

    payload = json.loads((out_dir / "report.json").read_text())
    payload["resolved_config"] = cfg
    (out_dir / "report.json").write_text(json.dumps(payload, indent=2))

    if report.mean_mes is not None:
        print(f"aggregate MES: {report.mean_mes:.6f} ({100.0 * report.mean_mes:.2f} x100)")
        print(f"aggregate ITS@{cfg['its_threshold']:g}: {report.mean_its:.1f}")
    print(f"samples: {len(report.samples)}  failed: {report.failed}")
    print(f"report: {out_dir}")
    return 1 if report.failed else 0


def cmd_gen_samples(args, parser) -> int:
    manifest = generate_sample_meshes(args.out, icosphere_subdivisions=args.subdiv,
                                      cube_level=args.cube_level)
    print(f"wrote sample meshes and {manifest}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="meshfield",
        description="Text-conditioned mesh stylization and its benchmark tools")
    commands = parser.add_subparsers(dest="command", required=True)

    p_stylize = commands.add_parser("stylize", help="optimize a mesh toward a prompt "
                                                    "or a reference embedding")
    p_stylize.add_argument("--mesh", required=True)
    p_stylize.add_argument("--prompt")
    p_stylize.add_argument("--target-from", dest="target_from",
                           help="reference mesh whose embedding becomes the objective")
    p_stylize.add_argument("--out", default="run")
    _add_common_options(p_stylize)
    p_stylize.set_defaults(func=cmd_stylize)

    p_eval = commands.add_parser("eval", help="score a stylized mesh against a prompt")
    p_eval.add_argument("--mesh", required=True)
    p_eval.add_argument("--prompt", required=True)
    p_eval.add_argument("--out", default="eval")
    _add_common_options(p_eval)
    p_eval.set_defaults(func=cmd_eval)

    p_bench = commands.add_parser("bench", help="run a benchmark manifest")
    p_bench.add_argument("--manifest", required=True)
    p_bench.add_argument("--out", default="bench_report")
    p_bench.add_argument("--its-threshold", dest="its_threshold", type=float)
    p_bench.add_argument("--workers", type=int)
    _add_common_options(p_bench)
    p_bench.set_defaults(func=cmd_bench)

    p_gen = commands.add_parser("gen-samples", help="write procedural sample meshes "
                                                    "and a manifest")
    p_gen.add_argument("--out", default="sample_meshes")
    p_gen.add_argument("--subdiv", type=int, default=3,
                       help="icosphere subdivision level")
    p_gen.add_argument("--cube-level", dest="cube_level", type=int, default=4)
    p_gen.set_defaults(func=cmd_gen_samples)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, parser)
    except MeshFieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
