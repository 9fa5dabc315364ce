"""Adam and the end-to-end stylization loop.

One training iteration: predict per-vertex offsets from the conditioning
embedding, build the stylized mesh and its gray twin, render both from
``n_views`` sampled cameras, augment, embed, average per branch, take the
negative-cosine style loss against the objective embedding, backprop, step.

The loop is bit-deterministic given (seed, config, mesh, objective): the
field is initialized from its own seed and all camera/augmentation draws
come from one seeded generator.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import asdict, dataclass, field as dataclass_field
from pathlib import Path

import numpy as np

from .autograd import Tensor
from .embed import EmbeddingBackend, clip_style_loss, mean_view_embedding
from .errors import ConfigError, ContractError, InputError
from .field import FieldConfig, StyleField
from .meshio import Mesh, StylizedMesh, apply_offsets, gray_variant, save_mesh
from .render import (
    Camera,
    SoftSettings,
    augment,
    render,
    render_color_and_gray,
    render_views,
    resize_bilinear,
    sample_train_cameras,
    save_png,
)


class Adam:
    """Standard bias-corrected Adam over named parameter tensors.

    ``step`` applies the update in place and then zeroes the gradients, so
    each iteration starts from a clean slate.
    """

    def __init__(self, params: list[tuple[str, Tensor]], lr: float = 5e-4,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self._m = {name: np.zeros(p.shape) for name, p in self.params}
        self._v = {name: np.zeros(p.shape) for name, p in self.params}

    def step(self) -> None:
        missing = [name for name, p in self.params if p.grad is None]
        if missing:
            raise ContractError(f"adam step with unpopulated gradients: {missing[:3]}")
        self.step_count += 1
        bias1 = 1.0 - self.beta1 ** self.step_count
        bias2 = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params:
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p.data -= self.lr * (m / bias1) / (np.sqrt(v / bias2) + self.eps)
            p.zero_grad()


@dataclass(frozen=True)
class Objective:
    """What the stylization optimizes toward: a text prompt or a frozen
    target embedding (the recovery oracle)."""

    kind: str                      # "prompt" | "target"
    prompt: str | None = None
    target: tuple[float, ...] | None = None

    @staticmethod
    def from_prompt(prompt: str) -> "Objective":
        if not prompt.strip():
            raise InputError("empty prompt")
        return Objective(kind="prompt", prompt=prompt)

    @staticmethod
    def from_target(embedding) -> "Objective":
        data = embedding.data if isinstance(embedding, Tensor) else np.asarray(embedding)
        return Objective(kind="target", target=tuple(float(x) for x in data))

    def embedding(self, backend: EmbeddingBackend) -> Tensor:
        if self.kind == "prompt":
            return backend.embed_text(self.prompt).detach()
        if self.kind == "target":
            return Tensor(np.asarray(self.target))
        raise ConfigError(f"unknown objective kind {self.kind!r}")

    def describe(self) -> dict:
        return {"kind": self.kind, "prompt": self.prompt,
                "target_dim": None if self.target is None else len(self.target)}


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 1200        # benchmark cap
    n_views: int = 5
    seed: int = 0
    snapshot_every: int = 50
    lr: float = 5e-4
    image_size: int = 64
    metric_every: int = 10        # cadence of the metric curve (ITS granularity)
    geometry: bool = True         # predict position offsets
    use_attention: bool = True    # False = static-MLP ablation
    augment_enabled: bool = True
    record_walltime: bool = True  # wall_ms column is zero when off (reproducible files)

    def validate(self) -> "TrainConfig":
        if self.iterations < 1 or self.n_views < 1:
            raise ConfigError("iterations and n_views must be >= 1")
        return self


@dataclass
class RunHistory:
    losses: list[float] = dataclass_field(default_factory=list)
    wall_ms: list[float] = dataclass_field(default_factory=list)
    metric_curve: list[tuple[int, float]] = dataclass_field(default_factory=list)
    snapshots: list[str] = dataclass_field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["iteration", "loss", "wall_ms"])
            for i, (loss, ms) in enumerate(zip(self.losses, self.wall_ms), start=1):
                writer.writerow([i, repr(loss), repr(ms)])


def active_parameters(style_field: StyleField, config: TrainConfig) -> list[tuple[str, Tensor]]:
    """Parameters that participate under the given config (the ablation flags
    disconnect whole blocks, which must then be left out of the optimizer)."""
    params = style_field.parameters()
    if not config.use_attention:
        params = [(n, p) for n, p in params if not n.startswith("attention.")]
    if not config.geometry:
        params = [(n, p) for n, p in params if not n.startswith("head.position.")]
    return params


def _branch_embedding(views, backend: EmbeddingBackend, rng, config: TrainConfig) -> Tensor:
    images = []
    for view in views:
        if config.augment_enabled:
            images.append(augment(view.image, rng, backend.input_size))
        elif view.image.shape[0] != backend.input_size:
            images.append(resize_bilinear(view.image, backend.input_size))
        else:
            images.append(view.image)
    return mean_view_embedding(backend, images)


def train_iteration(style_field: StyleField, mesh: Mesh, backend: EmbeddingBackend,
                    objective_embedding: Tensor, optimizer: Adam,
                    rng: np.random.Generator, config: TrainConfig,
                    settings: SoftSettings = SoftSettings()) -> tuple[float, StylizedMesh]:
    """One optimization step; returns (loss, the stylized mesh that was scored)."""
    if not backend.differentiable:
        raise ContractError(
            f"backend {backend.name!r} is non-differentiable and cannot train; "
            "use the toy backend (or a target-embedding objective) for optimization")
    dc, dp = style_field.predict_offsets(mesh, objective_embedding,
                                         use_attention=config.use_attention,
                                         geometry=config.geometry)
    stylized = apply_offsets(mesh, dc, dp)
    gray = gray_variant(stylized)

    cams = sample_train_cameras(rng, config.n_views, config.image_size)
    color_views, gray_views = render_color_and_gray(stylized, gray, cams, settings)
    phi_color = _branch_embedding(color_views, backend, rng, config)
    phi_gray = _branch_embedding(gray_views, backend, rng, config)

    loss = clip_style_loss(phi_color, phi_gray, objective_embedding)
    loss.backward()
    optimizer.step()
    return loss.item(), stylized


def detached_stylized(style_field: StyleField, mesh: Mesh, objective_embedding: Tensor,
                      config: TrainConfig) -> StylizedMesh:
    """Current stylization with gradients cut (for snapshots and metrics)."""
    dc, dp = style_field.predict_offsets(mesh, objective_embedding,
                                         use_attention=config.use_attention,
                                         geometry=config.geometry)
    return apply_offsets(mesh, dc.detach(), dp.detach())


def stylize(mesh: Mesh, objective: Objective, config: TrainConfig,
            backend: EmbeddingBackend,
            field_config: FieldConfig | None = None,
            settings: SoftSettings = SoftSettings(),
            run_dir: str | Path | None = None,
            metric_fn=None,
            stop_metric: float | None = None) -> tuple[StylizedMesh, RunHistory, StyleField]:
    """Optimize a style field for one mesh.

    ``metric_fn(stylized) -> float`` (optional) is evaluated every
    ``config.metric_every`` iterations into ``history.metric_curve``; when
    ``stop_metric`` is set, training stops once the metric reaches it.
    Run artifacts (config.json, history.csv, snapshots, final meshes,
    report.json) are written when ``run_dir`` is given; history is flushed
    even if training is interrupted.
    """
    config = config.validate()
    if field_config is None:
        field_config = FieldConfig(seed=config.seed)
    style_field = StyleField(field_config)
    optimizer = Adam(active_parameters(style_field, config), lr=config.lr)
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x7261]))
    objective_embedding = objective.embedding(backend)

    run_path = Path(run_dir) if run_dir is not None else None
    if run_path is not None:
        run_path.mkdir(parents=True, exist_ok=True)
        (run_path / "snapshots").mkdir(exist_ok=True)
        (run_path / "config.json").write_text(json.dumps({
            "train": asdict(config),
            "field": asdict(field_config),
            "render": asdict(settings),
            "backend": backend.name,
            "objective": objective.describe(),
        }, indent=2))

    history = RunHistory()
    stylized = detached_stylized(style_field, mesh, objective_embedding, config)
    try:
        for iteration in range(1, config.iterations + 1):
            started = time.perf_counter()
            loss, _ = train_iteration(style_field, mesh, backend, objective_embedding,
                                      optimizer, rng, config, settings)
            elapsed = (time.perf_counter() - started) * 1e3
            history.losses.append(loss)
            history.wall_ms.append(elapsed if config.record_walltime else 0.0)

            at_cadence = iteration % config.metric_every == 0
            last = iteration == config.iterations
            if at_cadence or last:
                stylized = detached_stylized(style_field, mesh, objective_embedding, config)
            if run_path is not None and iteration % config.snapshot_every == 0:
                stem = run_path / "snapshots" / f"iter_{iteration:06d}"
                snap = detached_stylized(style_field, mesh, objective_embedding, config)
                save_mesh(snap, stem.with_suffix(".obj"))
                save_png(render(snap, Camera(image_size=config.image_size), settings),
                         stem.with_suffix(".png"))
                history.snapshots.append(str(stem.with_suffix(".obj")))
            if metric_fn is not None and (at_cadence or last):
                value = float(metric_fn(stylized))
                history.metric_curve.append((iteration, value))
                if stop_metric is not None and value >= stop_metric:
                    break
    finally:
        stylized = detached_stylized(style_field, mesh, objective_embedding, config)
        if run_path is not None:
            history.write_csv(run_path / "history.csv")
            save_mesh(stylized, run_path / "final.obj")
            save_mesh(stylized, run_path / "final.ply")
            (run_path / "report.json").write_text(json.dumps({
                "iterations_run": len(history.losses),
                "final_loss": history.losses[-1] if history.losses else None,
                "metric_curve": history.metric_curve,
                "best_metric": max((v for _, v in history.metric_curve), default=None),
                "snapshots": history.snapshots,
            }, indent=2))

    return stylized, history, style_field


def make_target_embedding(reference: StylizedMesh, backend: EmbeddingBackend,
                          cams: list[Camera],
                          settings: SoftSettings = SoftSettings()) -> Tensor:
    """Mean embedding of un-augmented renders of a reference mesh over the
    given camera set, detached from any gradient graph."""
    views = render_views(reference, cams, settings)
    return mean_view_embedding(backend, [v.image for v in views]).detach()
