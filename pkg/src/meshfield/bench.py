"""Multi-view benchmark protocol: MES and ITS metrics plus a manifest runner.

MES (multi-view embedding score): render the stylized mesh from 24 frozen
views (8 azimuths x 3 elevations), embed each view WITHOUT augmentation, and
average the 24 cosine similarities against the prompt embedding. Reports show
both the raw cosine value and the x100 convention.

ITS (iterations-to-score): the first recorded iteration whose MES reaches a
threshold; samples that never reach it within the iteration cap (1200) are
assigned the sentinel 2000. Aggregates are arithmetic means over all
(mesh, prompt) samples.
"""

from __future__ import annotations

import concurrent.futures
import hashlib
import json
from dataclasses import asdict, dataclass, field as dataclass_field, replace
from pathlib import Path

import numpy as np

from .embed import EmbeddingBackend, ToyEmbedder, make_backend
from .errors import BackendError, ConfigError, InputError
from .field import FieldConfig
from .meshio import Mesh, StylizedMesh, apply_offsets, load_mesh, normalize_and_init, save_mesh
from .optim import Objective, TrainConfig, stylize
from .render import Camera, SoftSettings, render_views

EVAL_AZIMUTHS = (0.0, 45.0, 90.0, 135.0, 180.0, 225.0, 270.0, 315.0)
EVAL_ELEVATIONS = (-30.0, 0.0, 30.0)
ITS_CAP = 1200
ITS_CAP_VALUE = 2000
DEFAULT_ITS_THRESHOLD = 0.22
PROMPT_TEMPLATE = "A 3D rendering of {}, in unreal engine."

# frozen digest of the 24 (azimuth, elevation) pairs; changing the protocol
# must be a deliberate, versioned act
CAMERA_SET_HASH = "361e808065a6c4c2d2ee9cf848aa694779ba3c036faebcb7c01b79eaecabcdba"


def eval_cameras(image_size: int = 224, radius: float = 2.5, fov: float = 60.0) -> list[Camera]:
    """The frozen 24-camera evaluation set, elevation-major order."""
    return [Camera(azimuth=az, elevation=el, radius=radius, fov=fov, image_size=image_size)
            for el in EVAL_ELEVATIONS for az in EVAL_AZIMUTHS]


def camera_set_hash() -> str:
    canonical = "|".join(f"{c.azimuth:g}:{c.elevation:g}" for c in eval_cameras())
    return hashlib.sha256(canonical.encode()).hexdigest()


def view_name(cam: Camera) -> str:
    return f"azi{cam.azimuth:g}_ele{cam.elevation:g}"


def per_view_similarities(s: StylizedMesh, text_embedding, backend: EmbeddingBackend,
                          image_size: int = 224,
                          settings: SoftSettings = SoftSettings()) -> list[float]:
    """Unit-norm backends make the plain dot product the cosine similarity."""
    cams = eval_cameras(image_size)
    views = render_views(s, cams, settings)
    sims = []
    failures = []
    for cam, view in zip(cams, views):
        try:
            emb = backend.embed_image(view.image)
            sims.append(float(emb.data @ text_embedding.data))
        except BackendError as exc:
            failures.append(f"{view_name(cam)} ({exc})")
    if failures:
        raise BackendError(f"embedding failed for {len(failures)} of {len(cams)} views: "
                           + "; ".join(failures[:4]))
    return sims


def mes(s: StylizedMesh, prompt: str, backend: EmbeddingBackend,
        image_size: int = 224, settings: SoftSettings = SoftSettings()) -> float:
    """Mean similarity of the 24 evaluation renders against the prompt (raw scale)."""
    text = backend.embed_text(prompt)
    return float(np.mean(per_view_similarities(s, text, backend, image_size, settings)))


def eval_similarity(s: StylizedMesh, target_embedding, backend: EmbeddingBackend,
                    image_size: int = 224,
                    settings: SoftSettings = SoftSettings()) -> float:
    """Cosine similarity between the mean 24-view embedding and a frozen
    target embedding (the recovery-oracle metric)."""
    from .optim import make_target_embedding
    current = make_target_embedding(s, backend, eval_cameras(image_size), settings)
    a, b = current.data, np.asarray(
        target_embedding.data if hasattr(target_embedding, "data") else target_embedding)
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def its(curve: list[tuple[int, float]], threshold: float,
        cap: int = ITS_CAP, cap_value: int = ITS_CAP_VALUE) -> int:
    """First recorded iteration (<= cap) whose score reaches the threshold."""
    if not curve:
        raise InputError("empty metric curve")
    for iteration, value in sorted(curve):
        if iteration > cap:
            break
        if value >= threshold:
            return int(iteration)
    return cap_value


# ---------------------------------------------------------------------------
# manifest


@dataclass
class ManifestEntry:
    mesh: str
    category: str
    prompts: list[str]


@dataclass
class BenchmarkManifest:
    entries: list[ManifestEntry]
    base_dir: Path

    def resolve_mesh(self, entry: ManifestEntry) -> Path:
        return self.base_dir / entry.mesh


def load_manifest(path) -> BenchmarkManifest:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid manifest JSON: {exc}") from exc
    if not isinstance(raw, list) or not raw:
        raise ConfigError(f"{path}: manifest must be a non-empty JSON list")
    entries = []
    for i, item in enumerate(raw):
        if "mesh" not in item or "category" not in item:
            raise ConfigError(f"{path}: entry {i} needs 'mesh' and 'category'")
        prompts = item.get("prompts") or [PROMPT_TEMPLATE.format(item["category"])]
        entries.append(ManifestEntry(mesh=item["mesh"], category=item["category"],
                                     prompts=[str(p) for p in prompts]))
    return BenchmarkManifest(entries=entries, base_dir=path.parent)


# ---------------------------------------------------------------------------
# benchmark runner


@dataclass(frozen=True)
class BenchConfig:
    train: TrainConfig = TrainConfig()
    field: FieldConfig = FieldConfig()
    its_threshold: float = DEFAULT_ITS_THRESHOLD
    eval_image_size: int = 224
    workers: int = 1


@dataclass
class SampleResult:
    mesh: str
    category: str
    prompt: str
    mes_final: float | None = None
    mes_best: float | None = None
    its: int | None = None
    iterations: int = 0
    curve: list[tuple[int, float]] = dataclass_field(default_factory=list)
    error: str | None = None


@dataclass
class MetricReport:
    samples: list[SampleResult]
    mean_mes: float | None
    mean_its: float | None
    failed: int
    backend_name: str
    camera_hash: str

    def to_dict(self) -> dict:
        return {
            "aggregates": {
                "mean_mes": self.mean_mes,
                "mean_mes_x100": None if self.mean_mes is None else 100.0 * self.mean_mes,
                "mean_its": self.mean_its,
                "samples": len(self.samples),
                "failed": self.failed,
            },
            "backend": self.backend_name,
            "camera_set_hash": self.camera_hash,
            "samples": [asdict(s) for s in self.samples],
        }


def _run_sample(mesh_path: str, category: str, prompt: str, sample_seed: int,
                config: BenchConfig, backend_spec: str, backend_seed: int) -> SampleResult:
    result = SampleResult(mesh=mesh_path, category=category, prompt=prompt)
    try:
        eval_backend = make_backend(backend_spec, seed=backend_seed,
                                    dim=config.field.text_dim)
        train_backend = (eval_backend if eval_backend.differentiable
                         else ToyEmbedder(dim=eval_backend.dim, seed=backend_seed))
        mesh = normalize_and_init(load_mesh(mesh_path))
        train_cfg = replace(config.train, seed=sample_seed)
        field_cfg = replace(config.field, seed=sample_seed)

        def metric(s: StylizedMesh) -> float:
            return mes(s, prompt, eval_backend, config.eval_image_size)

        _, history, _ = stylize(mesh, Objective.from_prompt(prompt), train_cfg,
                                train_backend, field_config=field_cfg, metric_fn=metric)
        result.curve = [(int(i), float(v)) for i, v in history.metric_curve]
        result.iterations = len(history.losses)
        result.mes_final = result.curve[-1][1]
        result.mes_best = max(v for _, v in result.curve)
        result.its = its(result.curve, config.its_threshold)
    except Exception as exc:  # keep the run going; the report records the failure
        result.error = f"{type(exc).__name__}: {exc}"
    return result


def run_benchmark(manifest: BenchmarkManifest, config: BenchConfig,
                  backend_spec: str = "toy", backend_seed: int = 0,
                  out_dir=None) -> MetricReport:
    """Stylize every (mesh, prompt) sample and aggregate MES/ITS.

    Per-sample failures are recorded and do not abort the run. Entries are
    independent; ``config.workers > 1`` runs them in process slots, and the
    merged report is sorted so worker scheduling cannot change the output.
    """
    tasks = []
    index = 0
    for entry in manifest.entries:
        for prompt in entry.prompts:
            tasks.append((str(manifest.resolve_mesh(entry)), entry.category, prompt,
                          config.train.seed + index, config, backend_spec, backend_seed))
            index += 1

    if config.workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=config.workers) as pool:
            samples = list(pool.map(_run_sample_star, tasks))
    else:
        samples = [_run_sample(*task) for task in tasks]

    report = summarize(samples, backend_name=backend_spec)
    if out_dir is not None:
        write_report(report, out_dir, config)
    return report


def summarize(samples: list[SampleResult], backend_name: str) -> MetricReport:
    """Aggregate per-sample scores into arithmetic means, sorted by sample key."""
    samples = sorted(samples, key=lambda s: (s.mesh, s.prompt))
    scored = [s for s in samples if s.error is None]
    return MetricReport(
        samples=samples,
        mean_mes=float(np.mean([s.mes_final for s in scored])) if scored else None,
        mean_its=float(np.mean([s.its for s in scored])) if scored else None,
        failed=len(samples) - len(scored),
        backend_name=backend_name,
        camera_hash=camera_set_hash(),
    )


def _run_sample_star(task):
    return _run_sample(*task)


def write_report(report: MetricReport, out_dir, config: BenchConfig) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    payload = report.to_dict()
    payload["config"] = {"train": asdict(config.train), "field": asdict(config.field),
                         "its_threshold": config.its_threshold,
                         "eval_image_size": config.eval_image_size}
    (out / "report.json").write_text(json.dumps(payload, indent=2))
    lines = ["mesh,category,prompt,mes_final,mes_final_x100,mes_best,its,iterations,error"]
    for s in report.samples:
        mes_x100 = "" if s.mes_final is None else f"{100.0 * s.mes_final:.4f}"
        lines.append(",".join([
            s.mesh, s.category, f"\"{s.prompt}\"",
            "" if s.mes_final is None else f"{s.mes_final:.6f}", mes_x100,
            "" if s.mes_best is None else f"{s.mes_best:.6f}",
            "" if s.its is None else str(s.its), str(s.iterations),
            s.error or "",
        ]))
    (out / "report.csv").write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# procedural sample meshes (benchmark stand-ins)


def icosphere(subdivisions: int = 3) -> Mesh:
    """Subdivided icosahedron on the unit sphere: V = 10 * 4^n + 2."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    vertices = [(-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
                (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
                (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1)]
    vertices = [np.array(v) / np.linalg.norm(v) for v in vertices]
    faces = [(0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
             (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
             (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
             (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1)]

    for _ in range(subdivisions):
        midpoint_cache: dict[tuple[int, int], int] = {}

        def midpoint(i, j):
            key = (min(i, j), max(i, j))
            if key not in midpoint_cache:
                m = vertices[i] + vertices[j]
                vertices.append(m / np.linalg.norm(m))
                midpoint_cache[key] = len(vertices) - 1
            return midpoint_cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = new_faces

    vertices = np.array(vertices)
    return Mesh(vertices=vertices, faces=np.array(faces),
                colors=np.full_like(vertices, 0.5))


def grid_cube(level: int = 4) -> Mesh:
    """Cube surface with each side split into level^2 quads (shared edges
    deduplicated): V = 6(k+1)^2 - 12(k+1) + 8."""
    if not 1 <= level <= 8:
        raise ConfigError("cube level must be in [1, 8]")
    lattice: dict[tuple[int, int, int], int] = {}
    vertices: list[np.ndarray] = []

    def vertex(p: np.ndarray) -> int:
        key = tuple(np.rint(p * 2 * level).astype(int))
        if key not in lattice:
            lattice[key] = len(vertices)
            vertices.append(p)
        return lattice[key]

    faces = []
    axes = np.eye(3)
    for axis in range(3):
        for sign in (-1.0, 1.0):
            normal = sign * axes[axis]
            u = axes[(axis + 1) % 3]
            v = axes[(axis + 2) % 3]
            for i in range(level):
                for j in range(level):
                    def corner(di, dj, i=i, j=j, normal=normal, u=u, v=v):
                        p = (normal * 0.5 + u * ((i + di) / level - 0.5)
                             + v * ((j + dj) / level - 0.5))
                        return vertex(p)
                    a, b, c, d = corner(0, 0), corner(1, 0), corner(1, 1), corner(0, 1)
                    if sign > 0:
                        faces += [(a, b, c), (a, c, d)]
                    else:
                        faces += [(a, c, b), (a, d, c)]
    vertices = np.array(vertices)
    return Mesh(vertices=vertices, faces=np.array(faces),
                colors=np.full_like(vertices, 0.5))


def torus(major_segments: int = 24, minor_segments: int = 16,
          major_radius: float = 0.35, minor_radius: float = 0.15) -> Mesh:
    u = 2 * np.pi * np.arange(major_segments) / major_segments
    v = 2 * np.pi * np.arange(minor_segments) / minor_segments
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (major_radius + minor_radius * np.cos(vv)) * np.cos(uu)
    y = minor_radius * np.sin(vv)
    z = (major_radius + minor_radius * np.cos(vv)) * np.sin(uu)
    vertices = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)

    faces = []
    for i in range(major_segments):
        for j in range(minor_segments):
            a = i * minor_segments + j
            b = ((i + 1) % major_segments) * minor_segments + j
            c = ((i + 1) % major_segments) * minor_segments + (j + 1) % minor_segments
            d = i * minor_segments + (j + 1) % minor_segments
            faces += [(a, b, c), (a, c, d)]
    return Mesh(vertices=vertices, faces=np.array(faces),
                colors=np.full_like(vertices, 0.5))


SAMPLE_PROMPT_SUBJECTS = ("a red {}", "a wooden {}", "a colorful {}",
                          "a golden {}", "a stone {}")


def generate_sample_meshes(out_dir, icosphere_subdivisions: int = 3,
                           cube_level: int = 4) -> Path:
    """Write three watertight sample meshes plus a benchmark manifest; the
    output is fully deterministic, so re-running overwrites identical files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    shapes = {
        "sphere": icosphere(icosphere_subdivisions),
        "cube": grid_cube(cube_level),
        "torus": torus(),
    }
    entries = []
    for category, mesh in shapes.items():
        mesh = normalize_and_init(mesh)
        name = f"{category}.obj"
        save_mesh(apply_offsets(mesh, np.zeros_like(mesh.colors), np.zeros_like(mesh.colors)),
                  out / name)
        entries.append({
            "mesh": name,
            "category": category,
            "prompts": [PROMPT_TEMPLATE.format(s.format(category))
                        for s in SAMPLE_PROMPT_SUBJECTS],
        })
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(entries, indent=2))
    return manifest_path
