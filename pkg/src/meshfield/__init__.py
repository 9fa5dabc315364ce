"""Text-conditioned mesh stylization with differentiable rendering, plus the
multi-view MES/ITS benchmark tooling."""

from .autograd import Tensor, cosine_sim
from .bench import (
    BenchConfig,
    BenchmarkManifest,
    MetricReport,
    eval_cameras,
    eval_similarity,
    generate_sample_meshes,
    its,
    load_manifest,
    mes,
    run_benchmark,
)
from .embed import (
    EmbeddingBackend,
    RemoteBackend,
    ScriptedBackend,
    ToyEmbedder,
    clip_style_loss,
    make_backend,
    mean_view_embedding,
)
from .errors import (
    BackendError,
    ConfigError,
    ContractError,
    DimensionError,
    GeometryError,
    InputError,
    MeshFieldError,
    MeshFormatError,
    NumericError,
)
from .field import FieldConfig, StyleField
from .meshio import (
    Mesh,
    StylizedMesh,
    apply_offsets,
    gray_variant,
    load_mesh,
    normalize_and_init,
    save_mesh,
)
from .optim import Adam, Objective, RunHistory, TrainConfig, make_target_embedding, stylize
from .render import Camera, RenderedView, SoftSettings, augment, render, render_views, save_png

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
