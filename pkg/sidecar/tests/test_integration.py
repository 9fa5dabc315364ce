"""End-to-end test: the primary package's remote client against a live sidecar."""

import numpy as np
import pytest

meshfield = pytest.importorskip("meshfield")


def test_remote_backend_against_live_sidecar(live_sidecar):
    backend = meshfield.RemoteBackend(live_sidecar, dim=64)
    assert backend.dim == 64
    assert not backend.differentiable

    text = backend.embed_text("a red sphere")
    assert abs(np.linalg.norm(text.data) - 1.0) <= 1e-5

    image = meshfield.Tensor(np.random.default_rng(0).uniform(0, 1, (32, 32, 3)))
    vec = backend.embed_image(image)
    assert vec.shape == (64,)
    assert abs(np.linalg.norm(vec.data) - 1.0) <= 1e-5


def test_mes_through_live_sidecar(live_sidecar):
    from meshfield.bench import icosphere, mes

    backend = meshfield.RemoteBackend(live_sidecar, dim=64)
    mesh = meshfield.normalize_and_init(icosphere(1))
    stylized = meshfield.apply_offsets(mesh, np.zeros_like(mesh.colors),
                                       np.zeros_like(mesh.colors))
    value = mes(stylized, "a gray sphere", backend, image_size=32)
    assert -1.0 <= value <= 1.0

    with pytest.raises(meshfield.ContractError):
        from meshfield.optim import Adam, TrainConfig, train_iteration
        from meshfield.field import FieldConfig, StyleField

        field = StyleField(FieldConfig(frequencies=8, reduction=4, rank=2,
                                       text_dim=64, head_hidden=8))
        train_iteration(field, mesh, backend, meshfield.Tensor(np.ones(64)),
                        Adam(field.parameters()), np.random.default_rng(0),
                        TrainConfig(iterations=1, n_views=1, image_size=8))
