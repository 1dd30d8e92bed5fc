import numpy as np
import pytest

from diffold.denoiser import DenoiserParams, ModelConfig
from diffold.features import build_graph
from diffold.synthetic import make_helix_backbone, make_toy_dataset


@pytest.fixture(scope="session")
def helix12():
    return make_helix_backbone(12, protein_id="helix12", seed=3)


@pytest.fixture(scope="session")
def helix12_graph(helix12):
    return build_graph(helix12, k=6)


@pytest.fixture(scope="session")
def tiny_graph():
    """6-residue graph used for fast network-level tests."""
    return build_graph(make_helix_backbone(6, protein_id="tiny", seed=1), k=3)


@pytest.fixture(scope="session")
def tiny_config():
    return ModelConfig(hidden_dim=16, n_layers=2)


@pytest.fixture(scope="session")
def tiny_params(tiny_config):
    return DenoiserParams.init(tiny_config, seed=0)


@pytest.fixture(scope="session")
def toy_backbones():
    return make_toy_dataset(5, seed=0)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish proper rotation via QR with determinant fix."""
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


@pytest.fixture
def rng():
    return np.random.default_rng(0)
