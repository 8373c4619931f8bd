import numpy as np
import pytest

from maskedit.conductor import ModelBundle, build_toy_bundle
from maskedit.denoiser import ConvDenoiser, StackSpec
from maskedit.branch import BranchNetwork
from maskedit.embedding import CaptionEmbedder
from maskedit.scenes import ProceduralScene, ShapeSpec
from maskedit.schedule import make_schedule


@pytest.fixture(scope="session")
def small_bundle() -> ModelBundle:
    """Untrained toy bundle shared by fast tests (never mutated)."""
    return build_toy_bundle(seed=0, hidden=8, total_steps=200,
                            cond_dim=16, time_dim=8)


@pytest.fixture()
def tiny_setup():
    """Sub-1k-parameter denoiser setup for gradient checks."""
    spec = StackSpec(2, (4, 4, 2), time_dim=4, cond_dim=8)
    base = ConvDenoiser(spec, seed=3)
    branch = BranchNetwork.for_base(base, seed=4)
    sched = make_schedule(50, 1e-3, 2e-2)
    embedder = CaptionEmbedder(8)
    return base, branch, sched, embedder


@pytest.fixture()
def two_shape_scene() -> ProceduralScene:
    return ProceduralScene(32, 32, "white", (
        ShapeSpec("circle", "red", 10, 10, 6),
        ShapeSpec("square", "blue", 23, 22, 5),
    ))


@pytest.fixture()
def scene_image(two_shape_scene) -> np.ndarray:
    return two_shape_scene.render()
