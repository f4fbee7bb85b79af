from pathlib import Path
from typing import Callable, Dict, Optional, Sequence

import numpy as np
import pytest

from dscg_localizer.config import DatasetConfig, ModelConfig
from dscg_localizer.constants import BUNDLED_EMBEDDINGS, BUNDLED_KB, BUNDLED_LAYOUT_2D, BUNDLED_LAYOUT_3D
from dscg_localizer.io import Filesystem
from dscg_localizer.knowledge import KnowledgeBase, load_kb
from dscg_localizer.logger import get_logger
from dscg_localizer.operations.generate import generate_dataset
from dscg_localizer.paths import DatasetLayout
from dscg_localizer.scene import LayoutSpec, PartialScene, SceneObject


@pytest.fixture(scope="session")
def kb() -> KnowledgeBase:
    return load_kb(str(BUNDLED_KB), str(BUNDLED_EMBEDDINGS))


@pytest.fixture
def small_config() -> ModelConfig:
    return ModelConfig(d_emb=16, first_dim=8, layers=2, heads=2, dim=2)


@pytest.fixture
def make_scene() -> Callable[..., PartialScene]:
    def build(
        observed: Sequence[tuple],
        target_class: str = "chair",
        targets: Sequence[Sequence[float]] = ((1.0, 1.0),),
        scene_id: str = "fixture",
        completeness: float = 0.5,
    ) -> PartialScene:
        dim = len(observed[0][1])
        return PartialScene(
            scene_id=scene_id,
            dim=dim,
            observed=tuple(
                SceneObject(instance_id=i, class_label=label, position=tuple(float(v) for v in position))
                for i, (label, position) in enumerate(observed)
            ),
            target_class=target_class,
            target_instances=tuple(tuple(float(v) for v in p) for p in targets),
            completeness=completeness,
        )

    return build


@pytest.fixture
def office_scene(make_scene) -> PartialScene:
    return make_scene(
        [
            ("desk", (1.0, 2.0)),
            ("monitor", (1.3, 2.2)),
            ("bed", (6.0, 4.5)),
            ("sofa", (4.0, 0.8)),
        ],
        target_class="chair",
        targets=[(1.5, 1.2), (5.0, 5.0)],
    )


@pytest.fixture
def random_scene(make_scene) -> Callable[[int, int, int], PartialScene]:
    labels = ["desk", "monitor", "bed", "sofa", "lamp", "tv", "plant", "wardrobe"]

    def build(seed: int, count: int = 4, dim: int = 2) -> PartialScene:
        rng = np.random.default_rng(seed)
        observed = [(labels[i % len(labels)], tuple(rng.uniform(0.0, 6.0, size=dim))) for i in range(count)]
        return make_scene(
            observed,
            target_class="chair",
            targets=[tuple(rng.uniform(0.0, 6.0, size=dim))],
            scene_id=f"random_{seed}",
        )

    return build


def _generate(root: Path, layout_file, count: int, seed: int, splits: Optional[Dict[str, float]] = None) -> str:
    extra = {} if splits is None else {"splits": dict(splits)}
    config = DatasetConfig(count=count, seed=seed, completeness_range=(0.4, 0.8), **extra)
    generate_dataset(
        fs=Filesystem(),
        spec=LayoutSpec.from_yaml(str(layout_file)),
        config=config,
        layout=DatasetLayout(str(root)),
        force=False,
        logger=get_logger(),
    )
    return str(root)


@pytest.fixture
def dataset_2d(tmp_path: Path) -> str:
    return _generate(tmp_path / "rooms", BUNDLED_LAYOUT_2D, count=12, seed=3)


@pytest.fixture
def dataset_3d(tmp_path: Path) -> str:
    return _generate(tmp_path / "rooms3d", BUNDLED_LAYOUT_3D, count=10, seed=5)


@pytest.fixture
def synthetic_dataset(tmp_path: Path) -> Callable[..., str]:
    """Bundled 2D layout with a chosen size, seed and split fractions."""

    def build(count: int, seed: int, splits: Dict[str, float]) -> str:
        return _generate(tmp_path / f"rooms_{count}_{seed}", BUNDLED_LAYOUT_2D, count=count, seed=seed, splits=splits)

    return build
