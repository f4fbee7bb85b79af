"""Shared constants for dscg_localizer."""

from importlib.resources import files

RELATION_NAMES = ("AtLocation", "UsedFor")

# CLI spelling -> relation name
RELATION_ALIASES = {
    "atloc": "AtLocation",
    "atlocation": "AtLocation",
    "usedfor": "UsedFor",
}

DEFAULT_THRESHOLDS = (0.5, 1.0, 2.0, 3.0)
SUCCESS_THRESHOLD = 1.0
DEFAULT_BIN_WIDTH = 0.1

LAYER_NORM_EPS = 1e-5
SCALE_NORM_EPS = 1e-8

MANIFEST_FILE = "manifest.json"
SCENES_DIRNAME = "scenes"
SPLITS = ("train", "val", "test")

CHECKPOINT_MAGIC = b"DSCGCKPT"
CHECKPOINT_FORMAT_VERSION = 1

DONE_DIRNAME = "_status"

DATA_DIR = files("dscg_localizer") / "data"
BUNDLED_KB = DATA_DIR / "mini_kb.tsv"
BUNDLED_EMBEDDINGS = DATA_DIR / "mini_embeddings.txt"
BUNDLED_LAYOUT_2D = DATA_DIR / "layout_2d.yaml"
BUNDLED_LAYOUT_3D = DATA_DIR / "layout_3d.yaml"

__all__ = [
    "RELATION_NAMES",
    "RELATION_ALIASES",
    "DEFAULT_THRESHOLDS",
    "SUCCESS_THRESHOLD",
    "DEFAULT_BIN_WIDTH",
    "LAYER_NORM_EPS",
    "SCALE_NORM_EPS",
    "MANIFEST_FILE",
    "SCENES_DIRNAME",
    "SPLITS",
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_FORMAT_VERSION",
    "DONE_DIRNAME",
    "DATA_DIR",
    "BUNDLED_KB",
    "BUNDLED_EMBEDDINGS",
    "BUNDLED_LAYOUT_2D",
    "BUNDLED_LAYOUT_3D",
]
