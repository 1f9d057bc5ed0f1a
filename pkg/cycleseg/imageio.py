"""
Binary PPM (P6) images, PGM (P5) masks and tab-separated dataset manifests.

Images are stored 8-bit with value round(v * 255); masks as 0 or 255.
"""

import logging
from pathlib import Path
from typing import List, Sequence

import numpy as np
import pandas as pd
from PIL import Image, UnidentifiedImageError

from .errors import FormatError, IoError
from .synthdata import ImageGroup

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.tsv"


def _save(image: Image.Image, path: Path) -> Path:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        image.save(path, format="PPM")
    except OSError as e:
        raise IoError(f"Could not write {path}: {e}") from e
    return path


def _open(path: Path, mode: str) -> np.ndarray:
    if not path.exists():
        raise IoError(f"File not found: {path}")
    try:
        with Image.open(path) as image:
            image.load()
            if image.format != "PPM" or image.mode != mode:
                raise FormatError(f"{path} is {image.format}/{image.mode}, expected PPM/{mode}")
            return np.asarray(image)
    except (UnidentifiedImageError, SyntaxError, ValueError) as e:
        if isinstance(e, FormatError):
            raise
        raise FormatError(f"Malformed image file {path}: {e}") from e
    except OSError as e:
        raise IoError(f"Could not read {path}: {e}") from e


def write_ppm(path, image: np.ndarray) -> Path:
    """Write a 3 x H x W float image in [0, 1] as binary P6."""
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[0] != 3:
        raise FormatError(f"Expected a 3xHxW image, got {image.shape}")
    pixels = np.clip(np.rint(image * 255.0), 0, 255).astype(np.uint8).transpose(1, 2, 0)
    return _save(Image.fromarray(np.ascontiguousarray(pixels)), Path(path))


def read_ppm(path) -> np.ndarray:
    """Read a binary P6 file into a 3 x H x W float image in [0, 1]."""
    pixels = _open(Path(path), "RGB")
    return pixels.transpose(2, 0, 1).astype(np.float64) / 255.0


def write_pgm(path, mask: np.ndarray) -> Path:
    """Write a binary H x W mask as P5 with values 0 and 255."""
    mask = np.asarray(mask)
    if mask.ndim != 2 or not np.isin(mask, (0, 1)).all():
        raise FormatError(f"Expected a binary HxW mask, got shape {mask.shape}")
    return _save(Image.fromarray(mask.astype(np.uint8) * 255), Path(path))


def read_pgm(path) -> np.ndarray:
    """Read a P5 mask back into uint8 {0, 1}."""
    pixels = _open(Path(path), "L")
    if not np.isin(pixels, (0, 255)).all():
        raise FormatError(f"{path} is not a binary mask (values other than 0 and 255)")
    return (pixels // 255).astype(np.uint8)


# ============================================================================
# Datasets on disk
# ============================================================================
def save_dataset(groups: Sequence[ImageGroup], out_dir) -> Path:
    """Write every group as PPM/PGM files and a manifest of their paths.

    Group g lives in `<out_dir>/g<g>_<class>/`; each manifest line lists
    image and mask paths (relative to out_dir) alternating per image.
    """
    out_dir = Path(out_dir)
    rows: List[List[str]] = []
    for g, group in enumerate(groups):
        group_dir = f"g{g:04d}_{group.common_class}"
        row = []
        for i, (image, mask) in enumerate(zip(group.images, group.masks)):
            image_path = f"{group_dir}/img_{i}.ppm"
            mask_path = f"{group_dir}/mask_{i}.pgm"
            write_ppm(out_dir / image_path, image)
            write_pgm(out_dir / mask_path, mask)
            row.extend([image_path, mask_path])
        rows.append(row)
    manifest = out_dir / MANIFEST_NAME
    try:
        pd.DataFrame(rows).to_csv(manifest, sep="\t", header=False, index=False)
    except OSError as e:
        raise IoError(f"Could not write manifest {manifest}: {e}") from e
    logger.info(f"[Data] wrote {len(groups)} groups to {out_dir}")
    return manifest


def load_dataset(manifest) -> List[ImageGroup]:
    """Load groups listed in a manifest written by save_dataset."""
    manifest = Path(manifest)
    if manifest.is_dir():
        manifest = manifest / MANIFEST_NAME
    if not manifest.exists():
        raise IoError(f"Manifest not found: {manifest}")
    try:
        table = pd.read_csv(manifest, sep="\t", header=None, dtype=str)
    except (pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise FormatError(f"Malformed manifest {manifest}: {e}") from e

    groups = []
    for _, row in table.iterrows():
        paths = [p for p in row.tolist() if isinstance(p, str)]
        if len(paths) < 4 or len(paths) % 2:
            raise FormatError(f"Manifest line needs image/mask pairs for >= 2 images: {paths}")
        images = [read_ppm(manifest.parent / p) for p in paths[0::2]]
        masks = [read_pgm(manifest.parent / p) for p in paths[1::2]]
        common = Path(paths[0]).parent.name.partition("_")[2] or "unknown"
        groups.append(ImageGroup(images, masks, common))
    return groups
