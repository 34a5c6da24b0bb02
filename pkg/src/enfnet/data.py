"""Dataset discovery, sample preparation and PNG helpers.

Layout::

    root/images/<stem>.png        RGB (or gray) input
    root/images/<stem>.edge.png   optional precomputed edge map
    root/masks/<stem>.png         ground-truth mask
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from .config import NetworkConfig
from .edge import extract_edge_map
from .tensor import Tensor

EDGE_SUFFIX = ".edge.png"


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class Entry:
    stem: str
    image: Path
    mask: Optional[Path]
    edge: Optional[Path] = None


@dataclass(frozen=True)
class DatasetManifest:
    root: Path
    entries: tuple

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass
class Sample:
    id: str
    image: Tensor  # [1,3,S,S] in [0,1]
    gt: Tensor  # [1,1,s,s] binary, s = supervision size
    edge: Tensor  # [1,1,S/2,S/2] in [0,1]
    mask: Tensor  # [1,1,S,S] binary, used for evaluation


def list_images(directory: Path) -> dict:
    """Map stem -> path for every PNG that is not an edge map."""
    out = {}
    for p in sorted(Path(directory).glob("*.png")):
        if p.name.endswith(EDGE_SUFFIX):
            continue
        out[p.stem] = p
    return out


def load_dataset(root, require_masks: bool = True) -> DatasetManifest:
    root = Path(root)
    img_dir, mask_dir = root / "images", root / "masks"
    if not img_dir.is_dir():
        raise DatasetError(f"missing images directory: {img_dir}")
    if require_masks and not mask_dir.is_dir():
        raise DatasetError(f"missing masks directory: {mask_dir}")
    images = list_images(img_dir)
    masks = list_images(mask_dir) if mask_dir.is_dir() else {}
    if require_masks:
        lonely_images = sorted(set(images) - set(masks))
        lonely_masks = sorted(set(masks) - set(images))
        if lonely_images or lonely_masks:
            parts = []
            if lonely_images:
                parts.append(f"images without masks: {', '.join(lonely_images)}")
            if lonely_masks:
                parts.append(f"masks without images: {', '.join(lonely_masks)}")
            raise DatasetError("unpaired files in " + str(root) + "; " + "; ".join(parts))
    entries = []
    for stem in sorted(images):
        edge = img_dir / f"{stem}{EDGE_SUFFIX}"
        entries.append(Entry(stem, images[stem], masks.get(stem), edge if edge.exists() else None))
    if not entries:
        raise DatasetError(f"no PNG images found in {img_dir}")
    return DatasetManifest(root, tuple(entries))


def _open(path: Path, mode: str) -> Image.Image:
    try:
        with Image.open(path) as im:
            return im.convert(mode)
    except (OSError, ValueError) as exc:
        raise DatasetError(f"cannot decode image {path}: {exc}") from None


def _resize(im: Image.Image, size: int, resample) -> Image.Image:
    return im if im.size == (size, size) else im.resize((size, size), resample)


def load_rgb(path, size: int) -> np.ndarray:
    im = _resize(_open(Path(path), "RGB"), size, Image.BILINEAR)
    return np.asarray(im, dtype=np.float64).transpose(2, 0, 1)[None] / 255.0


def load_mask(path, size: int) -> np.ndarray:
    im = _resize(_open(Path(path), "L"), size, Image.NEAREST)
    return (np.asarray(im, dtype=np.float64) / 255.0 >= 0.5).astype(np.float64)[None, None]


def load_edge(path, size: int) -> np.ndarray:
    im = _resize(_open(Path(path), "L"), size, Image.BILINEAR)
    return np.asarray(im, dtype=np.float64)[None, None] / 255.0


def prepare_image(entry: Entry, config: NetworkConfig) -> tuple:
    s = config.input_size
    image = load_rgb(entry.image, s)
    if entry.edge is not None:
        edge = Tensor(load_edge(entry.edge, config.level_size(1)))
    else:
        edge = extract_edge_map(image)
    return Tensor(image), edge


def prepare_sample(entry: Entry, config: NetworkConfig) -> Sample:
    if entry.mask is None:
        raise DatasetError(f"no mask for {entry.stem}")
    image, edge = prepare_image(entry, config)
    return Sample(
        id=entry.stem,
        image=image,
        gt=Tensor(load_mask(entry.mask, config.supervision_size)),
        edge=edge,
        mask=Tensor(load_mask(entry.mask, config.input_size)),
    )


def hflip_augment(sample: Sample) -> Sample:
    def flip(t: Tensor) -> Tensor:
        return Tensor(t.data[..., ::-1])

    return replace(
        sample,
        image=flip(sample.image),
        gt=flip(sample.gt),
        edge=flip(sample.edge),
        mask=flip(sample.mask),
    )


def to_uint8(saliency: np.ndarray) -> np.ndarray:
    return np.floor(np.clip(saliency, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_saliency(saliency, path) -> None:
    """Write a [H,W] (or squeezable) probability map as an 8-bit gray PNG."""
    a = saliency.data if isinstance(saliency, Tensor) else np.asarray(saliency)
    a = np.squeeze(a)
    if a.ndim != 2:
        raise ValueError(f"saliency map must be 2-D after squeezing, got {a.shape}")
    try:
        Image.fromarray(to_uint8(a), mode="L").save(path)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def read_mask(path) -> np.ndarray:
    """Gray PNG to a float [H,W] array in [0,1]."""
    return np.asarray(_open(Path(path), "L"), dtype=np.float64) / 255.0


def write_rgb(image: np.ndarray, path) -> None:
    """[3,H,W] or [1,3,H,W] float image in [0,1] to an RGB PNG."""
    a = np.squeeze(np.asarray(image))
    Image.fromarray(to_uint8(a.transpose(1, 2, 0)), mode="RGB").save(path)
