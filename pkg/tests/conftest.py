import numpy as np
import pytest
from PIL import Image

ACCEPTANCE_LINES = []


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def square_image(size=96, lo=0.1, hi=0.9):
    """Centered bright square on a dark background, plus its mask."""
    a, b = size // 4, 3 * size // 4
    img = np.full((1, 3, size, size), lo)
    img[..., a:b, a:b] = hi
    mask = np.zeros((1, 1, size, size))
    mask[..., a:b, a:b] = 1.0
    return img, mask


def write_png_dataset(root, images, masks, stems=None):
    """images: list of [3,H,W] floats; masks: list of [H,W] floats."""
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    stems = stems or [f"img{i:02d}" for i in range(len(images))]
    for stem, img, mask in zip(stems, images, masks):
        rgb = np.floor(np.clip(img, 0, 1).transpose(1, 2, 0) * 255 + 0.5).astype(np.uint8)
        Image.fromarray(rgb, mode="RGB").save(root / "images" / f"{stem}.png")
        Image.fromarray((np.asarray(mask) * 255).astype(np.uint8), mode="L").save(root / "masks" / f"{stem}.png")
    return root


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
