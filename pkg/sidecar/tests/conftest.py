import numpy as np
import pytest
from PIL import Image


@pytest.fixture(scope="session")
def image_dir(tmp_path_factory):
    """Ten deterministic images: solid colors, gradients, noise, one pair
    of identical files under different names."""
    root = tmp_path_factory.mktemp("images")
    rng = np.random.default_rng(7)
    arrays = {
        "black": np.zeros((64, 64, 3), np.uint8),
        "white": np.full((64, 64, 3), 255, np.uint8),
        "red": np.zeros((64, 64, 3), np.uint8),
        "gradient_h": np.tile(np.arange(64, dtype=np.uint8) * 4, (64, 3, 1)).transpose(0, 2, 1),
        "gradient_v": np.tile((np.arange(80, dtype=np.uint8) * 3)[:, None, None], (1, 48, 3)),
        "noise_a": rng.integers(0, 256, size=(60, 90, 3), dtype=np.uint8),
        "noise_b": rng.integers(0, 256, size=(120, 70, 3), dtype=np.uint8),
        "checker": (np.indices((64, 64)).sum(axis=0) % 2 * 255).astype(np.uint8)[..., None].repeat(3, -1),
    }
    arrays["red"][..., 0] = 255
    for name, arr in arrays.items():
        Image.fromarray(arr).save(root / f"{name}.png")
    dup = rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8)
    Image.fromarray(dup).save(root / "dup_one.png")
    Image.fromarray(dup).save(root / "dup_two.png")
    return root


IMAGE_NAMES = [
    "black", "white", "red", "gradient_h", "gradient_v",
    "noise_a", "noise_b", "checker", "dup_one", "dup_two",
]


@pytest.fixture(scope="session")
def manifest(image_dir):
    path = image_dir / "items.tsv"
    path.write_text(
        "".join(f"item:{n}\t{n}.png\n" for n in IMAGE_NAMES), encoding="utf-8"
    )
    return path
