"""ResNet50 feature extraction: images in, two pooled feature taps out.

The final tap is the 2048-dim globally pooled output of the last residual
stage (what dir/ft modes consume); the cut tap is the 1024-dim globally
pooled output of the third residual stage, the stage boundary standing in
for the frozen/trainable split of the network. Both are taken in one
forward pass per image.
"""

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from PIL import Image, UnidentifiedImageError
from torchvision import transforms
from torchvision.models import resnet50

from .errors import InputError

IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)
FINAL_DIM = 2048
CUT_DIM = 1024


@dataclass(frozen=True)
class ImageSpec:
    """What the network expects at its input: square RGB crops.

    Images are RGB-converted, resized so the shorter side is 256/224 of the
    crop, center-cropped to size x size, and channel-normalized.
    """

    size: int = 224
    mean: tuple[float, float, float] = IMAGENET_MEAN
    std: tuple[float, float, float] = IMAGENET_STD

    def __post_init__(self):
        if self.size < 32:
            raise InputError("image size must be at least 32 pixels")


def build_model(weights: str = "imagenet", seed: int = 0):
    """ResNet50 in eval mode; weights is 'imagenet', 'random', or a path.

    'random' seeds torch so runs are reproducible without any weight file.
    """
    if weights == "imagenet":
        from torchvision.models import ResNet50_Weights

        try:
            model = resnet50(weights=ResNet50_Weights.IMAGENET1K_V1)
        except Exception as exc:
            raise InputError(
                f"cannot load ImageNet weights ({exc}); in offline "
                "environments pass --weights PATH or --weights random"
            ) from exc
    elif weights == "random":
        torch.manual_seed(seed)
        model = resnet50(weights=None)
    else:
        model = resnet50(weights=None)
        try:
            state = torch.load(weights, map_location="cpu", weights_only=True)
            model.load_state_dict(state)
        except (OSError, RuntimeError, ValueError) as exc:
            raise InputError(f"cannot load weights from {weights}: {exc}") from exc
    model.eval()
    return model


def preprocessor(spec: ImageSpec = ImageSpec()):
    """Standard ImageNet eval transform for the given input spec."""
    resize = round(spec.size * 256 / 224)
    return transforms.Compose(
        [
            transforms.Resize(resize),
            transforms.CenterCrop(spec.size),
            transforms.ToTensor(),
            transforms.Normalize(spec.mean, spec.std),
        ]
    )


def image_features(model, pixels: torch.Tensor) -> tuple[np.ndarray, np.ndarray]:
    """One staged forward pass; returns (final 2048, cut 1024) row vectors."""
    with torch.inference_mode():
        x = model.conv1(pixels.unsqueeze(0))
        x = model.bn1(x)
        x = model.relu(x)
        x = model.maxpool(x)
        x = model.layer1(x)
        x = model.layer2(x)
        x = model.layer3(x)
        cut = x.mean(dim=(2, 3))
        x = model.layer4(x)
        final = torch.flatten(model.avgpool(x), 1)
    return (
        final[0].numpy().astype(np.float32, copy=True),
        cut[0].numpy().astype(np.float32, copy=True),
    )


def parse_manifest(path) -> list[tuple[str, Path]]:
    """item_key<TAB>image_path lines; image paths resolve relative to the
    manifest's own directory."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise InputError(f"cannot read manifest {path}: {exc}") from exc
    base = Path(path).parent
    entries: list[tuple[str, Path]] = []
    seen: set[str] = set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise InputError(
                f"{path}:{lineno}: expected item_key<TAB>image_path, got {line!r}"
            )
        key, img = parts
        if key in seen:
            raise InputError(f"{path}:{lineno}: duplicate item key {key!r}")
        seen.add(key)
        entries.append((key, base / img))
    if not entries:
        raise InputError(f"manifest {path} lists no items")
    return entries


@dataclass
class ExtractResult:
    keys: list[str]
    final: np.ndarray  # (n, 2048) float32
    cut: np.ndarray  # (n, 1024) float32
    skipped: list[tuple[str, str, str]] = field(default_factory=list)

    @property
    def skip_fraction(self) -> float:
        total = len(self.keys) + len(self.skipped)
        return len(self.skipped) / total if total else 0.0


def extract(entries: list[tuple[str, Path]], model, spec: ImageSpec = ImageSpec()) -> ExtractResult:
    """Run every manifest entry through the network.

    Images are processed one at a time so a vector never depends on which
    batch its image landed in. Unreadable or undecodable images are
    skipped and listed, not fatal; the caller owns the skip-rate policy.
    """
    prep = preprocessor(spec)
    keys: list[str] = []
    final_rows: list[np.ndarray] = []
    cut_rows: list[np.ndarray] = []
    skipped: list[tuple[str, str, str]] = []
    for key, img_path in entries:
        try:
            with Image.open(img_path) as img:
                pixels = prep(img.convert("RGB"))
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            skipped.append((key, str(img_path), str(exc)))
            continue
        final_vec, cut_vec = image_features(model, pixels)
        if not (np.all(np.isfinite(final_vec)) and np.all(np.isfinite(cut_vec))):
            skipped.append((key, str(img_path), "non-finite features"))
            continue
        keys.append(key)
        final_rows.append(final_vec)
        cut_rows.append(cut_vec)
    final = np.stack(final_rows) if final_rows else np.empty((0, FINAL_DIM), np.float32)
    cut = np.stack(cut_rows) if cut_rows else np.empty((0, CUT_DIM), np.float32)
    return ExtractResult(keys, final, cut, skipped)
