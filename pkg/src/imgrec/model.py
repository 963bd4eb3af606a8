"""Latent-factor model with image-feature item fusion.

Three feature-incorporation modes:
  dir  - raw item feature vector concatenated onto the item one-hot
  ft   - features pass a trainable affine+ReLU layer first
  ete  - features pass a trainable MLP head, then the ft layer

The one-hot products are implemented as row lookups plus a low-rank feature
product; equivalence with the dense concat(one-hot, features) formulation is
asserted by tests. Forward passes are pure reads of ModelParams and safe to
run concurrently; mutation requires exclusive access.
"""

import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from .binio import ByteReader
from .data import FeatureStore
from .errors import (
    CheckpointMismatchError,
    ConfigError,
    FormatError,
    InputError,
    ShapeError,
)

CHECKPOINT_MAGIC = b"IMR1"

_NORM_EPS = 0.0  # zero-norm feature vectors stay zero, no epsilon smoothing


class Mode(str, Enum):
    DIR = "dir"
    FT = "ft"
    ETE = "ete"

    @classmethod
    def parse(cls, value) -> "Mode":
        if isinstance(value, Mode):
            return value
        try:
            return cls(str(value).lower())
        except ValueError:
            raise ConfigError(f"unknown mode {value!r}, expected dir|ft|ete") from None


@dataclass
class ModelConfig:
    mode: Mode
    K: int
    F_raw: int
    F_ft: int = 150
    head_layers: tuple[int, ...] = ()
    normalize_features: bool = False
    activation_embed: str = "linear"
    seed: int = 0

    def __post_init__(self):
        self.mode = Mode.parse(self.mode)
        self.head_layers = tuple(int(w) for w in self.head_layers)
        if self.K < 1:
            raise ConfigError("K must be >= 1")
        if self.F_raw < 1:
            raise ConfigError("F_raw must be >= 1")
        if self.mode in (Mode.FT, Mode.ETE) and self.F_ft < 1:
            raise ConfigError("F_ft must be >= 1 in ft/ete modes")
        if self.mode == Mode.ETE:
            if not self.head_layers:
                raise ConfigError("ete mode requires non-empty head_layers")
            if any(w < 1 for w in self.head_layers):
                raise ConfigError("head layer widths must be >= 1")
        elif self.head_layers:
            raise ConfigError(f"head_layers only apply to ete mode, not {self.mode}")
        if self.activation_embed != "linear":
            raise ConfigError("only linear embedding activation is supported")

    @property
    def feature_dim_in(self) -> int:
        """Width of the feature block entering the item embedding."""
        return self.F_raw if self.mode == Mode.DIR else self.F_ft

    @property
    def ft_input_dim(self) -> int:
        """Input width of the fine-tuning layer (ft/ete only)."""
        return self.head_layers[-1] if self.mode == Mode.ETE else self.F_raw


@dataclass
class ModelParams:
    """All trainable tensors. Arrays are float64; checkpoints store float32."""

    config: ModelConfig
    M: int
    N: int
    W_user: np.ndarray
    b_user: np.ndarray
    W_item: np.ndarray
    b_item: np.ndarray
    W_ft: np.ndarray | None = None
    b_ft: np.ndarray | None = None
    head: list[tuple[np.ndarray, np.ndarray]] = field(default_factory=list)

    def named_tensors(self) -> list[tuple[str, np.ndarray]]:
        out = [
            ("W_user", self.W_user),
            ("b_user", self.b_user),
            ("W_item", self.W_item),
            ("b_item", self.b_item),
        ]
        for idx, (W, b) in enumerate(self.head):
            out.append((f"head.{idx}.W", W))
            out.append((f"head.{idx}.b", b))
        if self.W_ft is not None:
            out.append(("W_ft", self.W_ft))
            out.append(("b_ft", self.b_ft))
        return out

    def weight_matrix_names(self) -> list[str]:
        """Tensors subject to L2 regularization (biases excluded)."""
        return [name for name, arr in self.named_tensors() if arr.ndim == 2]

    @property
    def feature_block(self) -> np.ndarray:
        """Rows of W_item multiplied by the extracted feature vector."""
        return self.W_item[self.N :]

    def n_parameters(self) -> int:
        return sum(arr.size for _, arr in self.named_tensors())

    def copy(self) -> "ModelParams":
        return ModelParams(
            config=self.config,
            M=self.M,
            N=self.N,
            W_user=self.W_user.copy(),
            b_user=self.b_user.copy(),
            W_item=self.W_item.copy(),
            b_item=self.b_item.copy(),
            W_ft=None if self.W_ft is None else self.W_ft.copy(),
            b_ft=None if self.b_ft is None else self.b_ft.copy(),
            head=[(W.copy(), b.copy()) for W, b in self.head],
        )


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    bound = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-bound, bound, size=shape)


def init_params(
    config: ModelConfig, dataset_dims: tuple[int, int], feature_dim: int
) -> ModelParams:
    """Glorot-uniform weights, zero biases, deterministic under config.seed."""
    M, N = dataset_dims
    if M < 1 or N < 1:
        raise ConfigError(f"dataset dims must be positive, got {dataset_dims}")
    if feature_dim != config.F_raw:
        raise ConfigError(
            f"feature dim {feature_dim} does not match config F_raw {config.F_raw}"
        )
    rng = np.random.default_rng(config.seed)
    K = config.K
    F_in = config.feature_dim_in
    W_user = _glorot(rng, (M, K))
    W_item = _glorot(rng, (N + F_in, K))
    head: list[tuple[np.ndarray, np.ndarray]] = []
    W_ft = b_ft = None
    if config.mode == Mode.ETE:
        prev = config.F_raw
        for width in config.head_layers:
            head.append((_glorot(rng, (prev, width)), np.zeros(width)))
            prev = width
    if config.mode in (Mode.FT, Mode.ETE):
        W_ft = _glorot(rng, (config.ft_input_dim, config.F_ft))
        b_ft = np.zeros(config.F_ft)
    return ModelParams(
        config=config,
        M=M,
        N=N,
        W_user=W_user,
        b_user=np.zeros(K),
        W_item=W_item,
        b_item=np.zeros(K),
        W_ft=W_ft,
        b_ft=b_ft,
        head=head,
    )


def sigmoid(t):
    """Numerically stable logistic, branching on the sign of the logit."""
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    expt = np.exp(t[~pos])
    out[~pos] = expt / (1.0 + expt)
    return out


def extract_batch_with_cache(X: np.ndarray, params: ModelParams):
    """Run the mode's feature path over a (B, F_raw) batch.

    Returns (features, cache); the cache holds every intermediate the
    backward pass needs (head pre-activations, ft pre-activation,
    pre-normalization features and their norms).
    """
    cfg = params.config
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != cfg.F_raw:
        raise ShapeError(f"feature batch shape {X.shape}, expected (B, {cfg.F_raw})")
    cache: dict = {"X": X}
    if cfg.mode == Mode.DIR:
        f = X
    else:
        h = X
        if cfg.mode == Mode.ETE:
            pre_acts = []
            acts = [h]
            for W, b in params.head:
                pre = h @ W + b
                h = np.maximum(pre, 0.0)
                pre_acts.append(pre)
                acts.append(h)
            cache["head_pre"] = pre_acts
            cache["head_act"] = acts
        ft_pre = h @ params.W_ft + params.b_ft
        f = np.maximum(ft_pre, 0.0)
        cache["ft_in"] = h
        cache["ft_pre"] = ft_pre
    if cfg.normalize_features:
        norms = np.linalg.norm(f, axis=1, keepdims=True)
        safe = np.where(norms > _NORM_EPS, norms, 1.0)
        cache["f_raw"] = f
        cache["norms"] = norms
        f = f / safe
    return f, cache


def extract_features(item: int, store: FeatureStore, params: ModelParams) -> np.ndarray:
    """Feature vector entering the item embedding for one item."""
    x = store.get(item).astype(np.float64)
    f, _ = extract_batch_with_cache(x[None, :], params)
    return f[0]


def embed_user(u: int, params: ModelParams) -> np.ndarray:
    """Row u of the user table plus bias (one-hot x matrix = row selection)."""
    if not 0 <= u < params.M:
        raise IndexError(f"user id {u} out of range [0, {params.M})")
    return params.W_user[u] + params.b_user


def embed_item(i: int, features: np.ndarray, params: ModelParams) -> np.ndarray:
    """Item row plus the feature product plus bias."""
    if not 0 <= i < params.N:
        raise IndexError(f"item id {i} out of range [0, {params.N})")
    features = np.asarray(features, dtype=np.float64)
    f_in = params.config.feature_dim_in
    if features.shape != (f_in,):
        raise ShapeError(f"feature vector shape {features.shape}, expected ({f_in},)")
    return params.W_item[i] + features @ params.feature_block + params.b_item


def score(u: int, i: int, features: np.ndarray, params: ModelParams) -> float:
    """sigmoid(z_u . z_i)."""
    logit = float(embed_user(u, params) @ embed_item(i, features, params))
    return float(sigmoid(logit))


def score_items(
    u: int, item_list, store: FeatureStore, params: ModelParams
) -> np.ndarray:
    """Vector of score(u, i) over item_list, feature extraction batched."""
    items = np.asarray(item_list, dtype=np.int64)
    if items.size == 0:
        return np.empty(0)
    X = store.matrix[items].astype(np.float64)
    f, _ = extract_batch_with_cache(X, params)
    z_i = params.W_item[items] + f @ params.feature_block + params.b_item
    logits = z_i @ embed_user(u, params)
    return sigmoid(logits)


def make_scorer(params: ModelParams, store: FeatureStore):
    """Adapter onto the (u, items) -> scores interface evaluation consumes."""

    def scorer(u: int, items) -> np.ndarray:
        return score_items(u, items, store, params)

    return scorer


# --- checkpoints --------------------------------------------------------------
#
# magic "IMR1" | u8 mode (0=dir 1=ft 2=ete) | u8 flags (bit0 normalize)
# | u32 M,N,K,F_raw,F_ft,n_head | n_head x u32 widths
# | tensors as row-major f32 in named_tensors() order.

_MODE_TAGS = {Mode.DIR: 0, Mode.FT: 1, Mode.ETE: 2}
_TAG_MODES = {v: k for k, v in _MODE_TAGS.items()}


def save_checkpoint(params: ModelParams, path) -> None:
    cfg = params.config
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        flags = 1 if cfg.normalize_features else 0
        fh.write(struct.pack("<BB", _MODE_TAGS[cfg.mode], flags))
        f_ft = cfg.F_ft if cfg.mode in (Mode.FT, Mode.ETE) else 0
        fh.write(
            struct.pack(
                "<IIIIII", params.M, params.N, cfg.K, cfg.F_raw, f_ft,
                len(cfg.head_layers),
            )
        )
        for width in cfg.head_layers:
            fh.write(struct.pack("<I", width))
        for _, arr in params.named_tensors():
            fh.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def load_checkpoint(path, config: ModelConfig | None = None,
                    dims: tuple[int, int] | None = None) -> ModelParams:
    """Load a checkpoint; validate shapes against config/dims when given."""
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise InputError(f"cannot read checkpoint {path}: {exc}") from exc
    reader = ByteReader(data)
    magic = reader.take(4, "magic")
    if magic != CHECKPOINT_MAGIC:
        raise FormatError(
            f"bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}", offset=0
        )
    tag = reader.u8("mode tag")
    if tag not in _TAG_MODES:
        raise FormatError(f"unknown mode tag {tag}", offset=4)
    mode = _TAG_MODES[tag]
    flags = reader.u8("flags")
    M = reader.u32("user count")
    N = reader.u32("item count")
    K = reader.u32("embedding dim")
    F_raw = reader.u32("raw feature dim")
    F_ft = reader.u32("ft dim")
    n_head = reader.u32("head layer count")
    widths = tuple(reader.u32(f"head width {idx}") for idx in range(n_head))

    file_cfg = ModelConfig(
        mode=mode,
        K=K,
        F_raw=F_raw,
        F_ft=F_ft if mode != Mode.DIR else 150,
        head_layers=widths,
        normalize_features=bool(flags & 1),
    )
    if config is not None:
        stored_ft = F_ft if mode != Mode.DIR else None
        wanted_ft = config.F_ft if config.mode != Mode.DIR else None
        mismatches = []
        if config.mode != mode:
            mismatches.append(f"mode {mode.value} != {config.mode.value}")
        if config.K != K:
            mismatches.append(f"K {K} != {config.K}")
        if config.F_raw != F_raw:
            mismatches.append(f"F_raw {F_raw} != {config.F_raw}")
        if stored_ft != wanted_ft:
            mismatches.append(f"F_ft {stored_ft} != {wanted_ft}")
        if tuple(config.head_layers) != widths:
            mismatches.append(f"head {widths} != {tuple(config.head_layers)}")
        if mismatches:
            raise CheckpointMismatchError(
                f"{path}: checkpoint does not match config: " + "; ".join(mismatches)
            )
        file_cfg = config
    if dims is not None and (M, N) != tuple(dims):
        raise CheckpointMismatchError(
            f"{path}: checkpoint dims ({M}, {N}) != dataset dims {tuple(dims)}"
        )

    def tensor(shape, what):
        flat = reader.f32_array(int(np.prod(shape)), what)
        return flat.astype(np.float64).reshape(shape)

    F_in = file_cfg.feature_dim_in
    W_user = tensor((M, K), "W_user")
    b_user = tensor((K,), "b_user")
    W_item = tensor((N + F_in, K), "W_item")
    b_item = tensor((K,), "b_item")
    head = []
    prev = F_raw
    for idx, width in enumerate(widths):
        W = tensor((prev, width), f"head.{idx}.W")
        b = tensor((width,), f"head.{idx}.b")
        head.append((W, b))
        prev = width
    W_ft = b_ft = None
    if mode in (Mode.FT, Mode.ETE):
        W_ft = tensor((file_cfg.ft_input_dim, F_ft), "W_ft")
        b_ft = tensor((F_ft,), "b_ft")
    reader.expect_end("last tensor")
    return ModelParams(
        config=file_cfg, M=M, N=N,
        W_user=W_user, b_user=b_user, W_item=W_item, b_item=b_item,
        W_ft=W_ft, b_ft=b_ft, head=head,
    )
