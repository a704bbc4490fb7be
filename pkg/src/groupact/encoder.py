"""Group-activity feature (GAF) encoder.

A clip is a set of per-person feature tracks: T frames x N persons, each with a
C-dimensional appearance vector and a normalized (x, y) court position. The
encoder composes person features (appearance + sinusoidal position encoding),
runs two pooled branches and concatenates them into a single 2C-dimensional
group-activity feature:

  TS branch: elementwise max over frames (per person) -> linear -> max over persons
  ST branch: elementwise max over persons (per frame) -> linear -> max over frames

Pre-training is self-supervised: persons are randomly hidden from the encoder
(masked-person modeling) and a small appearance head must predict every
person's appearance track from the GAF plus that person's position encodings.

All forward passes are pure functions; gradients are computed analytically
(max pooling routes the subgradient to the lowest-index maximizer, which is
what ``np.argmax`` yields).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    ConfigError,
    MaskError,
    NumericalError,
    ParseError,
    ShapeError,
    ValidationError,
)

PARAMS_FORMAT_VERSION = 1

# Parameter array names, in a fixed order used by the optimizer and serializer.
PARAM_NAMES = (
    "w_ts",
    "b_ts",
    "w_st",
    "b_st",
    "afh_w1",
    "afh_b1",
    "afh_w2",
    "afh_b2",
    "afh_w3",
    "afh_b3",
)


@dataclass(frozen=True)
class VideoFeatures:
    """Per-person feature tracks of one clip: the unit of retrieval.

    appearance: (T, N, C) float array.
    positions:  (T, N, 2) float array, normalized court coordinates in [0, 1]^2.
    """

    id: str
    appearance: np.ndarray
    positions: np.ndarray
    class_label: str | None = None

    def __post_init__(self) -> None:
        app = np.asarray(self.appearance, dtype=np.float64)
        pos = np.asarray(self.positions, dtype=np.float64)
        if app.ndim != 3:
            raise ShapeError(f"video {self.id!r}: appearance must be (T, N, C), got {app.shape}")
        if pos.shape != (app.shape[0], app.shape[1], 2):
            raise ShapeError(
                f"video {self.id!r}: positions must be (T, N, 2) matching appearance "
                f"{app.shape[:2]}, got {pos.shape}"
            )
        if app.shape[0] < 1 or app.shape[1] < 1:
            raise ShapeError(f"video {self.id!r}: needs T >= 1 and N >= 1, got {app.shape[:2]}")
        if not np.isfinite(app).all():
            raise ValidationError(f"video {self.id!r}: non-finite appearance features")
        if not np.isfinite(pos).all():
            raise ValidationError(f"video {self.id!r}: non-finite positions")
        if pos.min() < 0.0 or pos.max() > 1.0:
            raise ValidationError(f"video {self.id!r}: positions outside [0, 1]^2")
        object.__setattr__(self, "appearance", app)
        object.__setattr__(self, "positions", pos)

    @property
    def frames(self) -> int:
        return self.appearance.shape[0]

    @property
    def persons(self) -> int:
        return self.appearance.shape[1]

    @property
    def feature_dim(self) -> int:
        return self.appearance.shape[2]


@dataclass(frozen=True)
class MaskPattern:
    """Set of person indices hidden from the encoder."""

    masked: frozenset[int]

    def __init__(self, masked: Iterable[int] = ()) -> None:
        object.__setattr__(self, "masked", frozenset(int(i) for i in masked))

    @classmethod
    def none(cls) -> "MaskPattern":
        return cls(())

    def kept_indices(self, n_persons: int) -> np.ndarray:
        """Indices of persons that survive pooling, in ascending order."""
        for i in self.masked:
            if i < 0 or i >= n_persons:
                raise MaskError(f"masked person index {i} out of range [0, {n_persons})")
        kept = np.array([i for i in range(n_persons) if i not in self.masked], dtype=np.intp)
        if kept.size == 0:
            raise MaskError("mask removes every person; at least one must survive pooling")
        return kept


@dataclass(frozen=True)
class EncoderParams:
    """Learnable weights of the encoder and appearance head.

    w_ts/w_st are (C, C) branch projections with (C,) biases. The appearance
    head is three fully-connected layers mapping concat(gaf, position code)
    of width 3C down to C, ReLU between layers. pe_base is the fixed
    (non-learnable) frequency base of the position encoding.
    """

    w_ts: np.ndarray
    b_ts: np.ndarray
    w_st: np.ndarray
    b_st: np.ndarray
    afh_w1: np.ndarray
    afh_b1: np.ndarray
    afh_w2: np.ndarray
    afh_b2: np.ndarray
    afh_w3: np.ndarray
    afh_b3: np.ndarray
    pe_base: float = 10000.0

    def __post_init__(self) -> None:
        for name in PARAM_NAMES:
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(arr).all():
                raise ValidationError(f"parameter {name} contains non-finite entries")
            object.__setattr__(self, name, arr)
        c = self.w_ts.shape[0]
        if self.w_ts.shape != (c, c) or self.w_st.shape != (c, c):
            raise ShapeError("w_ts and w_st must be square (C, C) matrices of equal size")
        if self.b_ts.shape != (c,) or self.b_st.shape != (c,):
            raise ShapeError("branch biases must have shape (C,)")
        h1 = self.afh_w1.shape[0]
        h2 = self.afh_w2.shape[0]
        if self.afh_w1.shape != (h1, 3 * c):
            raise ShapeError(f"afh_w1 must be (H1, 3C) = (*, {3 * c}), got {self.afh_w1.shape}")
        if self.afh_w2.shape != (h2, h1) or self.afh_w3.shape != (c, h2):
            raise ShapeError("appearance head layer shapes are inconsistent")
        if (
            self.afh_b1.shape != (h1,)
            or self.afh_b2.shape != (h2,)
            or self.afh_b3.shape != (c,)
        ):
            raise ShapeError("appearance head bias shapes are inconsistent")

    @property
    def feature_dim(self) -> int:
        return self.w_ts.shape[0]

    def as_dict(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def with_arrays(self, arrays: Mapping[str, np.ndarray]) -> "EncoderParams":
        return replace(self, **dict(arrays))

    def copy(self) -> "EncoderParams":
        return self.with_arrays({k: v.copy() for k, v in self.as_dict().items()})


def init_params(feature_dim: int, seed: int, hidden: int | None = None,
                pe_base: float = 10000.0) -> EncoderParams:
    """Seed-deterministic parameter initialization (Gaussian, std 1/sqrt(fan_in))."""
    c = int(feature_dim)
    if c % 4 != 0:
        raise ConfigError(f"feature_dim must be divisible by 4, got {c}")
    h = int(hidden) if hidden is not None else 2 * c
    rng = np.random.default_rng(seed)

    def mat(out_dim: int, in_dim: int) -> np.ndarray:
        return rng.normal(0.0, 1.0 / math.sqrt(in_dim), size=(out_dim, in_dim))

    return EncoderParams(
        w_ts=mat(c, c),
        b_ts=np.zeros(c),
        w_st=mat(c, c),
        b_st=np.zeros(c),
        afh_w1=mat(h, 3 * c),
        afh_b1=np.zeros(h),
        afh_w2=mat(h, h),
        afh_b2=np.zeros(h),
        afh_w3=mat(c, h),
        afh_b3=np.zeros(c),
        pe_base=pe_base,
    )


# ---------------------------------------------------------------------------
# Position encoding and person feature composition
# ---------------------------------------------------------------------------


def spatial_positional_encoding(pos: Sequence[float], feature_dim: int,
                                base: float = 10000.0) -> np.ndarray:
    """Sinusoidal encoding of a normalized (x, y) point into a C-vector.

    The first C/2 entries encode x as interleaved sin/cos over geometric
    frequencies (angle = 2*pi*x / base**(2j/half)); the last C/2 encode y
    identically. Requires C divisible by 4.
    """
    if feature_dim % 4 != 0:
        raise ConfigError(f"encoding dimension must be divisible by 4, got {feature_dim}")
    pos = np.asarray(pos, dtype=np.float64)
    if pos.shape != (2,):
        raise ShapeError(f"position must be an (x, y) pair, got shape {pos.shape}")
    return _pe_batch(pos[None, :], feature_dim, base)[0]


def _pe_batch(points: np.ndarray, feature_dim: int, base: float) -> np.ndarray:
    """Vectorized position encoding: (..., 2) -> (..., C)."""
    half = feature_dim // 2
    n_freq = half // 2
    divisors = base ** (2.0 * np.arange(n_freq) / half)
    out = np.empty(points.shape[:-1] + (feature_dim,), dtype=np.float64)
    for coord in (0, 1):
        angles = (2.0 * math.pi) * points[..., coord, None] / divisors
        out[..., coord * half + 0 : (coord + 1) * half : 2] = np.sin(angles)
        out[..., coord * half + 1 : (coord + 1) * half : 2] = np.cos(angles)
    return out


def compose_person_feature(appearance: np.ndarray, position: Sequence[float],
                           base: float = 10000.0) -> np.ndarray:
    """Person feature = appearance + position encoding, elementwise."""
    appearance = np.asarray(appearance, dtype=np.float64)
    if appearance.ndim != 1:
        raise ShapeError(f"appearance must be a vector, got shape {appearance.shape}")
    pe = spatial_positional_encoding(position, appearance.shape[0], base)
    return appearance + pe


# ---------------------------------------------------------------------------
# GAF encoding (forward + cache for backprop)
# ---------------------------------------------------------------------------


@dataclass
class GafCache:
    """Intermediate values of one encode pass, kept for backpropagation."""

    kept: np.ndarray        # (Nk,) kept person indices
    ts_pool: np.ndarray     # (Nk, C) max over frames per kept person
    ts_arg_frame: np.ndarray
    ts_hidden: np.ndarray   # (Nk, C) after linear
    ts_arg_person: np.ndarray  # (C,) row index into kept persons
    st_pool: np.ndarray     # (T, C) max over kept persons per frame
    st_arg_person: np.ndarray
    st_hidden: np.ndarray   # (T, C)
    st_arg_frame: np.ndarray  # (C,)
    gaf: np.ndarray         # (2C,)


def forward_gaf(video: VideoFeatures, params: EncoderParams,
                mask: MaskPattern | None = None) -> GafCache:
    """Full encode pass; returns the cache whose .gaf field is the feature."""
    if video.feature_dim != params.feature_dim:
        raise ShapeError(
            f"video {video.id!r} has C={video.feature_dim}, params expect C={params.feature_dim}"
        )
    mask = mask if mask is not None else MaskPattern.none()
    kept = mask.kept_indices(video.persons)

    pe = _pe_batch(video.positions[:, kept, :], params.feature_dim, params.pe_base)
    f_ind = video.appearance[:, kept, :] + pe  # (T, Nk, C)

    ts_pool = f_ind.max(axis=0)                 # (Nk, C)
    ts_arg_frame = f_ind.argmax(axis=0)
    ts_hidden = ts_pool @ params.w_ts.T + params.b_ts
    ts_arg_person = ts_hidden.argmax(axis=0)    # (C,)
    g_ts = ts_hidden.max(axis=0)

    st_pool = f_ind.max(axis=1)                 # (T, C)
    st_arg_person = f_ind.argmax(axis=1)
    st_hidden = st_pool @ params.w_st.T + params.b_st
    st_arg_frame = st_hidden.argmax(axis=0)     # (C,)
    g_st = st_hidden.max(axis=0)

    return GafCache(
        kept=kept,
        ts_pool=ts_pool,
        ts_arg_frame=ts_arg_frame,
        ts_hidden=ts_hidden,
        ts_arg_person=ts_arg_person,
        st_pool=st_pool,
        st_arg_person=st_arg_person,
        st_hidden=st_hidden,
        st_arg_frame=st_arg_frame,
        gaf=np.concatenate([g_ts, g_st]),
    )


def encode_gaf(video: VideoFeatures, params: EncoderParams,
               mask: MaskPattern | None = None) -> np.ndarray:
    """Encode a (possibly person-masked) clip into its 2C-dim group feature."""
    return forward_gaf(video, params, mask).gaf


def gaf_backward(cache: GafCache, params: EncoderParams,
                 d_gaf: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of <d_gaf, gaf> w.r.t. the branch weights."""
    c = params.feature_dim
    cols = np.arange(c)

    d_ts_hidden = np.zeros_like(cache.ts_hidden)
    d_ts_hidden[cache.ts_arg_person, cols] = d_gaf[:c]
    d_st_hidden = np.zeros_like(cache.st_hidden)
    d_st_hidden[cache.st_arg_frame, cols] = d_gaf[c:]

    return {
        "w_ts": d_ts_hidden.T @ cache.ts_pool,
        "b_ts": d_ts_hidden.sum(axis=0),
        "w_st": d_st_hidden.T @ cache.st_pool,
        "b_st": d_st_hidden.sum(axis=0),
    }


# ---------------------------------------------------------------------------
# Appearance head (location-guided appearance prediction)
# ---------------------------------------------------------------------------


@dataclass
class AfhCache:
    x: np.ndarray   # (M, 3C)
    z1: np.ndarray
    h1: np.ndarray
    z2: np.ndarray
    h2: np.ndarray
    pred: np.ndarray  # (M, C)


def _afh_forward(gaf: np.ndarray, position_codes: np.ndarray,
                 params: EncoderParams) -> AfhCache:
    """Head forward for M rows: x_m = concat(gaf, code_m)."""
    m = position_codes.shape[0]
    x = np.concatenate([np.broadcast_to(gaf, (m, gaf.shape[0])), position_codes], axis=1)
    z1 = x @ params.afh_w1.T + params.afh_b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.afh_w2.T + params.afh_b2
    h2 = np.maximum(z2, 0.0)
    pred = h2 @ params.afh_w3.T + params.afh_b3
    return AfhCache(x=x, z1=z1, h1=h1, z2=z2, h2=h2, pred=pred)


def _afh_backward(cache: AfhCache, params: EncoderParams, d_pred: np.ndarray,
                  grads: dict[str, np.ndarray]) -> np.ndarray:
    """Accumulate head gradients into `grads`; returns d_gaf (2C,)."""
    c2 = 2 * params.feature_dim
    grads["afh_w3"] += d_pred.T @ cache.h2
    grads["afh_b3"] += d_pred.sum(axis=0)
    d_h2 = d_pred @ params.afh_w3
    d_z2 = d_h2 * (cache.z2 > 0.0)
    grads["afh_w2"] += d_z2.T @ cache.h1
    grads["afh_b2"] += d_z2.sum(axis=0)
    d_h1 = d_z2 @ params.afh_w2
    d_z1 = d_h1 * (cache.z1 > 0.0)
    grads["afh_w1"] += d_z1.T @ cache.x
    grads["afh_b1"] += d_z1.sum(axis=0)
    d_x = d_z1 @ params.afh_w1
    return d_x[:, :c2].sum(axis=0)


def predict_appearance(gaf: np.ndarray, person_positions: np.ndarray,
                       params: EncoderParams) -> np.ndarray:
    """Predict one person's T x C appearance track from the GAF and their positions."""
    gaf = np.asarray(gaf, dtype=np.float64)
    if gaf.shape != (2 * params.feature_dim,):
        raise ShapeError(
            f"gaf must have dimension 2C={2 * params.feature_dim}, got shape {gaf.shape}"
        )
    person_positions = np.asarray(person_positions, dtype=np.float64)
    if person_positions.ndim != 2 or person_positions.shape[1] != 2:
        raise ShapeError(f"person_positions must be (T, 2), got {person_positions.shape}")
    codes = _pe_batch(person_positions, params.feature_dim, params.pe_base)
    return _afh_forward(gaf, codes, params).pred


# ---------------------------------------------------------------------------
# Self-supervised pre-training
# ---------------------------------------------------------------------------


def _zero_grads(params: EncoderParams) -> dict[str, np.ndarray]:
    return {name: np.zeros_like(arr) for name, arr in params.as_dict().items()}


def pretrain_loss(videos: Sequence[VideoFeatures], masks: Sequence[MaskPattern | None],
                  params: EncoderParams) -> float:
    """Mean over videos and persons of the MSE between predicted and input appearance.

    Predictions are made from the GAF of the *masked* clip; targets are the
    unmasked input appearance features of every person.
    """
    loss, _ = pretrain_loss_and_grads(videos, masks, params, need_grads=False)
    return loss


def pretrain_loss_and_grads(
    videos: Sequence[VideoFeatures],
    masks: Sequence[MaskPattern | None],
    params: EncoderParams,
    need_grads: bool = True,
) -> tuple[float, dict[str, np.ndarray]]:
    if len(videos) == 0:
        raise ValidationError("pre-training batch must be non-empty")
    if len(masks) != len(videos):
        raise ShapeError(f"{len(videos)} videos but {len(masks)} masks")

    grads = _zero_grads(params)
    total = 0.0
    k_videos = len(videos)

    for video, mask in zip(videos, masks):
        cache = forward_gaf(video, params, mask)
        t, n, c = video.appearance.shape
        # One batched head pass over all persons: rows ordered person-major.
        codes = _pe_batch(video.positions, c, params.pe_base)  # (T, N, C)
        codes = codes.transpose(1, 0, 2).reshape(n * t, c)
        targets = video.appearance.transpose(1, 0, 2).reshape(n * t, c)
        afh = _afh_forward(cache.gaf, codes, params)
        err = afh.pred - targets
        total += float(np.mean(err * err)) / k_videos
        if need_grads:
            d_pred = (2.0 / (t * c * n * k_videos)) * err
            d_gaf = _afh_backward(afh, params, d_pred, grads)
            for name, g in gaf_backward(cache, params, d_gaf).items():
                grads[name] += g
    return total, grads


@dataclass
class PretrainConfig:
    """Settings for self-supervised pre-training.

    The per-video mask count is drawn uniformly in [0, floor(N/3)] each epoch;
    the upper bound is a convention of this implementation, chosen to keep
    pooling over the surviving persons meaningful.
    """

    epochs: int = 30
    learning_rate: float = 1e-4
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    hidden: int | None = None

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ConfigError("learning rate must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")


def pretrain(videos: Sequence[VideoFeatures], config: PretrainConfig,
             seed: int) -> tuple[EncoderParams, list[float]]:
    """Pre-train the encoder on a video collection; returns (params, loss history).

    Reproducible: the seed drives initialization, mask draws and shuffling.
    The history holds one mean loss per epoch.
    """
    from .optim import AdamState, adam_step  # local import avoids a cycle

    if len(videos) == 0:
        raise ValidationError("pre-training requires a non-empty dataset")
    c = videos[0].feature_dim
    rng = np.random.default_rng(seed)
    params = init_params(c, seed=int(rng.integers(2**31 - 1)), hidden=config.hidden)
    state = AdamState.init(params.as_dict())
    history: list[float] = []

    for epoch in range(config.epochs):
        order = rng.permutation(len(videos))
        masks: list[MaskPattern] = []
        for idx in order:
            n = videos[idx].persons
            count = int(rng.integers(0, n // 3 + 1))
            chosen = rng.choice(n, size=count, replace=False) if count else []
            masks.append(MaskPattern(chosen))

        epoch_losses: list[float] = []
        for start in range(0, len(order), config.batch_size):
            batch_idx = order[start : start + config.batch_size]
            batch = [videos[i] for i in batch_idx]
            batch_masks = masks[start : start + config.batch_size]
            loss, grads = pretrain_loss_and_grads(batch, batch_masks, params)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite pre-training loss at epoch {epoch}")
            arrays, state = adam_step(
                params.as_dict(), grads, state,
                lr=config.learning_rate, beta1=config.beta1,
                beta2=config.beta2, eps=config.eps,
            )
            params = params.with_arrays(arrays)
            epoch_losses.append(loss)
        history.append(float(np.mean(epoch_losses)))
    return params, history


# ---------------------------------------------------------------------------
# Parameter (de)serialization: versioned JSON with row-major float arrays
# ---------------------------------------------------------------------------


def params_to_json_dict(params: EncoderParams, meta: dict | None = None) -> dict:
    doc: dict = {
        "version": PARAMS_FORMAT_VERSION,
        "kind": "encoder-params",
        "feature_dim": params.feature_dim,
        "pe_base": params.pe_base,
        "arrays": {
            name: {"shape": list(arr.shape), "data": arr.ravel().tolist()}
            for name, arr in params.as_dict().items()
        },
    }
    if meta:
        doc["meta"] = meta
    return doc


def params_from_json_dict(doc: dict) -> EncoderParams:
    if not isinstance(doc, dict) or doc.get("kind") != "encoder-params":
        raise ParseError("not an encoder parameter document")
    if doc.get("version") != PARAMS_FORMAT_VERSION:
        raise ParseError(
            f"unsupported params format version {doc.get('version')!r}, "
            f"expected {PARAMS_FORMAT_VERSION}"
        )
    arrays = {}
    for name in PARAM_NAMES:
        entry = doc["arrays"].get(name)
        if entry is None:
            raise ParseError(f"missing parameter array {name!r}")
        arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
        arrays[name] = arr
    return EncoderParams(**arrays, pe_base=float(doc.get("pe_base", 10000.0)))


def save_params(params: EncoderParams, path: str | Path, meta: dict | None = None) -> None:
    Path(path).write_text(json.dumps(params_to_json_dict(params, meta)) + "\n")


def load_params(path: str | Path) -> EncoderParams:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON at char {exc.pos}: {exc.msg}") from exc
    return params_from_json_dict(doc)
