"""Small shared factories for the test suite."""

from __future__ import annotations

import numpy as np

from groupact import EncoderParams, VideoFeatures


def make_video(rng: np.random.Generator, frames: int = 3, persons: int = 4,
               dim: int = 8, vid: str = "v0", label: str | None = None) -> VideoFeatures:
    return VideoFeatures(
        id=vid,
        appearance=rng.normal(0.0, 1.0, size=(frames, persons, dim)),
        positions=rng.uniform(0.0, 1.0, size=(frames, persons, 2)),
        class_label=label,
    )


def identity_params(dim: int, hidden: int | None = None) -> EncoderParams:
    """Identity branch projections, zero biases, zero appearance head."""
    h = hidden if hidden is not None else 2 * dim
    return EncoderParams(
        w_ts=np.eye(dim),
        b_ts=np.zeros(dim),
        w_st=np.eye(dim),
        b_st=np.zeros(dim),
        afh_w1=np.zeros((h, 3 * dim)),
        afh_b1=np.zeros(h),
        afh_w2=np.zeros((h, h)),
        afh_b2=np.zeros(h),
        afh_w3=np.zeros((dim, h)),
        afh_b3=np.zeros(dim),
    )
