"""Frame-sequence infilling task construction.

A training example hides a contiguous span of frames behind a binary
temporal mask; the model sees the remaining context plus frame-aligned
condition streams and must regenerate the hidden span.  Condition
dropout zeroes the whole bundle with one coin flip per example so an
unconditional branch is available for guided sampling.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

NV_DIM = 32
EMO_DIM = 2

# Token id 0 is reserved as the blank/ dropped-condition phoneme.
BLANK_TOKEN = 0


@dataclass
class TemporalMask:
    """Binary per-frame mask, broadcast over the feature axis."""

    bits: np.ndarray

    def __post_init__(self):
        self.bits = np.asarray(self.bits, dtype=np.uint8)
        if self.bits.ndim != 1:
            raise ValueError(f"mask must be 1-d, got shape {self.bits.shape}")
        if not np.isin(self.bits, (0, 1)).all():
            raise ValueError("mask bits must be 0 or 1")

    def __len__(self) -> int:
        return self.bits.shape[0]

    @property
    def count(self) -> int:
        return int(self.bits.sum())

    def as_row(self) -> np.ndarray:
        """Mask as a float64 1 x T row for elementwise broadcasting."""
        return self.bits.astype(np.float64)[np.newaxis, :]


@dataclass
class ConditionBundle:
    """Frame-aligned condition streams plus the visible context.

    ``phonemes`` holds integer token ids of length T; ``nv`` is the
    32 x T nonverbal-vocalization embedding stream; ``emo`` the 2 x T
    arousal/valence stream centered in [-0.5, 0.5]; ``context`` is the
    feature matrix with the masked span zeroed.
    """

    phonemes: np.ndarray
    nv: np.ndarray
    emo: np.ndarray
    context: np.ndarray
    mask: TemporalMask

    def __post_init__(self):
        self.phonemes = np.asarray(self.phonemes)
        if self.phonemes.ndim != 1:
            raise ValueError("phonemes must be a 1-d token id sequence")
        t = self.phonemes.shape[0]
        for name, arr, rows in (("nv", self.nv, NV_DIM), ("emo", self.emo, EMO_DIM)):
            if arr.shape != (rows, t):
                raise ValueError(
                    f"{name} must have shape ({rows}, {t}), got {arr.shape}"
                )
        if self.context.ndim != 2 or self.context.shape[1] != t:
            raise ValueError(
                f"context must be F x {t}, got shape {self.context.shape}"
            )
        if len(self.mask) != t:
            raise ValueError(f"mask length {len(self.mask)} != stream length {t}")
        if self.emo.size and (self.emo.min() < -0.5 or self.emo.max() > 0.5):
            raise ValueError("emo values must lie in [-0.5, 0.5]")

    @property
    def length(self) -> int:
        return self.phonemes.shape[0]


@dataclass
class TrainingExample:
    """Masked target region together with its conditioning bundle."""

    target: np.ndarray
    cond: ConditionBundle
    mask: TemporalMask


def sample_mask(
    T: int, rng: np.random.Generator, ratio_range: tuple[float, float] = (0.7, 1.0)
) -> TemporalMask:
    """Sample one contiguous masked span covering round(r*T) frames.

    r is uniform on ``ratio_range`` and the span start is uniform among
    valid offsets.  The span is clamped to at least one frame so the
    mask is always usable for training.
    """
    lo, hi = ratio_range
    if not 0.0 < lo <= hi <= 1.0:
        raise ValueError(f"ratio_range must satisfy 0 < lo <= hi <= 1, got {ratio_range}")
    if T < 1:
        raise ValueError(f"sequence length must be >= 1, got {T}")
    r = rng.uniform(lo, hi)
    span = int(np.floor(r * T + 0.5))  # round half up, avoids banker's rounding
    span = min(max(span, 1), T)
    start = int(rng.integers(0, T - span + 1))
    bits = np.zeros(T, dtype=np.uint8)
    bits[start : start + span] = 1
    return TemporalMask(bits)


def build_example(
    features: np.ndarray,
    phonemes: np.ndarray,
    nv: np.ndarray,
    emo: np.ndarray,
    mask: TemporalMask,
) -> TrainingExample:
    """Split features into masked target and visible context.

    context = (1 - m) * features and target = m * features, so the two
    pieces always sum back to the original matrix exactly.
    """
    if mask.count == 0:
        raise ValueError("training mask must select at least one frame")
    T = len(mask)
    if features.ndim != 2 or features.shape[1] != T:
        raise ValueError(
            f"features must be F x {T}, got shape {features.shape}"
        )
    row = mask.as_row()
    target = row * features
    context = (1.0 - row) * features
    cond = ConditionBundle(phonemes=phonemes, nv=nv, emo=emo, context=context, mask=mask)
    return TrainingExample(target=target, cond=cond, mask=mask)


def zero_conditions(cond: ConditionBundle) -> ConditionBundle:
    """Bundle with every condition stream blanked (the unconditional branch)."""
    return replace(
        cond,
        phonemes=np.full_like(cond.phonemes, BLANK_TOKEN),
        nv=np.zeros_like(cond.nv),
        emo=np.zeros_like(cond.emo),
        context=np.zeros_like(cond.context),
    )


def apply_condition_dropout(
    cond: ConditionBundle, p_drop: float, rng: np.random.Generator
) -> ConditionBundle:
    """With probability p_drop, blank the whole bundle; otherwise pass through.

    One coin per example: streams are never dropped individually.
    """
    if not 0.0 <= p_drop <= 1.0:
        raise ValueError(f"p_drop must be in [0, 1], got {p_drop}")
    if p_drop > 0.0 and rng.uniform() < p_drop:
        return zero_conditions(cond)
    return cond
