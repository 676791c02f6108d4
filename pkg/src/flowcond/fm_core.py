"""Closed-form conditional flow-matching math.

Everything here is exact, double-precision math on F x T frame matrices:
the affine probability path from a standard-normal prior draw to a data
sample, the target vector field along that path, and the regression loss
used to train a parametric field against it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Denominators at or below this are treated as singular.
_EPS = 1e-12


@dataclass(frozen=True)
class PathConfig:
    """Shape of the affine probability path.

    ``sigma_min`` is the residual noise scale left at the data endpoint;
    it must be small and nonnegative, and keeps the target field finite
    at t=1 when positive.
    """

    sigma_min: float = 1e-5

    def __post_init__(self):
        if not 0.0 <= self.sigma_min < 1.0:
            raise ValueError(f"sigma_min must be in [0, 1), got {self.sigma_min}")


@dataclass
class FlowSample:
    """One training tuple drawn from the conditional path.

    All matrices share shape F x T.  ``u_target`` is the regression
    target for the learned field at (x_t, t).
    """

    x_t: np.ndarray
    t: float
    u_target: np.ndarray
    x0: np.ndarray
    x1: np.ndarray

    def __post_init__(self):
        shapes = {self.x_t.shape, self.u_target.shape, self.x0.shape, self.x1.shape}
        if len(shapes) != 1:
            raise ValueError(f"flow sample matrices disagree in shape: {shapes}")
        if not 0.0 <= self.t <= 1.0:
            raise ValueError(f"t must be in [0, 1], got {self.t}")


def sample_time(rng: np.random.Generator) -> float:
    """Draw the path time t uniformly from [0, 1]."""
    return float(rng.uniform(0.0, 1.0))


def path_mean_std(t: float, cfg: PathConfig) -> tuple[float, float]:
    """Mean coefficient and standard deviation of the path at time t.

    The path is Gaussian around t*x1 with std 1 - (1 - sigma_min)*t, so
    it starts at the prior (mean 0, std 1) and contracts linearly onto
    the data up to the residual sigma_min.
    """
    if not 0.0 <= t <= 1.0:
        raise ValueError(f"t must be in [0, 1], got {t}")
    return t, 1.0 - (1.0 - cfg.sigma_min) * t


def sample_conditional_path(
    x1: np.ndarray, t: float, x0: np.ndarray, cfg: PathConfig
) -> np.ndarray:
    """Point on the path at time t for prior draw x0 and data x1.

    x_t = t*x1 + (1 - (1 - sigma_min)*t) * x0, elementwise.
    """
    if x0.shape != x1.shape:
        raise ValueError(f"x0 shape {x0.shape} != x1 shape {x1.shape}")
    mean_coeff, std = path_mean_std(t, cfg)
    return mean_coeff * x1 + std * x0


def conditional_vector_field(
    x: np.ndarray, x1: np.ndarray, t: float, cfg: PathConfig
) -> np.ndarray:
    """Target vector field u(x | x1) at time t.

    u = (x1 - (1 - sigma_min)*x) / (1 - (1 - sigma_min)*t).  The
    denominator vanishes only at t=1 with sigma_min=0, which is rejected
    as singular.
    """
    if x.shape != x1.shape:
        raise ValueError(f"x shape {x.shape} != x1 shape {x1.shape}")
    denom = 1.0 - (1.0 - cfg.sigma_min) * t
    if denom <= _EPS:
        raise ZeroDivisionError(
            f"path field singular: 1 - (1 - sigma_min)*t = {denom} at t={t}"
        )
    return (x1 - (1.0 - cfg.sigma_min) * x) / denom


def on_path_field(x0: np.ndarray, x1: np.ndarray, cfg: PathConfig) -> np.ndarray:
    """Target field evaluated on the path itself: x1 - (1 - sigma_min)*x0.

    Algebraically identical to ``conditional_vector_field`` at
    x = sample_conditional_path(x1, t, x0) for every t, but free of the
    near-singular division, so it is the stable form for training
    targets.
    """
    if x0.shape != x1.shape:
        raise ValueError(f"x0 shape {x0.shape} != x1 shape {x1.shape}")
    return x1 - (1.0 - cfg.sigma_min) * x0


def make_flow_sample(
    x1: np.ndarray, rng: np.random.Generator, cfg: PathConfig
) -> FlowSample:
    """Draw (t, x0) and assemble the training tuple for data sample x1."""
    t = sample_time(rng)
    x0 = rng.standard_normal(x1.shape)
    x_t = sample_conditional_path(x1, t, x0, cfg)
    return FlowSample(x_t=x_t, t=t, u_target=on_path_field(x0, x1, cfg), x0=x0, x1=x1)


def cfm_loss(
    v_pred: np.ndarray, u_target: np.ndarray, mask: np.ndarray | None = None
) -> float:
    """Mean squared error between predicted and target fields.

    With ``mask`` (binary per-frame vector of length T) only the masked
    frames contribute; the mean is taken over the included elements.  An
    all-zero mask is rejected since it leaves nothing to score.
    """
    if v_pred.shape != u_target.shape:
        raise ValueError(
            f"v_pred shape {v_pred.shape} != u_target shape {u_target.shape}"
        )
    diff = v_pred - u_target
    if mask is None:
        return float(np.mean(diff * diff))
    mask = np.asarray(mask)
    if mask.ndim != 1 or mask.shape[0] != v_pred.shape[1]:
        raise ValueError(
            f"mask length {mask.shape} does not match frame count {v_pred.shape[1]}"
        )
    included = mask.astype(bool)
    n = int(included.sum())
    if n == 0:
        raise ValueError("mask selects no frames; loss undefined")
    sub = diff[:, included]
    return float(np.mean(sub * sub))
