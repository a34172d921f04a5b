"""Balanced cross-entropy and balanced focal loss training objectives.

Both weight each sample by its class weight alpha_t; the focal variant
additionally scales by (1 - p_t)**gamma so confidently-classified samples
contribute almost nothing and the hard minority keeps the gradient.  Losses
run through the autodiff tape, so the modulating factor is differentiated
rather than treated as a constant.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError, ParameterError

NORMALIZATION_TOL = 1e-6


@dataclass
class ClassWeights:
    """Per-class loss weights; index 0 = spoof, 1 = bonafide."""

    alpha_spoof: float = 1.0
    alpha_bonafide: float = 1.0

    def __post_init__(self):
        if self.alpha_spoof <= 0 or self.alpha_bonafide <= 0:
            raise ParameterError("class weights must be positive")

    @classmethod
    def auto(cls, n_spoof: int, n_bonafide: int) -> "ClassWeights":
        """Inverse class frequency, normalized so the per-sample weights
        average to 1 over the training set."""
        if n_spoof < 1 or n_bonafide < 1:
            raise ParameterError("auto weights need at least one sample of each class")
        total = n_spoof + n_bonafide
        # alpha_c = total / (2 * n_c): sample-weighted mean is exactly 1
        return cls(alpha_spoof=total / (2.0 * n_spoof),
                   alpha_bonafide=total / (2.0 * n_bonafide))

    def per_sample(self, targets: np.ndarray) -> np.ndarray:
        return np.where(np.asarray(targets) == 1, self.alpha_bonafide, self.alpha_spoof)


def _check_normalized(log_probs: Tensor) -> None:
    sums = np.exp(log_probs.data.astype(np.float64)).sum(axis=-1)
    if np.any(np.abs(sums - 1.0) > NORMALIZATION_TOL):
        worst = float(np.max(np.abs(sums - 1.0)))
        raise ContractError(
            f"log_probs are not normalized: sum(exp) deviates from 1 by {worst:.3e}"
        )


def _target_log_probs(log_probs: Tensor, targets) -> Tensor:
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    if log_probs.data.ndim == 1:
        log_probs = Tensor(log_probs.data.reshape(1, -1), requires_grad=False) \
            if not log_probs.requires_grad else _reshape_row(log_probs)
    _check_normalized(log_probs)
    return ad.gather_rows(log_probs, targets)


def _reshape_row(t: Tensor) -> Tensor:
    out = Tensor(t.data.reshape(1, -1))
    out.requires_grad = True
    out._parents = (t,)

    def bwd(g):
        ad._accum(t, g.reshape(t.data.shape))

    out._backward = bwd
    return out


def bce(log_probs: Tensor, targets, weights: ClassWeights) -> Tensor:
    """Balanced cross-entropy: mean over samples of -alpha_t * log p_t."""
    lp_t = _target_log_probs(log_probs, targets)
    alpha = weights.per_sample(np.atleast_1d(targets))
    return ad.tmean(ad.neg(ad.mul(lp_t, Tensor(alpha.astype(lp_t.data.dtype)))))


def bfl(log_probs: Tensor, targets, weights: ClassWeights, gamma: float) -> Tensor:
    """Balanced focal loss: mean of -alpha_t * (1 - p_t)**gamma * log p_t.

    The modulating factor is computed from log-probabilities as
    (-expm1(log p_t))**gamma, which stays accurate as p_t -> 1.
    """
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    lp_t = _target_log_probs(log_probs, targets)
    alpha = weights.per_sample(np.atleast_1d(targets))
    one_minus_p = ad.neg(ad.expm1(lp_t))
    modulation = ad.pow_scalar(one_minus_p, gamma)
    weighted = ad.mul(ad.mul(modulation, lp_t), Tensor(alpha.astype(lp_t.data.dtype)))
    return ad.tmean(ad.neg(weighted))


def loss_ratio(p_t: float, gamma: float) -> float:
    """BFL / BCE down-weighting factor (1 - p_t)**gamma for one sample."""
    if not (0.0 < p_t < 1.0):
        raise ParameterError(f"p_t must lie strictly inside (0, 1), got {p_t}")
    if gamma < 0:
        raise ParameterError(f"gamma must be >= 0, got {gamma}")
    return float((1.0 - p_t) ** gamma)
