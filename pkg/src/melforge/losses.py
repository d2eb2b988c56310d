"""Training objectives: reconstruction (L1 + cross-entropy), guided
attention, Wasserstein critic/generator losses with gradient penalty, and
the per-batch dynamic combination that gives both terms equal weight.

All means are over the unmasked elements of each term's grid; padded frames
are excluded via the optional masks.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, ops

log = logging.getLogger(__name__)

CLAMP_EPS = 1e-7
RATIO_GUARD = 1e-8


@dataclass(frozen=True)
class GanBatchStats:
    """Per-batch expectations of the two loss groups (Wasserstein losses can
    be negative; the magnitude guard lives in `combine_losses`)."""

    mean_recon: float
    mean_gan: float

    def __post_init__(self):
        if not (np.isfinite(self.mean_recon) and np.isfinite(self.mean_gan)):
            raise ValueError("batch loss statistics must be finite")


def masked_mean(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Mean over unmasked elements; ``mask`` broadcasts against x and is a
    constant (no gradient flows through it)."""
    if mask is None:
        return ops.mean(x)
    if mask.size == 0 or x.data.size % mask.size:
        raise ValueError(f"mask shape {mask.shape} does not broadcast to {x.shape}")
    count = float(mask.sum()) * (x.data.size // mask.size)
    if count == 0:
        raise ValueError("mask excludes every element")
    return ops.div(ops.tsum(ops.mul(x, Tensor(mask.astype(x.dtype)))), count)


def _clamped(y: Tensor) -> Tensor:
    lo, hi = float(np.min(y.data)), float(np.max(y.data))
    if lo <= 0.0 or hi >= 1.0:
        log.warning(
            "predictions outside (0,1): min=%g max=%g; clamping to [%g, %g]",
            lo, hi, CLAMP_EPS, 1.0 - CLAMP_EPS,
        )
    return ops.clip(y, CLAMP_EPS, 1.0 - CLAMP_EPS)


def l1_plus_bce(y: Tensor, s: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """E|y - s| + E[-s log y - (1-s) log(1-y)]."""
    y = ad.as_tensor(y)
    s = ad.as_tensor(s)
    l1 = masked_mean(ops.absval(ops.sub(y, s)), mask)
    yc = _clamped(y)
    ce = ops.neg(
        ops.add(
            ops.mul(s, ops.log(yc)),
            ops.mul(ops.sub(1.0, s), ops.log(ops.sub(1.0, yc))),
        )
    )
    return ops.add(l1, masked_mean(ce, mask))


def guided_weight_value(n, t, n_total: int, t_total: int):
    """Scalar/array form of the off-diagonal attention weight,
    1 - exp(-(n/N - t/T)^2) with 0-based indices."""
    ratio = np.asarray(n, dtype=np.float64) / n_total - np.asarray(t, dtype=np.float64) / t_total
    return 1.0 - np.exp(-(ratio**2))


def guided_weights(n_total: int, t_total: int) -> np.ndarray:
    """(N, T) guided-attention weight grid; zero on the n/N == t/T locus,
    bounded by 1 - e^-1."""
    if n_total < 1 or t_total < 1:
        raise ValueError("guided weights need N >= 1 and T >= 1")
    n = np.arange(n_total)[:, None]
    t = np.arange(t_total)[None, :]
    return guided_weight_value(n, t, n_total, t_total)


def attention_term(a: Tensor, w: np.ndarray, mask: np.ndarray | None = None) -> Tensor:
    """E[A (.) W]: mean over all (valid) elements of the N x T grid."""
    return masked_mean(ops.mul(ad.as_tensor(a), Tensor(w.astype(a.dtype))), mask)


def recon_loss_t2m(
    y: Tensor,
    s: Tensor,
    a: Tensor,
    w: np.ndarray,
    mask: np.ndarray | None = None,
    attn_mask: np.ndarray | None = None,
) -> Tensor:
    """Mel reconstruction objective: L1 + cross-entropy + guided attention."""
    return ops.add(l1_plus_bce(y, s, mask), attention_term(a, w, attn_mask))


def recon_loss_ssrn(y: Tensor, s: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Linear-spectrogram reconstruction objective: L1 + cross-entropy."""
    return l1_plus_bce(y, s, mask)


def wgan_critic_loss(
    d_real: Tensor,
    d_fake: Tensor,
    interp_grads: Tensor,
    gp_weight: float = 10.0,
) -> Tensor:
    """mean(d_fake) - mean(d_real) + gp_weight * mean((||grad||_2 - 1)^2).

    ``interp_grads`` holds per-sample gradients of the critic output with
    respect to the interpolated inputs, leading axis = batch.  When those
    gradients were produced by a recorded backward pass, this loss is
    differentiable end-to-end (second-order gradients flow into the critic
    parameters).
    """
    if interp_grads is None:
        raise ValueError("gradient penalty requires interpolate gradients")
    g = ad.as_tensor(interp_grads)
    b = g.shape[0]
    sq = ops.tsum(ops.reshape(ops.mul(g, g), (b, -1)), axis=1)
    norms = ops.sqrt(sq)
    gap = ops.sub(norms, 1.0)
    penalty = ops.mean(ops.mul(gap, gap))
    return ops.add(
        ops.sub(ops.mean(ad.as_tensor(d_fake)), ops.mean(ad.as_tensor(d_real))),
        ops.mul(penalty, float(gp_weight)),
    )


def wgan_generator_loss(d_fake: Tensor) -> Tensor:
    """-mean(d_fake): the generator pushes critic scores up."""
    return ops.neg(ops.mean(ad.as_tensor(d_fake)))


def combine_losses(l_recon: Tensor, l_gan: Tensor, stats: GanBatchStats) -> Tensor:
    """l_recon + (mean_recon / max(|mean_gan|, eps)) * l_gan.

    The ratio is a per-batch constant during differentiation, so the two
    gradient contributions have equal expected weight.
    """
    ratio = stats.mean_recon / max(abs(stats.mean_gan), RATIO_GUARD)
    return ops.add(ad.as_tensor(l_recon), ops.mul(ad.as_tensor(l_gan), float(ratio)))
