"""Training objectives: SFT, max-margin, cross-entropy, thresholded ranking.

All objectives are built from two per-sample terms. The left (expert) term
compares reference and learner predictions on a forward-diffused expert
sample; the right (policy) term does the same on an online policy sample,
holding the policy prediction constant. Gradients flow only through the
learner's predictions: reference and policy evaluations enter as constants.
Loss weighting over timesteps is the unit convention; the analytic
per-timestep weight lives only in the derivation oracle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nm
from .denoiser import DenoiserParams, predict_eps
from .diffusion import forward_diffuse
from .schedule import NoiseSchedule

DEFAULT_CLIP = -0.001


def _const_eps(p: DenoiserParams, x, c, t) -> np.ndarray:
    """Prediction detached from the gradient tape."""
    plain = DenoiserParams(p.arch, {k: np.asarray(nm.value_of(v), dtype=float)
                                    for k, v in p.values.items()})
    return np.asarray(nm.value_of(predict_eps(plain, x, c, t)), dtype=float)


@dataclass
class LossBreakdown:
    """Per-sample pieces of the ranking loss.

    ``l_left``/``l_right`` may be traced scalars during optimization; the
    ``ref_*`` squared norms are always plain constants so the supervised
    and push-away norms can be recovered per item.
    """

    l_left: object
    l_right: object
    ref_expert_sq: float
    ref_policy_sq: float
    t: int
    c: object
    clipped: bool | None = None

    @property
    def margin(self):
        return nm.sub(self.l_right, self.l_left)

    @property
    def margin_value(self) -> float:
        return float(nm.value_of(self.l_right)) - float(nm.value_of(self.l_left))

    @property
    def sft_sq(self):
        """||eps_bar - eps_phi(xbar_t)||^2, recovered from the left term."""
        return nm.sub(self.ref_expert_sq, self.l_left)

    @property
    def push_sq(self):
        """||eps_policy - eps_phi(x_t)||^2, recovered from the right term."""
        return nm.sub(self.ref_policy_sq, self.l_right)


def left_term(phi, ref, s: NoiseSchedule, xbar0, c, t: int, epsbar):
    """||eps_bar - eps_ref(xbar_t)||^2 - ||eps_bar - eps_phi(xbar_t)||^2."""
    xbar_t = forward_diffuse(s, xbar0, t, epsbar)
    eps_ref = _const_eps(ref, xbar_t, c, t)
    eps_phi = predict_eps(phi, xbar_t, c, t)
    ref_sq = float(np.dot(epsbar - eps_ref, epsbar - eps_ref))
    return nm.sub(ref_sq, nm.sq_norm(nm.sub(np.asarray(epsbar, dtype=float), eps_phi)))


def right_term(phi, ref, policy, s: NoiseSchedule, x_t, c, t: int):
    """||eps - eps_ref(x_t)||^2 - ||eps - eps_phi(x_t)||^2 with eps the
    (constant) policy prediction at x_t."""
    x_t = np.asarray(x_t, dtype=float)
    eps = _const_eps(policy, x_t, c, t)
    eps_ref = _const_eps(ref, x_t, c, t)
    eps_phi = predict_eps(phi, x_t, c, t)
    ref_sq = float(np.dot(eps - eps_ref, eps - eps_ref))
    return nm.sub(ref_sq, nm.sq_norm(nm.sub(eps, eps_phi)))


def make_breakdown(phi, ref, policy, s: NoiseSchedule, xbar0, c, t: int,
                   epsbar, x_t) -> LossBreakdown:
    """Assemble both per-sample terms plus the constant reference norms."""
    xbar_t = forward_diffuse(s, xbar0, t, epsbar)
    eps_ref_l = _const_eps(ref, xbar_t, c, t)
    ref_expert_sq = float(np.dot(epsbar - eps_ref_l, epsbar - eps_ref_l))
    l_left = nm.sub(ref_expert_sq,
                    nm.sq_norm(nm.sub(np.asarray(epsbar, dtype=float),
                                      predict_eps(phi, xbar_t, c, t))))
    x_t = np.asarray(x_t, dtype=float)
    eps = _const_eps(policy, x_t, c, t)
    eps_ref_r = _const_eps(ref, x_t, c, t)
    ref_policy_sq = float(np.dot(eps - eps_ref_r, eps - eps_ref_r))
    l_right = nm.sub(ref_policy_sq,
                     nm.sq_norm(nm.sub(eps, predict_eps(phi, x_t, c, t))))
    return LossBreakdown(l_left=l_left, l_right=l_right,
                         ref_expert_sq=ref_expert_sq, ref_policy_sq=ref_policy_sq,
                         t=t, c=c)


def trl_loss(batch, m: float = DEFAULT_CLIP):
    """Mean of max(m, -l_left + l_right); clipped items get zero gradient.

    Marks each item's ``clipped`` flag (margin <= m) as a side effect so the
    training loop can log the clip fraction.
    """
    if not batch:
        raise ValueError("empty batch")
    terms = []
    for item in batch:
        item.clipped = item.margin_value <= m
        terms.append(nm.maximum_const(m, item.margin))
    return nm.mean_of(terms)


def mm_loss(batch):
    """Mean of ||eps_bar - eps_phi(xbar_t)||^2 - ||eps_policy - eps_phi(x_t)||^2:
    the learner-dependent part of the negated margin."""
    if not batch:
        raise ValueError("empty batch")
    return nm.mean_of([nm.sub(item.sft_sq, item.push_sq) for item in batch])


def ce_loss(batch, beta_w: float = 1.0):
    """Per-sample cross-entropy ranking baseline: mean of
    -log sigmoid(beta_w * (l_left - l_right)).

    The sigmoid argument is the expert-minus-policy margin, so the loss
    vanishes when experts out-rank policy samples by a wide margin.
    """
    if not batch:
        raise ValueError("empty batch")
    if beta_w <= 0:
        raise ValueError("beta_w must be positive")
    terms = []
    for item in batch:
        arg = nm.scale(beta_w, nm.sub(item.l_left, item.l_right))
        terms.append(nm.scale(-1.0, nm.log(nm.sigmoid(arg))))
    return nm.mean_of(terms)


def sft_loss(phi, s: NoiseSchedule, xbar0, c, t: int, epsbar):
    """Plain denoising objective ||eps_bar - eps_phi(xbar_t)||^2."""
    xbar_t = forward_diffuse(s, xbar0, t, epsbar)
    eps_phi = predict_eps(phi, xbar_t, c, t)
    return nm.sq_norm(nm.sub(np.asarray(epsbar, dtype=float), eps_phi))
