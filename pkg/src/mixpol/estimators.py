"""Actor-gradient estimators for mixture policies.

Each estimator builds a scalar surrogate whose autodiff gradient with respect
to the actor leaves is the gradient estimate (ascent direction on the
entropy-regularized objective E[Q - alpha * log pi]). Randomness comes from
named substreams of the context rng, and every draw plus every stop-gradient
quantity can be injected back through EstimatorDraws, which makes the
backward pass certifiable against finite differences of the replayed value.

Kinds:
  lr         score function with a sampled-Q baseline
  rp         pathwise through the sampled component (weights get no score term)
  half-rp    score term on the weighting policy + pathwise component term
  mrp        weight-summed pathwise term over all components, one shared noise
  gumbel-rp  straight-through Gumbel selection, pathwise through the blend
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from . import policies
from .numerics import autodiff as ad
from .numerics.autodiff import Var
from .numerics.rng import Rng
from .policies import DiffHead, GumbelOneHot

KINDS = ("lr", "rp", "half-rp", "mrp", "gumbel-rp")


@dataclass
class ActorContext:
    """Everything an estimator needs for one update on a fixed state batch.

    critic maps an action Var of shape (B, d) or (B, K, d) to Q of shape (B,)
    or (B, K); the state batch is closed over by the caller. alpha is the
    entropy temperature. rng must be fresh per update.
    """

    head: DiffHead
    critic: Callable[[Var], Var]
    alpha: float
    rng: Rng
    baseline_samples: int = 30
    use_baseline: bool = True
    gumbel_tau: float = 1.0


@dataclass
class EstimatorDraws:
    """Recorded randomness and frozen values; inject to replay an estimate."""

    component: Optional[np.ndarray] = None      # (B,)
    eps: Optional[np.ndarray] = None            # (B, d)
    pre_squash: Optional[np.ndarray] = None     # (B, d), lr's sampled point
    baseline_actions: Optional[np.ndarray] = None  # (B, Nb, d)
    bracket: Optional[np.ndarray] = None        # (B,), frozen score coefficient
    gumbel: Optional[GumbelOneHot] = None
    soft0: Optional[np.ndarray] = None          # (B, N), frozen tempered weights


@dataclass
class GradientEstimate:
    values: np.ndarray
    kind: str


def _check_q(q: Var) -> Var:
    if not np.isfinite(q.value).all():
        raise ValueError("critic returned non-finite values")
    return q


def _head_values(head: DiffHead) -> policies.MixtureHead:
    logits = np.log(np.maximum(head.weights.value, 1e-300))
    return policies.MixtureHead(head.means.value, head.log_stds.value, logits,
                                head.base_kind, head.squashed)


def _draw_component(head: DiffHead, rng: Rng) -> np.ndarray:
    b, n, _ = head.dims
    if n == 1:
        return np.zeros(b, dtype=np.int64)
    w = head.weights.value
    cum = np.cumsum(w, axis=1)
    u = rng.uniform(0.0, 1.0, size=(b, 1))
    return np.minimum((u > cum).sum(axis=1), n - 1)


def _baseline(ctx: ActorContext, draws: EstimatorDraws) -> np.ndarray:
    """Mean critic value over fresh policy samples, one scalar per state."""
    b, n, d = ctx.head.dims
    nb = ctx.baseline_samples
    if draws.baseline_actions is None:
        hv = _head_values(ctx.head)
        wide = policies.MixtureHead(
            np.repeat(hv.means, nb, axis=0), np.repeat(hv.log_stds, nb, axis=0),
            np.repeat(hv.weight_logits, nb, axis=0), hv.base_kind, hv.squashed)
        s = policies.sample(wide, ctx.rng.substream("baseline"))
        draws.baseline_actions = s.action.reshape(b, nb, d)
    q = _check_q(ctx.critic(ad.constant(draws.baseline_actions)))
    return q.value.mean(axis=1)


def lr_surrogate(ctx: ActorContext, draws: Optional[EstimatorDraws] = None):
    """Score-function estimate: grad log pi(A|s) times the frozen bracket."""
    if draws is None:
        draws = EstimatorDraws()
    b, n, d = ctx.head.dims
    if draws.pre_squash is None:
        s = policies.sample(_head_values(ctx.head), ctx.rng.substream("action"))
        draws.pre_squash = s.pre_squash
    score = policies.log_density_single(ctx.head, ad.constant(draws.pre_squash))
    if draws.bracket is None:
        q = _check_q(ctx.critic(ad.constant(_squash_value(ctx.head, draws.pre_squash))))
        bracket = q.value - ctx.alpha * score.value
        if ctx.use_baseline and ctx.baseline_samples > 0:
            bracket = bracket - _baseline(ctx, draws)
        draws.bracket = bracket
    surrogate = ad.reduce_mean(score * ad.constant(draws.bracket))
    return surrogate, draws


def _squash_value(head: DiffHead, pre: np.ndarray) -> np.ndarray:
    return np.tanh(pre) if head.squashed else pre


def rp_surrogate(ctx: ActorContext, draws: Optional[EstimatorDraws] = None):
    """Pathwise estimate through the sampled component.

    The component index is held fixed, so no gradient reaches the weighting
    policy through the selection; with learned weights this is exactly the
    pathwise half of half-rp, and it is unbiased when the weights are frozen
    (single-component heads and uniform-mixture configurations).
    """
    if draws is None:
        draws = EstimatorDraws()
    b, n, d = ctx.head.dims
    if draws.component is None:
        draws.component = _draw_component(ctx.head, ctx.rng.substream("component"))
    if draws.eps is None:
        draws.eps = policies.standard_noise(
            ctx.head.base_kind, ctx.rng.substream("eps"), (b, d))
    u, a = policies.reparam_component(ctx.head, draws.eps, draws.component)
    q = _check_q(ctx.critic(a))
    lp = policies.log_density_single(ctx.head, u)
    return ad.reduce_mean(q - ctx.alpha * lp), draws


def half_rp_surrogate(ctx: ActorContext, draws: Optional[EstimatorDraws] = None):
    """Score term on the weighting policy plus the pathwise component term."""
    if draws is None:
        draws = EstimatorDraws()
    b, n, d = ctx.head.dims
    if draws.component is None:
        draws.component = _draw_component(ctx.head, ctx.rng.substream("component"))
    if draws.eps is None:
        draws.eps = policies.standard_noise(
            ctx.head.base_kind, ctx.rng.substream("eps"), (b, d))
    u, a = policies.reparam_component(ctx.head, draws.eps, draws.component)
    q = _check_q(ctx.critic(a))
    lp = policies.log_density_single(ctx.head, u)
    if draws.bracket is None:
        bracket = q.value - ctx.alpha * lp.value
        if ctx.use_baseline and ctx.baseline_samples > 0:
            bracket = bracket - _baseline(ctx, draws)
        draws.bracket = bracket
    log_w_k = ad.select_component(ctx.head.log_weights, draws.component)
    score_term = log_w_k * ad.constant(draws.bracket)
    pathwise = q - ctx.alpha * lp
    return ad.reduce_mean(score_term + pathwise), draws


def mrp_surrogate(ctx: ActorContext, draws: Optional[EstimatorDraws] = None):
    """Weight-summed pathwise estimate over every component, one shared draw."""
    if draws is None:
        draws = EstimatorDraws()
    b, n, d = ctx.head.dims
    if draws.eps is None:
        draws.eps = policies.standard_noise(
            ctx.head.base_kind, ctx.rng.substream("eps"), (b, d))
    u_all, a_all = policies.reparam_all_components(ctx.head, draws.eps)
    q_all = _check_q(ctx.critic(a_all))
    lp_all = policies.log_density_per_component(ctx.head, u_all)
    inner = ad.reduce_sum(ctx.head.weights * (q_all - ctx.alpha * lp_all), axis=1)
    return ad.reduce_mean(inner), draws


def gumbel_rp_surrogate(ctx: ActorContext, draws: Optional[EstimatorDraws] = None):
    """Straight-through Gumbel selection blended over component actions.

    Biased in the weight-logit directions (the tempered soft path stands in
    for the hard argmax); mean and scale directions match the hard path.
    """
    if draws is None:
        draws = EstimatorDraws()
    b, n, d = ctx.head.dims
    if draws.gumbel is None:
        logits = np.log(np.maximum(ctx.head.weights.value, 1e-300))
        draws.gumbel = policies.gumbel_st_onehot(
            logits, ctx.rng.substream("gumbel"), tau=ctx.gumbel_tau)
    if draws.eps is None:
        draws.eps = policies.standard_noise(
            ctx.head.base_kind, ctx.rng.substream("eps"), (b, d))
    oh = draws.gumbel
    soft = ad.softmax((ctx.head.log_weights + ad.constant(oh.noise)) * (1.0 / oh.tau),
                      axis=1)
    if draws.soft0 is None:
        draws.soft0 = soft.value
    # freezing the anchor keeps replayed values differentiable the same way
    # the live stopgrad is: constant at the recorded point
    anchor = ad.constant(draws.soft0)
    z = ad.constant(oh.hard) + (soft - anchor)
    _, a_all = policies.reparam_all_components(ctx.head, draws.eps)
    action = ad.reduce_sum(ad.reshape(z, (b, n, 1)) * a_all, axis=1)
    q = _check_q(ctx.critic(action))
    lp = policies.log_density_at_action(ctx.head, action)
    return ad.reduce_mean(q - ctx.alpha * lp), draws


_SURROGATES = {
    "lr": lr_surrogate,
    "rp": rp_surrogate,
    "half-rp": half_rp_surrogate,
    "mrp": mrp_surrogate,
    "gumbel-rp": gumbel_rp_surrogate,
}


def surrogate(kind: str, ctx: ActorContext, draws: Optional[EstimatorDraws] = None):
    if kind not in _SURROGATES:
        raise ValueError(f"unknown estimator kind {kind!r}; known: {KINDS}")
    return _SURROGATES[kind](ctx, draws)


def estimate(kind: str, ctx: ActorContext, leaves: Sequence[Var],
             draws: Optional[EstimatorDraws] = None) -> GradientEstimate:
    """Flat gradient estimate of the objective over the given leaves."""
    surr, _ = surrogate(kind, ctx, draws)
    grads = ad.backprop_grad(surr, list(leaves))
    return GradientEstimate(np.concatenate([g.reshape(-1) for g in grads]), kind)
