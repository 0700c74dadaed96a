"""Mixture policy heads: squashed/unsquashed Gaussian and Cauchy mixtures.

A head carries per-state component means, log scales, and weight logits. The
value-level functions (sample, log_prob, ...) work on numpy arrays and are
used in the environment loop; the graph-level functions build autodiff nodes
for the gradient estimators. Both share the same formulas: a mixture density
evaluated at a squashed action is the base mixture at the pre-squash point
times the tanh change-of-variables factor, which is common to all components.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import autodiff as ad
from .numerics.autodiff import Var
from .numerics.rng import Rng

LOG_STD_MIN = -20.0
LOG_STD_MAX = 2.0
ATANH_CLIP = 1.0 - 1e-6
LOG_2PI = float(np.log(2.0 * np.pi))
BASE_KINDS = ("gaussian", "cauchy")


@dataclass
class MixtureHead:
    """Per-state mixture parameters, batched: (B, N, d) arrays, logits (B, N)."""

    means: np.ndarray
    log_stds: np.ndarray
    weight_logits: np.ndarray
    base_kind: str = "gaussian"
    squashed: bool = True

    def __post_init__(self):
        self.means = np.asarray(self.means, dtype=np.float64)
        self.log_stds = np.asarray(self.log_stds, dtype=np.float64)
        self.weight_logits = np.asarray(self.weight_logits, dtype=np.float64)
        if self.base_kind not in BASE_KINDS:
            raise ValueError(f"unknown base kind {self.base_kind!r}")
        if self.means.ndim != 3 or self.means.shape != self.log_stds.shape:
            raise ValueError("means and log_stds must both be (batch, components, dim)")
        if self.weight_logits.shape != self.means.shape[:2]:
            raise ValueError("weight_logits must be (batch, components)")
        if self.means.shape[1] < 1:
            raise ValueError("need at least one component")
        for arr in (self.means, self.log_stds, self.weight_logits):
            if not np.isfinite(arr).all():
                raise ValueError("head parameters must be finite")

    @property
    def batch(self) -> int:
        return self.means.shape[0]

    @property
    def n_components(self) -> int:
        return self.means.shape[1]

    @property
    def act_dim(self) -> int:
        return self.means.shape[2]


@dataclass
class ActionSample:
    """One draw per batch row, with the pre-squash point kept for densities."""

    action: np.ndarray        # (B, d)
    pre_squash: np.ndarray    # (B, d)
    component: np.ndarray     # (B,) int
    log_prob: np.ndarray      # (B,)


@dataclass
class GumbelOneHot:
    """Hard one-hot selection plus the perturbation that produced it."""

    hard: np.ndarray    # (B, N) one-hot rows
    soft: np.ndarray    # (B, N) tempered softmax rows
    noise: np.ndarray   # (B, N) standard Gumbel draws
    tau: float


@dataclass
class DiffHead:
    """Graph-side head: weights are normalized probabilities as a Var."""

    means: Var        # (B, N, d)
    log_stds: Var     # (B, N, d)
    weights: Var      # (B, N)
    log_weights: Var  # (B, N)
    base_kind: str
    squashed: bool

    @property
    def dims(self):
        return self.means.value.shape


def softmax_weights(logits: np.ndarray) -> np.ndarray:
    """Stable softmax over the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def standard_noise(base_kind: str, rng: Rng, size) -> np.ndarray:
    """Standard base draw: N(0,1), or standard Cauchy via tan(pi(u - 1/2))."""
    if base_kind == "gaussian":
        return rng.normal(size=size)
    u = rng.uniform(0.0, 1.0, size=size)
    return np.tan(np.pi * (u - 0.5))


def sample(head: MixtureHead, rng: Rng) -> ActionSample:
    """Ancestral sampling: component by weight, then the reparameterized draw."""
    w = softmax_weights(head.weight_logits)
    cum = np.cumsum(w, axis=1)
    u = rng.uniform(0.0, 1.0, size=(head.batch, 1))
    k = (u > cum).sum(axis=1)
    k = np.minimum(k, head.n_components - 1)
    rows = np.arange(head.batch)
    eps = standard_noise(head.base_kind, rng, (head.batch, head.act_dim))
    pre = head.means[rows, k] + np.exp(head.log_stds[rows, k]) * eps
    action = np.tanh(pre) if head.squashed else pre
    lp = _log_prob_pre_squash_value(head, pre)
    return ActionSample(action=action, pre_squash=pre, component=k, log_prob=lp)


def _base_logpdf_terms(z: np.ndarray, log_stds: np.ndarray, base_kind: str) -> np.ndarray:
    if base_kind == "gaussian":
        return -0.5 * z * z - log_stds - 0.5 * LOG_2PI
    return -np.log(np.pi) - log_stds - np.log1p(z * z)


def _log_prob_pre_squash_value(head: MixtureHead, pre: np.ndarray) -> np.ndarray:
    """Mixture log-density at pre-squash points (B, d), including squash term."""
    z = (pre[:, None, :] - head.means) * np.exp(-head.log_stds)
    comp = _base_logpdf_terms(z, head.log_stds, head.base_kind).sum(axis=2)
    logw = head.weight_logits - _logsumexp_np(head.weight_logits)
    total = _lse_rows(logw + comp)
    if head.squashed:
        total = total - _squash_correction_np(pre).sum(axis=1)
    return total


def _lse_rows(x: np.ndarray) -> np.ndarray:
    hi = x.max(axis=-1, keepdims=True)
    return (np.log(np.exp(x - hi).sum(axis=-1, keepdims=True)) + hi)[..., 0]


def _logsumexp_np(x: np.ndarray) -> np.ndarray:
    hi = x.max(axis=-1, keepdims=True)
    return np.log(np.exp(x - hi).sum(axis=-1, keepdims=True)) + hi


def _squash_correction_np(u: np.ndarray) -> np.ndarray:
    # log(1 - tanh(u)^2) in the overflow-safe form
    return 2.0 * (np.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def log_prob(head: MixtureHead, actions: np.ndarray) -> np.ndarray:
    """Mixture log-density of given actions, (B, d) -> (B,).

    Squashed heads invert the tanh with a clamp at |a| = 1 - 1e-6; callers
    holding the pre-squash point should prefer the sampling path, which never
    round-trips through atanh.
    """
    actions = np.asarray(actions, dtype=np.float64)
    ok = actions.ndim == 2 and actions.shape[1] == head.act_dim and (
        actions.shape[0] == head.batch or head.batch == 1)
    if not ok:
        raise ValueError("actions must be (batch, act_dim); batch-1 heads broadcast")
    if head.squashed:
        pre = np.arctanh(np.clip(actions, -ATANH_CLIP, ATANH_CLIP))
    else:
        pre = actions
    return _log_prob_pre_squash_value(head, pre)


def weighting_entropy(weight_logits: np.ndarray) -> np.ndarray:
    """Entropy of the component-weight distribution, (B, N) -> (B,)."""
    w = softmax_weights(weight_logits)
    logw = np.log(np.maximum(w, 1e-300))
    return -(w * logw).sum(axis=-1)


def component_separation(head: MixtureHead) -> np.ndarray:
    """Mean pairwise distance between component centers in action space."""
    mu = np.tanh(head.means) if head.squashed else head.means
    n = head.n_components
    if n == 1:
        return np.zeros(head.batch)
    diffs = mu[:, :, None, :] - mu[:, None, :, :]
    dist = np.sqrt((diffs ** 2).sum(axis=3))
    iu = np.triu_indices(n, k=1)
    return dist[:, iu[0], iu[1]].mean(axis=1)


def gaussian_entropy(log_stds: np.ndarray) -> np.ndarray:
    """Closed-form diagonal Gaussian entropy per component, (B, N, d) -> (B, N)."""
    log_stds = np.asarray(log_stds, dtype=np.float64)
    d = log_stds.shape[-1]
    return log_stds.sum(axis=-1) + 0.5 * d * (1.0 + LOG_2PI)


def gumbel_st_onehot(weight_logits: np.ndarray, rng: Rng, tau: float = 1.0) -> GumbelOneHot:
    """Gumbel-max hard selection with the tempered soft weights alongside.

    argmax ties break toward the lowest index (numpy argmax convention).
    """
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    logits = np.asarray(weight_logits, dtype=np.float64)
    noise = rng.gumbel01(size=logits.shape)
    scores = logits + noise
    hard = np.zeros_like(logits)
    hard[np.arange(logits.shape[0]), scores.argmax(axis=1)] = 1.0
    soft = softmax_weights(scores / tau)
    return GumbelOneHot(hard=hard, soft=soft, noise=noise, tau=float(tau))


# ---------------------------------------------------------------------------
# graph-side construction


def head_from_net_output(out: Var, n_components: int, act_dim: int,
                         base_kind: str = "gaussian", squashed: bool = True,
                         uniform_weights: bool = False) -> DiffHead:
    """Split a (B, 2*N*d + N) net output into a DiffHead.

    Layout is [means | log_stds | weight logits]; log_stds are hard-clamped to
    [LOG_STD_MIN, LOG_STD_MAX]. With uniform_weights the logits are ignored and
    the weighting is a constant 1/N (no gradient flows to it).
    """
    b = out.value.shape[0]
    nd = n_components * act_dim
    means = ad.reshape(ad.narrow(out, 1, 0, nd), (b, n_components, act_dim))
    log_stds = ad.clip(ad.reshape(ad.narrow(out, 1, nd, nd), (b, n_components, act_dim)),
                       LOG_STD_MIN, LOG_STD_MAX)
    if uniform_weights:
        w = np.full((b, n_components), 1.0 / n_components)
        weights = ad.constant(w)
        log_weights = ad.constant(np.log(w))
    else:
        logits = ad.narrow(out, 1, 2 * nd, n_components)
        log_weights = logits - ad.logsumexp(logits, axis=1, keepdims=True)
        weights = ad.exp(log_weights)
    return DiffHead(means=means, log_stds=log_stds, weights=weights,
                    log_weights=log_weights, base_kind=base_kind, squashed=squashed)


def head_leaves(head: MixtureHead, weight_param: str = "logits") -> tuple[DiffHead, dict[str, Var]]:
    """Wrap a value head as gradient leaves.

    weight_param selects the weighting coordinates: "logits" differentiates
    through a softmax; "direct" treats the normalized probabilities themselves
    as free coordinates (the parameterization used by the variance identities).
    """
    leaves = {
        "means": ad.leaf(head.means),
        "log_stds": ad.leaf(head.log_stds),
    }
    if weight_param == "logits":
        logits = ad.leaf(head.weight_logits)
        leaves["weight_logits"] = logits
        log_weights = logits - ad.logsumexp(logits, axis=1, keepdims=True)
        weights = ad.exp(log_weights)
    elif weight_param == "direct":
        w = ad.leaf(softmax_weights(head.weight_logits))
        leaves["weights"] = w
        weights = w
        log_weights = ad.log(w)
    else:
        raise ValueError(f"unknown weight_param {weight_param!r}")
    diff = DiffHead(means=leaves["means"], log_stds=leaves["log_stds"],
                    weights=weights, log_weights=log_weights,
                    base_kind=head.base_kind, squashed=head.squashed)
    return diff, leaves


def squash_correction(u: Var) -> Var:
    """Sum over action dims of log(1 - tanh(u)^2), numerically safe."""
    per_dim = 2.0 * (np.log(2.0) - u - ad.softplus(-2.0 * u))
    return ad.reduce_sum(per_dim, axis=-1)


def _base_logpdf_graph(z: Var, log_stds: Var, base_kind: str) -> Var:
    if base_kind == "gaussian":
        return -0.5 * ad.square(z) - log_stds - 0.5 * LOG_2PI
    return -float(np.log(np.pi)) - log_stds - ad.log1p(ad.square(z))


def log_density_single(head: DiffHead, u: Var) -> Var:
    """Mixture log-density at one pre-squash point per row: u (B, d) -> (B,)."""
    b, n, d = head.dims
    u3 = ad.reshape(u, (b, 1, d))
    z = (u3 - head.means) * ad.exp(-head.log_stds)
    comp = ad.reduce_sum(_base_logpdf_graph(z, head.log_stds, head.base_kind), axis=2)
    total = ad.logsumexp(head.log_weights + comp, axis=1)
    if head.squashed:
        total = total - squash_correction(u)
    return total


def log_density_per_component(head: DiffHead, u_all: Var) -> Var:
    """Mixture log-density at one pre-squash point per component.

    u_all (B, N, d) holds the point produced by each component; the result
    (B, N) is the full mixture density evaluated at each of them.
    """
    b, n, d = head.dims
    u4 = ad.reshape(u_all, (b, n, 1, d))
    means = ad.reshape(head.means, (b, 1, n, d))
    log_stds = ad.reshape(head.log_stds, (b, 1, n, d))
    z = (u4 - means) * ad.exp(-log_stds)
    comp = ad.reduce_sum(_base_logpdf_graph(z, log_stds, head.base_kind), axis=3)
    logw = ad.reshape(head.log_weights, (b, 1, n))
    total = ad.logsumexp(logw + comp, axis=2)
    if head.squashed:
        total = total - squash_correction(u_all)
    return total


def log_density_at_action(head: DiffHead, action: Var) -> Var:
    """Mixture log-density at a (B, d) action Var, inverting the squash."""
    if not head.squashed:
        return log_density_single(head, action)
    u = ad.atanh(ad.clip(action, -ATANH_CLIP, ATANH_CLIP))
    b, n, d = head.dims
    u3 = ad.reshape(u, (b, 1, d))
    z = (u3 - head.means) * ad.exp(-head.log_stds)
    comp = ad.reduce_sum(_base_logpdf_graph(z, head.log_stds, head.base_kind), axis=2)
    total = ad.logsumexp(head.log_weights + comp, axis=1)
    return total - squash_correction(u)


def reparam_all_components(head: DiffHead, eps: np.ndarray) -> tuple[Var, Var]:
    """Reparameterized point of every component from shared noise.

    eps is (B, d) (broadcast to all components) or (B, N, d). Returns the
    pre-squash points and the actions, both (B, N, d).
    """
    b, n, d = head.dims
    e = np.asarray(eps, dtype=np.float64)
    if e.shape == (b, d):
        e = e[:, None, :]
    u = head.means + ad.exp(head.log_stds) * ad.constant(e)
    a = ad.tanh(u) if head.squashed else u
    return u, a


def reparam_component(head: DiffHead, eps: np.ndarray, component: np.ndarray) -> tuple[Var, Var]:
    """Reparameterized point of one chosen component per row: (B, d) outputs."""
    mu = ad.select_component(head.means, component)
    ls = ad.select_component(head.log_stds, component)
    u = mu + ad.exp(ls) * ad.constant(np.asarray(eps, dtype=np.float64))
    a = ad.tanh(u) if head.squashed else u
    return u, a


def mixture_action_gumbel(head: DiffHead, onehot: GumbelOneHot, eps: np.ndarray) -> Var:
    """Straight-through mixture action: sum_k z_k f(eps; k), (B, d).

    Forward equals the argmax component's reparameterized action exactly; the
    backward pass sees the tempered soft weights built from the head's own
    log-weights, so weight-logit gradients flow (biased, as tempering implies).
    """
    b, n, d = head.dims
    soft = ad.softmax((head.log_weights + ad.constant(onehot.noise)) * (1.0 / onehot.tau),
                      axis=1)
    # grouping keeps the forward exactly one-hot: soft - soft is exactly zero
    z = ad.constant(onehot.hard) + (soft - ad.stopgrad(soft))
    _, a_all = reparam_all_components(head, eps)
    return ad.reduce_sum(ad.reshape(z, (b, n, 1)) * a_all, axis=1)
