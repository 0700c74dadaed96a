"""Stationary-point study, gradient-variance diagnostics, and bootstrap CIs.

The study works with raw 1-d Gaussian mixtures on the bandit's native action
axis (no squashing, no network): parameters are per-component means, log
standard deviations, and mixing weights. The regularized objective

    J = E_{a~pi}[r(a) - alpha log pi(a)] = J0 + alpha H

is evaluated by composite Gauss-Legendre quadrature with panels sized to the
local density scale, and maximized by L-BFGS-B over bounded parameters with
the weights renormalized inside the objective.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import optimize

from . import estimators as est
from . import policies
from .envs import BanditSpec
from .numerics.rng import Rng

LOG_2PI = float(np.log(2.0 * np.pi))

MEAN_BOUND = 5.0
LOG_STD_BOUND = 3.0
WEIGHT_FLOOR = 1e-6
PG_TOL = 1e-6

FAMILIES = {"gaussian": 1, "gm": 2}


class QuadratureError(RuntimeError):
    """Successive quadrature refinements disagreed beyond tolerance."""


def study_bandit() -> BanditSpec:
    """Bimodal bandit scaled so each kernel peaks at 1.

    The study's alpha grid is calibrated against unit peak height (r_max is
    about 1, so alpha reads directly as a fraction of the best reward); the
    family-collapse boundaries below land where they should only at this
    scale.
    """
    return BanditSpec(means=np.array([-1.0, 1.0]), stds=np.array([0.5, 0.5]),
                      normalizer=2.0 / np.sqrt(2.0 * np.pi))


# ---------------------------------------------------------------------------
# quadrature machinery


def _gl_panels(edges: np.ndarray, order: int = 16):
    """Gauss-Legendre nodes/weights on each panel [edges[i], edges[i+1]]."""
    x01, w01 = np.polynomial.legendre.leggauss(order)
    lo = edges[:-1, None]
    half = 0.5 * (edges[1:, None] - lo)
    x = (lo + half * (x01 + 1.0)).reshape(-1)
    w = (half * w01).reshape(-1)
    return x, w


def _panel_edges(bandit: BanditSpec, means, stds) -> np.ndarray:
    """Union of per-component windows and the kernel region, each with its
    own resolution; overlaps just refine."""
    intervals = []
    k_lo = float(np.min(bandit.means) - 4.0 * np.max(bandit.stds))
    k_hi = float(np.max(bandit.means) + 4.0 * np.max(bandit.stds))
    intervals.append((k_lo, k_hi, float(np.min(bandit.stds)) / 2.0))
    for m, s in zip(means, stds):
        intervals.append((m - 12.0 * s, m + 12.0 * s, s / 2.0))
    knots = []
    for lo, hi, width in intervals:
        n = max(2, int(np.ceil((hi - lo) / width)) + 1)
        knots.append(np.linspace(lo, hi, n))
    edges = np.unique(np.concatenate(knots))
    return edges


def _mixture_log_density(a, means, stds, weights):
    z = (a[:, None] - means[None, :]) / stds[None, :]
    comp = -0.5 * z * z - np.log(stds)[None, :] - 0.5 * LOG_2PI
    logw = np.log(np.maximum(weights, 1e-300))[None, :]
    m = (logw + comp).max(axis=1, keepdims=True)
    return (m + np.log(np.exp(logw + comp - m).sum(axis=1, keepdims=True)))[:, 0]


def _objective_terms(bandit, means, stds, weights, alpha, edges, order=16):
    a, wq = _gl_panels(edges, order)
    logpi = _mixture_log_density(a, means, stds, weights)
    pi = np.exp(logpi)
    r = bandit.reward(a)
    j0 = float(np.sum(wq * pi * r))
    h = float(-np.sum(wq * pi * logpi))
    return j0, h, (a, wq, logpi, pi, r)


def integrate_objective(bandit: BanditSpec, means, log_stds, weights,
                        alpha: float):
    """(J, J0, H) with a doubled-resolution agreement check.

    weights are normalized internally; raises QuadratureError when the two
    resolutions disagree by more than 1e-6 or the result is non-finite.
    """
    means = np.asarray(means, dtype=np.float64)
    log_stds = np.asarray(log_stds, dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    weights = weights / weights.sum()
    stds = np.exp(log_stds)
    edges = _panel_edges(bandit, means, stds)
    j0, h, _ = _objective_terms(bandit, means, stds, weights, alpha, edges)
    fine = np.unique(np.concatenate([edges, 0.5 * (edges[:-1] + edges[1:])]))
    j0f, hf, _ = _objective_terms(bandit, means, stds, weights, alpha, fine)
    j, jf = j0 + alpha * h, j0f + alpha * hf
    if not np.isfinite(jf) or abs(j - jf) > 1e-6:
        raise QuadratureError(f"quadrature refinement moved J by {j - jf!r}")
    return jf, j0f, hf


def _objective_and_gradient(bandit, x, n, alpha):
    """Maximization objective and gradient in optimizer coordinates
    [means, log_stds, raw weights]; raw weights are normalized here."""
    means, log_stds, raw = x[:n], x[n:2 * n], x[2 * n:]
    stds = np.exp(log_stds)
    raw_sum = raw.sum()
    weights = raw / raw_sum
    edges = _panel_edges(bandit, means, stds)
    j0, h, (a, wq, logpi, pi, r) = _objective_terms(
        bandit, means, stds, weights, alpha, edges)
    j = j0 + alpha * h
    if not np.isfinite(j):
        raise QuadratureError("objective is non-finite")

    z = (a[:, None] - means[None, :]) / stds[None, :]
    comp = np.exp(-0.5 * z * z - np.log(stds)[None, :] - 0.5 * LOG_2PI)
    bracket = (r - alpha * logpi)[:, None] * wq[:, None]
    # d/dmu_k and d/dlog sigma_k of J; the alpha * d/dtheta of the entropy
    # integral cancels against the normalization term for these coordinates
    g_mu = (weights[None, :] * comp * z / stds[None, :] * bracket).sum(axis=0)
    g_ls = (weights[None, :] * comp * (z * z - 1.0) * bracket).sum(axis=0)
    g_w = (comp * bracket).sum(axis=0) - alpha
    g_raw = (g_w - np.dot(weights, g_w)) / raw_sum
    return j, np.concatenate([g_mu, g_ls, g_raw])


# ---------------------------------------------------------------------------
# stationary-point study


@dataclass
class StationaryPointResult:
    family: str
    alpha: float
    means: np.ndarray
    log_stds: np.ndarray
    weights: np.ndarray       # normalized
    j: float
    j0: float
    modality: str
    converged: bool
    pg_norm: float


def classify_modality(means, log_stds, weights, support=None) -> str:
    """Count well-separated local maxima of the density on a dense grid.

    Maxima closer than 0.05 merge; maxima under 1% of the peak are noise.
    """
    means = np.asarray(means, dtype=np.float64)
    stds = np.exp(np.asarray(log_stds, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    weights = weights / weights.sum()
    if support is None:
        support = (float(np.min(means - 6.0 * stds)),
                   float(np.max(means + 6.0 * stds)))
    grid = np.linspace(support[0], support[1], 2001)
    d = np.exp(_mixture_log_density(grid, means, stds, weights))
    inner = (d[1:-1] > d[:-2]) & (d[1:-1] > d[2:])
    peaks = grid[1:-1][inner]
    heights = d[1:-1][inner]
    keep = heights >= 0.01 * d.max()
    peaks, heights = peaks[keep], heights[keep]
    merged = 0
    last = None
    for p in np.sort(peaks):
        if last is None or p - last > 0.05:
            merged += 1
        last = p
    return "bimodal" if merged >= 2 else "unimodal"


def optimize_stationary(bandit: BanditSpec, family: str, alpha: float,
                        init, max_iters: int = 2000) -> StationaryPointResult:
    """Bounded L-BFGS-B ascent on J from the given (means, log_stds, weights).

    A trial counts as converged only when the projected gradient is below
    PG_TOL and no log-std sits at the upper bound while the objective still
    wants it larger (the entropy-driven divergence signature). Quadrature
    failures mark the trial non-converged.
    """
    n = FAMILIES[family]
    means0, log_stds0, w0 = (np.asarray(p, dtype=np.float64) for p in init)
    x0 = np.concatenate([means0, log_stds0, w0])
    if x0.shape != (3 * n,):
        raise ValueError(f"init must provide {n} of each parameter")
    bounds = ([(-MEAN_BOUND, MEAN_BOUND)] * n
              + [(-LOG_STD_BOUND, LOG_STD_BOUND)] * n
              + [(WEIGHT_FLOOR, 1.0)] * n)
    x0 = np.clip(x0, [b[0] for b in bounds], [b[1] for b in bounds])

    def neg(x):
        j, g = _objective_and_gradient(bandit, x, n, alpha)
        return -j, -g

    def result(x, converged, pg_norm):
        means, log_stds, raw = x[:n], x[n:2 * n], x[2 * n:]
        weights = raw / raw.sum()
        try:
            j, j0, _ = integrate_objective(bandit, means, log_stds, weights,
                                           alpha)
        except QuadratureError:
            j, j0, converged = np.nan, np.nan, False
        modality = classify_modality(means, log_stds, weights)
        return StationaryPointResult(family, alpha, means, log_stds, weights,
                                     j, j0, modality, converged,
                                     float(pg_norm))

    try:
        res = optimize.minimize(neg, x0, jac=True, method="L-BFGS-B",
                                bounds=bounds,
                                options=dict(maxiter=max_iters, ftol=1e-14,
                                             gtol=PG_TOL))
    except QuadratureError:
        return result(x0, False, np.inf)

    x = res.x
    try:
        _, g = _objective_and_gradient(bandit, x, n, alpha)
    except QuadratureError:
        return result(x, False, np.inf)
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    pg = g.copy()  # ascent direction blocked by an active bound counts as 0
    pg[(x >= hi - 1e-12) & (g > 0)] = 0.0
    pg[(x <= lo + 1e-12) & (g < 0)] = 0.0
    pg_norm = np.abs(pg).max()
    diverging = bool(np.any((x[n:2 * n] >= LOG_STD_BOUND - 1e-9)
                            & (g[n:2 * n] > 0)))
    converged = bool(res.success) and pg_norm <= PG_TOL and not diverging
    return result(x, converged, pg_norm)


@dataclass
class StudyRow:
    alpha: float
    family: str
    best_j0: float
    best_j: float
    frac_bimodal: float
    frac_converged: float


def sample_init(rng: Rng, n: int):
    """Initial parameters drawn as in the study protocol."""
    return (rng.uniform(-2.0, 2.0, n), rng.uniform(-3.0, 0.0, n),
            rng.uniform(0.0, 1.0, n))


def sweep_alpha_study(bandit: BanditSpec, alphas: Sequence[float],
                      trials: int = 100, rng: Optional[Rng] = None,
                      families: Sequence[str] = ("gaussian", "gm"),
                      max_iters: int = 2000) -> list[StudyRow]:
    """Repeated stationary-point searches; the best converged trial wins."""
    rng = rng or Rng(0)
    rows = []
    for alpha in alphas:
        for family in families:
            n = FAMILIES[family]
            results = [
                optimize_stationary(
                    bandit, family, alpha,
                    sample_init(rng.substream(family, "trial", t, alpha), n),
                    max_iters)
                for t in range(trials)
            ]
            good = [r for r in results if r.converged]
            if good:
                best = max(good, key=lambda r: r.j)
                bimodal = np.mean([r.modality == "bimodal" for r in good])
                rows.append(StudyRow(alpha, family, best.j0, best.j,
                                     float(bimodal), len(good) / trials))
            else:
                rows.append(StudyRow(alpha, family, np.nan, np.nan, np.nan,
                                     0.0))
    return rows


def embedding_gradient_norm(bandit: BanditSpec, mean: float, log_std: float,
                            weights, alpha: float) -> float:
    """Infinity norm of the mixture gradient at a replicated Gaussian point."""
    weights = np.asarray(weights, dtype=np.float64)
    n = weights.size
    x = np.concatenate([np.full(n, mean), np.full(n, log_std), weights])
    _, g = _objective_and_gradient(bandit, x, n, alpha)
    return float(np.abs(g).max())


def sigma_gradient_grid(bandit: BanditSpec, alpha: float, mus, sigmas):
    """dJ/dsigma for a single Gaussian on a (mu, sigma) grid."""
    out = np.empty((len(mus), len(sigmas)))
    for i, mu in enumerate(mus):
        for k, sigma in enumerate(sigmas):
            x = np.array([mu, np.log(sigma), 1.0])
            _, g = _objective_and_gradient(bandit, x, 1, alpha)
            out[i, k] = g[1] / sigma  # dJ/dsigma = dJ/dlogsigma / sigma
    return out


# ---------------------------------------------------------------------------
# gradient-variance diagnostics


def reference_head(squashed: bool = False) -> policies.MixtureHead:
    """Fixed two-component head for variance diagnostics at the CLI."""
    return policies.MixtureHead(
        means=np.array([[[-0.8], [0.7]]]),
        log_stds=np.log(np.array([[[0.6], [0.4]]])),
        weight_logits=np.array([[0.2, -0.3]]),
        base_kind="gaussian", squashed=squashed)


@dataclass
class VarianceReport:
    kinds: tuple
    m: int
    traces: dict
    per_coordinate: dict
    trace_se: dict


def estimate_gradient_variance(head: policies.MixtureHead, critic,
                               alpha: float, kinds: Sequence[str],
                               m: int = 128, rng: Optional[Rng] = None,
                               weight_param: str = "logits",
                               draws=None, **ctx_kwargs) -> VarianceReport:
    """M repeated estimates at fixed parameters; diagnostic only.

    Passing frozen draws replays the identical estimate m times (zero trace).
    """
    if m < 2:
        raise ValueError("need at least two repeats")
    rng = rng or Rng(0)
    traces, per_coord, trace_se = {}, {}, {}
    for kind in kinds:
        rows = []
        for rep in range(m):
            dh, leaves = policies.head_leaves(head, weight_param)
            ctx = est.ActorContext(head=dh, critic=critic, alpha=alpha,
                                   rng=rng.substream(kind, rep), **ctx_kwargs)
            rows.append(est.estimate(kind, ctx, list(leaves.values()),
                                     draws).values)
        rows = np.stack(rows)
        var = rows.var(axis=0, ddof=1)
        per_coord[kind] = var
        traces[kind] = float(var.sum())
        boot = rng.substream("boot", kind)
        resampled = [rows[boot.integers(0, m, size=m)].var(axis=0, ddof=1).sum()
                     for _ in range(500)]
        trace_se[kind] = float(np.std(resampled))
    return VarianceReport(tuple(kinds), m, traces, per_coord, trace_se)


# ---------------------------------------------------------------------------
# paper-coordinate estimators (raw [mu_k, sigma_k, w_k] parameterization)


def _component_stats(head: policies.MixtureHead):
    if head.base_kind != "gaussian" or head.squashed:
        raise ValueError("raw-coordinate diagnostics need an unsquashed "
                         "Gaussian mixture")
    if head.batch != 1 or head.act_dim != 1:
        raise ValueError("expected a single unbatched 1-d head")
    means = head.means[0, :, 0]
    stds = np.exp(head.log_stds[0, :, 0])
    weights = policies.softmax_weights(head.weight_logits)[0]
    return means, stds, weights


def lr_gradient_rows(head: policies.MixtureHead, a: np.ndarray,
                     r: np.ndarray) -> np.ndarray:
    """Per-sample LR gradients (n, 3N): [d/dmu | d/dsigma | d/dw direct]."""
    means, stds, weights = _component_stats(head)
    z = (a[:, None] - means) / stds
    comp = np.exp(-0.5 * z * z) / (stds * np.sqrt(2.0 * np.pi))
    pi = (weights * comp).sum(axis=1, keepdims=True)
    rho = comp / pi
    g_mu = weights * rho * z / stds * r[:, None]
    g_sigma = weights * rho * (z * z - 1.0) / stds * r[:, None]
    g_w = rho * r[:, None]
    return np.concatenate([g_mu, g_sigma, g_w], axis=1)


def mrp_gradient_rows(head: policies.MixtureHead, eps: np.ndarray, r: Callable,
                      r_prime: Callable) -> np.ndarray:
    """Per-sample MRP gradients (n, 3N) from one shared eps per row."""
    means, stds, weights = _component_stats(head)
    f = means + eps[:, None] * stds
    g_mu = weights * r_prime(f)
    g_sigma = weights * r_prime(f) * eps[:, None]
    g_w = r(f)
    return np.concatenate([g_mu, g_sigma, g_w], axis=1)


def component_lr_rows(mu: float, sigma: float, a: np.ndarray,
                      r: np.ndarray) -> np.ndarray:
    """Single-Gaussian LR gradient rows (n, 2): [d/dmu, d/dsigma]."""
    z = (a - mu) / sigma
    return np.stack([z / sigma * r, (z * z - 1.0) / sigma * r], axis=1)


def component_rp_rows(mu: float, sigma: float, eps: np.ndarray,
                      r_prime: Callable) -> np.ndarray:
    """Single-Gaussian RP gradient rows (n, 2) at f = mu + sigma eps."""
    rp = r_prime(mu + sigma * eps)
    return np.stack([rp, rp * eps], axis=1)


# ---------------------------------------------------------------------------
# Assumption checks


@dataclass
class ImportanceVarianceReport:
    """Summed IS-vs-on-policy variance gaps with per-term standard errors."""

    term_mu: float
    term_sigma: float
    term_reward: float
    se_mu: float
    se_sigma: float
    se_reward: float
    n: int


def check_importance_variance_terms(head: policies.MixtureHead, reward: Callable,
                                    n: int = 1_000_000,
                                    rng: Optional[Rng] = None,
                                    blocks: int = 50) -> ImportanceVarianceReport:
    """Monte Carlo estimate of the summed variance gaps

        sum_k Var_pi(rho_k g_k) - Var_ck(g_k)

    for the mu/sigma score terms and the plain reward. Component draws and
    mixture draws share the same base noise, so identical distributions
    cancel exactly.
    """
    means, stds, weights = _component_stats(head)
    rng = rng or Rng(0)
    eps = rng.normal(size=n)
    a_comp = means[None, :] + stds[None, :] * eps[:, None]   # (n, N)
    ks = (rng.uniform(size=(n, 1)) > np.cumsum(weights)[None, :]).sum(axis=1)
    ks = np.minimum(ks, len(weights) - 1)
    a_mix = a_comp[np.arange(n), ks]

    z_mix = (a_mix[:, None] - means) / stds
    comp_at_mix = np.exp(-0.5 * z_mix * z_mix) / (stds * np.sqrt(2 * np.pi))
    rho = comp_at_mix / (weights * comp_at_mix).sum(axis=1, keepdims=True)
    r_mix = reward(a_mix)[:, None]
    r_comp = reward(a_comp)

    is_rows = {
        "mu": rho * z_mix / stds * r_mix,
        "sigma": rho * (z_mix * z_mix - 1.0) / stds * r_mix,
        "reward": rho * r_mix,
    }
    z_comp = (a_comp - means) / stds
    # shaped like the IS rows so identical distributions cancel exactly
    on_rows = {
        "mu": z_comp / stds * r_comp,
        "sigma": (z_comp * z_comp - 1.0) / stds * r_comp,
        "reward": r_comp,
    }

    def gap(name, sl=slice(None)):
        return (is_rows[name][sl].var(axis=0, ddof=1)
                - on_rows[name][sl].var(axis=0, ddof=1)).sum()

    terms = {name: float(gap(name)) for name in is_rows}
    size = n // blocks
    ses = {}
    for name in is_rows:
        per_block = [gap(name, slice(b * size, (b + 1) * size))
                     for b in range(blocks)]
        ses[name] = float(np.std(per_block) / np.sqrt(blocks))
    return ImportanceVarianceReport(terms["mu"], terms["sigma"],
                                    terms["reward"], ses["mu"], ses["sigma"],
                                    ses["reward"], n)


# ---------------------------------------------------------------------------
# bootstrap


@dataclass
class BootstrapCI:
    point: float
    lower: float
    upper: float
    level: float
    resamples: int


def bootstrap_ci(samples, level: float = 0.95, b: int = 2000,
                 rng: Optional[Rng] = None) -> BootstrapCI:
    """Percentile bootstrap CI for the mean."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise ValueError("bootstrap needs at least one sample")
    rng = rng or Rng(0)
    n = samples.size
    idx = rng.integers(0, n, size=(b, n))
    means = samples[idx].mean(axis=1)
    tail = 100.0 * (1.0 - level) / 2.0
    lower, upper = np.percentile(means, [tail, 100.0 - tail])
    return BootstrapCI(float(samples.mean()), float(lower), float(upper),
                       level, b)
