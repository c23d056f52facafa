"""Synthetic problems and Monte-Carlo quality metrics.

Synthetic ground-truth mixtures are drawn so that problems stay comparably
hard across dimensions: per-dimension variances uniform in [0.25, 1.75]
(mean 1) and component means Gaussian with standard deviation K^(1/d), which
packs K unit-volume components into a ball of K times that volume.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .freqdesign import FreqKind, draw_freq
from .model import (VARIANCE_FLOOR, Dataset, GaussianParams, Mixture,
                    component_logpdfs, mixture_logpdf_rows, mixture_sample)

# Smallest argument exp() can represent in float64; log densities are clamped
# here instead of discarding samples, and the clamp count is reported.
LOG_DENSITY_FLOOR = -745.0

KL_MC_SAMPLES = 500_000


@dataclass(frozen=True)
class SyntheticProblem:
    truth: Mixture
    d: int
    K: int
    seed: int


def gen_synthetic(d: int, K: int, seed: int, *,
                  dirichlet_weights: bool = False) -> SyntheticProblem:
    """Random ground-truth mixture: variances U[0.25, 1.75], means
    N(0, K^(2/d) I), uniform weights (or flat-Dirichlet on request)."""
    if d < 1 or K < 1:
        raise ValueError("need d, K >= 1")
    rng = np.random.default_rng(seed)
    sigma_mu = K ** (1.0 / d)
    means = rng.normal(0.0, sigma_mu, size=(K, d))
    variances = rng.uniform(0.25, 1.75, size=(K, d))
    if dirichlet_weights:
        weights = rng.dirichlet(np.ones(K))
    else:
        weights = np.full(K, 1.0 / K)
    comps = [GaussianParams(means[k], variances[k]) for k in range(K)]
    return SyntheticProblem(Mixture(comps, weights), d, K, seed)


class KlSymEstimate(NamedTuple):
    estimate: float
    stderr: float
    clamp_count: int


def kl_sym_mc(truth: Mixture, est: Mixture, n_mc: int = KL_MC_SAMPLES,
              rng: np.random.Generator | None = None) -> KlSymEstimate:
    """Monte-Carlo symmetric KL divergence d(P, Q) = D(P||Q) + D(Q||P).

    Samples y_i from the true mixture and averages
    ln(p/q)(y_i) + (q/p)(y_i) ln(q/p)(y_i), all in log space.  Log densities
    of the estimate that underflow are clamped at LOG_DENSITY_FLOOR and
    counted.
    """
    truth.require_finalized()
    est.require_finalized()
    if truth.dim != est.dim:
        raise ValueError("mixture dimensions differ")
    if rng is None:
        rng = np.random.default_rng(0)
    y = mixture_sample(truth, n_mc, rng).samples
    lp = mixture_logpdf_rows(truth, y)
    lq = mixture_logpdf_rows(est, y)
    clamps = int(np.sum(lq < LOG_DENSITY_FLOOR))
    lq = np.maximum(lq, LOG_DENSITY_FLOOR)
    lp = np.maximum(lp, LOG_DENSITY_FLOOR)
    t = lp - lq
    # ln(p/q) + (q/p) ln(q/p) = t - t e^{-t}; e^{-t} underflows harmlessly
    # for clamped samples (t large and positive).
    with np.errstate(over="ignore"):
        ratio = np.exp(-t)
    summand = t - t * ratio
    estimate = float(summand.mean())
    stderr = float(summand.std(ddof=1) / np.sqrt(n_mc))
    return KlSymEstimate(estimate, stderr, clamps)


def charfn_mixture(mix: Mixture, freqs: np.ndarray) -> np.ndarray:
    """Characteristic function of a mixture at each frequency row."""
    out = np.zeros(freqs.shape[0], dtype=np.complex128)
    for w, c in zip(mix.weights, mix.components):
        out += w * np.exp(-0.5 * ((freqs * freqs) @ c.variances)
                          - 1j * (freqs @ c.mean))
    return out


def mmd_mc(p: Mixture, q: Mixture, sigma2_design: float,
           kind: FreqKind = FreqKind.ADAPTED_RADIUS, m_mc: int = 500_000,
           rng: np.random.Generator | None = None,
           return_stderr: bool = False):
    """Monte-Carlo maximum mean discrepancy between two mixtures.

    Draws m_mc frequencies from the selected law at the isotropic scale
    ``sigma2_design`` and averages the squared characteristic-function gap;
    returns its square root (optionally with a delta-method standard error).
    """
    if p.dim != q.dim:
        raise ValueError("mixture dimensions differ")
    if rng is None:
        rng = np.random.default_rng(0)
    fs = draw_freq(np.full((1, p.dim), float(sigma2_design)), np.ones(1),
                   m_mc, kind, rng)
    gaps = np.abs(charfn_mixture(p, fs.freqs) - charfn_mixture(q, fs.freqs)) ** 2
    mean = float(gaps.mean())
    mmd = float(np.sqrt(mean))
    if not return_stderr:
        return mmd
    se_mean = float(gaps.std(ddof=1) / np.sqrt(m_mc))
    stderr = se_mean / (2.0 * mmd) if mmd > 0 else 0.0
    return mmd, stderr


def em_baseline(data: Dataset, K: int, n_init: int = 10, max_iter: int = 100,
                rng: np.random.Generator | None = None) -> Mixture:
    """Minimal diagonal-covariance EM, kept deliberately simple.

    Each restart seeds the means with K distinct data points and every
    dimension with the global data variance, then iterates EM up to
    ``max_iter`` times (stopping early on a converged log-likelihood).  The
    restart with the best log-likelihood wins.  Serves as a comparison
    anchor only.
    """
    if data.n < K:
        raise ValueError("need at least K data points")
    if rng is None:
        rng = np.random.default_rng(0)
    X = data.samples
    n, d = X.shape
    global_var = np.maximum(X.var(axis=0), VARIANCE_FLOOR)

    def loglik(mu, var, w):
        mix = Mixture([GaussianParams(mu[k], var[k]) for k in range(K)], w)
        log_comp = component_logpdfs(mix, X)
        with np.errstate(divide="ignore"):
            log_comp = log_comp + np.log(w)[None, :]
        ll_rows = np.logaddexp.reduce(log_comp, axis=1)
        return float(ll_rows.sum()), log_comp, ll_rows

    best_ll, best = -np.inf, None
    for _ in range(n_init):
        idx = rng.choice(n, size=K, replace=False)
        mu = X[idx].copy()
        var = np.tile(global_var, (K, 1))
        w = np.full(K, 1.0 / K)
        prev_ll = -np.inf
        monotone_since = True  # re-seeding an empty cluster may drop ll once
        for _ in range(max_iter):
            ll, log_comp, ll_rows = loglik(mu, var, w)
            if monotone_since:
                assert ll >= prev_ll - 1e-6 * max(1.0, abs(ll)), \
                    "EM log-likelihood decreased"
            if np.isfinite(prev_ll) and ll - prev_ll < 1e-10 * max(1.0, abs(ll)):
                prev_ll = max(prev_ll, ll)
                break
            prev_ll = ll
            resp = np.exp(log_comp - ll_rows[:, None])
            nk = resp.sum(axis=0)
            dead = np.flatnonzero(nk < 1e-10)
            alive = np.setdiff1d(np.arange(K), dead)
            w = nk / nk.sum()
            mu[alive] = (resp[:, alive].T @ X) / nk[alive, None]
            for k in alive:
                diff = X - mu[k]
                var[k] = np.maximum(
                    (resp[:, k] @ (diff * diff)) / nk[k], VARIANCE_FLOOR)
            monotone_since = dead.size == 0
            for k in dead:
                # Re-seed an emptied component from a random data point.
                mu[k] = X[rng.integers(n)]
                var[k] = global_var
                w[k] = 1.0 / n
            if dead.size:
                w = w / w.sum()
        if prev_ll > best_ll:
            best_ll = prev_ll
            best = Mixture([GaussianParams(mu[k], var[k]) for k in range(K)], w)
    return best
