"""Core domain types and exact Gaussian-mixture kernels.

Everything here is a pure function of its inputs (plus an explicitly passed
numpy ``Generator``); all values are immutable after construction, so they are
safe to share between threads.  Gaussians have diagonal covariance throughout,
parametrized by a mean vector and a per-dimension variance vector.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

# Variances are clamped (not rejected) to this floor on construction and after
# every optimizer step; keeps 1/sigma^2 and log(sigma^2) finite.
VARIANCE_FLOOR = 1e-15

# Weights of a finalized mixture must sum to one within this tolerance.
WEIGHT_SUM_TOL = 1e-12


def _locked(a: np.ndarray) -> np.ndarray:
    """Copy to a float64 array and make it read-only."""
    out = np.array(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GaussianParams:
    """One diagonal-covariance Gaussian atom: mean mu and variances sigma^2.

    ``variances`` entries are clamped to ``VARIANCE_FLOOR`` on construction.
    """

    mean: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        mean = _locked(self.mean)
        var = np.array(self.variances, dtype=np.float64)
        if mean.ndim != 1 or var.ndim != 1:
            raise ValueError("mean and variances must be 1-D vectors")
        if mean.size != var.size or mean.size < 1:
            raise ValueError("mean and variances must have equal length d >= 1")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(var))):
            raise ValueError("non-finite Gaussian parameters")
        var = np.maximum(var, VARIANCE_FLOOR)
        var.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "variances", var)

    @property
    def dim(self) -> int:
        return self.mean.size


@dataclass(frozen=True)
class Mixture:
    """Weighted combination of Gaussian atoms.

    Weights must be nonnegative; they are only required to sum to one once the
    mixture is *finalized* (recovery keeps intermediate states unnormalized and
    normalizes at the very end).
    """

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = _locked(self.weights)
        if len(comps) < 1 or w.ndim != 1 or w.size != len(comps):
            raise ValueError("need one weight per component")
        if not all(isinstance(c, GaussianParams) for c in comps):
            raise TypeError("components must be GaussianParams")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        d = comps[0].dim
        if any(c.dim != d for c in comps):
            raise ValueError("all components must share the same dimension")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @property
    def k(self) -> int:
        return len(self.components)

    @property
    def dim(self) -> int:
        return self.components[0].dim

    @property
    def finalized(self) -> bool:
        return abs(float(self.weights.sum()) - 1.0) <= WEIGHT_SUM_TOL

    def require_finalized(self):
        if not self.finalized:
            raise ValueError("mixture weights do not sum to 1")

    def means_matrix(self) -> np.ndarray:
        """(K, d) matrix of component means."""
        return np.array([c.mean for c in self.components])

    def variances_matrix(self) -> np.ndarray:
        """(K, d) matrix of per-dimension component variances."""
        return np.array([c.variances for c in self.components])


@dataclass(frozen=True)
class Dataset:
    """n x d sample matrix, one item per row."""

    samples: np.ndarray

    def __post_init__(self):
        x = _locked(np.atleast_2d(self.samples))
        if x.ndim != 2 or x.shape[0] < 1 or x.shape[1] < 1:
            raise ValueError("need an n x d matrix with n, d >= 1")
        if not np.all(np.isfinite(x)):
            raise ValueError("dataset contains non-finite entries")
        object.__setattr__(self, "samples", x)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def d(self) -> int:
        return self.samples.shape[1]


def _check_point(p: GaussianParams, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != p.dim:
        raise ValueError(f"point has dimension {x.size}, expected {p.dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite input point")
    return x


def gauss_logpdf(p: GaussianParams, x) -> float:
    """log N(x; mu, diag(sigma^2)) = -1/2 sum_l [log(2 pi s2_l) + (x_l-mu_l)^2/s2_l]."""
    x = _check_point(p, x)
    z = (x - p.mean) ** 2 / p.variances
    return float(-0.5 * np.sum(np.log(2.0 * np.pi * p.variances) + z))


def component_logpdfs(mix: Mixture, rows: np.ndarray) -> np.ndarray:
    """(n, K) matrix of per-component log densities for n points (row-wise)."""
    rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
    if rows.shape[1] != mix.dim:
        raise ValueError(f"points have dimension {rows.shape[1]}, expected {mix.dim}")
    mu = mix.means_matrix()          # (K, d)
    var = mix.variances_matrix()     # (K, d)
    const = -0.5 * np.sum(np.log(2.0 * np.pi * var), axis=1)  # (K,)
    out = np.empty((rows.shape[0], mix.k))
    for k in range(mix.k):
        z = (rows - mu[k]) ** 2 / var[k]
        out[:, k] = const[k] - 0.5 * z.sum(axis=1)
    return out


def mixture_logpdf_rows(mix: Mixture, rows: np.ndarray) -> np.ndarray:
    """Vectorized log density of a finalized mixture at each row."""
    mix.require_finalized()
    lp = component_logpdfs(mix, rows)
    return logsumexp(lp, axis=1, b=mix.weights[None, :])


def mixture_logpdf(mix: Mixture, x) -> float:
    """log sum_k alpha_k N(x; theta_k), computed with the max-shift trick."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1 or x.size != mix.dim:
        raise ValueError(f"point has dimension {x.size}, expected {mix.dim}")
    return float(mixture_logpdf_rows(mix, x[None, :])[0])


def _check_freq(p: GaussianParams, omega) -> np.ndarray:
    w = np.asarray(omega, dtype=np.float64)
    if w.ndim != 1 or w.size != p.dim:
        raise ValueError(f"frequency has dimension {w.size}, expected {p.dim}")
    return w


def gauss_charfn(p: GaussianParams, omega) -> complex:
    """Characteristic function exp(-i w.mu) * exp(-1/2 sum_l s2_l w_l^2)."""
    w = _check_freq(p, omega)
    amp = np.exp(-0.5 * np.dot(p.variances, w * w))
    return complex(amp * np.exp(-1j * np.dot(w, p.mean)))


def gauss_charfn_grad(p: GaussianParams, omega):
    """Characteristic function value and its partials w.r.t. mu and sigma^2.

    Returns ``(value, dmu, dvar)`` with ``dmu[l] = -i w_l value`` and
    ``dvar[l] = -w_l^2/2 value``.
    """
    w = _check_freq(p, omega)
    value = gauss_charfn(p, w)
    dmu = -1j * w * value
    dvar = -0.5 * (w * w) * value
    return value, dmu, dvar


def gauss_kl(p1: GaussianParams, p2: GaussianParams) -> float:
    """Closed-form KL divergence D(P1 || P2) between diagonal Gaussians."""
    if p1.dim != p2.dim:
        raise ValueError("dimension mismatch")
    v1, v2 = p1.variances, p2.variances
    dm = p2.mean - p1.mean
    return float(
        0.5
        * (
            np.sum(np.log(v2 / v1))
            + np.sum(v1 / v2)
            - p1.dim
            + np.sum(dm * dm / v2)
        )
    )


def categorical_draw(weights: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Map uniforms in [0, 1) to component indices by inverse CDF."""
    cdf = np.cumsum(weights / weights.sum())
    return np.searchsorted(cdf, u, side="right").clip(max=weights.size - 1)


def mixture_sample(mix: Mixture, n: int, rng: np.random.Generator) -> Dataset:
    """n i.i.d. draws from a finalized mixture, reproducible given the rng seed."""
    mix.require_finalized()
    if n < 1:
        raise ValueError("need n >= 1 samples")
    # Indices first, then one block of normals: the stream layout does not
    # depend on which components end up selected.
    idx = categorical_draw(mix.weights, rng.random(n))
    g = rng.standard_normal((n, mix.dim))
    mu = mix.means_matrix()[idx]
    sd = np.sqrt(mix.variances_matrix()[idx])
    return Dataset(mu + sd * g)


# ---------------------------------------------------------------------------
# GMM text format: JSON document with fields d, k, weights, means, variances.
# Reals are written with 17 significant digits so values round-trip exactly.
# ---------------------------------------------------------------------------

def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def _fmt_vec(v) -> str:
    return "[" + ", ".join(_fmt(x) for x in v) + "]"


def write_gmm(path, mix: Mixture):
    """Write a mixture to the GMM text format (UTF-8 JSON)."""
    rows_mu = ",\n    ".join(_fmt_vec(c.mean) for c in mix.components)
    rows_var = ",\n    ".join(_fmt_vec(c.variances) for c in mix.components)
    text = (
        "{\n"
        f'  "d": {mix.dim},\n'
        f'  "k": {mix.k},\n'
        f'  "weights": {_fmt_vec(mix.weights)},\n'
        f'  "means": [\n    {rows_mu}\n  ],\n'
        f'  "variances": [\n    {rows_var}\n  ]\n'
        "}\n"
    )
    with open(path, "w", encoding="utf-8") as f:
        f.write(text)


def read_gmm(path) -> Mixture:
    """Read a mixture from the GMM text format."""
    with open(path, "r", encoding="utf-8") as f:
        doc = json.load(f)
    d, k = int(doc["d"]), int(doc["k"])
    weights = np.asarray(doc["weights"], dtype=np.float64)
    means = np.asarray(doc["means"], dtype=np.float64)
    variances = np.asarray(doc["variances"], dtype=np.float64)
    if means.shape != (k, d) or variances.shape != (k, d) or weights.shape != (k,):
        raise ValueError("GMM document fields do not match declared d, k")
    comps = [GaussianParams(means[i], variances[i]) for i in range(k)]
    return Mixture(comps, weights)
