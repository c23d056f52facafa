"""Frequency sampling pattern design.

Frequencies are drawn from one of three radial laws scaled by the component
variances: a plain Gaussian, a folded-Gaussian radius times a uniform sphere
direction, or an "adapted" radius with density proportional to
``sqrt(r^2 + r^4/4) * exp(-r^2/2)`` that concentrates sampling where the
sketch is most sensitive to the Gaussian parameters.  The practical design
path first estimates the average component variance from a small sketch of
the data, then draws all frequencies for that single isotropic scale.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum

import numpy as np
from scipy.optimize import minimize_scalar

from .model import Dataset

# Inverse-CDF table resolution for the adapted radius law.  The neglected
# tail mass beyond R_MAX = 10 is below 2e-22.
RADIUS_GRID_POINTS = 10_000
RADIUS_MAX = 10.0

# Floor applied to the estimated average variance; keeps Sigma^{-1/2} finite
# on degenerate (e.g. constant) data.
SIGMA2_FLOOR = 1e-6

# Defaults for the average-variance estimation procedure.
ESTIM_N0 = 5000
ESTIM_M0 = 500
ESTIM_BLOCKS = 30
ESTIM_ROUNDS = 5


class FreqKind(IntEnum):
    """Radial law used for the frequency draw (values are the wire codes)."""

    GAUSSIAN = 0
    FOLDED_GAUSSIAN_RADIUS = 1
    ADAPTED_RADIUS = 2


_KIND_NAMES = {"gauss": FreqKind.GAUSSIAN, "fgr": FreqKind.FOLDED_GAUSSIAN_RADIUS,
               "ar": FreqKind.ADAPTED_RADIUS}


def kind_from_name(name: str) -> FreqKind:
    try:
        return _KIND_NAMES[name.lower()]
    except KeyError:
        raise ValueError(f"unknown frequency kind {name!r} (one of gauss, fgr, ar)")


FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash."""
    h = FNV64_OFFSET
    for b in data:
        h = ((h ^ b) * FNV64_PRIME) & 0xFFFFFFFFFFFFFFFF
    return h


@dataclass(frozen=True)
class FrequencySet:
    """m frequencies (rows) with the design metadata used to draw them.

    ``fingerprint`` is the FNV-1a hash of the row-major little-endian byte
    serialization of ``freqs``; sketches carry it so that a sketch is never
    silently paired with the wrong frequency set.
    """

    freqs: np.ndarray
    kind: FreqKind
    sigma2_bar: float
    seed: int
    fingerprint: int = 0

    def __post_init__(self):
        w = np.array(self.freqs, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] < 1 or w.shape[1] < 1:
            raise ValueError("freqs must be an m x d matrix with m, d >= 1")
        if not np.all(np.isfinite(w)):
            raise ValueError("non-finite frequency entries")
        if not self.sigma2_bar > 0:
            raise ValueError("sigma2_bar must be positive")
        w.setflags(write=False)
        object.__setattr__(self, "freqs", w)
        object.__setattr__(self, "kind", FreqKind(self.kind))
        object.__setattr__(self, "fingerprint",
                           fnv1a64(w.astype("<f8").tobytes(order="C")))

    @property
    def m(self) -> int:
        return self.freqs.shape[0]

    @property
    def d(self) -> int:
        return self.freqs.shape[1]


@dataclass(frozen=True)
class RadiusTable:
    """Tabulated CDF of a radius law on an ascending grid starting at 0."""

    grid: np.ndarray
    cdf: np.ndarray

    def __post_init__(self):
        grid = np.array(self.grid, dtype=np.float64)
        cdf = np.array(self.cdf, dtype=np.float64)
        if grid.size != cdf.size or grid.size < 3:
            raise ValueError("grid and cdf must have equal length G+1 >= 3")
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0):
            raise ValueError("grid must ascend from 0")
        if cdf[0] != 0.0 or cdf[-1] != 1.0 or np.any(np.diff(cdf) < 0):
            raise ValueError("cdf must be nondecreasing from 0 to 1")
        grid.setflags(write=False)
        cdf.setflags(write=False)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "cdf", cdf)

    def inverse_cdf(self, u) -> np.ndarray:
        """Inverse CDF with linear interpolation within table cells."""
        u = np.asarray(u, dtype=np.float64)
        return np.interp(u, self.cdf, self.grid)


def adapted_radius_density(r):
    """Unnormalized adapted radius density sqrt(r^2 + r^4/4) exp(-r^2/2)."""
    r = np.asarray(r, dtype=np.float64)
    return np.sqrt(r * r + 0.25 * r**4) * np.exp(-0.5 * r * r)


def adapted_radius_cdf_build(grid_points: int = RADIUS_GRID_POINTS,
                             r_max: float = RADIUS_MAX) -> RadiusTable:
    """Tabulate the normalized adapted-radius CDF on [0, r_max].

    Cell masses come from composite Simpson quadrature; the (negligible) tail
    mass beyond r_max is folded into the last cell by normalization.
    """
    if grid_points < 100:
        raise ValueError("need at least 100 grid points")
    if r_max < 8:
        raise ValueError("need r_max >= 8")
    grid = np.linspace(0.0, r_max, grid_points + 1)
    mids = 0.5 * (grid[:-1] + grid[1:])
    h = grid[1] - grid[0]
    # Per-cell Simpson rule: (f(a) + 4 f(mid) + f(b)) * h / 6.
    f = adapted_radius_density(grid)
    cell = (f[:-1] + 4.0 * adapted_radius_density(mids) + f[1:]) * (h / 6.0)
    cdf = np.concatenate(([0.0], np.cumsum(cell)))
    cdf /= cdf[-1]
    cdf[-1] = 1.0
    return RadiusTable(grid, cdf)


_DEFAULT_TABLE: RadiusTable | None = None


def default_radius_table() -> RadiusTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = adapted_radius_cdf_build()
    return _DEFAULT_TABLE


def sample_radius(kind: FreqKind, table: RadiusTable,
                  rng: np.random.Generator, size=None):
    """Draw radii: |N(0,1)| for the folded-Gaussian law, inverse-CDF otherwise."""
    if kind == FreqKind.FOLDED_GAUSSIAN_RADIUS:
        return np.abs(rng.standard_normal(size))
    if kind == FreqKind.ADAPTED_RADIUS:
        return table.inverse_cdf(rng.random(size))
    raise ValueError("the Gaussian kind does not factor through a radius draw")


def draw_freq(variances, weights, m: int, kind: FreqKind,
              rng: np.random.Generator, *, sigma2_bar: float | None = None,
              seed: int = 0) -> FrequencySet:
    """Draw m frequencies for a mixture with known variances and weights.

    For each frequency a component label is drawn from the weights; the
    Gaussian kind then draws from N(0, Sigma_k^{-1}) directly, while the
    radial kinds draw a uniform sphere direction rho and an independent
    radius R and set omega = R Sigma_k^{-1/2} rho.
    """
    variances = np.atleast_2d(np.asarray(variances, dtype=np.float64))
    weights = np.asarray(weights, dtype=np.float64)
    kind = FreqKind(kind)
    K, d = variances.shape
    if weights.shape != (K,) or np.any(weights < 0):
        raise ValueError("weights must be nonnegative, one per variance row")
    if abs(weights.sum() - 1.0) > 1e-9:
        raise ValueError("weights must sum to 1")
    if np.any(variances <= 0):
        raise ValueError("variances must be strictly positive")
    if m < 1:
        raise ValueError("need m >= 1 frequencies")

    cdf = np.cumsum(weights / weights.sum())
    labels = np.searchsorted(cdf, rng.random(m), side="right").clip(max=K - 1)
    inv_sd = 1.0 / np.sqrt(variances[labels])  # (m, d) rows of Sigma_k^{-1/2}

    if kind == FreqKind.GAUSSIAN:
        freqs = rng.standard_normal((m, d)) * inv_sd
    else:
        g = rng.standard_normal((m, d))
        rho = g / np.linalg.norm(g, axis=1, keepdims=True)
        radius = sample_radius(kind, default_radius_table(), rng, size=m)
        freqs = radius[:, None] * inv_sd * rho

    if sigma2_bar is None:
        sigma2_bar = float(weights @ variances.mean(axis=1))
    return FrequencySet(freqs, kind, sigma2_bar, seed)


def fit_peak_decay(radii, peaks) -> tuple[float, float]:
    """Least-squares fit of exp(-R^2 s2 / 2) to peak magnitudes over s2 >= 0.

    Peaks are clipped to (0, 1] first.  Returns ``(s2, residual)`` where the
    residual is the squared fit error at the minimizer (kept as a diagnostic;
    non-monotonic peak curves are fit as-is).
    """
    radii = np.asarray(radii, dtype=np.float64)
    peaks = np.minimum(np.asarray(peaks, dtype=np.float64), 1.0)

    r2half = 0.5 * radii * radii

    def loss(s2):
        e = peaks - np.exp(-r2half * s2)
        return float(e @ e)

    # Coarse bracket on a log grid (plus the s2 = 0 endpoint), then a bounded
    # scalar refinement inside the bracketing cells.
    grid = np.concatenate(([0.0], np.logspace(-8, 6, 113)))
    values = np.array([loss(s) for s in grid])
    i = int(np.argmin(values))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, grid.size - 1)]
    if hi <= lo:
        return float(grid[i]), float(values[i])
    res = minimize_scalar(loss, bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-12})
    best_s2, best_val = float(res.x), float(res.fun)
    if values[i] < best_val:
        best_s2, best_val = float(grid[i]), float(values[i])
    return best_s2, best_val


def estim_mean_sigma(data: Dataset, n0: int = ESTIM_N0, m0: int = ESTIM_M0,
                     c: int = ESTIM_BLOCKS, T: int = ESTIM_ROUNDS,
                     rng: np.random.Generator | None = None,
                     diagnostics: dict | None = None) -> float:
    """Estimate the average per-dimension component variance from the data.

    Iterative procedure: starting from sigma2 = 1, each round draws m0
    adapted-radius frequencies for the current isotropic scale, sketches the
    first n0 items (unnormalized), takes the peak magnitude in each of c
    blocks of consecutive radius-sorted entries, and refits the decay rate of
    exp(-R^2 sigma2 / 2) through the peaks.  The result is clamped to
    [SIGMA2_FLOOR, inf).
    """
    if data.n < 1:
        raise ValueError("empty dataset")
    if not (m0 >= c >= 1 and T >= 1):
        raise ValueError("need m0 >= c >= 1 and T >= 1")
    n0 = min(n0, data.n)
    if rng is None:
        rng = np.random.default_rng(0)
    rows = data.samples[:n0]

    sigma2 = 1.0
    fit_residuals = []
    s = m0 // c
    for _ in range(T):
        fs = draw_freq(np.full((1, data.d), sigma2), np.ones(1), m0,
                       FreqKind.ADAPTED_RADIUS, rng)
        radii = np.linalg.norm(fs.freqs, axis=1)
        order = np.argsort(radii, kind="stable")
        freqs = fs.freqs[order]
        radii = radii[order]
        z0 = np.exp(-1j * (rows @ freqs.T)).mean(axis=0)  # (m0,)
        mags = np.abs(z0)
        # Peak magnitude per block of s consecutive entries; argmax breaks
        # ties toward the lowest index.
        block_idx = np.array([
            q * s + int(np.argmax(mags[q * s:(q + 1) * s])) for q in range(c)
        ])
        sigma2, resid = fit_peak_decay(radii[block_idx], mags[block_idx])
        sigma2 = max(sigma2, SIGMA2_FLOOR)
        fit_residuals.append(resid)

    if diagnostics is not None:
        diagnostics["fit_residuals"] = fit_residuals
    return sigma2


def design_frequencies(data: Dataset, m: int, kind: FreqKind, seed: int,
                       n0: int = ESTIM_N0, m0: int = ESTIM_M0,
                       c: int = ESTIM_BLOCKS, T: int = ESTIM_ROUNDS) -> FrequencySet:
    """End-to-end practical frequency design from data alone.

    Estimates the average variance, then draws all m frequencies for a single
    isotropic component at that scale; the estimated scale and the seed are
    recorded in the returned set.
    """
    rng = np.random.default_rng(seed)
    sigma2 = estim_mean_sigma(data, n0=n0, m0=m0, c=c, T=T, rng=rng)
    return draw_freq(np.full((1, data.d), sigma2), np.ones(1), m,
                     FreqKind(kind), rng, sigma2_bar=sigma2, seed=seed)


# ---------------------------------------------------------------------------
# CLFREQ01 binary format: magic, u32 d, u32 m, u8 kind, f64 sigma2_bar,
# u64 seed, m*d f64 row-major, u64 fingerprint.  All little-endian.
# ---------------------------------------------------------------------------

FREQ_MAGIC = b"CLFREQ01"


def write_freqs(path, fs: FrequencySet):
    with open(path, "wb") as f:
        f.write(FREQ_MAGIC)
        f.write(struct.pack("<IIBdQ", fs.d, fs.m, int(fs.kind),
                            fs.sigma2_bar, fs.seed & 0xFFFFFFFFFFFFFFFF))
        f.write(fs.freqs.astype("<f8").tobytes(order="C"))
        f.write(struct.pack("<Q", fs.fingerprint))


def read_freqs(path) -> FrequencySet:
    with open(path, "rb") as f:
        if f.read(8) != FREQ_MAGIC:
            raise ValueError(f"{path}: not a CLFREQ01 file")
        d, m, kind, sigma2_bar, seed = struct.unpack("<IIBdQ", f.read(25))
        freqs = np.frombuffer(f.read(8 * m * d), dtype="<f8").reshape(m, d)
        (fingerprint,) = struct.unpack("<Q", f.read(8))
    fs = FrequencySet(freqs, FreqKind(kind), sigma2_bar, seed)
    if fs.fingerprint != fingerprint:
        raise ValueError(f"{path}: fingerprint check failed, file corrupt")
    return fs
