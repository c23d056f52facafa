"""Greedy recovery of a Gaussian mixture from a sketch.

Two families of decoders are provided.  The OMP-style decoder grows the
support one atom per iteration (find the atom most correlated with the
residual, project the weights with nonnegative least squares, then jointly
fine-tune all parameters); run for 2K iterations it additionally prunes the
support back to K by hard thresholding each time it overflows, which lets it
replace poor early picks.  The splitting decoder starts from a single atom
and doubles the support log2(K) times by splitting every Gaussian along its
widest dimension, which trades some accuracy for an O(K log K) cost.

Weights stay unnormalized during the iterations and are normalized to unit
sum only at the very end.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import scipy.optimize

from .freqdesign import FrequencySet
from .model import VARIANCE_FLOOR, GaussianParams, Mixture
from .sketch import FingerprintMismatch, Sketch

# Atoms with sketch norm below this are rejected during the atom search.
MIN_ATOM_NORM = 1e-150

# Large finite objective value standing in for "rejected point"; safer for
# the line search than an actual infinity.
_REJECTED = 1e300


class Algorithm(Enum):
    CLOMP = "clomp"
    CLOMPR = "clompr"
    SPLIT = "split"


class DegenerateAtomError(RuntimeError):
    """Every restart of the atom search produced a numerically-zero atom."""


@dataclass(frozen=True)
class RecoveryConfig:
    K: int
    algorithm: Algorithm = Algorithm.CLOMPR
    max_inner_iters: int = 200
    grad_tol: float = 1e-8
    step1_restarts: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("need K >= 1")
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if self.step1_restarts < 1:
            raise ValueError("need at least one restart")

    @property
    def iterations(self) -> int:
        """Greedy iteration count: K plain, 2K with replacement."""
        return self.K if self.algorithm == Algorithm.CLOMP else 2 * self.K


@dataclass
class SupportState:
    """Current support, weights and the residual they imply."""

    support: list
    weights: np.ndarray
    residual: np.ndarray


@dataclass
class RecoveryTrace:
    """Optional instrumentation filled in during a recovery run."""

    step1_calls: int = 0
    threshold_calls: int = 0
    # One (before_step4, after_step4, after_step5) triple per iteration.
    residual_norms: list = field(default_factory=list)


def box_minimize(objective, init, lower_bounds, *, max_inner_iters: int = 200,
                 grad_tol: float = 1e-8) -> np.ndarray:
    """Minimize a smooth objective under elementwise lower bounds.

    ``objective(x)`` must return ``(value, gradient)``.  Runs a bounded
    limited-memory quasi-Newton descent until the projected gradient drops
    below ``grad_tol`` or ``max_inner_iters`` iterations; the returned point
    is feasible and never worse than the initial one.
    """
    x0 = np.asarray(init, dtype=np.float64)
    lb = np.broadcast_to(np.asarray(lower_bounds, dtype=np.float64), x0.shape)
    f0, g0 = objective(x0)
    if not (np.isfinite(f0) and np.all(np.isfinite(g0))):
        raise ValueError("objective or gradient not finite at the initial point")
    res = scipy.optimize.minimize(
        objective, x0, jac=True, method="L-BFGS-B",
        bounds=[(b if np.isfinite(b) else None, None) for b in lb],
        options={"maxcor": 10, "maxiter": max_inner_iters,
                 "gtol": grad_tol, "ftol": 1e-16},
    )
    if not np.isfinite(res.fun) or res.fun > f0:
        return np.maximum(x0, lb)
    return np.maximum(res.x, lb)


def _atom_values(freqs, freqs_sq, theta, sqrt_m):
    d = freqs.shape[1]
    return np.exp(-0.5 * (freqs_sq @ theta[d:])
                  - 1j * (freqs @ theta[:d])) / sqrt_m


def _correlation_fun_grad(theta, residual, freqs, freqs_sq, sqrt_m):
    """Negated normalized atom/residual correlation and its gradient."""
    d = freqs.shape[1]
    a = _atom_values(freqs, freqs_sq, theta, sqrt_m)
    norm = np.linalg.norm(a)
    if norm < MIN_ATOM_NORM:
        return _REJECTED, np.zeros(2 * d)
    t_r = a * np.conj(residual)
    c = float(np.sum(t_r.real))
    # The frequency matrices are real, so only one real matmul is needed per
    # gradient block instead of a complex one.
    dc_mu = freqs.T @ t_r.imag              # Im(freqs.T @ t_r)
    dc_var = -0.5 * (freqs_sq.T @ t_r.real)
    # |a_j| does not depend on the mean, so the norm only varies with sigma^2.
    dn_var = -0.5 * (freqs_sq.T @ (a.real**2 + a.imag**2)) / norm
    grad = np.empty(2 * d)
    grad[:d] = -dc_mu / norm
    grad[d:] = -dc_var / norm + c * dn_var / norm**2
    return -c / norm, grad


def find_atom(residual, fs: FrequencySet, sigma2_bar: float, restarts: int,
              rng: np.random.Generator, *, max_inner_iters: int = 200,
              grad_tol: float = 1e-8) -> GaussianParams:
    """Search for the atom most correlated with the residual.

    Each restart starts a descent from a centered isotropic Gaussian with a
    random variance around ``sigma2_bar``; the best restart wins.
    """
    residual = np.asarray(residual, dtype=np.complex128)
    d = fs.d
    freqs = fs.freqs
    freqs_sq = freqs * freqs
    sqrt_m = np.sqrt(fs.m)
    lower = np.concatenate([np.full(d, -np.inf), np.full(d, VARIANCE_FLOOR)])

    def objective(theta):
        return _correlation_fun_grad(theta, residual, freqs, freqs_sq, sqrt_m)

    best_val, best_theta = np.inf, None
    for _ in range(restarts):
        sig0 = rng.uniform(0.5 * sigma2_bar, 1.5 * sigma2_bar)
        theta0 = np.concatenate([np.zeros(d), np.full(d, max(sig0, VARIANCE_FLOOR))])
        if objective(theta0)[0] >= _REJECTED:
            continue
        theta = box_minimize(objective, theta0, lower,
                             max_inner_iters=max_inner_iters, grad_tol=grad_tol)
        val = objective(theta)[0]
        if val < best_val:
            best_val, best_theta = val, theta
    if best_theta is None or best_val >= _REJECTED:
        raise DegenerateAtomError("degenerate atom")
    return GaussianParams(best_theta[:d], best_theta[d:])


def nnls(atoms, target) -> np.ndarray:
    """argmin_{beta >= 0} || target - atoms @ beta ||_2.

    Complex inputs are solved as the equivalent real least-squares problem
    with stacked real and imaginary parts.
    """
    atoms = np.atleast_2d(np.asarray(atoms))
    target = np.asarray(target)
    if np.iscomplexobj(atoms) or np.iscomplexobj(target):
        stacked = np.vstack([np.real(atoms), np.imag(atoms)])
        rhs = np.concatenate([np.real(target), np.imag(target)])
    else:
        stacked, rhs = atoms.astype(np.float64), target.astype(np.float64)
    beta, _ = scipy.optimize.nnls(stacked, rhs)
    return beta


def _atoms_matrix(support, freqs, freqs_sq, sqrt_m):
    A = np.empty((freqs.shape[0], len(support)), dtype=np.complex128)
    for k, p in enumerate(support):
        theta = np.concatenate([p.mean, p.variances])
        A[:, k] = _atom_values(freqs, freqs_sq, theta, sqrt_m)
    return A


def _recomputed_state(support, weights, z_values, freqs, freqs_sq, sqrt_m):
    A = _atoms_matrix(support, freqs, freqs_sq, sqrt_m)
    residual = z_values - A @ weights
    return SupportState(list(support), np.asarray(weights, dtype=np.float64),
                        residual), A


def select_k_largest(beta, K: int) -> np.ndarray:
    """Indices of the K largest entries, ties broken by lower index,
    returned in ascending index order."""
    order = np.argsort(-np.asarray(beta), kind="stable")
    return np.sort(order[:K])


def hard_threshold(state: SupportState, z_values, K: int, fs: FrequencySet) -> SupportState:
    """Keep the K atoms with the largest nonnegative weights over
    *normalized* atoms; ties go to the lower index."""
    if len(state.support) <= K:
        raise ValueError("support not larger than K")
    freqs = fs.freqs
    freqs_sq = freqs * freqs
    sqrt_m = np.sqrt(fs.m)
    A = _atoms_matrix(state.support, freqs, freqs_sq, sqrt_m)
    norms = np.linalg.norm(A, axis=0)
    safe = np.where(norms < MIN_ATOM_NORM, 1.0, norms)
    beta = nnls(A / safe, np.asarray(z_values))
    keep = select_k_largest(beta, K)
    support = [state.support[i] for i in keep]
    weights = state.weights[keep]
    new_state, _ = _recomputed_state(support, weights, np.asarray(z_values),
                                     freqs, freqs_sq, sqrt_m)
    return new_state


def _joint_fun_grad(p, z_values, freqs, freqs_sq, sqrt_m, r, d):
    """Squared residual norm over stacked (Theta, alpha) and its gradient."""
    theta = p[:2 * d * r].reshape(r, 2 * d)
    alpha = p[2 * d * r:]
    A = np.empty((freqs.shape[0], r), dtype=np.complex128)
    for k in range(r):
        A[:, k] = _atom_values(freqs, freqs_sq, theta[k], sqrt_m)
    resid = z_values - A @ alpha
    f = float(np.real(np.vdot(resid, resid)))
    U = A * np.conj(resid)[:, None]          # (m, r)
    # Only Im(freqs.T @ U) and Re(freqs_sq.T @ U) are needed; the frequency
    # matrices are real, so two real matmuls suffice.
    m1_im = freqs.T @ U.imag                 # (d, r)
    m2_re = freqs_sq.T @ U.real
    grad = np.empty(p.size)
    grad_theta = grad[:2 * d * r].reshape(r, 2 * d)
    grad_theta[:, :d] = (-2.0 * alpha * m1_im).T
    grad_theta[:, d:] = (alpha * m2_re).T
    grad[2 * d * r:] = -2.0 * U.real.sum(axis=0)
    return f, grad


def global_adjust(state: SupportState, z_values, fs: FrequencySet,
                  cfg: RecoveryConfig) -> SupportState:
    """Jointly fine-tune all atoms and weights from the current point."""
    z_values = np.asarray(z_values, dtype=np.complex128)
    freqs = fs.freqs
    freqs_sq = freqs * freqs
    sqrt_m = np.sqrt(fs.m)
    r, d = len(state.support), fs.d
    theta0 = np.concatenate([np.concatenate([p.mean, p.variances])
                             for p in state.support])
    p0 = np.concatenate([theta0, state.weights])
    lower = np.concatenate([
        np.tile(np.concatenate([np.full(d, -np.inf),
                                np.full(d, VARIANCE_FLOOR)]), r),
        np.zeros(r),
    ])

    def objective(p):
        return _joint_fun_grad(p, z_values, freqs, freqs_sq, sqrt_m, r, d)

    p = box_minimize(objective, p0, lower,
                     max_inner_iters=cfg.max_inner_iters, grad_tol=cfg.grad_tol)
    theta = p[:2 * d * r].reshape(r, 2 * d)
    support = [GaussianParams(theta[k, :d], theta[k, d:]) for k in range(r)]
    new_state, _ = _recomputed_state(support, p[2 * d * r:], z_values,
                                     freqs, freqs_sq, sqrt_m)
    return new_state


def _check_pairing(z: Sketch, fs: FrequencySet):
    if z.freq_fingerprint != fs.fingerprint:
        raise FingerprintMismatch("sketches use different frequency sets")
    if z.m != fs.m:
        raise ValueError("sketch length and frequency count differ")


def _project_and_adjust(state, z_values, fs, cfg, freqs, freqs_sq, sqrt_m,
                        trace):
    """Steps 4 and 5: weight projection then joint fine-tuning."""
    before = float(np.linalg.norm(state.residual))
    A = _atoms_matrix(state.support, freqs, freqs_sq, sqrt_m)
    weights = nnls(A, z_values)
    state, _ = _recomputed_state(state.support, weights, z_values,
                                 freqs, freqs_sq, sqrt_m)
    after4 = float(np.linalg.norm(state.residual))
    state = global_adjust(state, z_values, fs, cfg)
    after5 = float(np.linalg.norm(state.residual))
    if trace is not None:
        trace.residual_norms.append((before, after4, after5))
    return state


def _finalize(state: SupportState) -> Mixture:
    total = float(state.weights.sum())
    if not total > 0:
        raise RuntimeError("recovered weights sum to zero")
    return Mixture(state.support, state.weights / total)


def cl_omp(z: Sketch, fs: FrequencySet, cfg: RecoveryConfig,
           trace: RecoveryTrace | None = None) -> Mixture:
    """OMP-style greedy recovery (plain for K iterations, or with
    replacement for 2K iterations and hard thresholding)."""
    _check_pairing(z, fs)
    if cfg.algorithm not in (Algorithm.CLOMP, Algorithm.CLOMPR):
        raise ValueError("cl_omp handles the clomp and clompr algorithms")
    rng = np.random.default_rng(cfg.seed)
    freqs = fs.freqs
    freqs_sq = freqs * freqs
    sqrt_m = np.sqrt(fs.m)
    z_values = z.values

    state = SupportState([], np.zeros(0), z_values.copy())
    for _ in range(cfg.iterations):
        # Step 1: atom most correlated with the residual.
        atom = find_atom(state.residual, fs, fs.sigma2_bar, cfg.step1_restarts,
                         rng, max_inner_iters=cfg.max_inner_iters,
                         grad_tol=cfg.grad_tol)
        if trace is not None:
            trace.step1_calls += 1
        # Step 2: expand the support (zero weight keeps the residual exact).
        state = SupportState(state.support + [atom],
                             np.append(state.weights, 0.0), state.residual)
        # Step 3: prune back to K when the support overflows.
        if len(state.support) > cfg.K:
            state = hard_threshold(state, z_values, cfg.K, fs)
            if trace is not None:
                trace.threshold_calls += 1
        # Steps 4 and 5.
        state = _project_and_adjust(state, z_values, fs, cfg, freqs, freqs_sq,
                                    sqrt_m, trace)
    return _finalize(state)


def split_support(support) -> list:
    """Split each Gaussian into two along its dimension of highest variance.

    Each (mu, sigma^2) becomes the pair mu -/+ sigma_l e_l with unchanged
    variances, where l is the argmax variance (ties to the lowest index).
    """
    if not support:
        raise ValueError("empty support")
    out = []
    for p in support:
        l = int(np.argmax(p.variances))
        step = np.zeros(p.dim)
        step[l] = np.sqrt(p.variances[l])
        out.append(GaussianParams(p.mean - step, p.variances))
        out.append(GaussianParams(p.mean + step, p.variances))
    return out


def cl_split(z: Sketch, fs: FrequencySet, cfg: RecoveryConfig,
             trace: RecoveryTrace | None = None) -> Mixture:
    """Hierarchical-splitting recovery with ceil(log2 K) doubling rounds."""
    _check_pairing(z, fs)
    if cfg.algorithm != Algorithm.SPLIT:
        raise ValueError("cl_split handles the split algorithm")
    rng = np.random.default_rng(cfg.seed)
    freqs = fs.freqs
    freqs_sq = freqs * freqs
    sqrt_m = np.sqrt(fs.m)
    z_values = z.values

    atom = find_atom(z_values, fs, fs.sigma2_bar, cfg.step1_restarts, rng,
                     max_inner_iters=cfg.max_inner_iters, grad_tol=cfg.grad_tol)
    if trace is not None:
        trace.step1_calls += 1
    state, _ = _recomputed_state([atom], np.zeros(1), z_values,
                                 freqs, freqs_sq, sqrt_m)

    rounds = math.ceil(math.log2(cfg.K)) if cfg.K > 1 else 0
    if rounds == 0:
        state = _project_and_adjust(state, z_values, fs, cfg, freqs, freqs_sq,
                                    sqrt_m, trace)
    for _ in range(rounds):
        support = split_support(state.support)
        weights = np.repeat(state.weights / 2.0, 2)
        state, _ = _recomputed_state(support, weights, z_values,
                                     freqs, freqs_sq, sqrt_m)
        if len(state.support) > cfg.K:
            state = hard_threshold(state, z_values, cfg.K, fs)
            if trace is not None:
                trace.threshold_calls += 1
        state = _project_and_adjust(state, z_values, fs, cfg, freqs, freqs_sq,
                                    sqrt_m, trace)
    return _finalize(state)


def estimate(z: Sketch, fs: FrequencySet, cfg: RecoveryConfig,
             trace: RecoveryTrace | None = None) -> Mixture:
    """Dispatch to the decoder selected by the config."""
    if cfg.algorithm == Algorithm.SPLIT:
        return cl_split(z, fs, cfg, trace)
    return cl_omp(z, fs, cfg, trace)
