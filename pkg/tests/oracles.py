"""Independent oracles used by the test suite.

Everything here is deliberately implemented without touching the library
code paths it checks: finite differences for gradients, quadrature for
densities and distances, golden-section search for scalar fits, brute-force
active-set enumeration for nonnegative least squares, and extended-precision
arithmetic for the bound formulas.
"""

from __future__ import annotations

import numpy as np
from scipy.integrate import quad


def central_fd(fun, x, step=1e-6):
    """Central finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty(x.size)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (fun(hi) - fun(lo)) / (2 * step)
    return g


def central_fd_complex(fun, x, step=1e-6):
    """Central finite differences of a complex-valued scalar function."""
    x = np.asarray(x, dtype=np.float64)
    g = np.empty(x.size, dtype=np.complex128)
    for i in range(x.size):
        hi = x.copy()
        lo = x.copy()
        hi[i] += step
        lo[i] -= step
        g[i] = (fun(hi) - fun(lo)) / (2 * step)
    return g


def rel_err(approx, exact):
    approx = np.asarray(approx)
    exact = np.asarray(exact)
    denom = max(float(np.linalg.norm(exact)), 1e-12)
    return float(np.linalg.norm(approx - exact)) / denom


def golden_section(fun, lo, hi, iters=200):
    """Plain golden-section minimization of a unimodal scalar function."""
    invphi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
        if b - a < 1e-14 * max(1.0, abs(a) + abs(b)):
            break
    return 0.5 * (a + b)


def adapted_radius_mass(r_hi=np.inf):
    """High-accuracy integral of the unnormalized adapted-radius density."""
    val, _ = quad(lambda r: np.sqrt(r * r + 0.25 * r**4) * np.exp(-0.5 * r * r),
                  0.0, r_hi, epsabs=1e-13, epsrel=1e-13, limit=500)
    return val


def adapted_radius_cdf_oracle(points):
    """Adaptive-quadrature CDF of the adapted radius law at given points."""
    total = adapted_radius_mass()
    points = np.atleast_1d(points)
    out = np.empty(points.size)
    for i, r in enumerate(points):
        out[i] = adapted_radius_mass(r) / total
    return out


def gauss_pdf_1d(x, mu, var):
    return np.exp(-0.5 * (x - mu) ** 2 / var) / np.sqrt(2 * np.pi * var)


def tv_distance_1d(mu1, v1, mu2, v2):
    """Total variation distance (L1 norm of density difference) by quadrature."""
    lo = min(mu1 - 40 * np.sqrt(v1), mu2 - 40 * np.sqrt(v2))
    hi = max(mu1 + 40 * np.sqrt(v1), mu2 + 40 * np.sqrt(v2))
    val, _ = quad(lambda x: abs(gauss_pdf_1d(x, mu1, v1) - gauss_pdf_1d(x, mu2, v2)),
                  lo, hi, limit=500, points=[mu1, mu2])
    return val


def nnls_enumeration(A, b):
    """Exhaustive active-set search for argmin_{x >= 0} ||A x - b||.

    Every support whose unconstrained least-squares solution is nonnegative
    is a candidate; the optimum is the feasible candidate with the smallest
    residual (the empty support is always feasible).
    """
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    r = A.shape[1]
    best_x = np.zeros(r)
    best_res = float(np.linalg.norm(b))
    for mask in range(1, 2**r):
        cols = [j for j in range(r) if mask >> j & 1]
        sol, *_ = np.linalg.lstsq(A[:, cols], b, rcond=None)
        if np.any(sol < 0):
            continue
        x = np.zeros(r)
        x[cols] = sol
        res = float(np.linalg.norm(A @ x - b))
        if res < best_res - 1e-12:
            best_res, best_x = res, x
    return best_x


def gradient_descent(fun_grad, x0, lr=1e-3, iters=200_000):
    """Slow fixed-step descent with backtracking; reference optimizer."""
    x = np.asarray(x0, dtype=np.float64).copy()
    f, g = fun_grad(x)
    for _ in range(iters):
        step = lr
        while True:
            x_new = x - step * g
            f_new, g_new = fun_grad(x_new)
            if f_new <= f or step < 1e-18:
                break
            step /= 2
        if abs(f - f_new) < 1e-16 and np.linalg.norm(g_new) < 1e-10:
            return x_new
        x, f, g = x_new, f_new, g_new
    return x


def mmd_gaussian_kernel_closed_form(mu1, v1, mu2, v2, sigma2_design):
    """Closed-form MMD between two diagonal Gaussians when the frequency law
    is Gaussian N(0, I / sigma2_design).

    Built from the Gaussian product identity: for z ~ N(delta, S) and
    per-dimension frequency variance s2, E cos(w.z) exp(-...) factorizes into
    prod_l (1 + s2 S_l)^(-1/2) exp(-s2 delta_l^2 / (2 (1 + s2 S_l))).
    """
    mu1, v1 = np.asarray(mu1, float), np.asarray(v1, float)
    mu2, v2 = np.asarray(mu2, float), np.asarray(v2, float)
    s2 = 1.0 / float(sigma2_design)

    def pair_term(mu_a, va, mu_b, vb):
        S = va + vb
        delta = mu_a - mu_b
        scale = np.prod(1.0 / np.sqrt(1.0 + s2 * S))
        return scale * np.exp(-0.5 * s2 * np.sum(delta**2 / (1.0 + s2 * S)))

    gamma2 = (pair_term(mu1, v1, mu1, v1) + pair_term(mu2, v2, mu2, v2)
              - 2.0 * pair_term(mu1, v1, mu2, v2))
    return np.sqrt(max(gamma2, 0.0))
