"""Independent reference values built from closed-form radial functionals.

Nothing here imports the package under test.
"""
import math

import mpmath as mp
import numpy as np
from scipy.special import logsumexp


# closed-form iota(r), log gamma(r) for the one-dimensional catalog models
def ex1_radial(K, kappa):
    return (lambda r: -2 * K * r ** (kappa + 1)), (lambda r: np.zeros_like(r)), 1.0


def ex2_radial(K, kappa, rho):
    return (lambda r: -2 * K * r ** (kappa + 1) * (np.cos(r) + rho)), (lambda r: np.zeros_like(r)), 1.0


def ex3_radial(alpha, beta, c):
    def iota(r):
        return np.full_like(r, -(1 - 2 * beta) / alpha)

    def log_gamma(r):
        return -2 * beta * math.log(c) + (2 * beta / alpha) * np.log(r)

    return iota, log_gamma, 2.0


def brute_lambda(iota, log_gamma, r0, n_outer=10_000, n_inner=10_000, r_top=1e8, chunk=50):
    """Nested log-Riemann sum for Lambda.

    Outer nodes are log-uniform on [r0, r_top]; for each u the inner nodes are
    u + delta with delta log-uniform on [1e-8 s, 1e8 u], where
    s = u / max(1, |iota(u)|) is the local decay length of the integrand.  I(v) - I(u) is
    accumulated along the offsets by the trapezoid rule so that no large
    exponents are ever subtracted.
    """
    u = np.geomspace(r0, r_top, n_outer)
    log_F = np.empty(n_outer)
    for s in range(0, n_outer, chunk):
        uu = u[s:s + chunk, None]
        scale = uu / np.maximum(1.0, np.abs(iota(uu)))
        g = np.linspace(0.0, 1.0, n_inner)[None, :]
        delta = np.exp(np.log(1e-8 * scale) + g * (np.log(1e8 * uu) - np.log(1e-8 * scale)))
        v = uu + delta
        rate = iota(v) / v  # dI/dv
        rate0 = iota(uu) / uu
        seg = np.diff(delta, axis=1) * 0.5 * (rate[:, 1:] + rate[:, :-1])
        dI = np.concatenate([0.5 * (rate0 + rate[:, :1]) * delta[:, :1], seg], axis=1).cumsum(axis=1)
        lf = dI - log_gamma(v)
        # trapezoid weights on the delta nodes plus the leading piece [0, delta_0]
        w = np.empty_like(delta)
        w[:, 1:-1] = 0.5 * (delta[:, 2:] - delta[:, :-2])
        w[:, 0] = 0.5 * (delta[:, 1] - delta[:, 0]) + 0.5 * delta[:, 0]
        w[:, -1] = 0.5 * (delta[:, -1] - delta[:, -2])
        lead = -log_gamma(uu)[:, 0] + np.log(0.5 * delta[:, 0])
        with np.errstate(over="ignore"):
            log_F[s:s + chunk] = np.logaddexp(lead, logsumexp(lf + np.log(w), axis=1))
    # outer trapezoid in log u, du = u dlog u
    lu = np.log(u)
    hw = np.diff(lu)
    wo = np.zeros(n_outer)
    wo[1:] += 0.5 * hw
    wo[:-1] += 0.5 * hw
    with np.errstate(over="ignore"):
        return float(np.exp(logsumexp(log_F + lu + np.log(wo))))


# ------------------------------------------------------------- polynomial drift, mpmath

def ex1_log_J(u, K=1.0, kappa=2.0):
    """log int_u^inf exp(I(v)) dv for I(v) = c (1 - v^(kappa+1)), c = 2K/(kappa+1).

    int_u^inf e^{-c v^p} dv = c^{-1/p} / p * Gamma(1/p, c u^p) with p = kappa + 1.
    """
    mp.mp.dps = 40
    p = mp.mpf(kappa) + 1
    c = 2 * mp.mpf(K) / p
    val = mp.e ** c * c ** (-1 / p) / p * mp.gammainc(1 / p, c * mp.mpf(u) ** p)
    return float(mp.log(val))


def ex1_lambda(K=1.0, kappa=2.0):
    """Lambda for the polynomial drift model (d = 1) from the incomplete-gamma inner integral."""
    mp.mp.dps = 30
    p = mp.mpf(kappa) + 1
    c = 2 * mp.mpf(K) / p

    def F(u):
        z = c * mp.mpf(u) ** p
        return mp.e ** z * c ** (-1 / p) / p * mp.gammainc(1 / p, z)

    top = mp.mpf(2) ** 20
    body = mp.quad(F, [1] + [2 ** j for j in range(1, 21)])
    # F(u) ~ 1/(2K u^kappa) far out
    tail = 1 / (2 * mp.mpf(K) * (kappa - 1) * top ** (kappa - 1))
    return float(body + tail)


# ------------------------------------------------------------- generator by FD

def fd_generator(drift, diffusion, f, x):
    """<b, grad f> + 1/2 tr(a hess f) by central differences with h = 1e-5 (1 + |x|).

    ``drift(x)`` -> (d,), ``diffusion(x)`` -> (d, n), ``f(x)`` -> scalar.
    Returns the estimate and |<b, grad f>| + |1/2 tr(a hess f)| as an error scale.
    """
    x = np.asarray(x, dtype=float)
    d = len(x)
    h = 1e-5 * (1 + np.linalg.norm(x))
    E = np.eye(d) * h
    f0 = f(x)
    g = np.array([(f(x + E[i]) - f(x - E[i])) / (2 * h) for i in range(d)])
    H = np.empty((d, d))
    for i in range(d):
        for j in range(d):
            if i == j:
                H[i, i] = (f(x + E[i]) - 2 * f0 + f(x - E[i])) / h ** 2
            else:
                H[i, j] = (f(x + E[i] + E[j]) - f(x + E[i] - E[j]) - f(x - E[i] + E[j])
                           + f(x - E[i] - E[j])) / (4 * h * h)
    b = drift(x)
    S = diffusion(x)
    drift_part = float(b @ g)
    diff_part = float(0.5 * np.trace(S @ S.T @ H))
    return drift_part + diff_part, abs(drift_part) + abs(diff_part)
