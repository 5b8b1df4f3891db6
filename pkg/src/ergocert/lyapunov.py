"""Explicit Lyapunov function for certified models, generator evaluation and drift checks.

For r >= r0 the radial profile is

    Lbar(r) = int_{r0}^r exp(-I(u)) int_u^inf exp(I(v)) / gamma(v) dv du

with ``Lbar' = exp(-I) J`` and ``Lbar'' = -iota Lbar' / r - 1/gamma``.  Inside
the ball of radius r1 the profile is replaced by a polynomial blend
``a0 + a4 r^4 + a5 r^5`` that matches value, slope and curvature at r1, so the
field ``L(x) = Lbar(|x - x0|) + 1`` is C^2 on the whole certified range.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import BPoly
from scipy.optimize import minimize, minimize_scalar

from .certify import Certificate, Verdict, _jsonable, _log_cell, classify_tail, deriv4, nested_tables
from .model import ModelSpec
from .radial import RadialProfile, _functionals, build_profile, extend_profile, sphere_directions


class LyapunovError(ValueError):
    pass


def c1_from_lambda(lam: float) -> float:
    """c1 = 1 / (2 (Lambda + 1))."""
    if not (lam >= 0 and math.isfinite(lam)):
        raise ValueError("Lambda must be finite and non-negative")
    return 1.0 / (2.0 * (lam + 1.0))


# ------------------------------------------------------------------ the function

@dataclass(frozen=True)
class LyapunovFn:
    x0: np.ndarray
    r0: float
    r1: float
    lam: float
    r: np.ndarray  # radial nodes, r0 .. rmax
    lbar: np.ndarray
    lbar1: np.ndarray
    lbar2: np.ndarray
    blend: tuple  # (a0, a4, a5)
    offset: float = 1.0

    @property
    def rmax(self) -> float:
        return float(self.r[-1])

    @property
    def _spline(self):
        # cached lazily; frozen dataclass so stash on the instance dict
        sp = self.__dict__.get("_bp")
        if sp is None:
            yi = np.column_stack([self.lbar, self.lbar1, self.lbar2])
            sp = BPoly.from_derivatives(self.r, yi)
            object.__setattr__(self, "_bp", (sp, sp.derivative(), sp.derivative(2)))
            sp = self.__dict__["_bp"]
        return sp

    def lbar_at(self, r):
        """(Lbar, Lbar', Lbar'') by quintic Hermite interpolation, r in [r0, rmax]."""
        r = np.asarray(r, dtype=float)
        if np.any((r < self.r0 * (1 - 1e-12)) | (r > self.rmax * (1 + 1e-12))):
            raise ValueError("radius outside the tabulated range")
        f, f1, f2 = self._spline
        return f(r), f1(r), f2(r)

    def radial(self, r):
        """Profile ell(r) of L = ell(|x - x0|) with ell' and ell''/ and ell'/r.

        Returns (ell, ell', ell'', ell'/r); the last is finite at r = 0.
        """
        r = np.atleast_1d(np.asarray(r, dtype=float))
        if np.any(r < 0) or np.any(r > self.rmax * (1 + 1e-12)):
            raise ValueError(f"L is defined on |x - x0| <= {self.rmax!r}")
        a0, a4, a5 = self.blend
        out = [np.empty_like(r) for _ in range(4)]
        inner = r <= self.r1
        ri = r[inner]
        out[0][inner] = a0 + a4 * ri ** 4 + a5 * ri ** 5
        out[1][inner] = 4 * a4 * ri ** 3 + 5 * a5 * ri ** 4
        out[2][inner] = 12 * a4 * ri ** 2 + 20 * a5 * ri ** 3
        out[3][inner] = 4 * a4 * ri ** 2 + 5 * a5 * ri ** 3
        ro = r[~inner]
        if ro.size:
            f, f1, f2 = self.lbar_at(ro)
            out[0][~inner] = f + self.offset
            out[1][~inner] = f1
            out[2][~inner] = f2
            out[3][~inner] = f1 / ro
        return tuple(out)

    def _split(self, X):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        Y = X - self.x0
        r = np.linalg.norm(Y, axis=1)
        return X, Y, r

    def value(self, X) -> np.ndarray:
        _, _, r = self._split(X)
        return self.radial(r)[0]

    def value_unshifted(self, X) -> np.ndarray:
        """L - offset, evaluated without adding the offset (keeps full relative precision)."""
        _, _, r = self._split(X)
        out = np.empty_like(r)
        a0, a4, a5 = self.blend
        inner = r <= self.r1
        out[inner] = (a0 - self.offset) + a4 * r[inner] ** 4 + a5 * r[inner] ** 5
        if (~inner).any():
            out[~inner] = self.lbar_at(r[~inner])[0]
        return out

    def grad(self, X) -> np.ndarray:
        _, Y, r = self._split(X)
        _, _, _, q = self.radial(r)
        return q[:, None] * Y

    def hess(self, X) -> np.ndarray:
        """Hessian ell'' u u^T + (ell'/r)(I - u u^T) with u = (x - x0)/r."""
        _, Y, r = self._split(X)
        _, _, f2, q = self.radial(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            U = np.where(r[:, None] > 0, Y / r[:, None], 0.0)
        d = Y.shape[1]
        P = np.einsum("ki,kj->kij", U, U)
        return f2[:, None, None] * P + q[:, None, None] * (np.eye(d)[None] - P)

    def to_csv(self, m: ModelSpec | None = None, n_dirs: int = 64) -> str:
        bound = np.full(len(self.r), np.nan)
        if m is not None:
            ext = self.r >= self.r1
            bound[ext] = sphere_sup_radial_generator(self, m, self.r[ext], n_dirs)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "lbar", "lbar1", "lbar2", "radial_generator_bound"])
        for row in zip(self.r, self.lbar, self.lbar1, self.lbar2, bound):
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()


def _blend(r1, V, V1, V2):
    """Coefficients of a0 + a4 r^4 + a5 r^5 matching (V, V1, V2) at r1."""
    a4 = (V1 / r1 - V2 / 4.0) / r1 ** 2
    a5 = (V1 - 4 * a4 * r1 ** 3) / (5 * r1 ** 4)
    a0 = V - a4 * r1 ** 4 - a5 * r1 ** 5
    return a0, a4, a5


def _blend_min(r1, a0, a4, a5):
    cands = [0.0, r1]
    if a5 != 0:
        rc = -4 * a4 / (5 * a5)
        if 0 < rc < r1:
            cands.append(rc)
    c = np.array(cands)
    return float(np.min(a0 + a4 * c ** 4 + a5 * c ** 5))


def build_lyapunov(p: RadialProfile, cert: Certificate, m: ModelSpec, r1: float | None = None) -> LyapunovFn:
    """Tabulate Lbar, Lbar', Lbar'' from the profile and attach the interior blend."""
    if cert.verdict != Verdict.FINITE:
        raise LyapunovError(f"certificate verdict is {cert.verdict.value}; a Lyapunov function needs FINITE")
    r1 = cert.r1 if r1 is None else float(r1)
    if not r1 > p.r0:
        raise ValueError("r1 must exceed r0")
    if r1 >= p.rmax:
        raise ValueError("r1 must lie inside the tabulated range")
    # one guard doubling keeps the asymptotic end value of R away from the table;
    # Lbar'' is a difference of O(1) terms and would amplify its error
    n = len(p.grid)
    guard = extend_profile(p, m, 2.0 * p.rmax)
    tab = nested_tables(guard)
    if not np.all(np.isfinite(tab.log_R[:n])):
        raise LyapunovError("inner integral is not finite on the profile")
    r = p.grid
    l1 = np.exp(np.log(r) + tab.log_R[:n] - np.log(p.gamma))  # exp(-I) J = r R / gamma
    l2 = -p.iota * l1 / r - 1.0 / p.gamma
    dr = np.diff(r)
    # trapezoid with the Euler-Maclaurin end correction (uses Lbar'')
    cell = 0.5 * dr * (l1[:-1] + l1[1:]) + dr ** 2 / 12.0 * (l2[:-1] - l2[1:])
    lbar = np.concatenate([[0.0], np.cumsum(cell)])

    tmp = LyapunovFn(m.center, p.r0, r1, cert.lambda_est, r, lbar, l1, l2, (0.0, 0.0, 0.0))
    V, V1, V2 = (float(v) for v in tmp.lbar_at(r1))
    blend = _blend(r1, V + 1.0, V1, V2)
    if _blend_min(r1, *blend) < 1.0:
        raise LyapunovError("interior blend drops below 1; choose a different r1")
    return LyapunovFn(m.center, p.r0, r1, cert.lambda_est, r, lbar, l1, l2, blend)


# ------------------------------------------------------------------ generator

def apply_generator(m: ModelSpec, f, X) -> np.ndarray:
    """<b, grad f> + 1/2 tr(sigma sigma^T hess f) at the rows of X.

    ``f`` must provide vectorised ``grad(X)`` (N, d) and ``hess(X)`` (N, d, d).
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    b = m.drift_at(X)
    S = m.diffusion_at(X)
    a = np.einsum("kij,klj->kil", S, S)
    return np.einsum("ki,ki->k", b, f.grad(X)) + 0.5 * np.einsum("kij,kji->k", a, f.hess(X))


def radial_generator(L: LyapunovFn, m: ModelSpec, X) -> np.ndarray:
    """1/2 C Lbar'' + Lbar'/(2r) (2A - C + 2B) from the pointwise functionals."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    r = np.linalg.norm(X - L.x0, axis=1)
    if np.any(r < L.r1 * (1 - 1e-12)):
        raise ValueError("radial_generator needs |x - x0| >= r1")
    A, B, C = _functionals(m, X)
    _, f1, f2 = L.lbar_at(r)
    return 0.5 * C * f2 + f1 / (2 * r) * (2 * A - C + 2 * B)


def sphere_sup_radial_generator(L: LyapunovFn, m: ModelSpec, radii, n_dirs: int = 64, seed: int = 0):
    """max over sampled directions of radial_generator at each radius."""
    radii = np.asarray(radii, dtype=float)
    dirs = sphere_directions(m.d, n_dirs, seed)
    out = np.empty(len(radii))
    for s in range(0, len(radii), 256):
        rr = radii[s:s + 256]
        P = L.x0 + rr[:, None, None] * dirs[None]
        g = radial_generator(L, m, P.reshape(-1, m.d)).reshape(len(rr), -1)
        out[s:s + 256] = g.max(axis=1)
    return out


# ------------------------------------------------------------------ constants and checks

def _ball_samples(x0, radius, n, seed, stratified=False):
    d = len(x0)
    rng = np.random.Generator(np.random.Philox(seed))
    if stratified:
        rad = radius * (np.arange(n) + rng.random(n)) / n
    else:
        rad = radius * rng.random(n) ** (1.0 / d)
    if d == 1:
        dirs = np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    else:
        g = rng.standard_normal((n, d))
        dirs = g / np.linalg.norm(g, axis=1, keepdims=True)
    return x0 + rad[:, None] * dirs


def lyapunov_constants(cert: Certificate, m: ModelSpec, L: LyapunovFn, r1: float | None = None,
                       n_samples: int = 4096, seed: int = 0) -> dict:
    """c1 from Lambda and a sampled c2 = max(0, sup over the closed r1-ball of G L + c1 L).

    The sampled supremum is refined by local ascent from the best samples.
    """
    if cert.verdict != Verdict.FINITE:
        raise LyapunovError("constants need a FINITE certificate")
    r1 = L.r1 if r1 is None else float(r1)
    c1 = c1_from_lambda(cert.lambda_est)
    X = _ball_samples(L.x0, r1, n_samples, seed)
    if m.d == 1:
        X = np.vstack([X, L.x0 + np.array([[0.0], [r1], [-r1]])])

    def objective(Z):
        return apply_generator(m, L, Z) + c1 * L.value(Z)

    vals = objective(X)
    order = np.argsort(-vals, kind="stable")[:4]
    best_val, best_x = float(vals[order[0]]), X[order[0]].copy()
    for k in order:
        x_start = X[k]
        if m.d == 1:
            y = float(x_start[0] - L.x0[0])
            lo, hi = (0.0, r1) if y >= 0 else (-r1, 0.0)
            res = minimize_scalar(lambda s: -objective(L.x0 + np.array([[s]]))[0],
                                  bounds=(lo, hi), method="bounded", options={"xatol": 1e-10})
            cand_x, cand_v = L.x0 + np.array([res.x]), -float(res.fun)
        else:
            def neg(z):
                y = z - L.x0
                n = np.linalg.norm(y)
                if n > r1:
                    z = L.x0 + y * (r1 / n)
                return -objective(z[None, :])[0]
            res = minimize(neg, x_start, method="Nelder-Mead",
                           options={"xatol": 1e-9, "fatol": 1e-12, "maxiter": 2000})
            y = res.x - L.x0
            n = np.linalg.norm(y)
            cand_x = L.x0 + (y * (r1 / n) if n > r1 else y)
            cand_v = float(objective(cand_x[None, :])[0])
        if cand_v > best_val:
            best_val, best_x = cand_v, np.asarray(cand_x, dtype=float)
    return {"c1": c1, "c2": max(0.0, best_val), "c2_witness": best_x.tolist(),
            "c2_samples": int(len(X)), "r1": r1}


def attach_constants(cert: Certificate, m: ModelSpec, n_samples: int = 4096, seed: int = 0):
    """Build L from the certificate's profile and fill in c2 (and its witness)."""
    L = build_lyapunov(cert.profile, cert, m)
    k = lyapunov_constants(cert, m, L, n_samples=n_samples, seed=seed)
    cert.c2, cert.c2_witness, cert.c2_samples = k["c2"], k["c2_witness"], k["c2_samples"]
    return L


@dataclass
class DriftReport:
    passed: bool
    max_violation: float
    witness_x: list
    n_samples: int
    c1: float
    c2: float
    r1: float
    r_test: float
    max_generator_exterior: float
    exterior_le_minus_half: bool

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["pass"] = d.pop("passed")
        return _jsonable(d)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def drift_check(m: ModelSpec, L: LyapunovFn, c1: float, c2: float, r1: float | None = None,
                n_samples: int = 10_000, r_test: float | None = None, seed: int = 0) -> DriftReport:
    """Check G L <= -c1 L + c2 1_C on points stratified in radius over [0, r_test].

    PASS iff every sample satisfies the inequality up to a slack of
    1e-8 (1 + |G L|).  Also reports whether the radial generator stays
    below -1/2 (same slack) at the exterior samples.
    """
    r1 = L.r1 if r1 is None else float(r1)
    r_test = L.rmax if r_test is None else min(float(r_test), L.rmax)
    X = _ball_samples(L.x0, r_test, n_samples, seed, stratified=True)
    G = apply_generator(m, L, X)
    r = np.linalg.norm(X - L.x0, axis=1)
    viol = G + c1 * L.value(X) - c2 * (r <= r1)
    slack = 1e-8 * (1 + np.abs(G))
    k = int(np.argmax(viol))
    ext = r >= L.r1
    gmax, half_ok = -math.inf, True
    if ext.any():
        rg = radial_generator(L, m, X[ext])
        gmax = float(rg.max())
        half_ok = bool(np.all(rg <= -0.5 + 1e-8 * (1 + np.abs(rg))))
    return DriftReport(
        passed=bool(np.all(viol <= slack)), max_violation=float(viol[k]), witness_x=X[k].tolist(),
        n_samples=int(n_samples), c1=float(c1), c2=float(c2), r1=r1, r_test=r_test,
        max_generator_exterior=gmax, exterior_le_minus_half=half_ok,
    )


# ------------------------------------------------------------------ escape bound

def _escape_profile(m, r_start, rcap, M):
    return build_profile(m, rcap, M, r_start=r_start)


def escape_bound(m: ModelSpec, x, eps: float | None = None, rcap: float | None = None,
                 extrapolate: bool = True, nodes: int = 2049) -> float:
    """Upper bound on the probability of never entering the r0-ball from x.

    Lbar(r) = int_{r0 - eps}^r exp(-I(u)) du; the bound is
    min(1, Lbar(|x - x0|) / Lbar(inf)), and 0 when Lbar(inf) diverges.  With
    ``extrapolate`` False the denominator is truncated at ``rcap``.
    """
    x = np.asarray(x, dtype=float).reshape(m.d)
    eps = m.r0 / 2 if eps is None else float(eps)
    if not 0 < eps < m.r0:
        raise ValueError("eps must lie in (0, r0)")
    rs = m.r0 - eps
    rx = float(np.linalg.norm(x - m.center))
    if rx < rs * (1 - 1e-12):
        raise ValueError("x must satisfy |x - x0| >= r0 - eps")
    if rx <= rs:
        return 0.0
    rcap = 64 * m.r0 if rcap is None else float(rcap)
    if rx > rcap:
        if not extrapolate:
            raise ValueError("x lies beyond rcap")
        rcap = 2 * rx
    p = _escape_profile(m, rs, rcap, nodes)
    t, h = p.t, p.h
    P = -p.I + t  # log of the integrand in t
    dP = -p.iota + 1.0
    d2P = deriv4(dP, h)
    cells = _log_cell(P[:-1], P[1:], dP[:-1], dP[1:], h, 1.0, d2P[:-1], d2P[1:])
    log_cum = np.concatenate([[-math.inf], np.logaddexp.accumulate(P[:-1] + cells)])

    # numerator at rx
    tx = math.log(rx)
    k = min(max(int(np.searchsorted(t, tx, side="right")) - 1, 0), len(t) - 2)
    frac = (tx - t[k]) / h
    log_num = float(np.logaddexp(log_cum[k], P[k] + float(_log_cell(P[k], P[k + 1], dP[k], dP[k + 1], h, frac, d2P[k], d2P[k + 1]))))

    log_den = float(log_cum[-1])
    if extrapolate:
        dec = p.grid >= p.grid[-1] / 10 * (1 - 1e-12)
        k0 = max(int(np.argmax(dec)) - 1, 0)
        tail = classify_tail(p.grid[k0:], -p.I[k0:])
        if tail.divergent:
            return 0.0
        log_den = float(np.logaddexp(log_den, tail.log_tail_integral(p.rmax)))
    if not math.isfinite(log_den):
        return 0.0
    return float(min(1.0, math.exp(log_num - log_den)))
