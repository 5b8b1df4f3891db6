"""Pointwise coefficient functionals and their radial envelopes.

For a model centred at ``x0``::

    A(x) = 1/2 tr sigma sigma^T
    B(x) = <x - x0, b(x)>
    C(x) = |sigma(x)^T (x - x0)|^2 / |x - x0|^2

``gamma(r)`` is the infimum of C over the sphere ``|x - x0| = r``, ``iota(r)``
the supremum of ``(2A - C + 2B) / C`` and ``I(r)`` the integral of
``iota(s)/s`` from r0.
"""
from __future__ import annotations

import csv
import hashlib
import io
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from scipy.special import ndtri
from scipy.stats import qmc

from .model import ModelSpec


class EllipticityError(ValueError):
    """sigma sigma^T degenerates in a direction on a sphere outside the central ball."""

    def __init__(self, message, witness):
        self.witness = np.asarray(witness, dtype=float)
        super().__init__(f"{message}; witness x={self.witness.tolist()}")


@dataclass(frozen=True)
class SphereOptConfig:
    n_samples: int = 256
    n_refine: int = 8
    tol: float = 1e-10
    seed: int = 0
    max_iter: int = 400

    def __post_init__(self):
        if self.n_samples < 2:
            raise ValueError("n_samples must be >= 2")
        if not self.tol > 0:
            raise ValueError("tol must be positive")


# ------------------------------------------------------------ pointwise functionals

def coeff_A(m: ModelSpec, X) -> np.ndarray:
    S = m.diffusion_at(X)
    return 0.5 * np.einsum("kij,kij->k", S, S)


def coeff_B(m: ModelSpec, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    return np.einsum("ki,ki->k", X - m.center, m.drift_at(X))


def coeff_C(m: ModelSpec, X) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = X - m.center
    nrm2 = np.einsum("ki,ki->k", Y, Y)
    if np.any(nrm2 == 0):
        raise ValueError("C is undefined at the centre x0")
    S = m.diffusion_at(X)
    v = np.einsum("kij,ki->kj", S, Y)
    return np.einsum("kj,kj->k", v, v) / nrm2


def _functionals(m: ModelSpec, X):
    """A, B, C at the rows of X with one pass over the coefficients."""
    Y = X - m.center
    nrm2 = np.einsum("ki,ki->k", Y, Y)
    S = m.diffusion_at(X)
    A = 0.5 * np.einsum("kij,kij->k", S, S)
    B = np.einsum("ki,ki->k", Y, m.drift_at(X))
    v = np.einsum("kij,ki->kj", S, Y)
    C = np.einsum("kj,kj->k", v, v) / nrm2
    return A, B, C


def _balance(A, B, C):
    return (2 * A - C + 2 * B) / C


# ------------------------------------------------------------------ sphere search

def sphere_directions(d: int, n: int, seed: int) -> np.ndarray:
    """Low-discrepancy unit vectors: scrambled Sobol points pushed through the normal quantile."""
    if d == 1:
        return np.array([[1.0], [-1.0]])
    rng = np.random.Generator(np.random.Philox(seed))
    u = qmc.Sobol(d, scramble=True, seed=rng).random(n)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    g = ndtri(u)
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def _sphere_min(objective, centre, radii, dirs, cfg):
    """Minimise ``objective`` over each sphere ``|x - centre| = r``.

    Returns (values, witnesses, residuals, sampled) where ``sampled`` holds the
    raw sample values (one row per radius).
    """
    radii = np.asarray(radii, dtype=float)
    M, d = len(radii), len(centre)
    P = centre + radii[:, None, None] * dirs[None, :, :]
    vals = objective(P.reshape(-1, d)).reshape(M, -1)
    if d == 1:
        k = np.argmin(vals, axis=1)
        return vals[np.arange(M), k], P[np.arange(M), k], np.zeros(M), vals

    k = min(cfg.n_refine, dirs.shape[0])
    top = np.argsort(vals, axis=1, kind="stable")[:, :k]
    U = dirs[top]  # (M, k, d)
    best = np.take_along_axis(vals, top, axis=1)
    step = np.full((M, k), 0.1)
    moves = np.concatenate([np.eye(d), -np.eye(d)])  # (2d, d)
    for _ in range(cfg.max_iter):
        active = step >= cfg.tol
        if not active.any():
            break
        trial = U[:, :, None, :] + step[:, :, None, None] * moves[None, None, :, :]
        trial /= np.linalg.norm(trial, axis=-1, keepdims=True)
        pts = centre + radii[:, None, None, None] * trial
        tv = objective(pts.reshape(-1, d)).reshape(M, k, 2 * d)
        j = np.argmin(tv, axis=2)
        cand = np.take_along_axis(tv, j[..., None], axis=2)[..., 0]
        better = active & (cand < best)
        U = np.where(better[..., None], np.take_along_axis(trial, j[..., None, None], axis=2)[:, :, 0, :], U)
        best = np.where(better, cand, best)
        step = np.where(active & ~better, step / 2, step)
    i = np.argmin(best, axis=1)
    rows = np.arange(M)
    wit = centre + radii[:, None] * U[rows, i]
    return best[rows, i], wit, step[rows, i], vals


def _check_positive(C, P):
    bad = ~(C > 0)
    if bad.any():
        k = np.unravel_index(np.argmax(bad), bad.shape)
        raise EllipticityError("sigma sigma^T is not positive definite", P[k])


def sphere_extrema(m: ModelSpec, radii, cfg: SphereOptConfig = SphereOptConfig()):
    """gamma and iota at each radius, with witnesses and refinement residuals."""
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    if np.any(radii <= 0):
        raise ValueError("radii must be positive")
    centre = m.center
    dirs = sphere_directions(m.d, cfg.n_samples, cfg.seed)

    # the sampled C values double as an (A5) screen
    P = centre + radii[:, None, None] * dirs[None, :, :]
    A, B, C = _functionals(m, P.reshape(-1, m.d))
    _check_positive(C.reshape(len(radii), -1), P)

    def c_obj(X):
        _, _, c = _functionals(m, X)
        _check_positive(c, X)
        return c

    def neg_balance(X):
        a, b, c = _functionals(m, X)
        _check_positive(c, X)
        return -_balance(a, b, c)

    gamma, gwit, gres, _ = _sphere_min(c_obj, centre, radii, dirs, cfg)
    negi, iwit, ires, _ = _sphere_min(neg_balance, centre, radii, dirs, cfg)
    if np.any(gamma <= 0):
        k = int(np.argmax(gamma <= 0))
        raise EllipticityError("gamma is not positive", gwit[k])
    return {
        "gamma": gamma, "iota": -negi,
        "gamma_witness": gwit, "iota_witness": iwit,
        "residual": np.maximum(gres, ires),
        "n_samples": dirs.shape[0],
    }


def gamma_at(m: ModelSpec, r: float, cfg: SphereOptConfig = SphereOptConfig()) -> float:
    """Infimum of C over the sphere of radius ``r`` about x0."""
    if r < m.r0:
        raise ValueError("gamma is only defined for r >= r0")
    return float(sphere_extrema(m, [r], cfg)["gamma"][0])


def iota_at(m: ModelSpec, r: float, cfg: SphereOptConfig = SphereOptConfig()) -> float:
    """Supremum of (2A - C + 2B)/C over the sphere of radius ``r`` about x0."""
    if r < m.r0:
        raise ValueError("iota is only defined for r >= r0")
    return float(sphere_extrema(m, [r], cfg)["iota"][0])


# ------------------------------------------------------------------ radial profile

@dataclass(frozen=True)
class RadialProfile:
    """gamma, iota and I tabulated on a log-spaced radial grid starting at r0.

    ``I`` is normalised so that ``I[0] == 0`` at ``grid[0]``.
    """
    r0: float
    grid: np.ndarray
    gamma: np.ndarray
    iota: np.ndarray
    I: np.ndarray
    residual: np.ndarray
    n_samples: int
    cfg: SphereOptConfig = field(default_factory=SphereOptConfig)

    @property
    def rmax(self) -> float:
        return float(self.grid[-1])

    @property
    def t(self) -> np.ndarray:
        return np.log(self.grid)

    @property
    def h(self) -> float:
        return float(np.log(self.grid[1] / self.grid[0]))

    def I_at(self, r) -> np.ndarray:
        """I between nodes: cubic Hermite in log r using dI/dlog r = iota."""
        r = np.asarray(r, dtype=float)
        if np.any((r < self.grid[0] * (1 - 1e-12)) | (r > self.grid[-1] * (1 + 1e-12))):
            raise ValueError("radius outside the tabulated range")
        spline = CubicHermiteSpline(self.t, self.I, self.iota)
        return spline(np.log(r))

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.grid, self.gamma, self.iota, self.I):
            h.update(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return h.hexdigest()

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["r", "gamma", "iota", "I", "opt_residual"])
        for row in zip(self.grid, self.gamma, self.iota, self.I, self.residual):
            w.writerow([f"{v:.17g}" for v in row])
        return buf.getvalue()


def integrate_iota(t: np.ndarray, iota: np.ndarray) -> np.ndarray:
    """Cumulative integral of iota(s)/s ds = iota dt with I = 0 at the first node.

    ``t`` must be uniformly spaced.  Each interval uses the cubic through the
    four nearest nodes (fourth order); the error of I at large r is an
    absolute error in the exponent, so third-order rules are not enough.
    """
    t = np.asarray(t, dtype=float)
    f = np.asarray(iota, dtype=float)
    if len(t) < 4:
        raise ValueError("need at least four nodes")
    h = (t[-1] - t[0]) / (len(t) - 1)
    seg = np.empty(len(t) - 1)
    seg[1:-1] = (-f[:-3] + 13 * f[1:-2] + 13 * f[2:-1] - f[3:]) / 24
    seg[0] = (9 * f[0] + 19 * f[1] - 5 * f[2] + f[3]) / 24
    seg[-1] = (9 * f[-1] + 19 * f[-2] - 5 * f[-3] + f[-4]) / 24
    return np.concatenate([[0.0], np.cumsum(seg * h)])


def _profile_from_nodes(m, grid, cfg, r_first):
    ext = sphere_extrema(m, grid, cfg)
    t = np.log(grid)
    return RadialProfile(
        r0=r_first, grid=grid, gamma=ext["gamma"], iota=ext["iota"],
        I=integrate_iota(t, ext["iota"]), residual=ext["residual"],
        n_samples=ext["n_samples"], cfg=cfg,
    )


def build_profile(m: ModelSpec, rmax: float, M: int = 1025,
                  cfg: SphereOptConfig = SphereOptConfig(), r_start: float | None = None) -> RadialProfile:
    """Tabulate gamma, iota and I on ``M`` log-spaced nodes from r0 (or ``r_start``) to ``rmax``."""
    r_first = m.r0 if r_start is None else float(r_start)
    if not rmax > r_first:
        raise ValueError("rmax must exceed the first radius")
    if M < 16:
        raise ValueError("need at least 16 nodes")
    grid = r_first * np.exp(np.linspace(0.0, np.log(rmax / r_first), M))
    grid[0], grid[-1] = r_first, rmax
    return _profile_from_nodes(m, grid, cfg, r_first)


def extend_profile(p: RadialProfile, m: ModelSpec, rmax: float) -> RadialProfile:
    """Append nodes at the existing log spacing until the grid reaches ``rmax``.

    Existing node values are kept; I is recomputed over the whole grid.
    """
    if rmax <= p.rmax:
        return p
    h = p.h
    n_new = int(np.ceil(np.log(rmax / p.rmax) / h - 1e-9))
    t_new = np.log(p.rmax) + h * np.arange(1, n_new + 1)
    new_grid = np.exp(t_new)
    ext = sphere_extrema(m, new_grid, p.cfg)
    grid = np.concatenate([p.grid, new_grid])
    iota = np.concatenate([p.iota, ext["iota"]])
    return replace(
        p, grid=grid,
        gamma=np.concatenate([p.gamma, ext["gamma"]]),
        iota=iota, I=integrate_iota(np.log(grid), iota),
        residual=np.concatenate([p.residual, ext["residual"]]),
    )
