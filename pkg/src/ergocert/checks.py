"""Sample-based falsification of the standing assumptions (A1)-(A5).

A check can prove a violation by exhibiting a witness, but it can never prove
that an assumption holds.  Every report therefore carries the status
NOT_FALSIFIED or VIOLATED, never "holds".

All decisions are existential over a nested sample: the first N draws for a
seed are a prefix of the first 2N draws, and each decision asks whether some
sample (or some refinement chain started from a sample) violates.  A larger
budget can thus only add violations.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .certify import _jsonable
from .model import ModelSpec, eval_masked as _evaluate

BANNER = ("falsification only: NOT_FALSIFIED means no sampled counterexample was found, "
          "not that the assumption holds")

SLOPE_LIMIT = 0.5
REFINE_LEVELS = 20
SLOPE_LEVELS = 5
EIG_RTOL = 1e-12


class Status(str, Enum):
    NOT_FALSIFIED = "NOT_FALSIFIED"
    VIOLATED = "VIOLATED"


@dataclass
class AssumptionReport:
    assumption: str
    status: Status
    witness: dict | None
    constants: dict
    n_samples: int
    seed: int
    banner: str = BANNER
    meta: dict = field(default_factory=dict)

    @property
    def violated(self) -> bool:
        return self.status is Status.VIOLATED

    def to_dict(self) -> dict:
        return _jsonable({
            "assumption": self.assumption, "status": self.status.value,
            "banner": self.banner, "witness": self.witness, "constants": self.constants,
            "n_samples": self.n_samples, "seed": self.seed, "meta": self.meta,
        })

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


# ------------------------------------------------------------------ sampling and evaluation

def _rng(seed: int, tag: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, tag])))


def _directions(n: int, d: int, seed: int, tag: int) -> np.ndarray:
    rng = _rng(seed, tag)
    if d == 1:
        return np.where(rng.random(n) < 0.5, -1.0, 1.0)[:, None]
    g = rng.standard_normal((n, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def ball_samples(center, radius: float, n: int, seed: int, tag: int = 0) -> np.ndarray:
    """Uniform points in a ball; radii and directions use separate prefix-stable streams."""
    c = np.asarray(center, dtype=float)
    rad = radius * _rng(seed, 2 * tag + 1).random(n) ** (1.0 / len(c))
    return c + rad[:, None] * _directions(n, len(c), seed, 2 * tag + 2)


def lattice(center, radius: float, k: int = 9) -> np.ndarray:
    """Deterministic points in the closed ball, always containing the centre."""
    c = np.asarray(center, dtype=float)
    d = len(c)
    if d <= 3:
        axis = np.linspace(-radius, radius, k)
        grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), axis=-1).reshape(-1, d)
        grid = grid[np.linalg.norm(grid, axis=1) <= radius * (1 + 1e-12)]
    else:
        eye = np.eye(d)
        grid = np.concatenate([np.zeros((1, d)), *(s * f * radius * eye for s in (-1, 1) for f in (0.5, 1.0))])
    return c + grid


def _slope(q, dist) -> float:
    """Least-squares slope of log q against -log dist; nan unless all q > 0."""
    q = np.asarray(q, dtype=float)
    if not np.all(q > 0) or not np.all(np.isfinite(q)):
        return math.nan
    x = -np.log(np.asarray(dist, dtype=float))
    y = np.log(q)
    x = x - x.mean()
    return float(np.dot(x, y - y.mean()) / np.dot(x, x))


# ------------------------------------------------------------------ (A1)

def _local_bound_value(m, X):
    B, S, ok, bad = _evaluate(m, X)
    val = np.linalg.norm(B, axis=1) + np.sqrt(np.sum(S ** 2, axis=(1, 2)))
    return val, ok, bad


def check_local_bound(m: ModelSpec, r: float, N: int = 4096, seed: int = 0) -> AssumptionReport:
    """(A1): sup of |b| + |sigma|_HS over B_r(0); VIOLATED only on a non-finite evaluation."""
    X = np.concatenate([lattice(np.zeros(m.d), r), ball_samples(np.zeros(m.d), r, N, seed)])
    val, ok, bad = _local_bound_value(m, X)
    if bad:
        x = X[min(bad)]
        return AssumptionReport("A1", Status.VIOLATED,
                                {"x": x, "margin": math.inf, "reason": "non-finite or undefined coefficient"},
                                {"r": r}, N, seed)
    i = int(np.argmax(val))
    return AssumptionReport("A1", Status.NOT_FALSIFIED, None,
                            {"r": r, "sup": float(val[i]), "argmax": X[i]}, N, seed)


# ------------------------------------------------------------------ (A3)

def _growth_ratio(m, X):
    B, S, ok, bad = _evaluate(m, X)
    num = 2 * np.sum(X * B, axis=1) + np.sum(S ** 2, axis=(1, 2))
    return num / (1 + np.sum(X * X, axis=1)), ok


def check_growth(m: ModelSpec, R: float, N: int = 4096, seed: int = 0,
                 doublings: int = 5) -> AssumptionReport:
    """(A3): Gamma-hat(rho) = max (2<x,b> + |sigma|^2) / (1 + |x|^2) over B_rho(0), rho = R 2^-k.

    Divergence is tested along rays: every sampled direction u is evaluated at
    the doubling radii, and a ray whose ratio grows with fitted log-slope above
    0.5 across the last three doublings is a witness.
    """
    radii = R * 2.0 ** -np.arange(doublings, -1, -1)
    Xs = np.concatenate([lattice(np.zeros(m.d), R), ball_samples(np.zeros(m.d), R, N, seed)])
    q, ok = _growth_ratio(m, Xs)
    norms = np.linalg.norm(Xs, axis=1)
    table = []
    for rho in radii:
        sel = ok & (norms <= rho * (1 + 1e-12))
        table.append(float(np.max(q[sel])) if sel.any() else math.nan)

    U = _directions(N, m.d, seed, 99)
    rays = radii[-4:]
    P = (U[:, None, :] * rays[None, :, None]).reshape(-1, m.d)
    qr, okr = _growth_ratio(m, P)
    qr = np.where(okr, qr, np.nan).reshape(N, len(rays))
    best, witness = -math.inf, None
    good = np.all(qr > 0, axis=1)
    if good.any():
        y = np.log(qr[good])
        x = np.log(rays) - np.log(rays).mean()
        slopes = (y - y.mean(axis=1, keepdims=True)) @ x / np.dot(x, x)
        j = int(np.argmax(slopes))
        best = float(slopes[j])
        if best > SLOPE_LIMIT:
            pts = P.reshape(N, len(rays), m.d)[np.flatnonzero(good)[j]]
            witness = {"points": pts, "ratios": qr[np.flatnonzero(good)[j]],
                       "slope": best, "margin": best - SLOPE_LIMIT}
    status = Status.VIOLATED if witness is not None else Status.NOT_FALSIFIED
    return AssumptionReport("A3", status, witness,
                            {"radii": radii, "gamma_hat": table, "gamma_hat_R": table[-1],
                             "max_ray_slope": best}, N, seed)


# ------------------------------------------------------------------ (A2)

def _pair_ratio(m, X, Y):
    bx, sx, okx, _ = _evaluate(m, X)
    by, sy, oky, _ = _evaluate(m, Y)
    D = X - Y
    num = 2 * np.sum(D * (bx - by), axis=1) + np.sum((sx - sy) ** 2, axis=(1, 2))
    dist = np.linalg.norm(D, axis=1)
    return num / dist ** 2, dist, okx & oky


def check_onesided(m: ModelSpec, r: float, N_pairs: int = 2048, seed: int = 0,
                   levels: int = REFINE_LEVELS) -> AssumptionReport:
    """(A2): Gamma-hat_r = max over pairs in B_r(0) of
    (2<x-y, b(x)-b(y)> + |sigma(x)-sigma(y)|^2) / |x-y|^2.

    Every pair is refined by halving: at each level the half-segment with the
    larger ratio is kept.  A chain whose ratio grows with log-slope above 0.5
    in 1/|x-y| over the last five levels is a witness.
    """
    zero = np.zeros(m.d)
    X = ball_samples(zero, r, N_pairs, seed, tag=0)
    Y = ball_samples(zero, r, N_pairs, seed, tag=1)
    q, dist, ok = _pair_ratio(m, X, Y)
    nx = np.maximum(np.linalg.norm(X, axis=1), np.linalg.norm(Y, axis=1))
    table = {}
    for rho in r * 2.0 ** -np.arange(3, -1, -1):
        sel = ok & (nx <= rho)
        table[f"{rho:.17g}"] = float(np.max(q[sel])) if sel.any() else math.nan

    chain_q = np.full((levels, N_pairs), np.nan)
    chain_x = np.zeros((levels, N_pairs, m.d))
    chain_y = np.zeros((levels, N_pairs, m.d))
    cx, cy = X.copy(), Y.copy()
    alive = ok.copy()
    for k in range(levels):
        mid = 0.5 * (cx + cy)
        q1, _, ok1 = _pair_ratio(m, cx, mid)
        q2, _, ok2 = _pair_ratio(m, mid, cy)
        q1 = np.where(ok1, q1, -np.inf)
        q2 = np.where(ok2, q2, -np.inf)
        left = q1 >= q2
        cy = np.where(left[:, None], mid, cy)
        cx = np.where(left[:, None], cx, mid)
        alive &= ok1 | ok2
        chain_q[k] = np.where(alive, np.maximum(q1, q2), np.nan)
        chain_x[k], chain_y[k] = cx, cy

    tail_q = chain_q[-SLOPE_LEVELS:].T
    good = alive & np.all(tail_q > 0, axis=1)
    best, witness = -math.inf, None
    if good.any():
        tail_d = np.linalg.norm(chain_x[-SLOPE_LEVELS:] - chain_y[-SLOPE_LEVELS:], axis=2).T
        xl = -np.log(tail_d[good])
        xl -= xl.mean(axis=1, keepdims=True)
        yl = np.log(tail_q[good])
        slopes = np.sum(xl * (yl - yl.mean(axis=1, keepdims=True)), axis=1) / np.sum(xl * xl, axis=1)
        j = int(np.argmax(slopes))
        best = float(slopes[j])
        if best > SLOPE_LIMIT:
            i = int(np.flatnonzero(good)[j])
            witness = {"x": chain_x[-SLOPE_LEVELS:, i], "y": chain_y[-SLOPE_LEVELS:, i],
                       "ratios": chain_q[-SLOPE_LEVELS:, i], "slope": best,
                       "margin": best - SLOPE_LIMIT, "initial_pair": [X[i], Y[i]]}
    status = Status.VIOLATED if witness is not None else Status.NOT_FALSIFIED
    finite = q[ok]
    return AssumptionReport("A2", status, witness,
                            {"r": r, "gamma_r_table": table,
                             "gamma_r": float(finite.max()) if finite.size else math.nan,
                             "max_refined_slope": best}, N_pairs, seed,
                            meta={"levels": levels, "slope_levels": SLOPE_LEVELS})


# ------------------------------------------------------------------ (A4), (A5)

def _min_eig(m, X):
    _, S, ok, _ = _evaluate(m, X)
    a = S @ np.swapaxes(S, 1, 2)
    lam = np.full(len(X), np.nan)
    w = np.linalg.eigvalsh(a[ok])
    lam[ok] = w[:, 0]
    return lam, a, ok


def _eig_margin(m, X):
    """1e-12 max(1, lambda_max) - lambda_min per point; +inf where sigma cannot be evaluated."""
    _, S, ok, _ = _evaluate(m, X)
    margin = np.full(len(X), np.inf)
    lam = np.full(len(X), np.nan)
    if ok.any():
        a = S[ok] @ np.swapaxes(S[ok], 1, 2)
        w = np.linalg.eigvalsh(a)
        lam[ok] = w[:, 0]
        margin[ok] = EIG_RTOL * np.maximum(1.0, w[:, -1]) - w[:, 0]
    return margin, lam


def _project(X, center, lo, hi):
    D = X - center
    n = np.linalg.norm(D, axis=1, keepdims=True)
    target = np.clip(n, lo, hi)
    safe = np.where(n > 0, n, 1.0)
    return np.where(n > 0, center + D * target / safe, X)


def _refine_min_eig(m, X, center, lo, hi, iters: int = 40):
    """Per-point diagonal Newton descent on the smallest eigenvalue, kept inside the region."""
    X = X.copy()
    lam, _, _ = _min_eig(m, X)
    d = X.shape[1]
    for _ in range(iters):
        h = 1e-4 * (1e-3 + np.abs(X))
        step = np.zeros_like(X)
        for i in range(d):
            E = np.zeros_like(X)
            E[:, i] = h[:, i]
            fp, _, _ = _min_eig(m, X + E)
            fm, _, _ = _min_eig(m, X - E)
            g = (fp - fm) / (2 * h[:, i])
            c = (fp - 2 * lam + fm) / h[:, i] ** 2
            step[:, i] = np.where(c > 0, -g / np.where(c > 0, c, 1.0), -np.sign(g) * h[:, i])
        step = np.nan_to_num(step)
        Z = _project(X + step, center, lo, hi)
        lz, _, _ = _min_eig(m, Z)
        better = lz < lam
        X = np.where(better[:, None], Z, X)
        lam = np.where(better, lz, lam)
    return X, lam


def _holder_fit(m, center, radius, n, seed, levels: int = 24):
    """Hoelder exponent and constant of b and sigma sigma^T from pair shrinking.

    Each pair (x, y) is contracted to (x, x + (y - x) 2^-k); alpha-hat is the
    smallest log-log slope over the last four levels, clipped to (0, 1].
    """
    X = ball_samples(center, radius, n, seed, tag=5)
    Y = ball_samples(center, radius, n, seed, tag=6)
    bx, sx, okx, _ = _evaluate(m, X)
    ax = sx @ np.swapaxes(sx, 1, 2)
    nums, dists, ok = [], [], okx.copy()
    for k in range(levels):
        Yk = X + (Y - X) * 2.0 ** -k
        by, sy, oky, _ = _evaluate(m, Yk)
        ay = sy @ np.swapaxes(sy, 1, 2)
        nums.append(np.linalg.norm(bx - by, axis=1) + np.sqrt(np.sum((ax - ay) ** 2, axis=(1, 2))))
        dists.append(np.linalg.norm(X - Yk, axis=1))
        ok &= oky
    num, dist = np.array(nums).T, np.array(dists).T
    sel = ok & np.all(num[:, -4:] > 0, axis=1) & (dist[:, -1] > 0)
    if not sel.any():
        return {"alpha_hat": 1.0, "D_hat": 0.0}
    x = np.log(dist[sel, -4:])
    y = np.log(num[sel, -4:])
    x = x - x.mean(axis=1, keepdims=True)
    slopes = np.sum(x * (y - y.mean(axis=1, keepdims=True)), axis=1) / np.sum(x * x, axis=1)
    alpha = float(np.clip(slopes.min(), 1e-3, 1.0))
    keep = ok & (dist[:, 0] > 0)
    return {"alpha_hat": alpha, "D_hat": float(np.max(num[keep] / dist[keep] ** alpha))}


def check_ellipticity(m: ModelSpec, region: str = "A4", N: int = 2048, seed: int = 0,
                      rmax: float | None = None, n_refine: int = 256) -> AssumptionReport:
    """Smallest eigenvalue of sigma sigma^T.

    ``region="A4"`` samples B_{r0}(x0), reports delta-hat and a Hoelder fit of
    b and sigma sigma^T there.  ``region="A5"`` samples the annulus
    r0 <= |x - x0| <= rmax (default 64 r0) and reports a min-eigenvalue profile
    over logarithmic radius bins.  VIOLATED when some point has smallest
    eigenvalue <= 1e-12 max(1, largest eigenvalue) there, or cannot be
    evaluated; the first ``n_refine`` samples and the lattice are polished by
    a local descent first.
    """
    if region not in ("A4", "A5"):
        raise ValueError("region must be 'A4' or 'A5'")
    c, r0 = m.center, m.r0
    if region == "A4":
        lo, hi = 0.0, r0
        base = lattice(c, r0)
        X = ball_samples(c, r0, N, seed, tag=3)
    else:
        lo, hi = r0, rmax if rmax is not None else 64.0 * r0
        rng = _rng(seed, 7)
        rad = lo * (hi / lo) ** rng.random(N)
        X = c + rad[:, None] * _directions(N, m.d, seed, 8)
        U = np.concatenate([np.eye(m.d), -np.eye(m.d)])
        base = np.concatenate([c + s * U for s in np.geomspace(lo, hi, 9)])
    P = np.concatenate([base, X])
    lam, _, ok = _min_eig(m, P)
    lam = np.where(ok, lam, -np.inf)
    k = len(base) + min(N, n_refine)
    Pr, lr = _refine_min_eig(m, P[:k], c, lo, hi)
    lr = np.where(np.isfinite(lr), lr, -np.inf)
    improve = lr < lam[:k]
    P[:k] = np.where(improve[:, None], Pr, P[:k])
    margin = _eig_margin(m, P)[0]
    lam, _, _ = _min_eig(m, P)

    i = int(np.nanargmin(np.where(np.isfinite(lam), lam, np.inf))) if np.isfinite(lam).any() else 0
    consts = {"delta_hat": float(lam[i]), "argmin": P[i]}
    if region == "A4":
        consts.update(_holder_fit(m, c, r0, N, seed))
    else:
        rr = np.linalg.norm(P - c, axis=1)
        edges = np.geomspace(lo, hi, 9)
        prof = []
        for a, b in zip(edges[:-1], edges[1:]):
            sel = (rr >= a * (1 - 1e-12)) & (rr <= b * (1 + 1e-12))
            prof.append([a, b, float(lam[sel].min()) if sel.any() else math.nan])
        consts["min_eig_profile"] = prof
    witness = None
    w = int(np.argmax(margin))
    if margin[w] >= 0:
        witness = {"x": P[w], "min_eig": float(lam[w]), "margin": float(margin[w])}
    status = Status.VIOLATED if witness is not None else Status.NOT_FALSIFIED
    return AssumptionReport(region, status, witness, consts, N, seed,
                            meta={"region": [lo, hi], "refined": k})


# ------------------------------------------------------------------ replay

def replay_margin(m: ModelSpec, report: AssumptionReport) -> float:
    """Re-evaluate a VIOLATED witness and return its inequality margin (> 0 means violated)."""
    w = report.witness
    if w is None:
        raise ValueError("report has no witness")
    a = report.assumption
    if a == "A1":
        val, ok, _ = _local_bound_value(m, np.asarray(w["x"], dtype=float)[None, :])
        return math.inf if not ok[0] else -math.inf
    if a == "A3":
        pts = np.asarray(w["points"], dtype=float)
        q, ok = _growth_ratio(m, pts)
        return _slope(q, 1.0 / np.linalg.norm(pts, axis=1)) - SLOPE_LIMIT if ok.all() else math.nan
    if a == "A2":
        X, Y = np.asarray(w["x"], dtype=float), np.asarray(w["y"], dtype=float)
        q, dist, ok = _pair_ratio(m, X, Y)
        return _slope(q, dist) - SLOPE_LIMIT if ok.all() else math.nan
    if a in ("A4", "A5"):
        return float(_eig_margin(m, np.asarray(w["x"], dtype=float)[None, :])[0][0])
    raise ValueError(f"unknown assumption {a!r}")


def check_all(m: ModelSpec, r: float | None = None, N: int = 2048, seed: int = 0) -> list[AssumptionReport]:
    """All five checks with radius r (default 4 r0 + |x0|) for (A1)-(A3)."""
    r = r if r is not None else 4.0 * m.r0 + float(np.linalg.norm(m.center))
    return [check_local_bound(m, r, N, seed), check_onesided(m, r, N, seed),
            check_growth(m, 64.0 * r, N, seed), check_ellipticity(m, "A4", N, seed),
            check_ellipticity(m, "A5", N, seed)]
