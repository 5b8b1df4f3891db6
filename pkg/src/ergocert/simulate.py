"""Monte Carlo diagnostics: Euler-Maruyama ensembles, histogram total-variation
estimates, exponential-rate fits, hitting probabilities and subordination.

Random numbers come from Philox streams keyed by ``(seed, stream, block)``
where a block is a fixed run of 65536 consecutive paths, so results do not
depend on how paths are batched.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr
from scipy.stats import binomtest

from . import dsl
from .certify import _jsonable
from .model import ModelSpec, eval_masked

BLOCK = 65536


class FitRefused(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    dt: float = 1e-3
    T: float = 1.0
    checkpoints: tuple = ()
    n_paths: int = 10000
    seed: int = 0
    scheme: str = "euler_maruyama"
    guard: float = 1e8
    max_drop: float = 1e-3

    def __post_init__(self):
        cps = tuple(float(c) for c in self.checkpoints) or (float(self.T),)
        object.__setattr__(self, "checkpoints", cps)
        if self.scheme != "euler_maruyama":
            raise ValueError("only the euler_maruyama scheme is implemented")
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError("dt must be positive")
        if any(b <= a for a, b in zip(cps, cps[1:])) or cps[0] <= 0 or cps[-1] > self.T * (1 + 1e-12):
            raise ValueError("checkpoints must be increasing and lie in (0, T]")
        if self.dt > cps[0] * (1 + 1e-12):
            raise ValueError("dt must not exceed the first checkpoint")
        if self.n_paths < 2:
            raise ValueError("n_paths must be at least 2")

    def to_dict(self) -> dict:
        return {"dt": self.dt, "T": self.T, "checkpoints": list(self.checkpoints),
                "n_paths": self.n_paths, "seed": self.seed, "scheme": self.scheme,
                "guard": self.guard, "max_drop": self.max_drop}


def _block_rng(seed: int, key: tuple, b: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *key, b])))


def _blocks(n: int):
    for b, lo in enumerate(range(0, n, BLOCK)):
        yield b, slice(lo, min(lo + BLOCK, n))


class _Coefficients:
    """Drift and diffusion with a fast path for state-independent diffusion."""

    def __init__(self, m: ModelSpec):
        self.m = m
        self.const_sigma = None
        if all(dsl.is_constant(e) for row in m.diffusion for e in row):
            self.const_sigma = m.diffusion_at(m.center[None, :])[0]

    def step(self, X, h, Z):
        m = self.m
        try:
            B = m.drift_at(X)
            S = self.const_sigma if self.const_sigma is not None else m.diffusion_at(X)
            ok = np.ones(len(X), dtype=bool)
        except dsl.DomainError:
            B, S, ok, _ = eval_masked(m, X)
            if self.const_sigma is not None:
                S = self.const_sigma
        if np.ndim(h):
            h = h[:, None]
        if S.ndim == 3:
            noise = np.einsum("kij,kj->ki", S, Z)
        elif S.shape == (1, 1):
            noise = Z * S[0, 0]
        else:
            noise = Z @ S.T
        with np.errstate(invalid="ignore", over="ignore"):
            B *= h
            noise *= np.sqrt(h)
            B += noise
            B += X
        return B, ok


def _integrate(m: ModelSpec, X0, H, dt: float, seed: int, stream: int, guard: float):
    """Euler-Maruyama to per-path horizons.

    ``H`` has shape (n, k) with non-decreasing rows; the state of path i is
    recorded when its clock reaches ``H[i, j]``.  Steps have size dt except
    the final partial step onto each horizon.  Returns ``(states, dropped)``
    with states of shape (k, n, d) and NaN rows for dropped paths.  Blocks of
    paths run one after another so the working arrays stay cache-sized.
    """
    coef = _Coefficients(m)
    n, k = H.shape
    x0 = np.asarray(X0, dtype=float).reshape(m.d)
    out = np.full((k, n, m.d), np.nan)
    dropped = np.zeros(n, dtype=bool)
    common = bool(np.all(H == H[:1]))
    for b, sl in _blocks(n):
        g = _block_rng(seed, (stream,), b)
        run = _block_common if common else _block_general
        out[:, sl], dropped[sl] = run(coef, x0, H[sl], dt, g, guard)
    out[:, dropped] = np.nan
    return out, dropped


def _block_common(coef, x0, H, dt, g, guard, check_every: int = 8):
    n, k = H.shape
    m = coef.m
    X = np.tile(x0, (n, 1))
    out = np.empty((k, n, m.d))
    dropped = np.zeros(n, dtype=bool)
    Z = np.empty((n, m.n))
    base = 0.0
    for j, target in enumerate(H[0]):
        steps = []
        while True:
            rem = target - (base + len(steps) * dt)
            if rem <= 0:
                break
            last = rem <= dt * (1 + 1e-9)
            steps.append(rem if last else dt)
            if last:
                break
        for i, h in enumerate(steps):
            g.standard_normal(out=Z)
            X, ok = coef.step(X, h, Z)
            dropped |= ~ok
            if i % check_every == 0 or i == len(steps) - 1:
                with np.errstate(invalid="ignore"):
                    dropped |= ~(np.abs(X) <= guard).all(axis=1)
                X[dropped] = 0.0
        base = target
        out[j] = X
    return out, dropped


def _block_general(coef, x0, H, dt, g, guard):
    n, k = H.shape
    m = coef.m
    X = np.tile(x0, (n, 1))
    out = np.full((k, n, m.d), np.nan)
    j = np.zeros(n, dtype=int)
    base = np.zeros(n)
    cnt = np.zeros(n, dtype=np.int64)
    dropped = np.zeros(n, dtype=bool)
    rows = np.arange(n)
    Z = np.empty((n, m.n))

    def flush(idx):
        while len(idx):
            due = H[idx, j[idx]] <= base[idx]
            idx = idx[due]
            out[j[idx], idx] = X[idx]
            j[idx] += 1
            idx = idx[j[idx] < k]

    flush(rows)
    while True:
        active = (j < k) & ~dropped
        if not active.any():
            break
        g.standard_normal(out=Z)
        idx = np.flatnonzero(active)
        target = H[idx, j[idx]]
        rem = target - (base[idx] + cnt[idx] * dt)
        last = rem <= dt * (1 + 1e-9)
        h = np.where(last, np.maximum(rem, 0.0), dt)
        Xn, ok = coef.step(X[idx], h, Z[idx])
        bad = ~ok | ~np.all(np.isfinite(Xn), axis=1) | (np.max(np.abs(Xn), axis=1) > guard)
        Xn[bad] = 0.0
        X[idx] = Xn
        cnt[idx] += 1
        dropped[idx[bad]] = True
        li = idx[last & ~bad]
        base[li] = target[last & ~bad]
        cnt[li] = 0
        flush(li)
    return out, dropped


@dataclass
class Ensemble:
    times: tuple
    samples: np.ndarray  # (k, n_kept, d)
    n_paths: int
    n_dropped: int
    valid: bool

    def moments(self) -> list[dict]:
        return [{"t": t, "mean": s.mean(axis=0), "var": s.var(axis=0, ddof=1)}
                for t, s in zip(self.times, self.samples)]


def _ensemble_from(states, dropped, times, cfg: SimConfig) -> Ensemble:
    keep = ~dropped
    nd = int(dropped.sum())
    return Ensemble(tuple(times), states[:, keep], len(dropped), nd,
                    nd <= cfg.max_drop * len(dropped))


def em_ensemble(m: ModelSpec, x_init, cfg: SimConfig, stream: int = 0) -> Ensemble:
    """Euler-Maruyama endpoints at every checkpoint for ``cfg.n_paths`` paths."""
    x = np.asarray(x_init, dtype=float).reshape(m.d)
    H = np.broadcast_to(np.asarray(cfg.checkpoints), (cfg.n_paths, len(cfg.checkpoints)))
    states, dropped = _integrate(m, x, H, cfg.dt, cfg.seed, stream, cfg.guard)
    return _ensemble_from(states, dropped, cfg.checkpoints, cfg)


# ------------------------------------------------------------------ total variation

def _fd_edges(pooled: np.ndarray, cap: int) -> np.ndarray:
    lo, hi = float(pooled.min()), float(pooled.max())
    q75, q25 = np.percentile(pooled, [75, 25])
    width = 2.0 * (q75 - q25) * len(pooled) ** (-1.0 / 3.0)
    if hi <= lo:
        return np.array([lo - 0.5, hi + 0.5])
    nb = cap if width <= 0 else int(min(cap, max(1, math.ceil((hi - lo) / width))))
    return np.linspace(lo, hi, nb + 1)


def _hist_tv(a: np.ndarray, b: np.ndarray, bins) -> tuple[float, list]:
    d = a.shape[1]
    pooled = np.concatenate([a, b])
    cap = {1: 10000, 2: 1000}.get(d, 100)
    if bins is None:
        edges = [_fd_edges(pooled[:, i], cap) for i in range(d)]
    else:
        edges = [np.linspace(pooled[:, i].min(), pooled[:, i].max(), int(bins) + 1) for i in range(d)]
    ha, _ = np.histogramdd(a, bins=edges)
    hb, _ = np.histogramdd(b, bins=edges)
    tv = 0.5 * np.abs(ha / len(a) - hb / len(b)).sum()
    return float(min(1.0, max(0.0, tv))), [len(e) - 1 for e in edges]


def tv_details(a, b, bins=None, n_proj: int = 32, seed: int = 0, min_size: int = 1000):
    """Histogram TV estimate with metadata; see :func:`tv_estimate`."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a[:, None] if a.ndim == 1 else a
    b = b[:, None] if b.ndim == 1 else b
    if len(a) == 0 or len(b) == 0:
        raise ValueError("empty sample")
    if a.shape[1] != b.shape[1]:
        raise ValueError("samples differ in dimension")
    if min(len(a), len(b)) < min_size:
        raise ValueError(f"samples need at least {min_size} points")
    d = a.shape[1]
    if d <= 3:
        tv, nb = _hist_tv(a, b, bins)
        return tv, {"estimator": "histogram", "bins": nb, "lower_bound": False}
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 7331])))
    U = rng.standard_normal((n_proj, d))
    U /= np.linalg.norm(U, axis=1, keepdims=True)
    vals = [_hist_tv((a @ u)[:, None], (b @ u)[:, None], bins)[0] for u in U]
    return float(max(vals)), {"estimator": "projection-max", "projections": n_proj, "lower_bound": True}


def tv_estimate(a, b, bins=None, n_proj: int = 32, seed: int = 0, min_size: int = 1000) -> float:
    """Estimated TV distance between the laws behind two samples, in [0, 1].

    d <= 3: half the L1 distance of common-bin histograms (Freedman-Diaconis
    width on the pooled sample, or ``bins`` equal bins per axis).  d > 3: the
    maximum over ``n_proj`` fixed random projections of the 1-d estimate,
    which is a lower-bound diagnostic.
    """
    return tv_details(a, b, bins, n_proj, seed, min_size)[0]


# 95th percentile of the null estimate tv_estimate(N(0,1) sample, independent
# N(0,1) sample) per sample size, 200 replicates; regenerate with
# calibrate_noise_floor().
NOISE_FLOOR = {
    1000: 0.10705,
    3000: 0.0717,
    10000: 0.0462,
    30000: 0.032068,
    100000: 0.020296,
    200000: 0.016240,
}


def calibrate_noise_floor(sizes=(1000, 3000, 10000, 30000, 100000, 200000), reps: int = 200,
                          seed: int = 0, q: float = 0.95) -> dict:
    out = {}
    for n in sizes:
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, n])))
        vals = [tv_estimate(rng.standard_normal(n), rng.standard_normal(n)) for _ in range(reps)]
        out[int(n)] = float(np.quantile(vals, q))
    return out


def noise_floor(n: int) -> float:
    """Calibrated null level of :func:`tv_estimate` at per-sample size n (log-log interpolation)."""
    ns = np.array(sorted(NOISE_FLOOR), dtype=float)
    fs = np.array([NOISE_FLOOR[int(k)] for k in ns])
    x = math.log(max(n, 2))
    lx, lf = np.log(ns), np.log(fs)
    if x <= lx[0] or x >= lx[-1]:
        i = 0 if x <= lx[0] else -2
        slope = (lf[i + 1] - lf[i]) / (lx[i + 1] - lx[i])
        return float(math.exp(lf[i] + slope * (x - lx[i])))
    return float(math.exp(np.interp(x, lx, lf)))


def split_half_tv(sample, seed: int = 0) -> float:
    """TV estimate between two random halves of one sample."""
    sample = np.asarray(sample, dtype=float)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, 4242])))
    perm = rng.permutation(len(sample))
    h = len(sample) // 2
    return tv_estimate(sample[perm[:h]], sample[perm[h:2 * h]])


def gaussian_tv(mu1, mu2, var: float) -> float:
    """Exact TV between N(mu1, var) and N(mu2, var) in one dimension."""
    return float(2.0 * ndtr(abs(mu1 - mu2) / (2.0 * math.sqrt(var))) - 1.0)


def ou_tv_exact(x: float, y: float, t: float, theta: float = 1.0, sigma: float = math.sqrt(2.0)) -> float:
    """TV between the laws at time t of dX = -theta X dt + sigma dB started at x and y."""
    var = sigma ** 2 / (2 * theta) * (1 - math.exp(-2 * theta * t))
    return gaussian_tv(x * math.exp(-theta * t), y * math.exp(-theta * t), var)


# ------------------------------------------------------------------ curves and fits

@dataclass
class ExpFit:
    B_hat: float
    beta_hat: float
    residual: float
    n_used: int
    stderr: float
    flat: bool

    def to_dict(self) -> dict:
        return _jsonable({"B_hat": self.B_hat, "beta_hat": self.beta_hat, "residual": self.residual,
                          "n_used": self.n_used, "stderr": self.stderr, "flat": self.flat})


def fit_exponential_xy(times, values, floor: float = 0.0) -> ExpFit:
    """Least squares of log value against t over points above ``floor``."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    use = v > floor
    if use.sum() < 3:
        raise FitRefused(f"only {int(use.sum())} points above the noise floor {floor:.3g}; need 3")
    t, y = t[use], np.log(v[use])
    A = np.stack([np.ones_like(t), -t], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    rms = float(np.sqrt(np.mean(res ** 2)))
    dof = max(1, len(t) - 2)
    se = float(np.sqrt(np.sum(res ** 2) / dof / np.sum((t - t.mean()) ** 2)))
    beta = float(coef[1])
    return ExpFit(float(math.exp(coef[0])), beta, rms, int(use.sum()), se,
                  bool(beta <= max(2 * se, 1e-9)))


@dataclass
class TVCurve:
    times: tuple
    starts: np.ndarray  # (n_starts, d)
    tv: np.ndarray  # (n_starts, n_times)
    sup_tv: np.ndarray
    fit: ExpFit | None = None
    meta: dict = field(default_factory=dict)

    def to_csv(self) -> str:
        buf = io.StringIO()
        d = self.starts.shape[1]
        buf.write(",".join(["t", "start_index", *(f"x{i + 1}" for i in range(d)), "tv"]) + "\n")
        for j, t in enumerate(self.times):
            for i, x in enumerate(self.starts):
                buf.write(",".join([_g(t), str(i), *(_g(v) for v in x), _g(self.tv[i, j])]) + "\n")
        return buf.getvalue()

    def sup_csv(self) -> str:
        return "t,sup_tv\n" + "".join(f"{_g(t)},{_g(v)}\n" for t, v in zip(self.times, self.sup_tv))

    def fit_json(self) -> str:
        doc = self.fit.to_dict() if self.fit else {"B_hat": None, "beta_hat": None, "residual": None,
                                                   "refused": self.meta.get("fit_error")}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _g(v) -> str:
    return f"{float(v):.17g}"


def fit_exponential(curve: TVCurve, floor: float | None = None) -> ExpFit:
    """Fit sup_tv ~ B exp(-beta t) over checkpoints above the estimator noise floor."""
    floor = curve.meta.get("noise_floor", 0.0) if floor is None else floor
    return fit_exponential_xy(curve.times, curve.sup_tv, floor)


def _tv_curve(m, start_grid, x_ref, cfg, H, extra_meta):
    starts = np.atleast_2d(np.asarray(start_grid, dtype=float)).reshape(-1, m.d)
    if len(starts) == 0:
        raise ValueError("start grid is empty")
    ref_states, ref_drop = _integrate(m, np.asarray(x_ref, dtype=float).reshape(m.d), H,
                                      cfg.dt, cfg.seed, 0, cfg.guard)
    ref = ref_states[:, ~ref_drop]
    k = len(cfg.checkpoints)
    tv = np.zeros((len(starts), k))
    drops = [int(ref_drop.sum())]
    est_meta = None
    for i, x in enumerate(starts):
        st, dr = _integrate(m, x, H, cfg.dt, cfg.seed, i + 1, cfg.guard)
        drops.append(int(dr.sum()))
        for j in range(k):
            tv[i, j], est_meta = tv_details(st[j, ~dr], ref[j])
    n = cfg.n_paths
    meta = {"estimator": est_meta, "n_paths": n, "noise_floor": noise_floor(n),
            "dropped": drops, "valid": max(drops) <= cfg.max_drop * n,
            "streams": "reference stream 0, start i stream i+1", "config": cfg.to_dict(),
            "sup_is_grid_proxy": True}
    meta.update(extra_meta)
    curve = TVCurve(tuple(cfg.checkpoints), starts, tv, tv.max(axis=0), None, meta)
    try:
        curve.fit = fit_exponential(curve)
    except FitRefused as exc:
        meta["fit_error"] = str(exc)
    return curve


def uniform_tv_curve(m: ModelSpec, start_grid, x_ref, cfg: SimConfig) -> TVCurve:
    """Per-start TV(p(t, x, .), p(t, x_ref, .)) at the checkpoints and its sup over starts."""
    H = np.broadcast_to(np.asarray(cfg.checkpoints), (cfg.n_paths, len(cfg.checkpoints)))
    return _tv_curve(m, start_grid, x_ref, cfg, H, {})


# ------------------------------------------------------------------ hitting

@dataclass
class HittingEstimate:
    p: float
    ci_low: float
    ci_high: float
    half_width: float
    hits: int
    n_used: int
    n_dropped: int
    confidence: float

    def to_dict(self) -> dict:
        return _jsonable(self.__dict__)


def hitting_mc(m: ModelSpec, x, r0: float | None = None, T: float = 10.0, cfg: SimConfig | None = None,
               confidence: float = 0.95, stream: int = 0) -> HittingEstimate:
    """Fraction of Euler-Maruyama paths entering the open ball B_{r0}(x0) by time T.

    Crossing is checked at every step.  The interval is Wilson's score
    interval at the given confidence.
    """
    cfg = cfg or SimConfig(dt=1e-3, T=T, n_paths=10000)
    r0 = m.r0 if r0 is None else r0
    c = m.center
    x = np.asarray(x, dtype=float).reshape(m.d)
    if np.linalg.norm(x - c) <= r0:
        raise ValueError("start point must lie outside the ball")
    coef = _Coefficients(m)
    n = cfg.n_paths
    hit = np.zeros(n, dtype=bool)
    dropped = np.zeros(n, dtype=bool)
    steps = max(1, math.ceil(T / cfg.dt - 1e-9))
    for blk, sl in _blocks(n):
        g = _block_rng(cfg.seed, (stream, 1), blk)
        nb = sl.stop - sl.start
        X = np.tile(x, (nb, 1))
        hb, db = hit[sl], dropped[sl]
        Z = np.empty((nb, m.n))
        for k in range(steps):
            g.standard_normal(out=Z)
            idx = np.flatnonzero(~hb & ~db)
            if len(idx) == 0:
                break
            Xn, ok = coef.step(X[idx], min(cfg.dt, T - k * cfg.dt), Z[idx])
            bad = ~ok | ~np.all(np.isfinite(Xn), axis=1) | (np.max(np.abs(Xn), axis=1) > cfg.guard)
            X[idx] = Xn
            db[idx[bad]] = True
            inside = np.linalg.norm(Xn - c, axis=1) < r0
            hb[idx[inside & ~bad]] = True
    used = int(n - dropped.sum())
    k = int(hit.sum())
    ci = binomtest(k, used).proportion_ci(confidence_level=confidence, method="wilson")
    return HittingEstimate(k / used, float(ci.low), float(ci.high), float(ci.high - ci.low) / 2,
                           k, used, int(dropped.sum()), confidence)


# ------------------------------------------------------------------ subordination

@dataclass(frozen=True)
class SubordinatorSpec:
    """Non-decreasing Levy process S with S(0) = 0.

    kinds: ``stable`` (index alpha in (0,1), Laplace exponent beta^alpha),
    ``compound_poisson`` (rate, exponential jumps with mean jump_mean),
    ``drift_compound`` (drift t plus compound Poisson) and ``drift``
    (deterministic S(t) = drift t).
    """
    kind: str
    alpha: float = 0.5
    rate: float = 1.0
    jump_mean: float = 1.0
    drift: float = 0.0

    def __post_init__(self):
        if self.kind not in ("stable", "compound_poisson", "drift_compound", "drift"):
            raise ValueError(f"unknown subordinator kind {self.kind!r}")
        if self.kind == "stable" and not 0 < self.alpha < 1:
            raise ValueError("stable index must lie in (0, 1)")
        if self.kind in ("compound_poisson", "drift_compound") and not (self.rate > 0 and self.jump_mean > 0):
            raise ValueError("compound Poisson needs rate > 0 and jump_mean > 0")
        if self.drift < 0 or (self.kind == "drift" and self.drift <= 0):
            raise ValueError("drift must be positive")

    def laplace_exponent(self, beta: float) -> float:
        """phi with E exp(-beta S(t)) = exp(-t phi(beta))."""
        phi = self.drift * beta if self.kind in ("drift", "drift_compound") else 0.0
        if self.kind == "stable":
            phi += beta ** self.alpha
        if self.kind in ("compound_poisson", "drift_compound"):
            phi += self.rate * beta * self.jump_mean / (1 + beta * self.jump_mean)
        return float(phi)

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def stable_draws(alpha: float, rng: np.random.Generator, n: int) -> np.ndarray:
    """One-sided alpha-stable draws with E exp(-beta S) = exp(-beta^alpha) (Kanter's representation)."""
    u = np.pi * rng.random(n)
    e = rng.standard_exponential(n)
    return (np.sin(alpha * u) / np.sin(u) ** (1 / alpha)
            * (np.sin((1 - alpha) * u) / e) ** ((1 - alpha) / alpha))


def subordinator_paths(s: SubordinatorSpec, cfg: SimConfig, stream: int = 0) -> np.ndarray:
    """S at the checkpoints for each path, shape (n_paths, k); rows are non-decreasing."""
    t = np.asarray(cfg.checkpoints)
    dt = np.diff(t, prepend=0.0)
    n, k = cfg.n_paths, len(t)
    inc = np.zeros((n, k))
    for blk, sl in _blocks(n):
        g = _block_rng(cfg.seed, (stream, 2), blk)
        nb = sl.stop - sl.start
        for j in range(k):
            v = np.zeros(nb)
            if s.kind == "stable":
                v += dt[j] ** (1 / s.alpha) * stable_draws(s.alpha, g, nb)
            if s.kind in ("compound_poisson", "drift_compound"):
                cnt = g.poisson(s.rate * dt[j], nb)
                v += np.where(cnt > 0, g.gamma(np.maximum(cnt, 1), s.jump_mean), 0.0)
            if s.kind in ("drift", "drift_compound"):
                v += s.drift * dt[j]
            inc[sl, j] = v
    if s.kind == "drift":
        return np.broadcast_to(s.drift * t, (n, k)).copy()
    return np.cumsum(inc, axis=1)


def subordinate_tv(m: ModelSpec, s: SubordinatorSpec, start_grid, x_ref, cfg: SimConfig,
                   horizon_cap: float = 20.0) -> TVCurve:
    """TV curve of the subordinate process X(S(t)).

    Each path runs Euler-Maruyama to its own random horizon S(t) (capped at
    ``horizon_cap``).  All starts and the reference share the same
    subordinator draws.
    """
    S = subordinator_paths(s, cfg, stream=0)
    H = np.minimum(S, horizon_cap)
    capped = (S > horizon_cap).mean(axis=0)
    return _tv_curve(m, start_grid, x_ref, cfg, H,
                     {"subordinator": s.to_dict(), "subordinator_seed": [cfg.seed, 0, 2],
                      "horizon_cap": horizon_cap, "capped_fraction": capped})
