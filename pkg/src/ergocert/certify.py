"""Evaluation of the double integral

    Lambda = int_{r0}^inf exp(-I(u)) int_u^inf exp(I(v)) / gamma(v) dv du

in log domain, with truncation doubling and tail classification.

Everything is carried in ``t = log r``.  With ``Q(t) = I + t - log gamma``
the inner integral is ``J(u) = exp(Q(t_u)) R(t_u)`` where
``R(t_u) = int_{t_u}^inf exp(Q(t) - Q(t_u)) dt`` is an O(1) quantity even when
``exp(I)`` spans thousands of orders of magnitude.  The outer integrand in
``t`` is ``u^2 R / gamma(u)``, so the large exponents cancel analytically.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import logsumexp

from .model import ModelSpec
from .radial import RadialProfile, SphereOptConfig, build_profile, extend_profile

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)
_GL_X = 0.5 * (_GL_X + 1.0)
_GL_W = 0.5 * _GL_W
_LOG_GL_W = np.log(_GL_W)
_Y_BREAKS = (0.0, 0.5, 2.0, 6.0, 15.0, 40.0)

SLOPE_TOL = 1e-6  # power slopes within this of -1 count as divergent


class Verdict(str, Enum):
    FINITE = "FINITE"
    INFINITE = "INFINITE"
    INCONCLUSIVE = "INCONCLUSIVE"


class InnerDivergence(ArithmeticError):
    pass


# ----------------------------------------------------------------- tail models

@dataclass(frozen=True)
class TailModel:
    cls: str  # power | exp-decay | exp-growth | zero
    slope: float  # power exponent s in f ~ r^s (power class)
    rate: float  # c in log f ~ a + c r^q (exp classes)
    q: float
    intercept: float
    residual: float  # rms of the chosen fit
    power_residual: float
    divergent: bool

    def log_value(self, r: float) -> float:
        if self.cls == "power":
            return self.intercept + self.slope * math.log(r)
        if self.cls == "zero":
            return -math.inf
        return self.intercept + self.rate * r ** self.q

    def log_tail_integral(self, r: float) -> float:
        """log of int_r^inf f, using the fitted shape; +inf when divergent."""
        if self.divergent:
            return math.inf
        if self.cls == "zero":
            return -math.inf
        if self.cls == "power":
            return self.log_value(r) + math.log(r) - math.log(-self.slope - 1.0)
        # leading-order Laplace estimate for exp(c r^q) with c < 0
        return self.log_value(r) - math.log(-self.rate * self.q * r ** (self.q - 1.0))


def _lsq(X, y):
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    res = y - X @ coef
    return coef, float(np.sqrt(np.mean(res ** 2)))


def classify_tail(r, logf) -> TailModel:
    """Fit ``log f`` on a tail window against a power law and a stretched exponential.

    The power fit regresses on ``log r``; the exponential fit regresses on
    ``(r / r_max)^q`` with ``q`` optimised.  The exponential class is chosen
    only when its rms residual is below half the power residual.  A power
    slope ``>= -1`` (integrand not integrable at infinity) or exponential
    growth flags the tail as divergent.
    """
    r = np.asarray(r, dtype=float)
    logf = np.asarray(logf, dtype=float)
    if len(r) < 16:
        raise ValueError("need at least 16 tail samples")
    if r.max() < 10 * r.min() * (1 - 1e-9):
        raise ValueError("tail samples must span at least one decade")
    keep = np.isfinite(logf)
    if not keep.any():
        return TailModel("zero", -math.inf, 0.0, 0.0, -math.inf, 0.0, 0.0, False)
    if np.any(np.isposinf(logf)):
        return TailModel("exp-growth", math.inf, math.inf, 1.0, 0.0, math.inf, math.inf, True)
    r, logf = r[keep], logf[keep]
    lr = np.log(r)
    (a_p, s), rms_p = _lsq(np.column_stack([np.ones_like(lr), lr]), logf)
    scale = max(1.0, float(np.ptp(logf)))

    rn = r / r.max()

    def exp_fit(q):
        return _lsq(np.column_stack([np.ones_like(rn), rn ** q]), logf)

    qs = np.geomspace(0.25, 12.0, 48)
    errs = [exp_fit(q)[1] for q in qs]
    k = int(np.argmin(errs))
    lo, hi = qs[max(k - 1, 0)], qs[min(k + 1, len(qs) - 1)]
    opt = minimize_scalar(lambda q: exp_fit(q)[1], bounds=(lo, hi), method="bounded",
                          options={"xatol": 1e-6})
    q = float(opt.x) if opt.fun <= errs[k] else float(qs[k])
    (a_e, c_n), rms_e = exp_fit(q)
    c = c_n / r.max() ** q

    use_exp = rms_e < 0.5 * rms_p and rms_p > 1e-9 * scale
    if use_exp:
        cls = "exp-decay" if c < 0 else "exp-growth"
        return TailModel(cls, float(s), float(c), q, float(a_e), rms_e, rms_p, cls == "exp-growth")
    return TailModel("power", float(s), 0.0, 0.0, float(a_p), rms_p, rms_p,
                     bool(s >= -1.0 - SLOPE_TOL))


# ------------------------------------------------------------- cell quadrature

def deriv4(f, h):
    """Fourth-order finite-difference derivative of samples on a uniform grid."""
    f = np.asarray(f, dtype=float)
    n = len(f)
    if n < 5:
        raise ValueError("need at least five samples")
    out = np.empty(n)
    out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * h)
    out[0] = (-25 * f[0] + 48 * f[1] - 36 * f[2] + 16 * f[3] - 3 * f[4]) / (12 * h)
    out[1] = (-3 * f[0] - 10 * f[1] + 18 * f[2] - 6 * f[3] + f[4]) / (12 * h)
    out[-1] = (25 * f[-1] - 48 * f[-2] + 36 * f[-3] - 16 * f[-4] + 3 * f[-5]) / (12 * h)
    out[-2] = (3 * f[-1] + 10 * f[-2] - 18 * f[-3] + 6 * f[-4] - f[-5]) / (12 * h)
    return out


def _log_cell(Q0, Q1, d0, d1, h, frac=1.0, e0=0.0, e1=0.0):
    """log int_0^{frac h} exp(H(s) - Q0) ds for the quintic Hermite H on a cell of width h.

    H matches value, slope (d0, d1) and curvature (e0, e1) of Q at both ends.
    Exponentially fitted Gauss-Legendre: an exponential matching the slope at
    the dominant end of the interval is integrated exactly and the smooth
    remainder by composite 16-point Gauss-Legendre.  Works elementwise on
    arrays; ``frac`` < 1 integrates a leading part of the cell.
    """
    Q0, Q1, d0, d1, e0, e1 = np.broadcast_arrays(
        *(np.asarray(a, dtype=float) for a in (Q0, Q1, d0, d1, e0, e1)))
    frac = np.broadcast_to(np.asarray(frac, dtype=float), Q0.shape)
    dQ = (Q1 - Q0)[..., None]
    g0, g1 = (h * d0)[..., None], (h * d1)[..., None]
    k0, k1 = (h * h * e0)[..., None], (h * h * e1)[..., None]

    def H(tau):  # relative to Q0
        t2, t3 = tau * tau, tau ** 3
        t4, t5 = t2 * t2, t2 * t3
        return (dQ * (10 * t3 - 15 * t4 + 6 * t5) + g0 * (tau - 6 * t3 + 8 * t4 - 3 * t5)
                + k0 * (0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5)
                + g1 * (-4 * t3 + 7 * t4 - 3 * t5) + k1 * (0.5 * t3 - t4 + 0.5 * t5))

    def dH(tau):  # d/ds
        t2, t3 = tau * tau, tau ** 3
        t4 = t2 * t2
        return (dQ * (30 * t2 - 60 * t3 + 30 * t4) + g0 * (1 - 18 * t2 + 32 * t3 - 15 * t4)
                + k0 * (tau - 4.5 * t2 + 6 * t3 - 2.5 * t4)
                + g1 * (-12 * t2 + 28 * t3 - 15 * t4) + k1 * (1.5 * t2 - 4 * t3 + 2.5 * t4)) / h

    L = (frac * h)[..., None]
    fr = frac[..., None]
    zero = np.zeros_like(fr)
    H0, HL = H(zero), H(fr)
    near = H0 >= HL
    Ha = np.where(near, H0, HL)
    # decay rate moving inward from the anchor
    lam = np.where(near, -dH(zero), dH(fr))
    fitted = lam * L >= 1e-3
    lam_s = np.where(fitted, lam, 1.0)
    yL = np.where(fitted, lam_s * L, 0.0)
    # composite Gauss-Legendre in y = lam * (distance from the anchor), weight exp(-y)
    terms = []
    for lo, hi in zip(_Y_BREAKS[:-1], _Y_BREAKS[1:]):
        a_, b_ = np.minimum(lo, yL), np.minimum(hi, yL)
        y = a_ + (b_ - a_) * _GL_X
        off = y / lam_s
        s_ = np.where(near, off, L - off)
        with np.errstate(divide="ignore"):
            terms.append(np.log(b_ - a_) + _LOG_GL_W - y + H(s_ / h) - Ha + y)
    # the -y weight and the +lam*off remainder shift cancel: exp(H - Ha) directly
    fit_val = logsumexp(np.concatenate(terms, axis=-1), axis=-1) - np.log(lam_s[..., 0]) + Ha[..., 0]
    plain = np.log(L[..., 0]) + logsumexp(H(L * _GL_X / h) + _LOG_GL_W, axis=-1)
    return np.where(fitted[..., 0], fit_val, plain)


def _simpson_log_weights(n: int, h: float) -> np.ndarray:
    if n < 3:
        raise ValueError("need three or more nodes")
    w = np.zeros(n)
    if n % 2 == 1:
        w[0:n:2] = 2.0
        w[1:n:2] = 4.0
        w[0] = w[-1] = 1.0
        w *= h / 3
    else:
        # Simpson on the first n-3 intervals, 3/8 rule on the last three
        m = n - 3
        w[:m] = 0
        if m >= 3:
            w[0:m:2] = 2.0
            w[1:m:2] = 4.0
            w[0] = 1.0
            w[m - 1] = 1.0
            w[:m] *= h / 3
        w[m - 1:] += np.array([1.0, 3.0, 3.0, 1.0]) * 3 * h / 8
    return np.log(w)


# -------------------------------------------------------------- nested integral

@dataclass
class NestedTables:
    """Node tables of the nested integral for one truncation radius."""
    t: np.ndarray
    Q: np.ndarray
    dQ: np.ndarray
    d2Q: np.ndarray
    log_R: np.ndarray  # inner remainder including the extrapolated inner tail
    log_R_trunc: np.ndarray  # inner remainder truncated at rmax
    log_G: np.ndarray  # outer integrand in t, with inner tail
    log_G_trunc: np.ndarray
    inner_tail: TailModel | None
    log_R_end: float

    @property
    def log_J(self) -> np.ndarray:
        return self.Q + self.log_R


def _last_decade(r):
    """Mask of the nodes covering the last decade, starting at or below r[-1]/10."""
    k = max(int(np.searchsorted(r, r[-1] / 10.0 * (1 + 1e-12), side="right")) - 1, 0)
    mask = np.zeros(len(r), dtype=bool)
    mask[k:] = True
    return mask


def _laplace_log_R(dQ, h):
    """log of int_0^inf exp(Q(t_M + s) - Q(t_M)) ds from Taylor data of Q at the last node.

    With a = -dQ/dt > 0 and b, c the next two derivatives of Q the expansion
    is 1/a + b/a^3 + c/a^4 + 3 b^2/a^5.  The corrections are dropped when they
    are not small against the leading term.
    """
    a = -dQ[-1]
    b = (3 * dQ[-1] - 4 * dQ[-2] + dQ[-3]) / (2 * h)
    c = (dQ[-1] - 2 * dQ[-2] + dQ[-3]) / h ** 2
    if abs(c) < 100 * 4 * np.finfo(float).eps * abs(dQ[-1]) / h ** 2:
        c = 0.0  # indistinguishable from rounding noise
    corr = b / a ** 2 + c / a ** 3 + 3 * b ** 2 / a ** 4
    if abs(corr) > 0.1:
        corr = 0.0
    return -math.log(a) + math.log1p(corr)


def nested_tables(p: RadialProfile) -> NestedTables:
    t = p.t
    h = p.h
    log_gamma = np.log(p.gamma)
    dlg = deriv4(log_gamma, h)
    Q = p.I + t - log_gamma
    dQ = p.iota + 1.0 - dlg
    M = len(t)

    d2Q = deriv4(dQ, h)
    log_cell = _log_cell(Q[:-1], Q[1:], dQ[:-1], dQ[1:], h, 1.0, d2Q[:-1], d2Q[1:])
    step = Q[1:] - Q[:-1]

    inner_tail = None
    decade = _last_decade(p.grid)
    if p.grid[-1] >= 10 * p.grid[0] * (1 - 1e-12) and decade.sum() >= 16:
        inner_tail = classify_tail(p.grid[decade], p.I[decade] - log_gamma[decade])
    if inner_tail is not None and inner_tail.divergent:
        log_R_end = math.inf
    elif dQ[-1] < 0:
        log_R_end = _laplace_log_R(dQ, h)
    elif inner_tail is not None:
        # local slope disagrees with the fitted trend; use the fitted shape
        R = p.grid[-1]
        log_R_end = inner_tail.log_tail_integral(R) - inner_tail.log_value(R) - math.log(R)
    else:
        log_R_end = math.inf

    def backward(end):
        out = np.empty(M)
        out[-1] = end
        for k in range(M - 2, -1, -1):
            out[k] = np.logaddexp(log_cell[k], step[k] + out[k + 1])
        return out

    log_R_trunc = backward(-math.inf)
    log_R = backward(log_R_end) if math.isfinite(log_R_end) else np.full(M, math.inf)
    base = 2 * t - log_gamma
    return NestedTables(t, Q, dQ, d2Q, log_R, log_R_trunc, base + log_R, base + log_R_trunc,
                        inner_tail, log_R_end)


def inner_integral(p: RadialProfile, u: float, tail: bool = True) -> float:
    """log of int_u^inf exp(I(v))/gamma(v) dv (or up to rmax when ``tail`` is False)."""
    if not (p.grid[0] * (1 - 1e-12) <= u <= p.grid[-1] * (1 + 1e-12)):
        raise ValueError("u outside the profile range")
    tab = nested_tables(p)
    log_R = tab.log_R if tail else tab.log_R_trunc
    if tail and not math.isfinite(tab.log_R_end):
        raise InnerDivergence("inner integral diverges at infinity")
    tu = math.log(u)
    k = min(int(np.searchsorted(tab.t, tu, side="right")) - 1, len(tab.t) - 1)
    k = max(k, 0)
    if k == len(tab.t) - 1 or tu == tab.t[k]:
        return float(tab.Q[k] + log_R[k])
    # partial cell from u to t_{k+1} using the Hermite model of Q on [t_k, t_k+1]
    h = p.h
    tau = (tu - tab.t[k]) / h
    Q0, Q1, d0, d1 = tab.Q[k], tab.Q[k + 1], tab.dQ[k], tab.dQ[k + 1]
    dQ = Q1 - Q0
    t2, t3 = tau * tau, tau ** 3
    t4, t5 = t2 * t2, t2 * t3
    Qu = (Q0 + dQ * (10 * t3 - 15 * t4 + 6 * t5) + h * d0 * (tau - 6 * t3 + 8 * t4 - 3 * t5)
          + h * h * tab.d2Q[k] * (0.5 * t2 - 1.5 * t3 + 1.5 * t4 - 0.5 * t5)
          + h * d1 * (-4 * t3 + 7 * t4 - 3 * t5) + h * h * tab.d2Q[k + 1] * (0.5 * t3 - t4 + 0.5 * t5))
    # reverse the cell so integration runs from u (as s = 0) to t_{k+1}
    e0, e1 = tab.d2Q[k], tab.d2Q[k + 1]
    full = _log_cell(Q1, Q0, -d1, -d0, h, 1.0 - tau, e1, e0)  # from t_{k+1} backwards, relative to Q1
    log_piece = float(full) + (Q1 - Qu)
    return float(np.logaddexp(Qu + log_piece, Q1 + log_R[k + 1]))


def outer_log_integral(tab: NestedTables, h: float, truncated=False) -> float:
    lg = tab.log_G_trunc if truncated else tab.log_G
    return float(logsumexp(lg + _simpson_log_weights(len(lg), h)))


# --------------------------------------------------------------- certificate

@dataclass
class Certificate:
    lambda_est: float
    verdict: Verdict
    rmax: float
    tail_inner: dict | None
    tail_outer: dict | None
    rel_err_est: float
    r1: float
    c1: float | None = None
    c2: float | None = None
    petite_radius: float | None = None
    c2_witness: list | None = None
    c2_samples: int | None = None
    partial_lambdas: list = field(default_factory=list)
    history: list = field(default_factory=list)
    config: dict = field(default_factory=dict)
    profile_checksum: str = ""
    model_checksum: str = ""
    profile: RadialProfile | None = field(default=None, repr=False)

    @property
    def finite(self) -> bool:
        return self.verdict == Verdict.FINITE

    def to_dict(self) -> dict:
        out = {k: v for k, v in asdict(self).items() if k != "profile"}
        out["verdict"] = self.verdict.value
        out["lambda_is_infinite"] = not math.isfinite(self.lambda_est)
        return _jsonable(out)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        if math.isfinite(v):
            return float(f"{v:.17g}")
        return "inf" if v > 0 else ("-inf" if v < 0 else "nan")
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Enum):
        return obj.value
    return obj


@dataclass(frozen=True)
class CertifyConfig:
    tol: float = 1e-4
    max_doublings: int = 12
    nodes_per_doubling: int = 256
    start_factor: float = 8.0
    r1_factor: float = 2.0
    sphere: SphereOptConfig = SphereOptConfig()


def _estimate(p: RadialProfile):
    tab = nested_tables(p)
    h = p.h
    log_partial_trunc = outer_log_integral(tab, h, truncated=True)
    entry = {"rmax": p.rmax, "nodes": len(p.grid),
             "partial": math.exp(log_partial_trunc) if log_partial_trunc < 700 else math.inf,
             "log_partial": log_partial_trunc}
    outer_tail = None
    inner_div = tab.inner_tail is not None and tab.inner_tail.divergent
    if not math.isfinite(tab.log_R_end):
        inner_div = True
    if inner_div:
        entry.update(estimate=math.inf, log_estimate=math.inf, tail_fraction=math.nan)
        return tab, entry, outer_tail, True
    log_body = outer_log_integral(tab, h)
    decade = _last_decade(p.grid)
    if p.grid[-1] >= 10 * p.grid[0] * (1 - 1e-12) and decade.sum() >= 16:
        # density in r: G / r
        outer_tail = classify_tail(p.grid[decade], tab.log_G[decade] - tab.t[decade])
    if outer_tail is None:
        log_est = log_body
        tail_frac = math.nan
    elif outer_tail.divergent:
        log_est = math.inf
        tail_frac = math.nan
    else:
        log_tail = outer_tail.log_tail_integral(p.grid[-1])
        log_est = float(np.logaddexp(log_body, log_tail))
        tail_frac = math.exp(log_tail - log_est)
    entry.update(log_estimate=log_est,
                 estimate=math.exp(log_est) if log_est < 700 else math.inf,
                 tail_fraction=tail_frac)
    return tab, entry, outer_tail, False


def compute_lambda(m: ModelSpec, cfg: CertifyConfig = CertifyConfig(),
                   profile: RadialProfile | None = None) -> Certificate:
    """Certify finiteness of Lambda by truncation doubling.

    FINITE needs a convergent outer tail fit and a relative change of the
    tail-corrected estimate below ``cfg.tol`` between consecutive doublings.
    INFINITE needs divergent tail evidence at two consecutive doublings.
    Anything else after the doubling budget is INCONCLUSIVE.
    """
    r0 = m.r0
    if profile is None:
        n2 = cfg.nodes_per_doubling
        n_start = int(round(math.log2(cfg.start_factor) * n2)) + 1
        profile = build_profile(m, cfg.start_factor * r0, n_start, cfg.sphere)
    p = profile
    history, partials = [], []
    prev_est = None
    div_streak = 0
    verdict = Verdict.INCONCLUSIVE
    outer_tail = inner_tail = None
    rel_err = math.inf
    est = math.nan
    for it in range(cfg.max_doublings + 1):
        if it > 0:
            p = extend_profile(p, m, 2.0 * p.rmax)
        tab, entry, outer_tail, inner_div = _estimate(p)
        inner_tail = tab.inner_tail
        partials.append(entry["partial"])
        est = entry["estimate"]
        divergent = inner_div or (outer_tail is not None and outer_tail.divergent)
        entry["outer_class"] = outer_tail.cls if outer_tail else None
        entry["outer_slope"] = outer_tail.slope if outer_tail else None
        entry["divergent_evidence"] = divergent
        history.append(entry)
        if divergent:
            div_streak += 1
            rel_err = math.inf
            if div_streak >= 2:
                verdict = Verdict.INFINITE
                break
            prev_est = None
            continue
        div_streak = 0
        if outer_tail is None:
            prev_est = est
            continue
        if prev_est is not None and math.isfinite(est) and est > 0:
            rel_err = abs(est - prev_est) / est
            if rel_err <= cfg.tol and entry["tail_fraction"] < 0.5:
                verdict = Verdict.FINITE
                break
        prev_est = est

    lam = est if verdict == Verdict.FINITE else (math.inf if verdict == Verdict.INFINITE else est)
    cert = Certificate(
        lambda_est=lam, verdict=verdict, rmax=p.rmax,
        tail_inner=asdict(inner_tail) if inner_tail else None,
        tail_outer=asdict(outer_tail) if outer_tail else None,
        rel_err_est=rel_err, r1=cfg.r1_factor * r0,
        partial_lambdas=partials, history=history,
        config={"tol": cfg.tol, "max_doublings": cfg.max_doublings,
                "nodes_per_doubling": cfg.nodes_per_doubling,
                "start_factor": cfg.start_factor, "r1_factor": cfg.r1_factor,
                "sphere": asdict(cfg.sphere)},
        profile_checksum=p.checksum(), model_checksum=m.checksum(), profile=p,
    )
    if verdict == Verdict.FINITE:
        cert.c1 = 1.0 / (2.0 * (lam + 1.0))
        cert.petite_radius = cert.r1
    return cert
