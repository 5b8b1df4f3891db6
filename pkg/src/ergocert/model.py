"""Diffusion models ``dX = b(X) dt + sigma(X) dB`` built from coefficient expressions."""
from __future__ import annotations

import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Mapping, Sequence

import numpy as np

from . import dsl


class ParameterRangeWarning(UserWarning):
    """Catalog parameter outside the range for which the closed forms are known to hold."""


@dataclass(frozen=True)
class ModelSpec:
    name: str
    d: int
    n: int
    drift: tuple  # d expressions
    diffusion: tuple  # d rows of n expressions
    x0: tuple
    r0: float
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if self.d < 1 or self.n < 1:
            raise ValueError("dimensions d and n must be >= 1")
        if len(self.drift) != self.d:
            raise ValueError(f"drift needs {self.d} entries, got {len(self.drift)}")
        if len(self.diffusion) != self.d or any(len(row) != self.n for row in self.diffusion):
            raise ValueError(f"diffusion must be a {self.d}x{self.n} grid")
        if len(self.x0) != self.d:
            raise ValueError("x0 has wrong dimension")
        if not (self.r0 > 0 and math.isfinite(self.r0)):
            raise ValueError("r0 must be a positive finite radius")
        for k, v in self.params.items():
            if not math.isfinite(v):
                raise ValueError(f"parameter {k} is not finite")
        for e in self.expressions():
            missing = dsl.free_params(e) - set(self.params)
            if missing:
                raise ValueError(f"unresolved parameters {sorted(missing)}")
            if dsl.max_coord(e) > self.d:
                raise ValueError("coordinate index exceeds dimension")
        object.__setattr__(self, "params", MappingProxyType(dict(self.params)))
        object.__setattr__(self, "x0", tuple(float(v) for v in self.x0))

    def expressions(self):
        yield from self.drift
        for row in self.diffusion:
            yield from row

    @property
    def center(self) -> np.ndarray:
        return np.asarray(self.x0, dtype=float)

    def drift_at(self, X) -> np.ndarray:
        """Drift at the rows of ``X``; shape ``(N, d)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = self.center
        return np.stack([dsl.evaluate(e, X, self.params, c) for e in self.drift], axis=1)

    def diffusion_at(self, X) -> np.ndarray:
        """Diffusion matrices at the rows of ``X``; shape ``(N, d, n)``."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        c = self.center
        cols = [[dsl.evaluate(e, X, self.params, c) for e in row] for row in self.diffusion]
        return np.stack([np.stack(r, axis=1) for r in cols], axis=1)

    # ------------------------------------------------------------------ serialisation
    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "d": self.d,
            "n": self.n,
            "x0": list(self.x0),
            "r0": self.r0,
            "params": dict(sorted(self.params.items())),
            "drift": [dsl.to_text(e) for e in self.drift],
            "diffusion": [[dsl.to_text(e) for e in row] for row in self.diffusion],
        }

    def checksum(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def eval_drift(m: ModelSpec, x) -> np.ndarray:
    """b(x) at a single point."""
    return m.drift_at(np.asarray(x, dtype=float).reshape(1, m.d))[0]


def eval_diffusion(m: ModelSpec, x) -> np.ndarray:
    """sigma(x) at a single point, shape ``(d, n)``."""
    return m.diffusion_at(np.asarray(x, dtype=float).reshape(1, m.d))[0]


def eval_masked(m: ModelSpec, X):
    """(b, sigma, ok, bad) with rows that leave the domain or overflow masked out as NaN.

    ``bad`` lists the masked row indices in discovery order.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    ok = np.ones(len(X), dtype=bool)
    bad: list[int] = []
    while True:
        rows = np.flatnonzero(ok)
        if len(rows) == 0:
            return np.full((len(X), m.d), np.nan), np.full((len(X), m.d, m.n), np.nan), ok, bad
        try:
            b = m.drift_at(X[rows])
            s = m.diffusion_at(X[rows])
            break
        except dsl.DomainError as exc:
            hit = rows[np.all(X[rows] == exc.point, axis=1)] if exc.point is not None else rows[:1]
            idx = int(hit[0]) if len(hit) else int(rows[0])
            ok[idx] = False
            bad.append(idx)
    B = np.full((len(X), m.d), np.nan)
    S = np.full((len(X), m.d, m.n), np.nan)
    B[rows], S[rows] = b, s
    finite = np.isfinite(B).all(axis=1) & np.isfinite(S).all(axis=(1, 2))
    for i in np.flatnonzero(ok & ~finite):
        bad.append(int(i))
    ok &= finite
    return B, S, ok, bad


def build_model(name, d, n, drift: Sequence[str], diffusion: Sequence[Sequence[str]],
                x0=None, r0=1.0, params=None) -> ModelSpec:
    params = {k: float(v) for k, v in (params or {}).items()}
    names = set(params)
    x0 = tuple(x0) if x0 is not None else (0.0,) * d
    return ModelSpec(
        name=name, d=d, n=n,
        drift=tuple(dsl.parse_expr(s, d, names) for s in drift),
        diffusion=tuple(tuple(dsl.parse_expr(s, d, names) for s in row) for row in diffusion),
        x0=x0, r0=float(r0), params=params,
    )


def model_from_dict(doc: Mapping) -> ModelSpec:
    try:
        return build_model(doc["name"], int(doc["d"]), int(doc["n"]), doc["drift"],
                           doc["diffusion"], doc.get("x0"), doc.get("r0", 1.0),
                           doc.get("params", {}))
    except KeyError as exc:
        raise ValueError(f"model document is missing field {exc.args[0]!r}") from None


def load_model(path) -> ModelSpec:
    with open(path) as fh:
        return model_from_dict(json.load(fh))


# ---------------------------------------------------------------------- catalog

def _identity(d):
    return [["1" if i == j else "0" for j in range(d)] for i in range(d)]


def _warn(cond, message):
    if not cond:
        warnings.warn(message, ParameterRangeWarning, stacklevel=3)


def _polynomial_drift(K=1.0, kappa=2.0, d=1):
    _warn(K > 0, "polynomial_drift expects K > 0")
    _warn(kappa > 1, "polynomial_drift expects kappa > 1")
    drift = [f"-K*x{i + 1}*abs(x)^(kappa-1)" for i in range(d)]
    return build_model("polynomial_drift", d, d, drift, _identity(d), r0=1.0,
                       params={"K": K, "kappa": kappa})


def _oscillating_drift(K=1.0, kappa=2.0, rho=0.5, d=1):
    if d != 1:
        raise ValueError("oscillating_drift is one-dimensional")
    _warn(K > 0, "oscillating_drift expects K > 0")
    _warn(kappa > 1, "oscillating_drift expects kappa > 1")
    _warn(rho > 0, "oscillating_drift expects rho > 0")
    return build_model("oscillating_drift", 1, 1,
                       ["-K*x1*abs(x)^(kappa-1)*(cos(x1)+rho)"], [["1"]], r0=1.0,
                       params={"K": K, "kappa": kappa, "rho": rho})


def _langevin_tempered(alpha=0.2, beta=0.3, c=1.0, d=1):
    _warn(0 < alpha < 1 / d, "langevin_tempered expects alpha in (0, 1/d)")
    _warn(0 < beta < (1 + alpha * (2 - d)) / 2,
          "langevin_tempered expects beta in (0, (1 + alpha(2 - d))/2)")
    _warn(c > 0, "langevin_tempered expects c > 0")
    sig = "c^(-beta)*abs(x)^(beta/alpha)"
    diffusion = [[sig if i == j else "0" for j in range(d)] for i in range(d)]
    drift = [f"-((1-2*beta)/(2*alpha))*c^(-2*beta)*x{i + 1}*abs(x)^(2*beta/alpha-2)"
             for i in range(d)]
    return build_model("langevin_tempered", d, d, drift, diffusion, r0=2.0,
                       params={"alpha": alpha, "beta": beta, "c": c})


CATALOG = {
    "polynomial_drift": _polynomial_drift,
    "oscillating_drift": _oscillating_drift,
    "langevin_tempered": _langevin_tempered,
}


def catalog(name: str, params: Mapping[str, float] | None = None) -> ModelSpec:
    """Built-in example models.

    ``polynomial_drift`` (K, kappa, d), ``oscillating_drift`` (K, kappa, rho)
    and ``langevin_tempered`` (alpha, beta, c, d).  All are centred at the
    origin; r0 is 1, 1 and 2 respectively.  Out-of-range parameters emit a
    :class:`ParameterRangeWarning` but still build.
    """
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown catalog model {name!r}; choose from {sorted(CATALOG)}") from None
    kwargs = dict(params or {})
    if "d" in kwargs:
        kwargs["d"] = int(kwargs["d"])
    try:
        return factory(**kwargs)
    except TypeError as exc:
        raise ValueError(f"bad parameters for {name}: {exc}") from None
