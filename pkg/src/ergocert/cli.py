"""Command-line entry point: ``ergocert <subcommand> ...``.

Exit codes are the machine contract.  certify: 0 FINITE, 2 INFINITE,
3 INCONCLUSIVE.  lyapunov: 0 PASS, 2 FAIL, 3 no FINITE certificate.
check-assumptions: 0 nothing falsified, 2 some assumption VIOLATED.
tv/subordinate/simulate: 0, or 2 when too many paths were dropped.
Any error: 1, with a JSON document on stderr.  Structured results go to
files under ``--out``; stdout is a human summary.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .certify import CertifyConfig, Verdict, _jsonable, compute_lambda
from .checks import check_ellipticity, check_growth, check_local_bound, check_onesided
from .dsl import ExprError
from .lyapunov import attach_constants, drift_check, escape_bound
from .model import ModelSpec, catalog, load_model, model_from_dict
from .radial import EllipticityError
from .simulate import (SimConfig, SubordinatorSpec, em_ensemble, hitting_mc, subordinate_tv,
                       uniform_tv_curve)

EXIT_OK, EXIT_ERROR, EXIT_NEGATIVE, EXIT_INCONCLUSIVE = 0, 1, 2, 3


# ------------------------------------------------------------------ plumbing

def _dump(obj) -> str:
    return json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Run:
    """Output directory with a manifest recording every stage."""

    def __init__(self, out: str):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.t0 = time.perf_counter()

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        with open(path, "w", newline="\n") as fh:
            fh.write(text)
        self.files.append(name)
        return path

    def finish(self, stage: str, m: ModelSpec | None, config: dict, seeds: list):
        mpath = self.dir / "manifest.json"
        doc = json.loads(mpath.read_text()) if mpath.exists() else {}
        doc["tool_version"] = __version__
        stages = doc.setdefault("stages", {})
        # a file rewritten here no longer matches an earlier stage's hash
        for name, st in stages.items():
            if name == stage:
                continue
            kept = [o for o in st["outputs"] if o["file"] not in self.files]
            moved = [dict(o, by=stage) for o in st["outputs"] if o["file"] in self.files]
            st["outputs"] = kept
            if moved:
                st.setdefault("superseded", []).extend(moved)
        stages[stage] = {
            "model_checksum": m.checksum() if m is not None else None,
            "model": m.to_dict() if m is not None else None,
            "config": config, "seeds": seeds,
            "outputs": [{"file": f, "sha256": _sha256(self.dir / f)} for f in self.files],
            "wall_clock_s": time.perf_counter() - self.t0,
        }
        mpath.write_text(_dump(doc))


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ValueError(f"--param expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = float(v)
    return out


def _load_config(path) -> dict:
    if not path:
        return {}
    with open(path) as fh:
        return json.load(fh)


def _merged(args, defaults: dict, keys) -> dict:
    """catalog/built-in defaults < --config file < explicit flags."""
    cfg = dict(defaults)
    cfg.update({k: v for k, v in _load_config(args.config).items() if k in keys})
    for k in keys:
        v = getattr(args, k, None)
        if v is not None:
            cfg[k] = v
    return cfg


def _model(args) -> ModelSpec:
    file_cfg = _load_config(args.config)
    params = dict(file_cfg.get("params", {}))
    params.update(_parse_params(args.param))
    if args.model:
        if params:
            with open(args.model) as fh:
                doc = json.load(fh)
            doc["params"] = {**doc.get("params", {}), **params}
            return model_from_dict(doc)
        return load_model(args.model)
    name = args.catalog or file_cfg.get("catalog")
    if not name:
        raise ValueError("give --model FILE or --catalog NAME")
    return catalog(name, params)


def _points(text: str, d: int) -> np.ndarray:
    pts = [[float(v) for v in chunk.split(",")] for chunk in text.split(";") if chunk.strip()]
    arr = np.array(pts, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValueError(f"points must have {d} coordinates each: {text!r}")
    return arr


def _checkpoints(value) -> tuple:
    if isinstance(value, (list, tuple)):
        return tuple(float(v) for v in value)
    return tuple(float(v) for v in str(value).split(",") if v.strip())


def _sim_config(cfg: dict) -> SimConfig:
    T = float(cfg["t"])
    cps = _checkpoints(cfg["checkpoints"]) if cfg.get("checkpoints") else (T,)
    return SimConfig(dt=float(cfg["dt"]), T=T, checkpoints=cps, n_paths=int(cfg["paths"]),
                     seed=int(cfg["seed"]))


# ------------------------------------------------------------------ subcommands

CERT_KEYS = ("tol", "max_doublings", "nodes", "start_factor", "r1_factor")
CERT_DEFAULTS = {"tol": 1e-4, "max_doublings": 12, "nodes": 256, "start_factor": 8.0, "r1_factor": 2.0}


def _certify_config(cfg: dict) -> CertifyConfig:
    return CertifyConfig(tol=float(cfg["tol"]), max_doublings=int(cfg["max_doublings"]),
                         nodes_per_doubling=int(cfg["nodes"]), start_factor=float(cfg["start_factor"]),
                         r1_factor=float(cfg["r1_factor"]))


def _require_a5(m: ModelSpec, rmax: float):
    """Sampled (A5) screen over the certification range.

    Grid nodes alone can step over an isolated degenerate radius.
    """
    rep = check_ellipticity(m, "A5", N=2048, rmax=rmax)
    if rep.violated:
        raise EllipticityError("(A5) violated: sigma sigma^T is singular outside the ball", rep.witness["x"])


def cmd_certify(args) -> int:
    m = _model(args)
    cfg = _merged(args, CERT_DEFAULTS, CERT_KEYS)
    cc = _certify_config(cfg)
    _require_a5(m, cc.start_factor * m.r0 * 2.0 ** cc.max_doublings)
    run = Run(args.out)
    cert = compute_lambda(m, cc)
    run.write("certificate.json", cert.to_json())
    run.write("profile.csv", cert.profile.to_csv())
    run.finish("certify", m, cfg, [])
    print(f"{m.name}: {cert.verdict.value}  Lambda = {cert.lambda_est:.17g}  "
          f"(rmax {cert.rmax:.6g}, rel. change {cert.rel_err_est:.3g})")
    return {Verdict.FINITE: EXIT_OK, Verdict.INFINITE: EXIT_NEGATIVE}.get(cert.verdict, EXIT_INCONCLUSIVE)


LY_KEYS = CERT_KEYS + ("samples", "seed", "c2_samples")
LY_DEFAULTS = {**CERT_DEFAULTS, "samples": 10000, "seed": 0, "c2_samples": 4096}


def cmd_lyapunov(args) -> int:
    m = _model(args)
    cfg = _merged(args, LY_DEFAULTS, LY_KEYS)
    run = Run(args.out)
    cert = compute_lambda(m, _certify_config(cfg))
    if args.certificate:
        stored = json.loads(Path(args.certificate).read_text())
        if stored.get("model_checksum") != m.checksum():
            raise ValueError("certificate belongs to a different model")
        if stored.get("lambda_est") != _jsonable(cert.lambda_est):
            raise ValueError("certificate does not match a recomputation with this configuration")
    if not cert.finite:
        run.write("certificate.json", cert.to_json())
        run.finish("lyapunov", m, cfg, [cfg["seed"]])
        print(f"{m.name}: certificate is {cert.verdict.value}; no Lyapunov function")
        return EXIT_INCONCLUSIVE
    L = attach_constants(cert, m, n_samples=int(cfg["c2_samples"]), seed=int(cfg["seed"]))
    rep = drift_check(m, L, cert.c1, cert.c2, n_samples=int(cfg["samples"]), seed=int(cfg["seed"]))
    run.write("certificate.json", cert.to_json())
    run.write("lyapunov.csv", L.to_csv(m))
    run.write("drift_check.json", rep.to_json())
    run.finish("lyapunov", m, cfg, [cfg["seed"]])
    print(f"{m.name}: drift check {'PASS' if rep.passed else 'FAIL'}  c1 = {rep.c1:.6g}  c2 = {rep.c2:.6g}  "
          f"max violation {rep.max_violation:.3g}  sup exterior G L = {rep.max_generator_exterior:.6g}")
    return EXIT_OK if rep.passed else EXIT_NEGATIVE


SIM_KEYS = ("dt", "t", "paths", "seed", "checkpoints")
SIM_DEFAULTS = {"dt": 1e-3, "t": 1.0, "paths": 10000, "seed": 0, "checkpoints": None}


def cmd_simulate(args) -> int:
    m = _model(args)
    cfg = _merged(args, {**SIM_DEFAULTS, "x": None}, SIM_KEYS + ("x",))
    x = _points(cfg["x"], m.d)[0] if cfg["x"] is not None else m.center
    sc = _sim_config(cfg)
    run = Run(args.out)
    ens = em_ensemble(m, x, sc)
    lines = ["t,dim,mean,var"]
    for mo in ens.moments():
        for i in range(m.d):
            lines.append(f"{mo['t']:.17g},{i + 1},{mo['mean'][i]:.17g},{mo['var'][i]:.17g}")
    run.write("ensemble_stats.csv", "\n".join(lines) + "\n")
    run.write("ensemble.json", _dump({"n_paths": ens.n_paths, "n_dropped": ens.n_dropped,
                                      "valid": ens.valid, "x_init": x, "config": sc.to_dict()}))
    run.finish("simulate", m, cfg, [sc.seed])
    print(f"{m.name}: {ens.n_paths} paths, {ens.n_dropped} dropped, valid={ens.valid}")
    return EXIT_OK if ens.valid else EXIT_NEGATIVE


def _write_curve(run: Run, prefix: str, curve):
    run.write(f"{prefix}.csv", curve.to_csv())
    run.write(f"{prefix}_sup.csv", curve.sup_csv())
    run.write(f"{prefix}_fit.json", curve.fit_json())
    run.write(f"{prefix}_meta.json", _dump(curve.meta))


def _curve_summary(name, curve) -> str:
    sup = ", ".join(f"{v:.4f}" for v in curve.sup_tv)
    fit = (f"beta_hat = {curve.fit.beta_hat:.4g}, residual {curve.fit.residual:.3g}" if curve.fit
           else f"fit refused ({curve.meta.get('fit_error')})")
    return f"{name}: sup_tv [{sup}] at t = {list(curve.times)}; {fit}"


def cmd_tv(args) -> int:
    m = _model(args)
    cfg = _merged(args, {**SIM_DEFAULTS, "starts": None, "ref": None}, SIM_KEYS + ("starts", "ref"))
    if not cfg["starts"]:
        raise ValueError("--starts is required")
    starts = _points(cfg["starts"], m.d)
    ref = _points(cfg["ref"], m.d)[0] if cfg["ref"] is not None else m.center
    sc = _sim_config(cfg)
    run = Run(args.out)
    curve = uniform_tv_curve(m, starts, ref, sc)
    _write_curve(run, "tv", curve)
    run.finish("tv", m, cfg, [sc.seed])
    print(_curve_summary(m.name, curve))
    return EXIT_OK if curve.meta["valid"] else EXIT_NEGATIVE


SUB_KEYS = ("kind", "alpha", "rate", "jump_mean", "drift", "cap")
SUB_DEFAULTS = {"kind": "stable", "alpha": 0.5, "rate": 1.0, "jump_mean": 1.0, "drift": 0.0, "cap": 20.0}


def cmd_subordinate(args) -> int:
    m = _model(args)
    keys = SIM_KEYS + ("starts", "ref") + SUB_KEYS
    cfg = _merged(args, {**SIM_DEFAULTS, "starts": None, "ref": None, **SUB_DEFAULTS}, keys)
    if not cfg["starts"]:
        raise ValueError("--starts is required")
    starts = _points(cfg["starts"], m.d)
    ref = _points(cfg["ref"], m.d)[0] if cfg["ref"] is not None else m.center
    spec = SubordinatorSpec(cfg["kind"], float(cfg["alpha"]), float(cfg["rate"]),
                            float(cfg["jump_mean"]), float(cfg["drift"]))
    sc = _sim_config(cfg)
    run = Run(args.out)
    curve = subordinate_tv(m, spec, starts, ref, sc, horizon_cap=float(cfg["cap"]))
    _write_curve(run, "subordinate", curve)
    run.finish("subordinate", m, cfg, [sc.seed])
    print(_curve_summary(f"{m.name} subordinated ({spec.kind})", curve))
    return EXIT_OK if curve.meta["valid"] else EXIT_NEGATIVE


def cmd_hitting(args) -> int:
    m = _model(args)
    cfg = _merged(args, {**SIM_DEFAULTS, "t": 10.0, "x": None}, SIM_KEYS + ("x",))
    if not cfg["x"]:
        raise ValueError("--x is required")
    sc = _sim_config(cfg)
    run = Run(args.out)
    rows = []
    for i, x in enumerate(_points(cfg["x"], m.d)):
        est = hitting_mc(m, x, T=sc.T, cfg=sc, stream=i)
        eb = escape_bound(m, x)
        rows.append({"x": x, "escape_bound": eb, **est.to_dict(),
                     "consistent": (1 - est.p) <= eb + 3 * est.half_width})
    run.write("hitting.json", _dump({"T": sc.T, "rows": rows}))
    run.finish("hitting", m, cfg, [sc.seed])
    for r in rows:
        print(f"x = {list(r['x'])}: P(hit by T) = {r['p']:.4f} +- {r['half_width']:.4f}, "
              f"escape bound {r['escape_bound']:.4g}, consistent={r['consistent']}")
    return EXIT_OK if all(r["consistent"] for r in rows) else EXIT_NEGATIVE


def cmd_check_assumptions(args) -> int:
    m = _model(args)
    r_default = 4.0 * m.r0 + float(np.linalg.norm(m.center))
    cfg = _merged(args, {"radius": r_default, "samples": 2048, "seed": 0}, ("radius", "samples", "seed"))
    r, N, seed = float(cfg["radius"]), int(cfg["samples"]), int(cfg["seed"])
    run = Run(args.out)
    reports = [check_local_bound(m, r, N, seed), check_onesided(m, r, N, seed),
               check_growth(m, 64.0 * r, N, seed), check_ellipticity(m, "A4", N, seed),
               check_ellipticity(m, "A5", N, seed)]
    for rep in reports:
        run.write(f"assumption_{rep.assumption}.json", rep.to_json())
    run.write("assumptions.json", _dump({rep.assumption: rep.status.value for rep in reports}))
    run.finish("check-assumptions", m, cfg, [seed])
    print(reports[0].banner)
    for rep in reports:
        print(f"  {rep.assumption}: {rep.status.value}")
    return EXIT_NEGATIVE if any(rep.violated for rep in reports) else EXIT_OK


def _read_json(path: Path):
    return json.loads(path.read_text()) if path.exists() else None


def cmd_report(args) -> int:
    d = Path(args.run_dir)
    if not d.is_dir():
        raise ValueError(f"{d} is not a directory")
    run = Run(str(d))
    out = ["# ergocert run report", ""]
    man = _read_json(d / "manifest.json") or {}
    stages = man.get("stages", {})
    if stages:
        any_stage = next(iter(stages.values()))
        if any_stage.get("model"):
            out += [f"Model `{any_stage['model']['name']}`, checksum `{any_stage['model_checksum']}`.", ""]
    cert = _read_json(d / "certificate.json")
    if cert:
        out += ["## Certificate", "",
                f"- verdict: **{cert['verdict']}**",
                f"- Lambda: {cert['lambda_est']}",
                f"- truncation radius: {cert['rmax']}, relative change {cert['rel_err_est']}",
                f"- c1 = {cert.get('c1')}, c2 = {cert.get('c2')}, petite radius {cert.get('petite_radius')}",
                "- profile: `profile.csv`", ""]
    dc = _read_json(d / "drift_check.json")
    if dc:
        out += ["## Drift check", "",
                f"- result: **{'PASS' if dc['pass'] else 'FAIL'}** over {dc['n_samples']} samples",
                f"- max violation {dc['max_violation']} at x = {dc['witness_x']}",
                f"- sup of the radial generator outside r1: {dc['max_generator_exterior']}"
                f" (<= -1/2: {dc['exterior_le_minus_half']})",
                "- Lyapunov table: `lyapunov.csv`", ""]
    for prefix, title in (("tv", "Total-variation decay"), ("subordinate", "Subordinated decay")):
        fit = _read_json(d / f"{prefix}_fit.json")
        sup = d / f"{prefix}_sup.csv"
        if fit is not None and sup.exists():
            out += [f"## {title}", "", "| t | sup_tv |", "|---|---|"]
            for line in sup.read_text().splitlines()[1:]:
                t, v = line.split(",")
                out.append(f"| {t} | {v} |")
            out += ["", f"- fit: B_hat = {fit.get('B_hat')}, beta_hat = {fit.get('beta_hat')}, "
                        f"residual = {fit.get('residual')}",
                    f"- sup over the start grid is a proxy for the sup over all starts; per-start values in `{prefix}.csv`, sup curve in `{prefix}_sup.csv`", ""]
    hit = _read_json(d / "hitting.json")
    if hit:
        out += ["## Hitting probability against the escape bound", "",
                "| x | P(hit by T) | half-width | escape bound | consistent |", "|---|---|---|---|---|"]
        for r in hit["rows"]:
            out.append(f"| {r['x']} | {r['p']} | {r['half_width']} | {r['escape_bound']} | {r['consistent']} |")
        out.append("")
    ass = _read_json(d / "assumptions.json")
    if ass:
        out += ["## Assumption checks (falsification only)", ""]
        out += [f"- {k}: {v}" for k, v in sorted(ass.items())] + [""]
    run.write("report.md", "\n".join(out))
    run.finish("report", None, {"run_dir": str(d)}, [])
    print(f"wrote {d / 'report.md'}")
    return EXIT_OK


# ------------------------------------------------------------------ parser

def _add_model_args(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--model", help="model JSON file")
    g.add_argument("--catalog", help="built-in model name")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="parameter override (repeatable)")
    p.add_argument("--config", help="JSON file with option values; flags take precedence")
    p.add_argument("--out", default="ergocert_run", help="output directory")
    p.add_argument("--workers", type=int, default=None,
                   help="parallelism cap; results do not depend on it")


def _add_sim_args(p):
    p.add_argument("--dt", type=float)
    p.add_argument("--t", type=float, help="horizon T")
    p.add_argument("--checkpoints", help="comma-separated times in (0, T]")
    p.add_argument("--paths", type=int)
    p.add_argument("--seed", type=int)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ergocert", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"ergocert {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("certify", help="decide finiteness of Lambda")
    _add_model_args(p)
    p.add_argument("--tol", type=float)
    p.add_argument("--max-doublings", dest="max_doublings", type=int)
    p.add_argument("--nodes", type=int, help="grid nodes per radius doubling")
    p.add_argument("--start-factor", dest="start_factor", type=float)
    p.add_argument("--r1-factor", dest="r1_factor", type=float)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("lyapunov", help="build L and run the drift check")
    _add_model_args(p)
    p.add_argument("--certificate", help="certificate JSON to cross-check against")
    p.add_argument("--tol", type=float)
    p.add_argument("--max-doublings", dest="max_doublings", type=int)
    p.add_argument("--nodes", type=int)
    p.add_argument("--start-factor", dest="start_factor", type=float)
    p.add_argument("--r1-factor", dest="r1_factor", type=float)
    p.add_argument("--samples", type=int, help="drift-check samples")
    p.add_argument("--c2-samples", dest="c2_samples", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_lyapunov)

    p = sub.add_parser("simulate", help="Euler-Maruyama ensemble statistics")
    _add_model_args(p)
    _add_sim_args(p)
    p.add_argument("--x", help="start point, comma-separated coordinates")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tv", help="TV decay curve over a start grid")
    _add_model_args(p)
    _add_sim_args(p)
    p.add_argument("--starts", help="start points 'x1,x2;y1,y2;...'")
    p.add_argument("--ref", help="reference start point")
    p.set_defaults(func=cmd_tv)

    p = sub.add_parser("subordinate", help="TV decay of the subordinated process")
    _add_model_args(p)
    _add_sim_args(p)
    p.add_argument("--starts")
    p.add_argument("--ref")
    p.add_argument("--kind", choices=["stable", "compound_poisson", "drift_compound", "drift"])
    p.add_argument("--alpha", type=float, help="stable index")
    p.add_argument("--rate", type=float)
    p.add_argument("--jump-mean", dest="jump_mean", type=float)
    p.add_argument("--drift", type=float)
    p.add_argument("--cap", type=float, help="cap on the random horizon S(t)")
    p.set_defaults(func=cmd_subordinate)

    p = sub.add_parser("hitting", help="hitting probability against the escape bound")
    _add_model_args(p)
    _add_sim_args(p)
    p.add_argument("--x", help="start points 'x1;x2;...'")
    p.set_defaults(func=cmd_hitting)

    p = sub.add_parser("check-assumptions", help="sample-based falsification of (A1)-(A5)")
    _add_model_args(p)
    p.add_argument("--radius", type=float)
    p.add_argument("--samples", type=int)
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_check_assumptions)

    p = sub.add_parser("report", help="markdown summary of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except EllipticityError as exc:
        sys.stderr.write(_dump({"error": "ellipticity", "message": str(exc), "witness": exc.witness}))
        return EXIT_ERROR
    except (ValueError, ExprError, OSError, KeyError) as exc:
        doc = {"error": type(exc).__name__, "message": str(exc)}
        if getattr(exc, "point", None) is not None:
            doc["witness"] = exc.point
        sys.stderr.write(_dump(doc))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
