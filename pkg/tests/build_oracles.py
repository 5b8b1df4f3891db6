"""Regenerate tests/data/lambda_oracle.json (10^4 x 10^4 nested log-Riemann sums).

Run from the repository root: python3 tests/build_oracles.py
"""
import json
import math
import pathlib
import sys
import time

sys.path.insert(0, str(pathlib.Path(__file__).parent))
import oracles as o  # noqa: E402

CASES = {
    "polynomial_drift K=1 kappa=1.5": o.ex1_radial(1.0, 1.5),
    "polynomial_drift K=1 kappa=2": o.ex1_radial(1.0, 2.0),
    "polynomial_drift K=1 kappa=4": o.ex1_radial(1.0, 4.0),
    "oscillating_drift K=1 kappa=1.5 rho=0.5": o.ex2_radial(1.0, 1.5, 0.5),
    "oscillating_drift K=1 kappa=3 rho=0.5": o.ex2_radial(1.0, 3.0, 0.5),
    "oscillating_drift K=1 kappa=3 rho=1.5": o.ex2_radial(1.0, 3.0, 1.5),
    "langevin_tempered alpha=0.2 beta=0.3 c=1": o.ex3_radial(0.2, 0.3, 1.0),
}


def main():
    out = {}
    for name, (iota, log_gamma, r0) in CASES.items():
        t = time.time()
        val = o.brute_lambda(iota, log_gamma, r0)
        # a second, shorter truncation exposes divergence
        short = o.brute_lambda(iota, log_gamma, r0, r_top=1e4)
        out[name] = {"lambda": val if math.isfinite(val) else "inf",
                     "lambda_rtop_1e4": short if math.isfinite(short) else "inf",
                     "n_outer": 10_000, "n_inner": 10_000, "r_top": 1e8}
        print(f"{name}: {val!r} (r_top=1e4: {short!r}) {time.time() - t:.1f}s")
    path = pathlib.Path(__file__).parent / "data" / "lambda_oracle.json"
    path.write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
