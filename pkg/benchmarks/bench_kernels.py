"""Compiled kernels vs the NumPy fallback.

Two views:

* raw kernels, both implementations called side by side in this process;
* whole streaming updates per updater, each backend in its own child
  process because the backend is fixed at import time.

Usage::

    python3 benchmarks/bench_kernels.py [--hidden 24] [--updates 500] [--json out.json]
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat: int = 5, number: int = 200) -> float:
    """Best mean wall time of ``fn()`` in microseconds."""
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        for _ in range(number):
            fn()
        best = min(best, (time.perf_counter() - t0) / number)
    return best * 1e6


def raw_kernels(hidden: int) -> list:
    from streamrx import _backend, _pykernels as py

    ext = _backend.ext
    if ext is None:
        return []
    rng = np.random.default_rng(0)
    d, B, M = 16, 2, 10
    widths = (d, hidden, B)
    P = d * hidden + hidden + hidden * B + B
    theta = rng.standard_normal(P) * 0.3
    x = rng.standard_normal(d)
    bits = np.array([1.0, 0.0])
    thetas = theta + 0.1 * rng.standard_normal((M, P))
    A = rng.standard_normal((P, P)) / np.sqrt(P)
    sigma0 = A @ A.T + np.eye(P)
    H = np.ascontiguousarray(rng.standard_normal((B, P)) * 0.1)
    r = np.array([0.2, 0.25])
    innov = np.array([0.3, -0.4])

    def cm(kern):
        mean, sigma = theta.copy(), sigma0.copy()
        return lambda: kern(mean, sigma, H, r, innov, 1.0, 0.0)

    pairs = [
        ("forward", lambda: ext.mlp1_forward(theta, x, d, hidden, B),
         lambda: py.forward(widths, theta, x)),
        ("logit_jacobian", lambda: ext.mlp1_logit_jacobian(theta, x, d, hidden, B),
         lambda: py.logit_jacobian(widths, theta, x)),
        ("score_batch(M=10)", lambda: ext.mlp1_score_batch(thetas, x, bits, d, hidden, B),
         lambda: py.score_batch(widths, thetas, x, bits)),
        ("cmekf_step", cm(ext.cmekf_step), cm(py.cmekf_step)),
    ]
    rows = []
    for name, fc, fp in pairs:
        n = 20 if name == "cmekf_step" else 500
        tc, tp = _best_of(fc, number=n), _best_of(fp, number=n)
        rows.append({"kernel": name, "P": P, "compiled_us": tc, "python_us": tp})
    return rows


def updater_times(hidden: int, updates: int) -> dict:
    """Mean update time per roster entry under the backend of this process."""
    from streamrx import _backend
    from streamrx.harness.latency import DEFAULT_ROSTER, measure_latency

    rows = measure_latency([(16, hidden, 2)], DEFAULT_ROSTER, n_updates=updates,
                           warmup=min(100, updates), n_input_bits=6)
    return {"backend": _backend.BACKEND,
            "rows": [{"updater": r.updater, "repr": r.repr, "P": r.P, "mean_us": r.mean_us}
                     for r in rows]}


def _child(backend: str, hidden: int, updates: int) -> dict:
    env = dict(os.environ)
    if backend == "python":
        env["STREAMRX_PURE_PYTHON"] = "1"
    else:
        env.pop("STREAMRX_PURE_PYTHON", None)
    out = subprocess.run(
        [sys.executable, __file__, "--child", "--hidden", str(hidden), "--updates", str(updates)],
        env=env, check=True, capture_output=True, text=True,
    )
    return json.loads(out.stdout)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--hidden", type=int, default=24, help="module hidden width (24 gives P=458)")
    ap.add_argument("--updates", type=int, default=500)
    ap.add_argument("--json", help="also write the results here")
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    args = ap.parse_args(argv)

    if args.child:
        print(json.dumps(updater_times(args.hidden, args.updates)))
        return 0

    raw = raw_kernels(args.hidden)
    if raw:
        print(f"{'kernel':20s} {'P':>6s} {'compiled us':>12s} {'numpy us':>10s} {'speedup':>8s}")
        for r in raw:
            print(f"{r['kernel']:20s} {r['P']:6d} {r['compiled_us']:12.2f} "
                  f"{r['python_us']:10.2f} {r['python_us'] / r['compiled_us']:8.1f}x")
        print()
    else:
        print("compiled extension not built; only the NumPy fallback is available\n")

    comp = _child("compiled", args.hidden, args.updates)
    pure = _child("python", args.hidden, args.updates)
    print(f"per-update time ({comp['backend']} vs {pure['backend']})")
    print(f"{'updater':10s} {'repr':8s} {'P':>6s} {'compiled us':>12s} {'numpy us':>10s} {'speedup':>8s}")
    for a, b in zip(comp["rows"], pure["rows"]):
        print(f"{a['updater']:10s} {a['repr']:8s} {a['P']:6d} {a['mean_us']:12.1f} "
              f"{b['mean_us']:10.1f} {b['mean_us'] / a['mean_us']:8.1f}x")
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            json.dump({"raw": raw, "compiled": comp, "python": pure}, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
