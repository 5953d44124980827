"""Compare the compiled and pure-Python kernel backends.

Run ``python3 benchmarks/bench_kernels.py [--n 20000] [--repeat 5] [--json PATH]``.
Kernel rows time the Cython extension itself against the numpy fallback;
the end-to-end rows time whole library calls under each selected backend
(the compiled backend dispatches every kernel to the faster of the two).
Each row reports the best-of-``repeat`` wall time per call, the speedup of
the extension, and the largest absolute difference between the outputs.
"""
import argparse
import json
import sys
import timeit

import numpy as np

from cudvine import _backend, set_backend
from cudvine.bench import mle_design, selection_designs
from cudvine.copulae import Family
from cudvine.estimation import fit_udvine_pits
from cudvine.udvine import simulate_pits

FAMILY_PARAMS = {
    Family.GAUSSIAN: (0.7, 0.0),
    Family.STUDENT_T: (0.7, 4.0),
    Family.CLAYTON: (2.0, 0.0),
    Family.GUMBEL: (2.0, 0.0),
    Family.FRANK: (5.0, 0.0),
    Family.JOE: (2.0, 0.0),
}


def _cases(n, rng):
    u = rng.uniform(size=n)
    v = rng.uniform(size=n)
    cases = []
    for fam, (p0, p1) in FAMILY_PARAMS.items():
        for op in ("logpdf", "hfunc", "hinv"):
            cases.append((f"{op}[{fam.value}]",
                          lambda k, op=op, c=fam.code, p0=p0, p1=p1: getattr(k, op)(c, p0, p1, u, v)))
    cases.append(("t_ppf[nu=4]", lambda k: k.t_ppf(u, 4.0)))
    spec = selection_designs()["t_clayton"]
    fams, params = spec.kernel_arrays()
    init = np.array([0.3, 0.6])
    cases.append(("simulate_chain[t+Clayton]", lambda k: k.simulate_chain(fams, params, u, init)))
    d = 3
    z = rng.standard_normal((n // 10, d))
    cases.append(("dcc_filter[d=3]",
                  lambda k: k.dcc_filter(z, z, np.eye(d), 0.05, 0.9, 6.0, False)))
    return cases


def _first_array(out):
    if isinstance(out, tuple):
        out = out[0]
    return np.asarray(out if out is not None else np.nan, dtype=float)


def _time(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 1_000_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def _end_to_end(n):
    u = simulate_pits(n, selection_designs()["t_clayton"], seed=1)
    u = (np.argsort(np.argsort(u)) + 1.0) / (n + 1.0)
    return [("stage1 fit[t+Clayton]", lambda: fit_udvine_pits(u, [Family.STUDENT_T, Family.CLAYTON])),
            ("simulate model[d=3]", lambda: mle_design().simulate_pits(n, seed=2))]


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--n", type=int, default=20000, help="vector length per kernel call")
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", help="also write the rows to this file")
    args = parser.parse_args(argv)
    if "compiled" not in _backend.available():
        print("compiled kernels are not built; nothing to compare", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    rows = []
    previous = _backend.current()
    try:
        for name, fn in _cases(args.n, rng):
            res, out = {}, {}
            for backend, k in (("compiled", _backend._ckernels), ("python", _backend._pykernels)):
                out[backend] = _first_array(fn(k))
                res[backend] = _time(lambda: fn(k), args.repeat)
            diff = float(np.nanmax(np.abs(out["compiled"] - out["python"])))
            rows.append({"case": name, **res, "speedup": res["python"] / res["compiled"],
                         "max_abs_diff": diff})
        for name, fn in _end_to_end(2000):
            res = {}
            for backend in ("compiled", "python"):
                set_backend(backend)
                res[backend] = _time(fn, 1)
            rows.append({"case": name, **res, "speedup": res["python"] / res["compiled"],
                         "max_abs_diff": None})
    finally:
        set_backend(previous)
    print(f"{'case':32s} {'compiled':>12s} {'python':>12s} {'speedup':>8s} {'max|diff|':>10s}")
    for r in rows:
        diff = "" if r["max_abs_diff"] is None else f"{r['max_abs_diff']:.1e}"
        print(f"{r['case']:32s} {r['compiled'] * 1e3:10.3f}ms {r['python'] * 1e3:10.3f}ms "
              f"{r['speedup']:7.1f}x {diff:>10s}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)
    return 0


if __name__ == "__main__":
    sys.exit(main())
