"""Command-line entry point: ``majdesign {design,verify,spectrum,toeplitz,ct-demo}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import io
from .dual import DesignProblem, design, verify_majorization
from .experiments import ToeplitzConfig, config_from_file, load_H, run_toeplitz, summary_rows
from .solvers import majorized_spectrum

OUT_ENV = "MAJDESIGN_OUT"
DENSE_VERIFY_CAP = 4096

log = logging.getLogger("majdesign")


class CLIError(Exception):
    pass


def default_out() -> str:
    return os.environ.get(OUT_ENV, ".")


def _load_w(spec, rows: int) -> np.ndarray:
    if spec is None or spec == "uniform":
        return np.ones(rows)
    path = Path(spec)
    if not path.exists():
        raise CLIError(f"weight file {spec!r} not found")
    w = io.read_vector(path).real
    if w.size != rows:
        raise CLIError(f"weight file has {w.size} entries, K has {rows} rows")
    return w


def _load_H(source):
    if source is None:
        raise CLIError("--H is required")
    try:
        return load_H(source)
    except (FileNotFoundError, ValueError) as exc:
        raise CLIError(str(exc)) from exc


def _dense_ok(n: int, mode: str):
    if mode == "dense" and n > DENSE_VERIFY_CAP:
        raise CLIError(f"dense check of a {n}x{n} matrix refused (cap {DENSE_VERIFY_CAP}); "
                       "rerun with --mode lanczos")


def cmd_design(args) -> int:
    H, Hd = _load_H(args.H)
    n = H.cols
    try:
        K = io.parse_K(args.K, n)
    except (ValueError, OSError) as exc:
        raise CLIError(f"bad K descriptor: {exc}") from exc
    w = _load_w(args.W, K.rows)
    res = design(DesignProblem(H, K, w), iters=args.iters, seed=args.seed,
                 cert_mode=args.cert, allow_iterative_power=True)
    M = res.majorizer
    if args.cert != "none":
        if n <= DENSE_VERIFY_CAP:
            ok, lam = verify_majorization(M, Hd if Hd is not None else H, "dense")
        else:
            ok, lam = verify_majorization(M, H, "lanczos", seed=args.seed)
        if not ok:
            print(f"design: majorization not certified (min_eig {lam!r})", file=sys.stderr)
            return 2
    out = Path(args.out or default_out())
    out.mkdir(parents=True, exist_ok=True)
    io.write_majorizer(out / f"{args.name}.txt", M,
                       extra={"seed": args.seed, "iters": res.certification["iterations"],
                              "stop_reason": res.stop_reason})
    io.write_csv(out / f"{args.name}_trace.csv", ("iter", "dual_value", "grad_norm"), res.trace)
    print(f"alpha {M.alpha!r}")
    print(f"wrote {out / (args.name + '.txt')}")
    return 0


def _load_M(path):
    if path is None:
        raise CLIError("--M is required")
    p = Path(path)
    if not p.exists():
        raise CLIError(f"majorizer sidecar {path!r} not found")
    try:
        return io.read_majorizer(p)
    except (KeyError, ValueError, OSError) as exc:
        raise CLIError(f"cannot read majorizer {path!r}: {exc}") from exc


def cmd_verify(args) -> int:
    M = _load_M(args.M)
    H, Hd = _load_H(args.H)
    if M.dim != H.cols:
        raise CLIError(f"majorizer is {M.dim}-dimensional, H is {H.cols}")
    _dense_ok(M.dim, args.mode)
    target = Hd if (Hd is not None and args.mode == "dense") else H
    ok, lam = verify_majorization(M, target, args.mode, rtol=args.rtol, seed=args.seed)
    print(f"min_eig {lam!r}")
    print("majorizes" if ok else "does not majorize")
    return 0 if ok else 1


def cmd_spectrum(args) -> int:
    M = _load_M(args.M)
    H, Hd = _load_H(args.H)
    if M.dim != H.cols:
        raise CLIError(f"majorizer is {M.dim}-dimensional, H is {H.cols}")
    _dense_ok(M.dim, "dense")
    spec = majorized_spectrum(M, Hd if Hd is not None else H)
    out = Path(args.out or default_out())
    out.mkdir(parents=True, exist_ok=True)
    io.write_csv(out / f"{args.name}.csv", ("eigenvalue",), ((v,) for v in spec))
    print(f"min {spec[0]!r} max {spec[-1]!r}")
    return 0


def cmd_toeplitz(args) -> int:
    over = {"N": args.N, "seed": args.seed, "design_seed": args.seed, "cert": args.cert}
    if args.iters is not None:
        over.update(diag_iters=args.iters, circdiag_iters=args.iters)
    cfg = config_from_file(ToeplitzConfig, args.config, **over)
    out = Path(args.out or default_out())
    results = run_toeplitz(cfg, out)
    for row in summary_rows(results, cfg.rel_tol):
        print(",".join(io._cell(v) for v in row))
    failed = [k for k, r in results.items() if not r.verified]
    if failed:
        print(f"arms failing verification: {', '.join(failed)}", file=sys.stderr)
        return 1
    return 0


def cmd_ct_demo(args) -> int:
    from .experiments import CTDemoConfig, run_ct_demo

    over = {"n": args.N, "noise_seed": args.seed, "design_seed": args.seed, "cert": args.cert,
            "outer_iters": args.iters}
    cfg = config_from_file(CTDemoConfig, args.config, **over)
    out = Path(args.out or default_out())
    res = run_ct_demo(cfg, out)
    for name, arm in res.arms.items():
        print(f"{name}: alpha {arm.majorizer.alpha!r} min_eig {arm.min_eig!r} "
              f"final cost {arm.trace.cost[-1]!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="majdesign", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, iters_default):
        sp.add_argument("--seed", type=int, default=None if iters_default is None else 0)
        sp.add_argument("--iters", type=int, default=iters_default)
        sp.add_argument("--cert", choices=("power", "factor3", "none"), default=None)
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")

    d = sub.add_parser("design", help="design a majorizer for H with structure K")
    d.add_argument("--H", help="Matrix Market file or generator, e.g. diag:1..8, toeplitz:N=128")
    d.add_argument("--K", default="identity", help="identity, dft, stacked:dft+identity, ...")
    d.add_argument("--W", default="uniform", help="weight vector file or 'uniform'")
    d.add_argument("--name", default="majorizer")
    common(d, 128)
    d.set_defaults(func=cmd_design, cert="factor3")

    v = sub.add_parser("verify", help="check that a majorizer dominates H")
    v.add_argument("--M", help="majorizer sidecar file")
    v.add_argument("--H")
    v.add_argument("--mode", choices=("dense", "lanczos"), default="dense")
    v.add_argument("--rtol", type=float, default=1e-8)
    v.add_argument("--seed", type=int, default=0)
    v.set_defaults(func=cmd_verify)

    s = sub.add_parser("spectrum", help="eigenvalues of M^-1/2 H M^-1/2")
    s.add_argument("--M")
    s.add_argument("--H")
    s.add_argument("--name", default="spectrum")
    s.add_argument("--out", default=None)
    s.set_defaults(func=cmd_spectrum)

    t = sub.add_parser("toeplitz", help="weighted-Toeplitz MM comparison")
    t.add_argument("--N", type=int, default=None)
    t.add_argument("--config", default=None)
    common(t, None)
    t.set_defaults(func=cmd_toeplitz)

    c = sub.add_parser("ct-demo", help="desk-scale CT reconstruction with three majorizers")
    c.add_argument("--N", type=int, default=None, help="image side in pixels")
    c.add_argument("--config", default=None)
    common(c, None)
    c.set_defaults(func=cmd_ct_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CLIError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
