"""Command-line entry point: ``smoothmix fit | simulate | bench``.

Exit codes: 0 success, 2 malformed input or bad flags, 3 solver failure
(fit: every restart collapsed; bench: a cell exceeded the failure threshold).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import platform
import sys

import numpy as np
import scipy

from . import __version__
from .bench import FAILURE_THRESHOLD, BENCH_SIZES, BenchConfig, component_path, run_bench
from .mixture import Dataset
from .solver import ComponentCollapseError, FitConfig, fit, resolve_bandwidth, result_to_dict
from .synthetic import Family, SyntheticSpec, sample

EXIT_OK, EXIT_INPUT, EXIT_SOLVER = 0, 2, 3


class InputError(Exception):
    pass


def _is_number(token: str) -> bool:
    try:
        float(token)
    except ValueError:
        return False
    return True


def read_csv(path: str, drop: list[str] | None = None) -> tuple[list[str] | None, np.ndarray]:
    """Numeric rectangular CSV with an optional header (detected by a non-numeric first row)."""
    with (sys.stdin if path == "-" else open(path, newline="")) as fh:
        rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
    if not rows:
        raise InputError(f"{path}: no rows")
    header = None
    if not all(_is_number(c) for c in rows[0]):
        header = [c.strip() for c in rows[0]]
        rows = rows[1:]
    width = len(header) if header else len(rows[0])
    keep = list(range(width))
    for name in drop or []:
        if header and name in header:
            idx = header.index(name)
        elif name.isdigit() and int(name) < width:
            idx = int(name)
        else:
            raise InputError(f"cannot drop column {name!r}")
        if idx in keep:
            keep.remove(idx)
    if not keep:
        raise InputError("no columns left after dropping")
    data = []
    for lineno, r in enumerate(rows, start=2 if header else 1):
        if len(r) != width:
            raise InputError(f"{path}:{lineno}: expected {width} fields, got {len(r)}")
        try:
            data.append([float(r[i]) for i in keep])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from None
    if not data:
        raise InputError(f"{path}: header only")
    arr = np.array(data)
    if not np.all(np.isfinite(arr)):
        raise InputError(f"{path}: non-finite values")
    return ([header[i] for i in keep] if header else None), arr


def _bandwidth(text: str):
    if text == "auto":
        return "auto"
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("bandwidth must be 'auto' or a positive number") from None
    if not value > 0:
        raise argparse.ArgumentTypeError("bandwidth must be positive")
    return value


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _family_list(text: str) -> tuple[Family, ...]:
    try:
        return tuple(Family.parse(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown family in {text!r}") from None


def _family(text: str) -> Family:
    try:
        return Family.parse(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"unknown family {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smoothmix", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=version_string())
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit a K-component smoothed-likelihood mixture to a CSV")
    p.add_argument("input", help="numeric CSV, '-' for stdin")
    p.add_argument("--k", type=int, default=2)
    p.add_argument("--bandwidth", type=_bandwidth, default="auto")
    p.add_argument("--grid", type=int, default=512, help="grid points per coordinate")
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--tol", type=float, default=1e-8, help="absolute loss-decrease tolerance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=1)
    p.add_argument("--init", choices=["kmeans", "random"], default="kmeans")
    p.add_argument("--drop-column", action="append", default=[], metavar="NAME",
                   help="column name or 0-based index to ignore (repeatable)")
    p.add_argument("--out", help="FitResult JSON path")

    p = sub.add_parser("simulate", help="draw a labelled benchmark sample")
    p.add_argument("--family", type=_family, default=Family.GAUSSIAN)
    p.add_argument("--d", type=int, default=3)
    p.add_argument("--n", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="-", help="CSV path, '-' for stdout")

    p = sub.add_parser("bench", help="replicate the benchmark tables")
    p.add_argument("--families", type=_family_list, default=(Family.GAUSSIAN,))
    p.add_argument("--sizes", type=_int_list, default=BENCH_SIZES)
    p.add_argument("--reps", type=int, default=200)
    p.add_argument("--epsilon", type=float, default=0.001)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--grid", type=int, default=512)
    p.add_argument("--workers", type=int, default=None,
                   help="worker processes (default: $SMOOTHMIX_WORKERS or 1)")
    p.add_argument("--timing", action="store_true", help="record wall time in the CSV")
    p.add_argument("--out", default="bench.csv")
    return parser


def version_string() -> str:
    return (f"smoothmix {__version__} (python {platform.python_version()}, "
            f"numpy {np.__version__}, scipy {scipy.__version__})")


def _fmt(v: float) -> str:
    return f"{v:.6g}"


def cmd_fit(args) -> int:
    try:
        header, rows = read_csv(args.input, args.drop_column)
        data = Dataset(rows)
        base = FitConfig(K=args.k, bandwidth=args.bandwidth, grid_points=args.grid,
                         max_iters=args.max_iters, loss_tol=args.tol, init=args.init, seed=args.seed)
        if args.restarts < 1:
            raise InputError("--restarts must be >= 1")
        if data.n < args.k:
            raise InputError(f"need at least K={args.k} rows, got {data.n}")
        kernel = resolve_bandwidth(data, base)
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"fit: n={data.n} J={data.J} K={args.k} bandwidth={_fmt(kernel.bandwidth)} "
          f"grid={args.grid} max_iters={args.max_iters} tol={args.tol:g} init={args.init} "
          f"seed={args.seed} restarts={args.restarts}"
          + (f" columns={','.join(header)}" if header else ""))
    best = None
    for r in range(args.restarts):
        cfg = FitConfig(**{**base.__dict__, "bandwidth": kernel.bandwidth, "seed": args.seed + r})
        try:
            res = fit(data, cfg)
        except ComponentCollapseError as exc:
            print(f"restart {r}: {exc}", file=sys.stderr)
            continue
        if best is None or res.loss < best.loss:
            best = res
    if best is None:
        print("error: every restart collapsed", file=sys.stderr)
        return EXIT_SOLVER
    if args.out:
        doc = result_to_dict(best)
        doc["config"] = {"seed": args.seed, "restarts": args.restarts, "bandwidth": kernel.bandwidth}
        with open(args.out, "w") as fh:
            json.dump(doc, fh)
            fh.write("\n")
    pi = " ".join(_fmt(w) for w in best.model.weights)
    print(f"loss={best.loss:.10g} iterations={best.iterations} converged={best.converged} pi=[{pi}]")
    return EXIT_OK


def simulate_csv(spec: SyntheticSpec, n: int, seed: int) -> str:
    ls = sample(spec, n, seed)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([f"x{j + 1}" for j in range(spec.d)] + ["label"])
    for row, label in zip(ls.data.rows, ls.labels):
        writer.writerow([repr(float(v)) for v in row] + [int(label)])
    return buf.getvalue()


def cmd_simulate(args) -> int:
    try:
        spec = SyntheticSpec(args.family, args.d)
        if args.n < 1:
            raise ValueError("--n must be >= 1")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    text = simulate_csv(spec, args.n, args.seed)
    echo = f"simulate: family={spec.family.value} d={spec.d} n={args.n} seed={args.seed}"
    if args.out == "-":
        print(echo, file=sys.stderr)
        sys.stdout.write(text)
    else:
        print(echo)
        with open(args.out, "w", newline="") as fh:
            fh.write(text)
    return EXIT_OK


def cmd_bench(args) -> int:
    try:
        config = BenchConfig(families=args.families, sizes=args.sizes, replications=args.reps,
                             epsilon=args.epsilon, restarts=args.restarts, seed=args.seed,
                             grid_points=args.grid, workers=args.workers, output=args.out,
                             record_timing=args.timing)
        if not config.families or not config.sizes:
            raise ValueError("need at least one family and one size")
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"bench: families={','.join(f.value for f in config.families)} "
          f"sizes={','.join(map(str, config.sizes))} reps={config.replications} "
          f"epsilon={config.epsilon:g} restarts={config.restarts} seed={config.seed} "
          f"grid={config.grid_points} workers={config.resolved_workers()} "
          f"bandwidth=sd(X)*n^(-1/5) per replication")

    def progress(cell):
        print(f"  {cell.family.value} n={cell.n}: done in {cell.seconds:.1f}s "
              f"({cell.failures} failures)", file=sys.stderr)

    report = run_bench(config, progress=progress)
    print("\nScaled errors on mixing proportions, n^(2/5-eps) E|pi_1 - 1/3|")
    print(report.format_table("scaled_prop_err"))
    print("\nScaled L1 errors for component densities, summed over components and marginals")
    print(report.format_table("scaled_dens_err"))
    print("\nScaled L1 errors for component densities, mean per component and marginal")
    print(report.format_table("scaled_dens_err_cellmean"))
    print(f"\nwrote {config.output} and {component_path(config.output)}")
    flagged = report.flagged_cells
    for c in flagged:
        print(f"FLAG: {c.family.value} n={c.n} has {c.failures}/{c.R} failed replications "
              f"(> {FAILURE_THRESHOLD:.0%})")
    return EXIT_SOLVER if flagged else EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"fit": cmd_fit, "simulate": cmd_simulate, "bench": cmd_bench}[args.command]
    return handler(args)


if __name__ == "__main__":
    sys.exit(main())
