"""Command-line entry point: ``fedcl run | compare | selftest``."""
from __future__ import annotations

import argparse
import csv
import io
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import BACKEND, __version__
from .config import ALGORITHMS, DATASETS, ConfigError, parse_config, serialize_config
from .federation import ProtocolViolation, prepare_experiment, run_training
from .metrics import emit_metrics

# named flag -> config key; applied after --config and --set
_FLAG_KEYS = {
    "algorithm": "algorithm",
    "dataset": "dataset",
    "rounds": "train.rounds",
    "seed": "seed",
    "dirichlet_alpha": "data.dirichlet_alpha",
    "clients": "clients.total",
    "active": "clients.active",
    "mnist_dir": "data.mnist_dir",
}


class UsageError(Exception):
    pass


def _add_common(p):
    p.add_argument("--config", help="key = value settings file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override one setting (repeatable)")
    p.add_argument("--dataset", choices=DATASETS)
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--dirichlet-alpha", type=float)
    p.add_argument("--clients", type=int, help="total number of clients")
    p.add_argument("--active", type=int, help="clients sampled per round")
    p.add_argument("--mnist-dir")
    p.add_argument("--wall-clock", action="store_true",
                   help="fill the wall_seconds column (breaks byte-identical output)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fedcl", description="Federated curriculum learning simulator.")
    parser.add_argument("--version", action="version", version=f"fedcl {__version__} ({BACKEND} kernels)")
    sub = parser.add_subparsers(dest="command", metavar="{run,compare,selftest}")
    sub.required = True

    run = sub.add_parser("run", help="run one experiment and write its metrics CSV")
    _add_common(run)
    run.add_argument("--algorithm", choices=ALGORITHMS)
    run.add_argument("--out", default="metrics.csv", help="metrics CSV path (default: %(default)s)")
    run.add_argument("--jsonl", help="also write a JSON-lines mirror here")
    run.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")

    cmp_ = sub.add_parser("compare", help="run several algorithms on one partition and initial model")
    _add_common(cmp_)
    cmp_.add_argument("--algorithms", default="fedcl,fedavg,fedprox",
                      help="comma-separated list (default: %(default)s)")
    cmp_.add_argument("--seeds", help="comma-separated master seeds (default: --seed)")
    cmp_.add_argument("--out", default="compare.csv", help="side-by-side CSV path (default: %(default)s)")

    st = sub.add_parser("selftest", help="quick property checks of the numerical core")
    st.add_argument("--seed", type=int, default=0)
    return parser


def resolve_config(args):
    overrides = list(args.set)
    for attr, key in _FLAG_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides.append(f"{key}={value}")
    return parse_config(args.config, overrides)


def cmd_run(args, out=None) -> int:
    out = out or sys.stdout
    cfg = resolve_config(args)
    if args.dump_config:
        out.write(serialize_config(cfg))
        return 0
    started = time.perf_counter()
    result = run_training(cfg)
    emit_metrics(result.history, args.out, args.jsonl, wall_clock=args.wall_clock)
    print(f"algorithm={cfg.algorithm} seed={cfg.seed} rounds={len(result.history)} "
          f"final_accuracy={result.final_accuracy:.4f}", file=out)
    print(f"partition_hash={result.partition_hash} init_hash={result.init_hash}", file=out)
    if result.freeze_violations:
        print(f"freeze monotonicity violations: {result.freeze_violations}", file=out)
    if args.wall_clock:
        print(f"wall_seconds={time.perf_counter() - started:.2f}", file=out)
    print(f"metrics written to {args.out}", file=out)
    return 0


def _parse_list(text, kind=str):
    return [kind(s.strip()) for s in text.split(",") if s.strip()]


def compare_csv(results: dict, algorithms) -> str:
    """Wide table: one row per (seed, round), one accuracy column per algorithm."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["seed", "round", "partition_hash"] + [f"{a}_test_accuracy" for a in algorithms])
    for seed, (phash, by_alg) in results.items():
        depth = max(len(r.history) for r in by_alg.values())
        for i in range(depth):
            cells = [repr(by_alg[a].history[i].test_accuracy) if i < len(by_alg[a].history) else ""
                     for a in algorithms]
            w.writerow([seed, i + 1, phash] + cells)
    return buf.getvalue()


def cmd_compare(args, out=None) -> int:
    out = out or sys.stdout
    algorithms = _parse_list(args.algorithms)
    unknown = [a for a in algorithms if a not in ALGORITHMS]
    if not algorithms or unknown:
        raise UsageError(f"--algorithms must name some of {', '.join(ALGORITHMS)}")
    base = resolve_config(args)
    seeds = _parse_list(args.seeds, int) if args.seeds else [base.seed]
    results = {}
    for seed in seeds:
        cfg0 = base.replace(seed=seed)
        exp = prepare_experiment(cfg0)
        by_alg = {a: run_training(cfg0.replace(algorithm=a), exp) for a in algorithms}
        phashes = {r.partition_hash for r in by_alg.values()}
        ihashes = {r.init_hash for r in by_alg.values()}
        if len(phashes) != 1 or len(ihashes) != 1:
            raise ProtocolViolation(f"seed {seed}: algorithms saw different partitions or initial models")
        results[seed] = (phashes.pop(), by_alg)
        finals = " ".join(f"{a}={r.final_accuracy:.4f}" for a, r in by_alg.items())
        print(f"seed={seed} partition_hash={results[seed][0]} init_hash={ihashes.pop()} "
              f"shared by {','.join(algorithms)}; final {finals}", file=out)
    Path(args.out).write_bytes(compare_csv(results, algorithms).encode("utf-8"))
    for a in algorithms:
        mean = np.mean([by_alg[a].final_accuracy for _, by_alg in results.values()])
        print(f"mean final accuracy {a}: {mean:.4f}", file=out)
    print(f"comparison written to {args.out}", file=out)
    return 0


def cmd_selftest(args, out=None) -> int:
    out = out or sys.stdout
    from .selftest import run_checks

    failures = 0
    for name, ok, detail in run_checks(args.seed):
        failures += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}", file=out)
    print(f"{failures} failure(s); kernels: {BACKEND}", file=out)
    return 1 if failures else 0


_COMMANDS = {"run": cmd_run, "compare": cmd_compare, "selftest": cmd_selftest}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse exits 2 on usage errors, 0 on --help
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("default")
            return _COMMANDS[args.command](args)
    except (ConfigError, UsageError) as exc:
        print(f"fedcl: error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 2
    except (FileNotFoundError, PermissionError, IsADirectoryError) as exc:
        print(f"fedcl: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort report with nonzero exit
        print(f"fedcl: failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
