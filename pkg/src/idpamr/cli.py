"""Command line entry point: ``idpamr run|compare|bench``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .config import ConfigError, load_config


def _overrides(args) -> dict:
    kw = {}
    if getattr(args, "no_limiter", False):
        kw["limiter"] = False
    if getattr(args, "uniform", False):
        kw["uniform"] = True
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.t_final is not None:
        kw["t_final"] = args.t_final
    return kw


def _cmd_run(args) -> int:
    from .bench import run

    cfg = load_config(args.config).with_overrides(**_overrides(args))
    out = args.output_dir or f"output/{cfg.name}"

    def progress(step, t, dt, ndofs):
        if args.verbose and step % 50 == 0:
            print(f"step {step:6d}  t={t:.5g}  dt={dt:.3e}  dofs={ndofs}", file=sys.stderr)

    res = run(cfg, out, progress=progress)
    print(json.dumps(res.summary(), indent=2))
    return 0 if res.completed else 3


def _cmd_compare(args) -> int:
    from .bench import compare_uniform_vs_amr

    cfg = load_config(args.config).with_overrides(**_overrides(args))
    rep = compare_uniform_vs_amr(cfg, args.output_dir or f"output/{cfg.name}_compare")
    print(json.dumps({k: rep[k] for k in ("dof_ratio_final", "wall_time_ratio")}, indent=2))
    ok = rep["uniform"]["status"] == rep["amr"]["status"] == "completed"
    return 0 if ok else 3


def _cmd_bench(args) -> int:
    from .kernel_bench import time_kernels

    for system in ("shallow_water", "euler"):
        r = time_kernels(system, level=args.level, repeat=args.repeat)
        times = "  ".join(f"{k}={v * 1e3:.3f} ms" for k, v in r["times"].items())
        print(f"{system:14s} dofs={r['n_dofs']:6d}  {times}  max diff={r['max_abs_diff']:.1e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="idpamr", description="Adaptive IDP finite element benchmarks")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (
        ("run", _cmd_run, "run one benchmark configuration"),
        ("compare", _cmd_compare, "run a configuration uniformly and adaptively"),
    ):
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="INI configuration file")
        p.add_argument("--output-dir", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--t-final", type=float, default=None)
        p.add_argument("--no-limiter", action="store_true", help="disable projection limiting (ablation)")
        if name == "run":
            p.add_argument("--uniform", action="store_true", help="uniform mesh at the maximum level")
        p.set_defaults(func=fn)
    p = sub.add_parser("bench", help="time the compiled and pure-Python kernels")
    p.add_argument("--level", type=int, default=6)
    p.add_argument("--repeat", type=int, default=5)
    p.set_defaults(func=_cmd_bench, seed=None, t_final=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
