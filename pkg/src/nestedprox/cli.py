"""Command-line entry point: ``nestedprox {simulate,restore,validate,prox}``.

Exit codes: 0 success, 1 solver failure or failed validation checks,
2 usage, configuration or input errors.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import io as nio
from .noise import NoiseFamily, Observation
from .pipeline import ConfigError, RunConfig, load_image, restore, simulate, trace_rows
from .prox import ClosedInterval, ScalarPotential, parse_exponent, prox_scalar, prox_scalar_constrained
from .splitting import SolverError

EXIT_OK, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


def _load_config(args) -> RunConfig:
    if not args.config:
        raise UsageError("--config is required")
    cfg = RunConfig.from_file(args.config)
    return cfg.with_overrides(theta=getattr(args, "theta", None),
                              algorithm=getattr(args, "algorithm", None), seed=args.seed)


def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    truth, obs = simulate(cfg)
    out = Path(args.out)
    z = obs.z
    maxval = 255 if z.max(initial=0) <= 255 else 65535
    nio.write_pgm(out / "observation.pgm", z, maxval=maxval)
    nio.write_raw(out / "observation.raw", z)
    nio.write_pgm(out / "truth.pgm", truth)
    nio.write_keyvalue(out / "observation.meta", {
        "family": obs.family.kind.value,
        "alpha": repr(cfg.alpha),
        "seed": str(cfg.seed),
        "blur.q": str(cfg.blur_q),
        "width": str(z.shape[1]),
        "height": str(z.shape[0]),
        "raw": "observation.raw",
        "pgm": "observation.pgm",
        "truth": cfg.truth,
    })
    print(f"wrote {out / 'observation.pgm'} and {out / 'observation.meta'}")
    return EXIT_OK


def _read_observation(cfg: RunConfig):
    """Observation and optional ground truth named by the config."""
    spec = cfg.observation
    truth = None
    if not spec:
        return simulate(cfg)[::-1]
    path = Path(spec)
    if not path.exists():
        raise FileNotFoundError(f"observation not found: {spec}")
    if path.suffix == ".meta":
        meta = nio.read_keyvalue(path)
        if meta.get("family") != cfg.family.value:
            raise ConfigError(f"{path}: noise family {meta.get('family')!r} "
                              f"does not match config {cfg.family.value!r}")
        if float(meta["alpha"]) != cfg.alpha or int(meta["blur.q"]) != cfg.blur_q:
            raise ConfigError(f"{path}: alpha / blur size differ from the config")
        z = nio.read_raw(path.parent / meta["raw"])
        truth_spec = cfg.truth or meta.get("truth", "")
    else:
        z = load_image(spec)
        truth_spec = cfg.truth
    if truth_spec:
        truth = load_image(truth_spec)
    return Observation(z, NoiseFamily(cfg.family, cfg.alpha)), truth


def cmd_restore(args) -> int:
    cfg = _load_config(args)
    obs, truth = _read_observation(cfg)
    out = Path(args.out)
    try:
        result = restore(cfg, obs, truth, audit=args.audit)
    except SolverError as err:
        trace = getattr(err, "trace", None)
        if trace is not None and len(trace):
            rows = [{"outer_iter": i, "wall_seconds": trace.wall_seconds[i],
                     "objective": trace.objective[i], "normalized_objective": float("nan"),
                     "inner_iters": trace.inner_iters[i], "outer_step_norm": trace.step_norms[i]}
                    for i in range(len(trace))]
            nio.write_trace_csv(out / "trace_partial.csv", rows)
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    nio.write_pgm(out / "restored.pgm", result.image)
    nio.write_raw(out / "restored.raw", result.image)
    nio.write_trace_csv(out / "trace.csv", trace_rows(result.report))
    summary = result.summary()
    nio.write_keyvalue(out / "report.txt", summary)
    for k, v in summary.items():
        print(f"{k} = {v}")
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import run_checks

    results = run_checks(verbose=True)
    summary = {"passed": sum(r.ok for r in results), "failed": sum(not r.ok for r in results),
               "checks": [r.as_dict() for r in results]}
    text = json.dumps(summary, indent=2)
    if args.out:
        nio.atomic_write(Path(args.out) / "validate.json", text + "\n")
    else:
        print(text)
    return EXIT_OK if summary["failed"] == 0 else EXIT_SOLVER


def cmd_prox(args) -> int:
    try:
        phi = ScalarPotential(args.chi, args.omega, parse_exponent(args.p))
    except ValueError as e:
        raise UsageError(str(e)) from None
    if args.box is not None:
        y = prox_scalar_constrained(phi, args.gamma, ClosedInterval(*args.box), args.t)
    else:
        y = prox_scalar(phi, args.gamma, args.t)
    print(f"{y:.15g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="nestedprox", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, solver=False):
        p.add_argument("--config", help="key-value run configuration")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default="out", help="output directory (default: out)")
        if solver:
            p.add_argument("--theta", type=float, default=None, help="override extension.theta")
            p.add_argument("--algorithm", choices=("dr-outer", "fb-outer"), default=None)

    p = sub.add_parser("simulate", help="blur and add noise to a ground-truth image")
    common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("restore", help="run a nested solver on an observation")
    common(p, solver=True)
    p.add_argument("--audit", action="store_true", help="count gradient calls outside C")
    p.set_defaults(func=cmd_restore)

    p = sub.add_parser("validate", help="run the built-in check suite")
    p.add_argument("--out", default=None, help="write validate.json here instead of stdout")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("prox", help="evaluate a scalar prox")
    p.add_argument("--chi", type=float, default=0.0)
    p.add_argument("--omega", type=float, default=0.0)
    p.add_argument("--p", default="2", help="exponent: 4/3, 3/2 or 2")
    p.add_argument("--gamma", type=float, default=1.0)
    p.add_argument("--t", type=float, required=True, help="point of evaluation")
    p.add_argument("--box", type=float, nargs=2, metavar=("LO", "HI"), default=None)
    p.set_defaults(func=cmd_prox)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (UsageError, ConfigError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as err:
        print(f"solver failure: {err}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
