"""Command-line interface.

Subcommands:
  run                simulate a configured model/transform, writing CSV and
                     summary JSON (and figures when requested)
  check              print a strong-invariance report for a model
  transform describe print transformed coefficients at a given (t, x)
  scan-eps           fit the epsilon-scaling exponent of the scale law

Exit codes: 0 ok, 2 config error, 3 transform/analysis precondition failure,
4 simulation failure threshold exceeded.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import invariance, lab, models, transforms

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PRECONDITION = 3
EXIT_SIMULATION = 4


class CliError(Exception):
    def __init__(self, exit_code, kind, message):
        super().__init__(message)
        self.exit_code = exit_code
        self.kind = kind


def _fail(exit_code, kind, message):
    raise CliError(exit_code, kind, message)


def _emit_error(err: CliError):
    doc = {"error": {"exit_code": err.exit_code, "type": err.kind, "message": str(err)}}
    print(json.dumps(doc), file=sys.stderr)


def _parse_params(raw):
    if not raw:
        return {}
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        _fail(EXIT_CONFIG, "config", f"--params is not valid JSON: {exc}")
    if not isinstance(doc, dict):
        _fail(EXIT_CONFIG, "config", "--params must be a JSON object")
    return doc


def _parse_state(raw):
    try:
        return tuple(float(v) for v in raw.split(","))
    except ValueError:
        _fail(EXIT_CONFIG, "config", f"cannot parse state {raw!r}; expected e.g. '1,0'")


def _load_config(args) -> lab.RunConfig:
    doc = {}
    if args.config:
        try:
            with open(args.config) as fh:
                doc = json.load(fh)
        except OSError as exc:
            _fail(EXIT_CONFIG, "config", f"cannot read config: {exc}")
        except json.JSONDecodeError as exc:
            _fail(EXIT_CONFIG, "config", f"config is not valid JSON: {exc}")
    # flag overrides
    if args.model:
        doc["model"] = args.model
    if args.params:
        doc["params"] = {**doc.get("params", {}), **_parse_params(args.params)}
    if args.transform:
        doc["transform"] = args.transform
    grid = dict(doc.get("grid", {}))
    for key in ("t0", "t1", "steps"):
        val = getattr(args, key)
        if val is not None:
            grid[key] = val
    if grid:
        doc["grid"] = grid
    if args.paths is not None:
        doc["paths"] = args.paths
    if args.seed is not None:
        doc["master_seed"] = args.seed
    if args.x0:
        doc["initial_state"] = list(_parse_state(args.x0))
    outputs = dict(doc.get("outputs", {}))
    if args.csv:
        outputs["csv"] = args.csv
    if args.summary:
        outputs["summary"] = args.summary
    if args.figures:
        outputs["figures"] = args.figures
    if outputs:
        doc["outputs"] = outputs
    if args.workers is not None:
        doc["workers"] = args.workers
    if args.check:
        doc.setdefault("check", {})
    if args.equilibria:
        doc["equilibria"] = True
    try:
        return lab.RunConfig.from_dict(doc)
    except (lab.ConfigError, ValueError, TypeError) as exc:
        _fail(EXIT_CONFIG, "config", str(exc))


def cmd_run(args) -> int:
    config = _load_config(args)
    try:
        result = lab.run(config)
    except transforms.NotInvariantizableError as exc:
        _fail(
            EXIT_PRECONDITION,
            "transform-precondition",
            f"{exc} (spread={exc.spread})",
        )
    except transforms.HorizonError as exc:
        _fail(EXIT_PRECONDITION, "transform-precondition", str(exc))
    except lab.AnalysisError as exc:
        _fail(EXIT_SIMULATION, "simulation", str(exc))
    if not args.quiet:
        doc = {"artifacts": result.artifacts, "aborted_paths": len(result.ensemble.aborted_indices)}
        print(json.dumps(doc))
    return EXIT_OK


def cmd_check(args) -> int:
    params = _parse_params(args.params)
    if args.model not in models.REGISTRY:
        _fail(EXIT_CONFIG, "config", f"unknown model id {args.model!r}")
    try:
        system = models.build_model(args.model, params)
    except (ValueError, TypeError) as exc:
        _fail(EXIT_CONFIG, "config", str(exc))
    manifold = models.model_manifold(args.model)
    sampler = invariance.ManifoldSampler(manifold, seed=args.seed, count=args.samples)
    report = invariance.strong_invariance_report(
        system, manifold, sampler=sampler, tol=args.tol
    )
    text = json.dumps(report.to_dict(), indent=2)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def cmd_transform_describe(args) -> int:
    params = _parse_params(args.params)
    if args.model not in models.REGISTRY:
        _fail(EXIT_CONFIG, "config", f"unknown model id {args.model!r}")
    try:
        system = models.build_model(args.model, params)
    except (ValueError, TypeError) as exc:
        _fail(EXIT_CONFIG, "config", str(exc))
    manifold = models.model_manifold(args.model)
    x = np.asarray(_parse_state(args.x), dtype=float)
    if x.size != system.n:
        _fail(EXIT_CONFIG, "config", f"x has dimension {x.size}, model needs {system.n}")
    t = float(args.t)
    law = None
    if args.kind == "invariantization":
        try:
            law = transforms.scale_law_from_correction(system, manifold)
            target = transforms.invariantize(system, manifold, law)
        except transforms.NotInvariantizableError as exc:
            _fail(
                EXIT_PRECONDITION,
                "transform-precondition",
                f"{exc} (spread={exc.spread})",
            )
    elif args.kind == "projection":
        target = transforms.projected_sde(system, manifold)
    else:
        target = system
    try:
        doc = transforms.describe_at(target, t, x, law=law)
    except (transforms.HorizonError, ValueError) as exc:
        _fail(EXIT_PRECONDITION, "transform-precondition", str(exc))
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def cmd_scan_eps(args) -> int:
    params = _parse_params(args.params)
    if args.model not in models.REGISTRY:
        _fail(EXIT_CONFIG, "config", f"unknown model id {args.model!r}")
    entry = models.REGISTRY[args.model]
    if entry.eps_param is None:
        _fail(
            EXIT_CONFIG,
            "config",
            f"model {args.model!r} has no noise-amplitude parameter to scan",
        )
    try:
        eps_list = [float(v) for v in args.eps.split(",")]
    except ValueError:
        _fail(EXIT_CONFIG, "config", f"cannot parse --eps {args.eps!r}")
    manifold = entry.manifold()

    def family(eps):
        return entry.build({**params, entry.eps_param: eps})

    try:
        scan = lab.epsilon_scaling_check(family, manifold, eps_list, t=args.t)
    except (lab.DegenerateScalingError, transforms.NotInvariantizableError) as exc:
        _fail(EXIT_PRECONDITION, "analysis-precondition", str(exc))
    except ValueError as exc:
        _fail(EXIT_CONFIG, "config", str(exc))
    doc = scan.to_dict()
    if args.figures:
        from .figures import render_eps_scaling_figure

        doc["figure"] = str(render_eps_scaling_figure(args.figures, scan))
    print(json.dumps(doc, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="itoinv",
        description="Invariant-manifold diagnostics and invariantization for Ito SDEs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="simulate a configured model and write reports")
    p_run.add_argument("--config", help="JSON config file (flags override fields)")
    p_run.add_argument("--model")
    p_run.add_argument("--params", help="JSON object of model parameters")
    p_run.add_argument("--transform", choices=lab.TRANSFORMS)
    p_run.add_argument("--t0", type=float)
    p_run.add_argument("--t1", type=float)
    p_run.add_argument("--steps", type=int)
    p_run.add_argument("--paths", type=int)
    p_run.add_argument("--seed", type=int)
    p_run.add_argument("--x0", help="comma-separated initial state, e.g. '1,0'")
    p_run.add_argument("--csv", help="trajectory CSV output path")
    p_run.add_argument("--summary", help="summary JSON output path")
    p_run.add_argument("--figures", help="directory for rendered figures")
    p_run.add_argument("--workers", type=int)
    p_run.add_argument("--check", action="store_true", help="include an invariance report")
    p_run.add_argument("--equilibria", action="store_true", help="report model equilibria")
    p_run.add_argument("--quiet", action="store_true")
    p_run.set_defaults(func=cmd_run)

    p_check = sub.add_parser("check", help="strong-invariance report for a model")
    p_check.add_argument("--model", required=True)
    p_check.add_argument("--params", help="JSON object of model parameters")
    p_check.add_argument("--tol", type=float, default=None)
    p_check.add_argument("--samples", type=int, default=invariance.DEFAULT_SAMPLE_COUNT)
    p_check.add_argument("--seed", type=int, default=0)
    p_check.add_argument("--out", help="also write the report to this file")
    p_check.set_defaults(func=cmd_check)

    p_tr = sub.add_parser("transform", help="transform inspection")
    tr_sub = p_tr.add_subparsers(dest="subcommand", required=True)
    p_desc = tr_sub.add_parser(
        "describe", help="transformed coefficients at a given (t, x)"
    )
    p_desc.add_argument("--model", required=True)
    p_desc.add_argument("--params", help="JSON object of model parameters")
    p_desc.add_argument("--t", type=float, required=True)
    p_desc.add_argument("--x", required=True, help="comma-separated state, e.g. '1,0'")
    p_desc.add_argument(
        "--kind",
        choices=("invariantization", "projection", "none"),
        default="invariantization",
        help="which transform to describe (default invariantization)",
    )
    p_desc.set_defaults(func=cmd_transform_describe)

    p_scan = sub.add_parser("scan-eps", help="epsilon scaling of the scale law")
    p_scan.add_argument("--model", required=True)
    p_scan.add_argument("--params", help="JSON object of model parameters")
    p_scan.add_argument("--eps", required=True, help="comma-separated epsilon values")
    p_scan.add_argument("--t", type=float, default=1.0)
    p_scan.add_argument("--figures", help="directory for the scaling figure")
    p_scan.set_defaults(func=cmd_scan_eps)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        _emit_error(err)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
