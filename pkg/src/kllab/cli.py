"""Command-line surface.

Exit codes: 0 success, 2 usage or config parse error, 3 domain-negative
result (e.g. no finite flip coefficient), 1 internal failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import harness
from .errors import InvalidCoefficient, KllabError, NoFiniteFlip, UndefinedRatio
from .mara import BatchPercentile, Constant, MaraConfig, augment_rewards
from .scenario_io import ScenarioFormatError, load_scenario
from .targets import (
    TargetSpec,
    analytic_target,
    flip_beta,
    forward_kl_target,
    log_prob_ratio,
)
from .trainer import Exact, MonteCarlo, TrainConfig, train

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_DOMAIN = 3


class _CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _resolve_scenario(ref: str):
    if ref in harness.SCENARIO_CONFIGS:
        return harness.scenario_by_name(ref)
    path = Path(ref)
    if not path.exists():
        raise ScenarioFormatError(f"no builtin scenario or file named {ref!r}")
    try:
        return load_scenario(path)
    except json.JSONDecodeError as exc:
        raise ScenarioFormatError(
            f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc


def _out_dir(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get("KLLAB_OUT", "out"))


def _mara_from_args(args):
    if getattr(args, "tau", None) is not None:
        rule = Constant(args.tau)
    elif getattr(args, "percentile", None) is not None:
        rule = BatchPercentile(args.percentile)
    else:
        return None
    return MaraConfig(rule, beta=args.beta)


def _print_distribution(dist, rewards=None):
    print("index,mass,log_mass" + (",reward" if rewards is not None else ""))
    for i in range(dist.n):
        mass = dist.probs[i]
        lw = dist.log_weights[i]
        row = f"{i},{mass:.12g},{lw:.12g}"
        if rewards is not None:
            row += f",{rewards[i]:.12g}"
        print(row)


def cmd_target(args) -> int:
    s = _resolve_scenario(args.scenario)
    spec = TargetSpec(args.kind, args.beta, args.eta)
    if args.kind == "forward":
        sol = forward_kl_target(s, args.beta)
        print(f"# lambda = {sol.lam:.12g}")
        print(f"# boundary_case = {str(sol.boundary_case).lower()}")
        print(f"# off_support_mass = {sol.off_support_mass:.12g}")
        dist = sol.distribution
    else:
        dist = analytic_target(s, spec)
    _print_distribution(dist, s.rewards.values)
    if args.out:
        from .svg import Chart

        chart = Chart(f"{s.name} / {args.kind} beta={args.beta:g}", "index", "mass")
        xs = list(range(s.n))
        chart.add_bars("target", xs, dist.probs.tolist())
        chart.add_line("reference", xs, s.reference.probs.tolist())
        path = Path(args.out)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(chart.render())
        print(f"# wrote {path}", file=sys.stderr)
    return EXIT_OK


def cmd_ratio(args) -> int:
    s = _resolve_scenario(args.scenario)
    value = log_prob_ratio(s, args.beta, args.i, args.j)
    print(f"log_ratio {value:.12g}")
    return EXIT_OK


def cmd_flip_beta(args) -> int:
    s = _resolve_scenario(args.scenario)
    if args.i == args.j:
        print("no finite flip: identical indices", file=sys.stderr)
        return EXIT_DOMAIN
    try:
        value = flip_beta(s, args.i, args.j)
    except NoFiniteFlip as exc:
        print(f"no finite flip: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    print(f"flip_beta {value:.12g}")
    return EXIT_OK


def cmd_augment(args) -> int:
    s = _resolve_scenario(args.scenario)
    cfg = _mara_from_args(args)
    if cfg is None:
        print("augment requires --tau or --percentile", file=sys.stderr)
        return EXIT_USAGE
    indices = [int(tok) for tok in args.indices.split(",") if tok.strip()]
    batch = augment_rewards(indices, s, cfg)
    print(f"# threshold = {batch.threshold_used:.12g}")
    print(f"# anchor = {batch.anchor_index}")
    print("index,raw_reward,augmented_reward")
    for i, raw, aug in zip(batch.indices, batch.raw_rewards, batch.augmented_rewards):
        print(f"{i},{raw:.12g},{aug:.12g}")
    return EXIT_OK


def cmd_train(args) -> int:
    s = _resolve_scenario(args.scenario)
    spec = TargetSpec(args.kind, args.beta, args.eta)
    if args.mode == "exact":
        mode = Exact()
    else:
        mode = MonteCarlo(batch=args.batch, baseline=args.baseline)
    cfg = TrainConfig(
        objective=spec, gradient_mode=mode, mara=_mara_from_args(args),
        steps=args.steps, learning_rate=args.lr, seed=args.seed,
    )
    result = train(s, cfg)
    out = _out_dir(args)
    out.mkdir(parents=True, exist_ok=True)
    trace_path = out / f"{s.name}_{args.kind}_trace.csv"
    with open(trace_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "objective", "tv_to_target", "entropy",
                         "above_threshold_mass"])
        for t, rec in enumerate(result.trace, start=1):
            writer.writerow([
                t, f"{rec.objective_value:.17g}", f"{rec.tv_to_target:.17g}",
                f"{rec.entropy:.17g}",
                "" if rec.above_threshold_mass is None
                else f"{rec.above_threshold_mass:.17g}",
            ])
    policy_path = out / f"{s.name}_{args.kind}_policy.csv"
    with open(policy_path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["index", "mass"])
        for i, mass in enumerate(result.final_policy.probs):
            writer.writerow([i, f"{mass:.17g}"])
    print(f"final TV to target: {result.trace[-1].tv_to_target:.6g}")
    print(f"wrote {trace_path} and {policy_path}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    if args.preset == "paper":
        records = harness.run_paper_preset(workers=args.workers)
    else:
        print("only --preset paper is available", file=sys.stderr)
        return EXIT_USAGE
    manifest = harness.emit_report(records, out)
    for path in manifest:
        print(f"wrote {path}")
    checks = harness.summary_checks(records)
    failed = [c for c in checks if not c.passed]
    for c in checks:
        print(f"{'PASS' if c.passed else 'FAIL'}  {c.name}: {c.measured}"
              f" (threshold {c.threshold})")
    return EXIT_OK if not failed else EXIT_INTERNAL


def cmd_report(args) -> int:
    text = Path(args.records).read_text()
    records = harness.records_from_csv(text)
    manifest = harness.emit_report(records, _out_dir(args))
    for path in manifest:
        print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _CliParser(prog="kllab")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--scenario", required=True,
                       help="builtin scenario name or config file path")

    p = sub.add_parser("target", help="print an analytic target distribution")
    add_common(p)
    p.add_argument("--kind", choices=["reverse", "forward", "generalized"],
                   required=True)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--out", help="optional SVG output path")
    p.set_defaults(func=cmd_target)

    p = sub.add_parser("ratio", help="closed-form log probability ratio")
    add_common(p)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--i", type=int, required=True)
    p.add_argument("--j", type=int, required=True)
    p.set_defaults(func=cmd_ratio)

    p = sub.add_parser("flip-beta", help="coefficient equalizing two indices")
    add_common(p)
    p.add_argument("--i", type=int, required=True)
    p.add_argument("--j", type=int, required=True)
    p.set_defaults(func=cmd_flip_beta)

    p = sub.add_parser("augment", help="augment a batch of sampled indices")
    add_common(p)
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--tau", type=float)
    p.add_argument("--percentile", type=float)
    p.add_argument("--indices", required=True, help="comma-separated indices")
    p.set_defaults(func=cmd_augment)

    p = sub.add_parser("train", help="train a policy and write its trace")
    add_common(p)
    p.add_argument("--kind", choices=["reverse", "forward", "generalized"],
                   default="reverse")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--eta", type=float, default=0.0)
    p.add_argument("--mode", choices=["exact", "mc"], default="exact")
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--baseline", choices=["none", "batch_mean", "leave_one_out"],
                   default="batch_mean")
    p.add_argument("--steps", type=int, default=3000)
    p.add_argument("--lr", type=float, default=5e-3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tau", type=float)
    p.add_argument("--percentile", type=float)
    p.add_argument("--out")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="run a sweep preset and emit its report")
    p.add_argument("--preset", default="paper")
    p.add_argument("--workers", type=int, default=os.cpu_count() or 1)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="re-emit a report from records.csv")
    p.add_argument("--records", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except (InvalidCoefficient, ScenarioFormatError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NoFiniteFlip, UndefinedRatio) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except KllabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
