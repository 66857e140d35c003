"""``okmanip`` command line entry point.

Exit codes: 0 on success, 1 when a scenario ran but missed its configured
thresholds, 2 when the scenario (or invocation) is unusable.  The default
output root is ``./okmanip_out``; set ``OKMANIP_OUT`` to relocate it, and
``--out`` to override both.
"""

from __future__ import annotations

import argparse
import sys

from .harness import ScenarioError, default_out_dir, load_scenario, run_scenario, sweep


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("scenario", help="path to a scenario YAML file")
    p.add_argument("--seed", type=int, default=None, help="override the master seed")
    p.add_argument("--trials", type=int, default=None, help="override the trial count")
    p.add_argument("--out", default=None, help="output directory (beats OKMANIP_OUT)")
    p.add_argument(
        "--parallel", type=int, default=1, metavar="K",
        help="run trials across K worker processes",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="okmanip",
        description="Run keypoint-driven manipulation scenarios and report failure rates.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario and write trial logs")
    _add_common(run_p)

    sweep_p = sub.add_parser("sweep", help="re-run a scenario over a parameter range")
    _add_common(sweep_p)
    sweep_p.add_argument(
        "--param", required=True,
        help="dotted path into the scenario, e.g. perception.position_sigma",
    )
    sweep_p.add_argument(
        "--values", required=True,
        help="comma-separated values, e.g. 0.001,0.002,0.005",
    )

    val_p = sub.add_parser("validate", help="check a scenario file without running it")
    val_p.add_argument("scenario", help="path to a scenario YAML file")
    return parser


def _parse_values(text: str) -> list:
    values = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            values.append(int(item))
        except ValueError:
            try:
                values.append(float(item))
            except ValueError:
                values.append(item)
    return values


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "validate":
            scenario = load_scenario(args.scenario)
            print(f"ok: {scenario.name} ({scenario.task}, {scenario.trials} trials)")
            return 0

        scenario = load_scenario(args.scenario)
        out = args.out if args.out is not None else default_out_dir(scenario.name)

        if args.command == "run":
            result = run_scenario(
                scenario, out, trials=args.trials, seed=args.seed, parallel=args.parallel
            )
            print(result.summary_text(scenario.task, scenario.data["agent"]), end="")
            print(f"wrote {out}")
            return 0 if result.thresholds_ok else 1

        values = _parse_values(args.values)
        results = sweep(
            scenario, args.param, values, out,
            trials=args.trials, seed=args.seed, parallel=args.parallel,
        )
        for value, res in results:
            print(f"{args.param}={value}: success rate {res.success_rate:.3f} "
                  f"({res.failures}/{res.trials} failures)")
        print(f"wrote {out}")
        return 0 if all(res.thresholds_ok for _, res in results) else 1

    except ScenarioError as exc:
        print(f"scenario error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
