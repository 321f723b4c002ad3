"""eksim: run a scenario file and write its report."""

import argparse
import sys

from ..errors import MalformedScenario, ScenarioAssertionFailed
from .scenario import load_scenario, run_scenario


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="eksim", description="Deterministic edge network simulator.")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="execute a JSON/YAML scenario")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, help="override the scenario seed")
    run.add_argument("--report", help="write the report JSON here instead of stdout")
    args = parser.parse_args(argv)

    try:
        scenario = load_scenario(args.scenario)
        if args.seed is not None:
            scenario.seed = args.seed
        report = run_scenario(scenario)
    except (OSError, MalformedScenario) as exc:
        print(f"eksim: {exc}", file=sys.stderr)
        return 2
    except ScenarioAssertionFailed as exc:
        print(f"eksim: assertion failed: {exc}", file=sys.stderr)
        return 1
    text = report.to_json()
    if args.report:
        with open(args.report, "w") as fh:
            fh.write(text)
        m = report.metrics
        print(f"formed after {m['time_to_formed_ms']} ms, full set after {m['time_to_full_ms']} ms, "
              f"{m['messages_total']} messages; report in {args.report}")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
