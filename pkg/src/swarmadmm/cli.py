"""Command line entry point: ``run``, ``validate`` and ``demo``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import runner, scenario


def _load_raw(path):
    try:
        with open(path) as fh:
            return json.load(fh)
    except json.JSONDecodeError as err:
        raise scenario.ParseError(f"{path}: {err}") from None
    except OSError as err:
        raise scenario.ParseError(f"{path}: {err.strerror}") from None


def cmd_run(args):
    raw = scenario.with_overrides(_load_raw(args.scenario), args.rho, args.max_rounds, args.seed)
    cfg = scenario.from_dict(raw)
    result = runner.mpc_loop(cfg)
    runner.write_outputs(result, args.out)
    reached = result.goal_reached_step
    md = result.min_distance.min() if result.n_agents > 1 else None
    print(f"steps={result.n_steps} goal_reached_step={reached} "
          f"min_distance={'n/a' if md is None else f'{md:.4f}'} out={args.out}")
    return 0 if all(s is not None for s in reached) else 3


def cmd_validate(args):
    cfg = scenario.load_scenario(args.scenario)
    print(f"ok: {cfg.n_agents} agents, {len(cfg.graph.edges)} edges, H={cfg.mpc.H}")
    return 0


def cmd_demo(args):
    text = json.dumps(scenario.demo(args.name), indent=2) + "\n"
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="swarmadmm",
                                description="Consensus-ADMM MPC for drone swarms.")
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write outputs")
    r.add_argument("--scenario", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--rho", type=float)
    r.add_argument("--max-rounds", type=int)
    r.add_argument("--seed", type=int, help="channel seed")
    r.set_defaults(func=cmd_run)

    v = sub.add_parser("validate", help="check a scenario file")
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_validate)

    d = sub.add_parser("demo", help="print a built-in scenario as JSON")
    d.add_argument("--name", required=True, choices=scenario.DEMOS)
    d.add_argument("--out")
    d.set_defaults(func=cmd_demo)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except scenario.ScenarioError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except runner.MPCStepError as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
