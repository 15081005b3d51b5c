##############################################################################
# Copyright© 2025 UT-Battelle, LLC
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
##############################################################################
"""
Command line entry point ``uwarm``.

.. code-block::

    uwarm --print-config [--config FILE]
    uwarm train --config FILE [--seed N] [--out DIR]
    uwarm eval --scenario FILE --checkpoint FILE --out DIR [--config FILE]
    uwarm compare --config FILE --out DIR [--checkpoint FILE] [--scenario FILE] [--n N]
    uwarm demo --goal a,b,c,d [--checkpoint FILE] [--controller rl|mpc]

Exit codes: 0 success, 1 usage, configuration or missing artifact,
2 divergence or numeric failure.
"""
import argparse
import os
import logging
import sys

from uwarm_py.config import load_config, dump_config
from uwarm_py.errors import UwarmError, ConfigError, NUMERIC_FAILURES

logger = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _goal(text: str) -> list:
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"goal must be comma separated numbers, got {text!r}")


def _paired_scenarios(scenarios: list) -> tuple:
    by_controller = {}
    for scen in scenarios:
        by_controller.setdefault(scen.controller, scen)
    if set(by_controller) != {"rl", "mpc"}:
        raise ConfigError("compare: the scenario file needs an rl and an mpc scenario")
    return by_controller["rl"], by_controller["mpc"]


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="uwarm", description="Underwater arm DDPG / MPC joint control")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--print-config", action="store_true",
                        help="print the effective configuration and exit")
    parser.add_argument("--config", dest="global_config", default=None,
                        help="configuration file for --print-config")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("train", help="train a DDPG agent")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", default="runs/train")

    p = sub.add_parser("eval", help="evaluate the scenarios of a scenario file")
    p.add_argument("--scenario", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--config", default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--no-plots", action="store_true")

    p = sub.add_parser("compare", help="paired RL versus MPC campaign")
    p.add_argument("--config", default=None)
    p.add_argument("--out", required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--scenario", default=None, help="scenario file holding an rl and an mpc scenario")
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--goal", type=_goal, default=None, help="fixed goal for every trial")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("demo", help="single episode towards a goal")
    p.add_argument("--goal", type=_goal, required=True)
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--controller", choices=("rl", "mpc"), default=None)
    p.add_argument("--config", default=None)
    p.add_argument("--out", default=None, help="write the log and plots here")
    return parser


def _run(args) -> int:
    # heavy imports after argument parsing
    from uwarm_py import harness
    from uwarm_py.metrics import render_plots, write_csv, format_comparison_table, HAS_MATPLOTLIB

    if args.command == "train":
        overrides = {"train": {}}
        if args.seed is not None:
            overrides["train"]["seed"] = args.seed
        if args.epochs is not None:
            overrides["train"]["epochs"] = args.epochs
        cfg = load_config(args.config, overrides)
        res = harness.train(cfg, args.out)
        print(f"final checkpoint: {res.final_checkpoint}")

    elif args.command == "eval":
        cfg = load_config(args.config)
        workers = args.workers or cfg["compare"]["workers"]
        plots = cfg["compare"]["plots"] and not args.no_plots
        for scen in harness.load_scenarios(args.scenario, cfg):
            res = harness.evaluate(scen, cfg, args.out, args.checkpoint, workers, plots)
            print(format_comparison_table([(scen.name, res.mean)]), end="")

    elif args.command == "compare":
        cfg = load_config(args.config)
        n = args.n or cfg["compare"]["n"]
        workers = args.workers or cfg["compare"]["workers"]
        if args.scenario:
            rl, mpc = _paired_scenarios(harness.load_scenarios(args.scenario, cfg))
        else:
            rl = harness.Scenario("rl", "rl", args.goal)
            mpc = harness.Scenario("mpc", "mpc", args.goal)
        res = harness.compare(rl, mpc, n, cfg, args.out, args.checkpoint, workers,
                              cfg["compare"]["plots"])
        print(res.table, end="")
        for msg in res.failed_checks:
            print(f"directional check failed: {msg}")

    elif args.command == "demo":
        cfg = load_config(args.config)
        log, rep = harness.demo(args.goal, cfg, args.checkpoint, args.controller)
        label = args.controller or ("rl" if args.checkpoint else "mpc")
        print(format_comparison_table([(label, rep)]), end="")
        if args.out:
            os.makedirs(args.out, exist_ok=True)
            prefix = os.path.join(args.out, "demo")
            if HAS_MATPLOTLIB:
                render_plots(log, prefix)
            else:
                write_csv(log, f"{prefix}.csv")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")

    try:
        if args.print_config:
            print(dump_config(load_config(args.global_config)), end="")
            return 0
        if args.command is None:
            parser.print_usage(sys.stderr)
            return 1
        return _run(args)
    except NUMERIC_FAILURES as e:
        logger.error(str(e))
        return 2
    except (UwarmError, FileNotFoundError) as e:
        logger.error(str(e))
        return 1


if __name__ == "__main__":
    sys.exit(main())
