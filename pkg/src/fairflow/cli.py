"""Command-line front end: ``fairflow <command> --config net.json ...``."""

from __future__ import annotations

import argparse
import sys

from .harness import ExperimentSpec, run


def _common():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="network JSON file")
    common.add_argument("--out", help="output file (stdout when omitted); a manifest is written next to it")
    common.add_argument("--seed", type=int, help="RNG seed (required for simulate and fluidlimit)")
    common.add_argument("--eps-kkt", type=float, dest="eps_kkt", help="KKT residual target")
    common.add_argument("--dt", type=float, help="fluid Euler step")
    common.add_argument("--tol", type=float,
                        help="monotonicity slack (fluid) or membership tolerance (manifold, cone)")
    return common


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairflow", description="alpha-fair bandwidth sharing toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    common = _common()

    p = sub.add_parser("allocate", parents=[common], help="alpha-fair allocation at a state")
    p.add_argument("--state", required=True, help='flow counts, e.g. "1,1,1"')

    p = sub.add_parser("fluid", parents=[common], help="integrate the fluid model")
    p.add_argument("--n0", required=True)
    p.add_argument("--horizon", type=float, default=200.0)
    p.add_argument("--samples", type=int, default=201, help="output grid points")

    p = sub.add_parser("simulate", parents=[common], help="simulate the flow-count chain")
    p.add_argument("--n0", required=True)
    p.add_argument("--horizon", type=float, default=1e4)
    p.add_argument("--method", choices=("direct", "time_change"), default="direct")
    p.add_argument("--max-events", type=int, dest="max_events", default=100_000_000)

    p = sub.add_parser("fluidlimit", parents=[common], help="rescaled chains against the fluid path")
    p.add_argument("--n0", required=True)
    p.add_argument("--scales", default="20,100,500")
    p.add_argument("--seeds", type=int, default=20, help="number of seeds, counted up from --seed")
    p.add_argument("--horizon", type=float, default=10.0, help="fluid time")
    p.add_argument("--samples", type=int, default=101)
    p.add_argument("--method", choices=("direct", "time_change"), default="direct")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")

    p = sub.add_parser("manifold", parents=[common], help="invariant state for a price vector q")
    p.add_argument("--q", required=True)

    p = sub.add_parser("lift", parents=[common], help="minimum-F state for a workload")
    p.add_argument("--w", required=True)

    p = sub.add_parser("cone", parents=[common], help="workload-cone membership on a grid")
    p.add_argument("--grid", type=int, default=100)
    p.add_argument("--wmax", type=float, default=3.0)
    return parser


_UNIVERSAL = {"command", "config", "out", "seed", "eps_kkt", "dt", "tol"}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    params = {k: v for k, v in vars(args).items() if k not in _UNIVERSAL}
    spec = ExperimentSpec(
        command=args.command, config=args.config, params=params, seed=args.seed,
        out=args.out, eps_kkt=args.eps_kkt, dt=args.dt, tol=args.tol,
    )
    return run(spec)


if __name__ == "__main__":
    sys.exit(main())
