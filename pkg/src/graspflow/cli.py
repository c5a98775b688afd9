"""Command-line entry point: ``graspflow [global flags] <command> [options]``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import io, pipeline
from .autodiff import NumericalError
from .config import ConfigError, build_config
from .evaluation import export_flow_trajectories
from .ode import IntegrationError, integrate_flow
from .pose import GraspPose
from .scene import TRAIN_TEMPLATES, UNSEEN_TEMPLATES, SceneSpec, render_depth

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _global_flags(parser, suppress: bool):
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--seed", type=int, default=default, help="run seed (overrides the config)")
    parser.add_argument("--config", default=default, help="key=value config file")
    parser.add_argument("--out", default=default, help="output directory")
    parser.add_argument("--set", action="append", dest="overrides", metavar="KEY=VALUE",
                        default=default, help="override one config key; repeatable")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="graspflow", description="Flow-matching correction of rigid grasps for soft grippers.")
    _global_flags(parser, suppress=False)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text)
        _global_flags(p, suppress=True)
        return p

    add("gen-data", "write the synthetic paired-grasp dataset")
    add("train", "train the depth autoencoder, then the velocity net")
    p = add("infer", "correct one rigid grasp")
    p.add_argument("--pose", nargs=7, type=float, required=True, metavar="V",
                   help="rigid grasp as qw qx qy qz px py pz")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--template", help="nominal scene of a named template")
    group.add_argument("--scene", help="scene as a JSON object (shape, dims, x, y, yaw, base_z)")
    p.add_argument("--trajectory", help="also write the integration trajectory to this file")
    add("eval", "score baseline and corrected grasps on seen and unseen templates")
    p = add("export-flow", "write flow trajectories from sample scenes")
    p.add_argument("--n", type=int, help="number of trajectories (default: config 'trajectories')")
    p.add_argument("--path", help="output file (default: <out>/flows.txt)")
    return parser


def _scene_from_args(args) -> SceneSpec:
    if args.template is not None:
        templates = {t.name: t for t in TRAIN_TEMPLATES + UNSEEN_TEMPLATES}
        if args.template not in templates:
            raise UsageError(f"unknown template {args.template!r}; choose from {', '.join(sorted(templates))}")
        return templates[args.template].base
    try:
        return SceneSpec.from_dict(json.loads(args.scene))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise UsageError(f"bad --scene: {exc}") from exc


def _run(args) -> int:
    cfg = build_config(args.config, args.overrides or (), seed=args.seed, out=args.out)
    Path(cfg.out).mkdir(parents=True, exist_ok=True)
    if args.command == "gen-data":
        path = pipeline.write_gen_data(cfg)
        n = len(TRAIN_TEMPLATES) * cfg.pairs_per_object
        print(f"wrote {n} pairs from {len(TRAIN_TEMPLATES)} objects ({cfg.pairs_per_object} per object) to {path}")
    elif args.command == "train":
        trained = pipeline.write_train(cfg)
        flow = trained.flow
        print(f"autoencoder final loss {trained.ae_loss[-1]:.4e}")
        val = f"{flow.val_loss[-1]:.4e}" if flow.val_loss else "-"
        print(f"velocity final train loss {flow.train_loss[-1]:.4e} validation loss {val}")
    elif args.command == "infer":
        scene = _scene_from_args(args)
        bundle = pipeline.load_bundle(cfg)
        g0 = GraspPose.from_vec7(np.array(args.pose))
        c = bundle.condition(render_depth(scene).astype(np.float32))
        g, traj = integrate_flow(bundle.velocity, g0.to_vec7(), c, bundle.integrator)
        print(" ".join(repr(float(v)) for v in g.to_vec7()))
        if args.trajectory:
            export_flow_trajectories([traj], args.trajectory)
    elif args.command == "eval":
        table = pipeline.write_eval(cfg)
        sys.stdout.write(table.format())
    elif args.command == "export-flow":
        n = args.n if args.n is not None else cfg.trajectories
        if n < 1:
            raise UsageError("--n must be at least 1")
        trajs = pipeline.flow_trajectories(pipeline.load_bundle(cfg), cfg, n)
        path = export_flow_trajectories(trajs, args.path or Path(cfg.out) / pipeline.FLOW_FILE)
        print(f"wrote {len(trajs)} trajectories to {path}")
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return _run(args)
    except (ConfigError, UsageError) as exc:
        print(f"graspflow: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, IntegrationError) as exc:
        print(f"graspflow: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (io.FormatError, OSError, ValueError, KeyError) as exc:
        print(f"graspflow: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
