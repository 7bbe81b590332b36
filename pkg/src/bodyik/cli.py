"""Command-line entry point: ``bodyik <command> ...``.

Exit codes: 0 success, 2 validation error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys

from . import harness
from .bodymodel import generate_synthetic_model, load_model, save_model
from .errors import BodyIKError, NumericFailureError
from .losses import REFINE_TERMS
from .refiner import RefinerConfig, SyntheticFeatureProvider, load_weights, save_weights

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_NUMERIC = 3


def _model(path):
    return load_model(path) if path else generate_synthetic_model(0)


def _scenes(args, model, provider=None):
    """``--scenes`` is either a scene count (generated from ``--seed``) or a scene JSON file."""
    source = str(args.scenes)
    if source.isdigit():
        return harness.make_scenes(model, int(source), args.persons, args.noise, args.seed, provider)
    return harness.load_scenes(source, args.noise, args.seed, provider)


def _refiner_config(path, overrides):
    doc = {}
    if path:
        with open(path) as fh:
            doc = json.load(fh)
    if not isinstance(doc, dict):
        raise BodyIKError(f"{path}: config must be a JSON object")
    base = RefinerConfig.desk().to_dict()
    base.update(doc)
    base.update({k: v for k, v in overrides.items() if v is not None})
    return RefinerConfig.from_dict(base)


def _loss_weights(items):
    weights = {}
    for item in items or ():
        name, sep, value = item.partition("=")
        if not sep or name not in REFINE_TERMS:
            raise BodyIKError(f"--loss-weight expects TERM=VALUE with TERM in {', '.join(REFINE_TERMS)}")
        weights[name] = float(value)
    return weights


def _write_report(report, args):
    harness.export_report(report, args.report, args.format, include_timing=args.timing)


def cmd_gen_model(args):
    save_model(generate_synthetic_model(args.seed, args.vertices), args.out)


def cmd_gen_scenes(args):
    model = _model(args.model)
    scenes = harness.make_scenes(model, args.count, args.persons, 0.0, args.seed)
    harness.save_scenes(scenes, args.out)


def cmd_roundtrip(args):
    model = _model(args.model)
    report = harness.run_roundtrip(model, _scenes(args, model))
    _write_report(report, args)


def cmd_train_refiner(args):
    model = _model(args.model)
    config = _refiner_config(args.config, {"N": args.max_persons})
    provider = SyntheticFeatureProvider(config.feat_dim, seed=args.feature_seed)
    train = harness.TrainConfig(
        lr_refiner=args.lr,
        lr_other=args.lr_other,
        batch_size=args.batch_size,
        steps_per_epoch=args.steps_per_epoch,
        groups_per_scene=args.groups_per_scene,
        masking=not args.no_masking,
        adversarial=not args.no_adversarial,
        loss_weights=_loss_weights(args.loss_weight),
    )
    weights, report = harness.train_refiner(model, config, _scenes(args, model, provider), args.epochs,
                                            seed=args.seed, train=train)
    save_weights(weights, args.out_weights)
    if args.report:
        _write_report(report, args)


def cmd_eval(args):
    model = _model(args.model)
    weights = load_weights(args.weights) if args.weights else None
    provider = None
    if weights is not None:
        provider = SyntheticFeatureProvider(weights.config.feat_dim, seed=args.feature_seed)
    report = harness.evaluate(model, weights, _scenes(args, model, provider), workers=args.workers,
                              dump_obj=args.dump_obj)
    _write_report(report, args)


def _add_scene_args(p, noise_default):
    p.add_argument("--model", help="model JSON (default: synthetic model, seed 0)")
    p.add_argument("--scenes", default="8", help="scene count to synthesise, or a scene JSON file")
    p.add_argument("--persons", type=int, default=3, help="persons per synthesised scene")
    p.add_argument("--noise", type=float, default=noise_default, help="skeleton noise std (m)")
    p.add_argument("--seed", type=int, default=0)


def _add_report_args(p, required=True):
    p.add_argument("--report", required=required)
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--timing", action="store_true", help="include wall-clock time (breaks byte-identity)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bodyik", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-model", help="write a synthetic body model")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--vertices", type=int, default=600)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_model)

    p = sub.add_parser("gen-scenes", help="write noise-free synthetic scenes")
    p.add_argument("--model")
    p.add_argument("--count", type=int, default=8)
    p.add_argument("--persons", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_scenes)

    p = sub.add_parser("roundtrip", help="IK round trip on synthetic skeletons")
    _add_scene_args(p, 0.0)
    _add_report_args(p)
    p.set_defaults(func=cmd_roundtrip)

    p = sub.add_parser("train-refiner", help="train the refiner on synthetic scenes")
    _add_scene_args(p, 0.02)
    p.add_argument("--config", help="refiner config JSON (RefinerConfig field names)")
    p.add_argument("--max-persons", type=int, help="override N")
    p.add_argument("--epochs", type=int, default=1)
    p.add_argument("--out-weights", required=True)
    p.add_argument("--lr", type=float, default=harness.REFINER_LR)
    p.add_argument("--lr-other", type=float, default=harness.OTHER_LR)
    p.add_argument("--batch-size", type=int, default=64)
    p.add_argument("--steps-per-epoch", type=int)
    p.add_argument("--groups-per-scene", type=int)
    p.add_argument("--no-masking", action="store_true")
    p.add_argument("--no-adversarial", action="store_true")
    p.add_argument("--loss-weight", action="append", metavar="TERM=VALUE",
                   help="per-term loss multiplier (default 1.0), repeatable")
    p.add_argument("--feature-seed", type=int, default=1234)
    _add_report_args(p, required=False)
    p.set_defaults(func=cmd_train_refiner)

    p = sub.add_parser("eval", help="evaluate IK initialisations, optionally refined")
    _add_scene_args(p, 0.02)
    p.add_argument("--weights", help="refiner checkpoint (.npz)")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--dump-obj", metavar="DIR", help="write refined meshes as Wavefront OBJ")
    p.add_argument("--feature-seed", type=int, default=1234)
    _add_report_args(p)
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except NumericFailureError as exc:
        print(f"bodyik: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (BodyIKError, ValueError, KeyError, OSError) as exc:
        print(f"bodyik: error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
