"""
Command-line entry point: edgemap, synth, register, eval and bench.

Exit codes: 0 success, 1 usage or configuration error, 2 data error,
3 numerical divergence.
"""

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Optional, Sequence

from edgereg import __version__
from edgereg.bench import BenchConfig, run_bench
from edgereg.config import get_log_level
from edgereg.edges import edge_map
from edgereg.errors import ConfigError, DataError, DivergenceError, UsageError
from edgereg.evaluation import evaluate_displacement, jacobian_stats
from edgereg.fileio import load_labels_pgm, load_pgm, read_field, save_pgm, write_field
from edgereg.register import (
    ED_SIM_CHOICES,
    IM_SIM_CHOICES,
    MODEL_CHOICES,
    RegistrationConfig,
    register_pair,
)
from edgereg.synth import load_pair, make_pair, write_pair
from edgereg.transform import densify, warp_image

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_DIVERGENCE = 3

_CONFIG_HELP = {
    "lambda1": "weight of the image similarity term",
    "lambda2": "weight of the edge-map similarity term",
    "lambda3": "weight of the velocity smoothness regularizer",
    "im_sim": "image similarity loss",
    "ed_sim": "edge-map similarity loss ('none' disables the edge branch)",
    "model": "velocity parameterization",
    "spacing": "B-spline control point spacing in pixels",
    "steps": "scaling-and-squaring steps",
    "levels": "pyramid depth",
    "iters_per_level": "Adam iterations per pyramid level",
    "window": "LNCC window side (odd)",
    "lncc_eps": "LNCC stabilizer",
    "bins": "NMI histogram bins",
    "sigma_ratio": "NMI Parzen kernel width in bin widths",
    "eps_rel": "NGF noise level relative to the mean gradient magnitude",
    "sigma_pre": "Gaussian pre-smoothing of edge maps in pixels",
    "update_sigma": "Gaussian smoothing of each dense velocity update in pixels (0 disables)",
    "edge_normalize": "rescale edge maps to [0, 1]",
    "seed": "seed recorded with the run",
    "lr0": "initial learning rate (pixels per step)",
    "beta1": "Adam first-moment decay",
    "beta2": "Adam second-moment decay",
    "eps_adam": "Adam denominator stabilizer",
    "decay_factor": "learning rate decay factor",
    "decay_every": "iterations between learning rate decays",
}

_CONFIG_CHOICES = {"im_sim": IM_SIM_CHOICES, "ed_sim": ED_SIM_CHOICES, "model": MODEL_CHOICES}


class ArgumentParser(argparse.ArgumentParser):
    """argparse parser that raises UsageError instead of exiting."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _config_fields() -> list[tuple[str, Any]]:
    defaults = RegistrationConfig().to_dict()
    return [(name, defaults[name]) for name in defaults]


def _add_config_flags(parser: argparse.ArgumentParser, skip: tuple[str, ...] = ()) -> None:
    group = parser.add_argument_group("registration settings")
    group.add_argument("--config", type=Path, help="JSON file with registration settings; flags override it")
    for name, default in _config_fields():
        if name in skip:
            continue
        flag = "--" + name.replace("_", "-")
        help_text = f"{_CONFIG_HELP[name]} (default: {default})"
        if isinstance(default, bool):
            group.add_argument(flag, dest=name, action=argparse.BooleanOptionalAction, default=None, help=help_text)
        else:
            group.add_argument(
                flag, dest=name, type=type(default), default=None,
                choices=_CONFIG_CHOICES.get(name), help=help_text,
            )


def _config_from_args(args: argparse.Namespace) -> RegistrationConfig:
    values: dict[str, Any] = {}
    if args.config is not None:
        try:
            loaded = json.loads(Path(args.config).read_text())
        except FileNotFoundError:
            raise ConfigError(f"missing config file {args.config}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {args.config} is not valid JSON: {exc}") from exc
        if not isinstance(loaded, dict):
            raise ConfigError(f"config file {args.config} must hold a JSON object")
        values.update(loaded)
    for name, _ in _config_fields():
        value = getattr(args, name, None)
        if value is not None:
            values[name] = value
    return RegistrationConfig.from_dict(values)


def _csv_list(text: str, cast=str) -> tuple:
    try:
        return tuple(cast(item.strip()) for item in text.split(",") if item.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad list {text!r}") from None


def _float_list(text: str) -> tuple:
    return _csv_list(text, float)


def build_parser() -> ArgumentParser:
    common = ArgumentParser(add_help=False)
    common.add_argument("--verbose", "-v", action="store_true", help="enable debug logging")

    parser = ArgumentParser(prog="edgereg", description="Edge-augmented diffeomorphic 2D image registration.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = sub.add_parser("edgemap", parents=[common], help="compute a gradient-magnitude edge map")
    p.add_argument("--input", type=Path, required=True, help="input PGM image")
    p.add_argument("--out", type=Path, required=True, help="output PGM edge map")
    p.add_argument("--sigma", type=float, default=1.0, help="Gaussian pre-smoothing in pixels (default: 1.0)")
    p.add_argument("--edge-normalize", action=argparse.BooleanOptionalAction, default=True,
                   help="rescale to [0, 1] (default: on)")
    p.add_argument("--maxval", type=int, choices=(255, 65535), default=255, help="output PGM maxval (default: 255)")

    p = sub.add_parser("synth", parents=[common], help="generate a seeded multi-modal phantom pair")
    p.add_argument("--seed", type=int, default=0, help="phantom seed (default: 0)")
    p.add_argument("--size", type=int, default=192, help="image side in pixels (default: 192)")
    p.add_argument("--max-disp", type=float, default=8.0, help="largest ground-truth displacement (default: 8.0)")
    p.add_argument("--out", type=Path, required=True, help="output directory")

    p = sub.add_parser("register", parents=[common], help="register a moving image onto a fixed image")
    p.add_argument("--fixed", type=Path, required=True, help="fixed PGM image")
    p.add_argument("--moving", type=Path, required=True, help="moving PGM image")
    p.add_argument("--fixed-seg", type=Path, help="fixed label PGM, adds Dice to the report")
    p.add_argument("--moving-seg", type=Path, help="moving label PGM, adds Dice to the report")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_config_flags(p)

    p = sub.add_parser("eval", parents=[common], help="score a displacement field against segmentations")
    p.add_argument("--disp", type=Path, required=True, help="displacement field (EDR1)")
    p.add_argument("--pair", type=Path, help="manifest.json written by synth")
    p.add_argument("--fixed-seg", type=Path, help="fixed label PGM (instead of --pair)")
    p.add_argument("--moving-seg", type=Path, help="moving label PGM (instead of --pair)")
    p.add_argument("--out", type=Path, required=True, help="output report JSON")

    p = sub.add_parser("bench", parents=[common], help="run the edge-on/edge-off benchmark")
    p.add_argument("--pairs", type=int, default=10, help="number of phantom pairs (default: 10)")
    p.add_argument("--seed", dest="bench_seed", type=int, default=0, help="seed of the first pair (default: 0)")
    p.add_argument("--size", type=int, default=192, help="phantom size (default: 192)")
    p.add_argument("--max-disp", type=float, default=8.0, help="ground-truth displacement (default: 8.0)")
    p.add_argument("--models", type=_csv_list, default=("svf-dense",), help="comma list (default: svf-dense)")
    p.add_argument("--im-sims", type=_csv_list, default=("lncc", "nmi", "ngf"), help="comma list (default: lncc,nmi,ngf)")
    p.add_argument("--ed-sims", type=_csv_list, default=("lncc",), help="comma list (default: lncc)")
    p.add_argument("--sweep-lambda2", type=_float_list, default=(0.0, 1.0), help="comma list (default: 0,1)")
    p.add_argument("--sweep-lambda3", type=_float_list, default=(0.1,), help="comma list (default: 0.1)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes, capped by EDGEREG_THREADS (default: 1)")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    _add_config_flags(p, skip=("seed",))
    return parser


def _cmd_edgemap(args) -> None:
    edges = edge_map(load_pgm(args.input), args.sigma, args.edge_normalize)
    save_pgm(edges, args.out, maxval=args.maxval)
    LOGGER.info(f"Wrote edge map to {args.out}")


def _cmd_synth(args) -> None:
    manifest = write_pair(make_pair(args.seed, args.size, args.max_disp), args.out)
    LOGGER.info(f"Wrote pair to {manifest}")


def _cmd_register(args) -> None:
    if (args.fixed_seg is None) != (args.moving_seg is None):
        raise UsageError("--fixed-seg and --moving-seg must be given together")
    cfg = _config_from_args(args)
    fixed = load_pgm(args.fixed)
    moving = load_pgm(args.moving)

    result = register_pair(fixed, moving, cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_field(result.displacement, out / "disp.edr1")
    write_field(densify(result.velocity, fixed.width, fixed.height), out / "velocity.edr1")
    save_pgm(warp_image(moving, result.displacement), out / "warped.pgm")

    history = [terms.to_dict() for terms in result.loss_history]
    if args.fixed_seg is not None:
        report = evaluate_displacement(
            load_labels_pgm(args.fixed_seg), load_labels_pgm(args.moving_seg), result.displacement,
            runtime_ms=result.runtime_ms, config=cfg.to_dict(), loss_history=history,
        ).to_dict()
    else:
        fold_ratio, grad_jac_mean = jacobian_stats(result.displacement)
        report = {
            "fold_ratio": fold_ratio,
            "grad_jac_mean": grad_jac_mean,
            "runtime_ms": result.runtime_ms,
            "config": cfg.to_dict(),
            "loss_history": history,
        }
    (out / "report.json").write_text(json.dumps(report, indent=2))
    LOGGER.info(f"Wrote disp.edr1, velocity.edr1, warped.pgm and report.json to {out}")


def _cmd_eval(args) -> None:
    if args.pair is not None:
        pair = load_pair(args.pair)
        fixed_seg, moving_seg = pair.fixed_seg, pair.moving_seg
    elif args.fixed_seg is not None and args.moving_seg is not None:
        fixed_seg, moving_seg = load_labels_pgm(args.fixed_seg), load_labels_pgm(args.moving_seg)
    else:
        raise UsageError("eval needs --pair or both --fixed-seg and --moving-seg")
    report = evaluate_displacement(fixed_seg, moving_seg, read_field(args.disp))
    Path(args.out).write_text(report.to_json())
    LOGGER.info(f"Dice {report.dice_mean:.4f}, fold ratio {report.fold_ratio:.2e}; wrote {args.out}")


def _cmd_bench(args) -> None:
    cfg = BenchConfig(
        pairs=args.pairs,
        seed=args.bench_seed,
        size=args.size,
        max_disp=args.max_disp,
        models=args.models,
        im_sims=args.im_sims,
        ed_sims=args.ed_sims,
        lambda2s=args.sweep_lambda2,
        lambda3s=args.sweep_lambda3,
        jobs=args.jobs,
        base=_config_from_args(args),
    )
    result = run_bench(cfg, args.out)
    LOGGER.info(f"Wrote {result.cells_path} and {result.table_path}")


_COMMANDS = {
    "edgemap": _cmd_edgemap,
    "synth": _cmd_synth,
    "register": _cmd_register,
    "eval": _cmd_eval,
    "bench": _cmd_bench,
}


def _configure_logging(verbose: bool) -> None:
    logging.basicConfig(
        level=get_log_level(verbose),
        format="[%(levelname)s] %(message)s",
        stream=sys.stderr,
        force=True,
    )


def run(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        _configure_logging(args.verbose)
        _COMMANDS[args.command](args)
    except SystemExit as exc:
        # --help and --version
        return int(exc.code or 0)
    except (UsageError, ConfigError) as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DivergenceError as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except (DataError, OSError) as exc:
        print(f"[ERROR] {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
