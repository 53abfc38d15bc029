"""Command-line interface: ``sngp {train,eval,surface,sweep,theory}``.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure,
3 a theory claim failed.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import json
import logging
import sys
from pathlib import Path

from . import __version__, artifact, datasets, pipeline, theory
from .config import ExperimentConfig, load_config
from .errors import ConfigError, DimensionUnsupported, NumericalError, SNGPError

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL, EXIT_THEORY = 0, 1, 2, 3

log = logging.getLogger("sngp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _overrides(pairs: list[str] | None) -> dict[str, str]:
    out = {}
    for item in pairs or []:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"expected section.key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


def _config(args) -> ExperimentConfig:
    overrides = _overrides(args.set)
    if args.seed is not None:
        overrides["run.seed"] = str(args.seed)
    return load_config(args.config, overrides)


def _write_json(obj, path: Path | None):
    text = json.dumps(obj, sort_keys=True, indent=2) + "\n"
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text)


def _out_dir(args) -> Path | None:
    if args.out is None:
        return None
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- commands -----------------------------------------------------------------

def cmd_train(args) -> int:
    cfg = _config(args)
    out = Path(args.out or "run")
    out.mkdir(parents=True, exist_ok=True)
    model, splits = pipeline.train_model(cfg)
    artifact.save(model, out / "model.json")
    (out / "config.ini").write_text(cfg.to_ini())
    datasets.write_csv(splits.train, out / "train.csv")
    for name in ("validation", "test"):
        part = getattr(splits, name)
        if part is not None:
            datasets.write_csv(part, out / f"{name}.csv")
    for name, od in splits.ood.items():
        datasets.write_csv(od, out / f"{name}.csv")
    heads = [m.head for m in model.members]
    train_log = {
        "task": model.task,
        "members": [{"losses": m.losses} for m in model.members],
        "variance_scale": [getattr(h, "variance_scale", None) for h in heads],
        "has_covariance": [getattr(h, "covariance", None) is not None for h in heads],
    }
    _write_json(train_log, out / "train_log.json")
    _write_json({"artifact": str(out / "model.json"), "task": model.task,
                 "final_loss": [m.losses[-1] for m in model.members]}, None)
    return EXIT_OK


def _default_sibling(model_path: Path, name: str) -> Path | None:
    p = model_path.parent / name
    return p if p.exists() else None


def cmd_eval(args) -> int:
    model_path = Path(args.model)
    model = artifact.load(model_path)
    data_path = Path(args.data) if args.data else _default_sibling(model_path, "test.csv")
    if data_path is None:
        raise ConfigError("no evaluation data: pass --data PATH")
    data = datasets.read_csv(data_path)
    ood = {}
    for p in args.ood or []:
        od = datasets.read_csv(p)
        name = Path(p).stem
        if name in ood:
            raise ConfigError(f"duplicate OOD set name {name!r}")
        ood[name] = od
    report = pipeline.evaluate(model, data, ood).to_dict()
    out = _out_dir(args)
    _write_json(report, None if out is None else out / "report.json")
    return EXIT_OK


SURFACE_COLUMNS = ("x0", "x1", "max_prob", "u_normalized", "variance")


def write_surface(rows, path_or_stream):
    def emit(fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SURFACE_COLUMNS)
        for r in rows:
            w.writerow([repr(float(v)) for v in r])
    if hasattr(path_or_stream, "write"):
        emit(path_or_stream)
    else:
        with open(path_or_stream, "w", newline="") as fh:
            emit(fh)


def cmd_surface(args) -> int:
    model = artifact.load(Path(args.model))
    if model.in_dim != 2:
        raise DimensionUnsupported(f"surface needs a 2-D input model, got d = {model.in_dim}")
    axes = pipeline.parse_grid(args.grid) if args.grid else pipeline.default_grid(model)
    rows = pipeline.surface(model, axes)
    out = _out_dir(args)
    write_surface(rows, sys.stdout if out is None else out / "surface.csv")
    return EXIT_OK


def _param_grid(items: list[str] | None) -> list[dict[str, str]]:
    keys, values = [], []
    for item in items or []:
        key, sep, vals = item.partition("=")
        options = [v.strip() for v in vals.split(",") if v.strip()]
        if not sep or not options:
            raise ConfigError(f"expected section.key=v1,v2,... got {item!r}")
        keys.append(key.strip())
        values.append(options)
    if not keys:
        raise ConfigError("sweep needs at least one --param section.key=v1,v2,...")
    return [dict(zip(keys, combo)) for combo in itertools.product(*values)]


def run_sweep(base_overrides: dict[str, str], config_path, grid: list[dict[str, str]]) -> dict:
    rows = []
    for point in grid:
        cfg = load_config(config_path, {**base_overrides, **point})
        splits = pipeline.prepare_splits(cfg)
        if splits.validation is None:
            raise ConfigError("sweep needs data.validation_fraction > 0")
        model, _ = pipeline.train_model(cfg, splits)
        report = pipeline.evaluate(model, splits.validation)
        scales = [getattr(m.head, "variance_scale", None) for m in model.members]
        rows.append({"params": point, "validation_nll": report.nll,
                     "validation_accuracy": report.accuracy,
                     "validation_ece": report.ece, "variance_scale": scales[0]})
        log.info("sweep %s -> validation NLL %.5f", point, report.nll)
    best = min(range(len(rows)), key=lambda i: rows[i]["validation_nll"])
    return {"table": rows, "best_index": best, "best": rows[best]}


def cmd_sweep(args) -> int:
    grid = _param_grid(args.param)
    base = _overrides(args.set)
    if args.seed is not None:
        base["run.seed"] = str(args.seed)
    result = run_sweep(base, args.config, grid)
    out = _out_dir(args)
    _write_json(result, None if out is None else out / "sweep.json")
    if out is not None:
        best_cfg = load_config(args.config, {**base, **result["best"]["params"]})
        (out / "best.ini").write_text(best_cfg.to_ini())
    return EXIT_OK


def cmd_theory(args) -> int:
    verdicts = theory.run_claims(args.claims, seed=args.seed or 0)
    out = _out_dir(args)
    _write_json(verdicts, None if out is None else out / "theory.json")
    return EXIT_OK if all(v["pass"] for v in verdicts) else EXIT_THEORY


# -- entry point --------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sngp", description="Distance-aware uncertainty toolkit.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, config=True):
        if config:
            sp.add_argument("--config", help="INI file layered over the shipped defaults")
            sp.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                            help="override one config key (repeatable)")
        sp.add_argument("--seed", type=int, help="override run.seed")
        sp.add_argument("--out", help="output directory")

    sp = sub.add_parser("train", help="train a model and write its artifact")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate an artifact on IND and OOD sets")
    sp.add_argument("--model", required=True, help="model.json written by train")
    sp.add_argument("--data", help="IND evaluation CSV (default: test.csv beside the model)")
    sp.add_argument("--ood", nargs="+", metavar="PATH", help="OOD CSV files")
    common(sp, config=False)
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("surface", help="export a 2-D uncertainty surface as CSV")
    sp.add_argument("--model", required=True, help="model.json written by train")
    sp.add_argument("--grid", help='"x0:lo:hi:n,x1:lo:hi:n" (default: training box inflated 2x)')
    common(sp, config=False)
    sp.set_defaults(func=cmd_surface)

    sp = sub.add_parser("sweep", help="grid search by validation NLL")
    sp.add_argument("--param", action="append", metavar="SECTION.KEY=V1,V2",
                    help="grid axis (repeatable)")
    common(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("theory", help="run the numerical theory checks")
    sp.add_argument("--claims", default="all", help=f"comma list from {','.join(theory.CLAIMS)}")
    common(sp, config=False)
    sp.set_defaults(func=cmd_theory)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except NumericalError as exc:
        print(f"sngp: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (SNGPError, ValueError, OSError) as exc:
        print(f"sngp: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
