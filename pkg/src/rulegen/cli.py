"""Command-line interface: train, extract, evaluate, predict, explain, sweep.

Exit codes: 0 success, 2 bad arguments, 3 bad or mismatched data, 4 solver
failure. Log verbosity comes from ``RULEGEN_LOG`` (error, warn, info, debug).
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import os
import sys
from pathlib import Path
from typing import Optional

import numpy as np

from rulegen.dataio import Dataset, Encoding, FeatureMeta, Schema, load_csv
from rulegen.errors import DataError, InfeasibleRuleError, RulegenError, SizeGuardError, SolverError, UnsupportedMetricError
from rulegen.evalkit import cross_validate, evaluate, predict_batch, write_explanations
from rulegen.fairness import EPSILON_GRID, FairnessSpec
from rulegen.rug import CgConfig, RuleModel, fit_rug
from rulegen.rules import CostPolicy, Rule
from rulegen.rux import fit_rux, harvest_pool, load_pool
from rulegen.wtree import fit_forest

log = logging.getLogger("rulegen")

FORMAT_VERSION = 1
EXIT_OK, EXIT_ARGS, EXIT_DATA, EXIT_SOLVER = 0, 2, 3, 4
_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "warning": logging.WARNING,
           "info": logging.INFO, "debug": logging.DEBUG}


class ArgumentError(Exception):
    pass


# ------------------------------------------------------------------ model file


def model_to_dict(model: RuleModel, schema: Schema, encoding: Encoding, config: dict) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "mode": model.mode,
        "schema": schema.to_dict(),
        "encoding": {
            "features": [m.to_dict() for m in encoding.feature_meta],
            "group_order": list(encoding.group_order),
        },
        "class_order": list(model.class_order),
        "K": model.K,
        "fallback_class": model.fallback_class,
        "all_pool_size": model.all_pool_size,
        "rules": [r.to_dict() for r in model.rules],
        "fit_log": model.fit_log,
        "meta": model.meta,
        "config": config,
    }


def save_model(path, model: RuleModel, schema: Schema, encoding: Encoding, config: dict) -> None:
    payload = model_to_dict(model, schema, encoding, config)
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_model(path) -> tuple[RuleModel, Schema, Encoding, dict]:
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not a model file ({exc.msg})") from exc
    try:
        if raw.get("format_version") != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported model format {raw.get('format_version')!r}")
        s = raw["schema"]
        schema = Schema(s["target"], tuple(s.get("categorical", ())), s.get("group"), s.get("positive_class"))
        features = [FeatureMeta.from_dict(d) for d in raw["encoding"]["features"]]
        encoding = Encoding(features, list(raw["class_order"]), list(raw["encoding"].get("group_order", [])))
        model = RuleModel(
            rules=[Rule.from_dict(d) for d in raw["rules"]],
            all_pool_size=int(raw["all_pool_size"]),
            fallback_class=int(raw["fallback_class"]),
            class_order=tuple(raw["class_order"]),
            K=int(raw["K"]),
            fit_log=raw.get("fit_log", []),
            n_features=len(features),
            mode=raw["mode"],
            meta=raw.get("meta", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"{path}: malformed model file ({exc})") from exc
    return model, schema, encoding, raw.get("config", {})


# ------------------------------------------------------------------- helpers


def _csv_header(path) -> list[str]:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            return [h.strip() for h in next(csv.reader(fh), [])]
    except OSError as exc:
        raise DataError(f"{path}: {exc.strerror or exc}") from exc


def _schema_from_args(args) -> Schema:
    if args.schema:
        schema = Schema.from_json(args.schema)
        overrides = {}
        if args.target:
            overrides["target_column"] = args.target
        if args.categorical:
            overrides["categorical_columns"] = tuple(_split(args.categorical))
        if args.group:
            overrides["group_column"] = args.group
        if args.positive_class:
            overrides["positive_class"] = args.positive_class
        return dataclasses.replace(schema, **overrides)
    if not args.target:
        raise ArgumentError("either --target or --schema is required")
    return Schema(args.target, tuple(_split(args.categorical)), args.group, args.positive_class)


def _split(text: Optional[str]) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()] if text else []


def _fairness(args, schema: Schema) -> Optional[FairnessSpec]:
    if not getattr(args, "fairness", None):
        return None
    if schema.group_column is None:
        raise ArgumentError("--fairness needs a protected-group column (--group)")
    return FairnessSpec(args.fairness, args.epsilon, schema.group_column)


def _load_for_model(path, schema: Schema, encoding: Encoding, require_target: bool) -> Dataset:
    header = set(_csv_header(path))
    if schema.group_column is not None and schema.group_column not in header:
        schema = dataclasses.replace(schema, group_column=None)
    return load_csv(path, schema, reference=encoding.reference(), require_target=require_target)


def _print_summary(model: RuleModel, data: Dataset, schema: Schema) -> None:
    metrics = evaluate(model, data, positive_class=schema.positive_class)
    print(f"mode: {model.mode}")
    print(f"active rules: {len(model.rules)} of {model.all_pool_size} generated")
    print(metrics.to_table())


def _cg_config(args, fairness) -> CgConfig:
    return CgConfig(
        lam=args.lam,
        max_depth=args.max_depth,
        max_iterations=args.max_iter,
        cost_policy=args.cost,
        fairness=fairness,
        seed=args.seed,
        pricing=args.pricing,
        max_conditions=args.max_conditions,
        log_path=args.log,
    )


def _rux_fit(args, data: Dataset, fairness):
    if args.pool:
        pool = load_pool(args.pool, cost_policy=args.cost if args.recost else None)
    else:
        forest = fit_forest(
            data,
            n_trees=args.trees,
            max_depth=args.max_depth,
            features_per_split=args.features_per_split,
            seed=args.seed,
            bootstrap=not args.no_bootstrap,
        )
        pool = harvest_pool(forest, args.cost)
    return fit_rux(pool, data, lam=args.lam, fairness=fairness, dump_path=getattr(args, "dump_lp", None))


def _rux_config(args, fairness) -> dict:
    return {
        "lambda": args.lam,
        "cost_policy": CostPolicy.parse(args.cost).value,
        "pool": Path(args.pool).name if args.pool else None,
        "trees": None if args.pool else args.trees,
        "max_depth": args.max_depth,
        "features_per_split": args.features_per_split,
        "bootstrap": not args.no_bootstrap,
        "seed": args.seed,
        "fairness": fairness.to_dict() if fairness else None,
    }


# ------------------------------------------------------------------ commands


def cmd_train(args) -> int:
    schema = _schema_from_args(args)
    fairness = _fairness(args, schema)
    data = load_csv(args.data, schema)
    config = _cg_config(args, fairness)
    model = fit_rug(data, config)
    save_model(args.out, model, schema, Encoding.of(data), config.to_dict())
    _print_summary(model, data, schema)
    return EXIT_OK


def cmd_extract(args) -> int:
    schema = _schema_from_args(args)
    fairness = _fairness(args, schema)
    data = load_csv(args.data, schema)
    model = _rux_fit(args, data, fairness)
    save_model(args.out, model, schema, Encoding.of(data), _rux_config(args, fairness))
    _print_summary(model, data, schema)
    print(f"compression ratio: {model.meta['compression_ratio']:.4f}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    model, schema, encoding, _ = load_model(args.model)
    data = _load_for_model(args.data, schema, encoding, require_target=True)
    metrics = evaluate(model, data, fairness=args.fairness, positive_class=schema.positive_class)
    text = metrics.to_json() if args.format == "json" else metrics.to_table()
    _emit(text, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model, schema, encoding, _ = load_model(args.model)
    data = _load_for_model(args.data, schema, encoding, require_target=False)
    pred = predict_batch(model, data)
    lines = ["row,prediction,used_fallback"]
    for i, (k, fb) in enumerate(zip(pred.labels, pred.used_fallback)):
        lines.append(f"{i},{_csv_cell(model.class_order[k])},{int(fb)}")
    _emit("\n".join(lines), args.out)
    return EXIT_OK


def cmd_explain(args) -> int:
    model, schema, encoding, _ = load_model(args.model)
    data = _load_for_model(args.data, schema, encoding, require_target=False)
    if args.out:
        write_explanations(model, data, args.out)
        return EXIT_OK
    pred = predict_batch(model, data)
    writer = csv.writer(sys.stdout, lineterminator="\n")
    writer.writerow(["row", "prediction", "used_fallback", "rule_ids", "rule_weights"])
    for i in range(data.n_samples):
        ids = np.flatnonzero(pred.coverage[i])
        writer.writerow([
            i,
            model.class_order[pred.labels[i]],
            int(pred.used_fallback[i]),
            ";".join(str(j) for j in ids),
            ";".join(repr(model.rules[j].weight) for j in ids),
        ])
    return EXIT_OK


def cmd_sweep(args) -> int:
    schema = _schema_from_args(args)
    if not args.fairness:
        raise ArgumentError("sweep needs --fairness dmc|odm")
    if schema.group_column is None:
        raise ArgumentError("sweep needs a protected-group column (--group)")
    grid = [float(e) for e in _split(args.epsilon_grid)] if args.epsilon_grid else list(EPSILON_GRID)
    if any(e < 0 for e in grid):
        raise ArgumentError("epsilon values must be nonnegative")
    data = load_csv(args.data, schema)
    rows = []
    for eps in grid:
        spec = FairnessSpec(args.fairness, eps, schema.group_column)
        if args.method == "rug":
            fit = lambda d, spec=spec: fit_rug(d, _cg_config(args, spec))  # noqa: E731
        else:
            fit = lambda d, spec=spec: _rux_fit(args, d, spec)  # noqa: E731
        cv = cross_validate(data, fit, n_folds=args.folds, seed=args.seed, fairness=args.fairness,
                            positive_class=schema.positive_class)
        attr = "fairness_dmc" if args.fairness == "dmc" else "fairness_odm"
        rows.append((eps, cv.mean("accuracy"), cv.std("accuracy"), cv.mean(attr), cv.std(attr)))
        log.info("epsilon %g: accuracy %.2f, fairness %.2f", eps, rows[-1][1], rows[-1][3])
    lines = ["epsilon,accuracy,accuracy_std,fairness,fairness_std"]
    lines += [",".join(f"{v:.6g}" for v in row) for row in rows]
    _emit("\n".join(lines), args.out)
    acc = [r[1] for r in rows]
    if any(b < a - 1e-9 for a, b in zip(acc, acc[1:])):
        print("advisory: mean accuracy is not monotone in epsilon across the grid", file=sys.stderr)
    return EXIT_OK


def _csv_cell(text: str) -> str:
    return f'"{text}"' if any(ch in text for ch in ',"\n') else text


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        Path(out).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


# -------------------------------------------------------------------- parser


def _data_args(p, with_schema=True):
    p.add_argument("data", help="input CSV with a header row")
    if with_schema:
        p.add_argument("--target", help="label column")
        p.add_argument("--categorical", help="comma-separated categorical columns")
        p.add_argument("--group", help="protected-group column")
        p.add_argument("--positive-class", help="label treated as positive for F1")
        p.add_argument("--schema", help="JSON schema file (target, categorical, group, positive_class)")


def _fair_args(p):
    p.add_argument("--fairness", choices=["dmc", "odm"], help="fairness constraint family")
    p.add_argument("--epsilon", type=float, default=0.0, help="allowed unfairness (default 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rulegen", description="LP-weighted rule set classifiers")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", help="fit a rule set by column generation")
    _data_args(train)
    _fair_args(train)
    train.add_argument("--lambda", dest="lam", type=float, default=1.0)
    train.add_argument("--max-depth", type=int, default=3)
    train.add_argument("--max-iter", type=int, default=15)
    train.add_argument("--cost", default="unit", choices=[c.value for c in CostPolicy])
    train.add_argument("--pricing", default="proxy", choices=["proxy", "exact"])
    train.add_argument("--max-conditions", type=int, default=3, help="rule size for exact pricing")
    train.add_argument("--seed", type=int, default=0)
    train.add_argument("--out", required=True, help="model file to write")
    train.add_argument("--log", help="write the per-iteration fit log as JSON lines")
    train.set_defaults(func=cmd_train)

    extract = sub.add_parser("extract", help="re-weight the leaves of a tree ensemble")
    _data_args(extract)
    _fair_args(extract)
    extract.add_argument("--pool", help="JSON rule file instead of an internal forest")
    extract.add_argument("--recost", action="store_true", help="recompute pool rule costs from --cost")
    extract.add_argument("--trees", type=int, default=100)
    extract.add_argument("--max-depth", type=int, default=3)
    extract.add_argument("--features-per-split", default="sqrt")
    extract.add_argument("--no-bootstrap", action="store_true")
    extract.add_argument("--lambda", dest="lam", type=float, default=1.0)
    extract.add_argument("--cost", default="length", choices=[c.value for c in CostPolicy])
    extract.add_argument("--seed", type=int, default=0)
    extract.add_argument("--out", required=True, help="model file to write")
    extract.add_argument("--dump-lp", help="also write the master LP as plain text")
    extract.set_defaults(func=cmd_extract)

    ev = sub.add_parser("evaluate", help="metrics of a saved model on labelled data")
    ev.add_argument("--model", required=True)
    _data_args(ev, with_schema=False)
    ev.add_argument("--format", choices=["json", "table"], default="json")
    ev.add_argument("--fairness", choices=["dmc", "odm", "both"])
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_evaluate)

    pr = sub.add_parser("predict", help="per-row predicted class")
    pr.add_argument("--model", required=True)
    _data_args(pr, with_schema=False)
    pr.add_argument("--out")
    pr.set_defaults(func=cmd_predict)

    ex = sub.add_parser("explain", help="per-row covering rules and weights")
    ex.add_argument("--model", required=True)
    _data_args(ex, with_schema=False)
    ex.add_argument("--out")
    ex.set_defaults(func=cmd_explain)

    sw = sub.add_parser("sweep", help="cross-validated accuracy and fairness over an epsilon grid")
    _data_args(sw)
    _fair_args(sw)
    sw.add_argument("--epsilon-grid", help="comma-separated epsilons (default 0,0.01,0.025,0.05,0.08,1)")
    sw.add_argument("--method", choices=["rug", "rux"], default="rug")
    sw.add_argument("--folds", type=int, default=10)
    sw.add_argument("--lambda", dest="lam", type=float, default=1.0)
    sw.add_argument("--max-depth", type=int, default=3)
    sw.add_argument("--max-iter", type=int, default=15)
    sw.add_argument("--cost", default=None, choices=[c.value for c in CostPolicy])
    sw.add_argument("--pricing", default="proxy", choices=["proxy", "exact"])
    sw.add_argument("--max-conditions", type=int, default=3)
    sw.add_argument("--trees", type=int, default=100)
    sw.add_argument("--features-per-split", default="sqrt")
    sw.add_argument("--no-bootstrap", action="store_true")
    sw.add_argument("--pool")
    sw.add_argument("--recost", action="store_true")
    sw.add_argument("--seed", type=int, default=0)
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep, log=None)
    return parser


def _configure_logging() -> None:
    level = _LEVELS.get(os.environ.get("RULEGEN_LOG", "warn").strip().lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    logging.getLogger("rulegen").setLevel(level)


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if getattr(args, "command", None) == "sweep" and args.cost is None:
        args.cost = "unit" if args.method == "rug" else "length"
    try:
        return args.func(args)
    except ArgumentError as exc:
        print(f"rulegen: error: {exc}", file=sys.stderr)
        return EXIT_ARGS
    except SolverError as exc:
        print(f"rulegen: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except (DataError, InfeasibleRuleError, SizeGuardError, UnsupportedMetricError, IndexError, ValueError) as exc:
        print(f"rulegen: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except RulegenError as exc:
        print(f"rulegen: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
