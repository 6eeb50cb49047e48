"""Command-line entry point: `aggforge <command> ...`.

Exit codes: 0 ok, 1 execution error, 2 configuration or input error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import errors
from .applications import (
    bgd_train, cart_train, chow_liu, covar_batch, data_cube_batch, mi_matrix,
    mutual_information_batch, write_cube_csv, CovarMatrix,
)
from .catalog import favorita_config_path, format_config, load_config
from .executor import Engine
from .logical import explain_logical
from .physical import explain_plan
from .query import parse_batch
from .storage import Database


class UsageError(Exception):
    pass


CONFIG_ERRORS = (errors.CatalogError, errors.StorageError, errors.QueryError,
                 errors.UnknownAttribute, UsageError, FileNotFoundError, NotADirectoryError)


def _split(text: str | None) -> list[str]:
    return [t.strip() for t in (text or "").split(",") if t.strip()]


def _common(p: argparse.ArgumentParser, queries=False):
    p.add_argument("--schema", default=None, help="schema/tree config (default: bundled Favorita)")
    p.add_argument("--data", default=None, help="directory with one <relation>.csv per relation")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default="aggforge_out")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--explain-logical", action="store_true")
    p.add_argument("--explain-physical", action="store_true")
    p.add_argument("--stats", action="store_true", help="write scan statistics as CSV")
    if queries:
        p.add_argument("--queries", required=True, help="file with one query per line")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aggforge", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    _common(sub.add_parser("run", help="evaluate a query batch file"), queries=True)

    for name in ("covar", "linreg"):
        p = sub.add_parser(name, help="covar matrix" if name == "covar" else "ridge regression")
        _common(p)
        p.add_argument("--features", default=None, help="comma list (default: all but label)")
        p.add_argument("--label", required=True)
        if name == "linreg":
            p.add_argument("--lambda", dest="lam", type=float, default=0.1)
            p.add_argument("--max-iter", type=int, default=10000)

    p = sub.add_parser("cube", help="data cube")
    _common(p)
    p.add_argument("--dims", required=True)
    p.add_argument("--measures", required=True)
    p.add_argument("--agg", default="sum", choices=["sum", "count", "sumsq"])

    for name in ("mi", "chowliu"):
        p = sub.add_parser(name, help="pairwise mutual information" if name == "mi"
                           else "Chow-Liu tree")
        _common(p)
        p.add_argument("--attrs", required=True)

    for name, costs in (("rtree", ["variance"]), ("ctree", ["gini", "entropy"])):
        p = sub.add_parser(name, help="regression tree" if name == "rtree" else "classification tree")
        _common(p)
        p.add_argument("--label", required=True)
        p.add_argument("--features", default=None)
        p.add_argument("--max-depth", type=int, default=4)
        p.add_argument("--min-split", type=int, default=2)
        p.add_argument("--buckets", type=int, default=20)
        p.add_argument("--cost", default=costs[0], choices=costs)

    p = sub.add_parser("gen", help="write a random acyclic database (schema + CSVs)")
    p.add_argument("--spec", default="", help="key=value list, e.g. relations=4,max_rows=300")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--favorita", type=int, default=0, help="fact rows for a Favorita-shaped db")
    return ap


def _load(args) -> Database:
    schema = Path(args.schema) if args.schema else favorita_config_path()
    catalog = load_config(schema)
    catalog.ensure_tree()
    if args.data:
        data = Path(args.data)
    elif not args.schema:
        data = favorita_config_path().parent / "favorita_toy"
    else:
        raise UsageError("--data is required with --schema")
    if not data.is_dir():
        raise UsageError(f"data directory {data} does not exist")
    return Database.from_csv_dir(catalog, data)


def _write_batch(args, engine: Engine, compiled, result, out: Path):
    rdir = out / "results"
    rdir.mkdir(parents=True, exist_ok=True)
    size = 0
    for qid, table in result.results.items():
        table.to_csv(rdir / f"{qid}.csv", engine.db.decode)
        size += len(table) * max(table.arity, 1)
    summary = dict(compiled.logical.summary())
    summary["output_size"] = size
    summary["queries"] = len(compiled.logical.queries)
    summary["threads"] = args.threads
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    if args.explain_logical:
        (out / "explain_logical.txt").write_text(explain_logical(compiled.logical))
    if args.explain_physical:
        text = "\n".join(explain_plan(compiled.plans[g.id], compiled.logical.views)
                         for g in compiled.logical.graph.groups)
        (out / "explain_physical.txt").write_text(text)
    if args.stats:
        with open(out / "stats.csv", "w") as fh:
            fh.write("group,relation,leaf_visits,lookups,inner_iterations,partitions\n")
            for s in result.stats:
                fh.write(f"{s.group},{s.node},{s.leaf_visits},{s.lookups},"
                         f"{s.inner_iterations},{s.partitions}\n")
    return summary


def _run_batch(args, db: Database, batch, out: Path):
    engine = Engine(db, args.threads)
    compiled = engine.compile(batch)
    result = compiled.run()
    summary = _write_batch(args, engine, compiled, result, out)
    return result, summary


def _features(args, db: Database, exclude=()) -> list[str]:
    if args.features:
        feats = _split(args.features)
    else:
        feats = list(db.catalog.attributes)
    for a in feats + [getattr(args, "label", None)]:
        if a is not None:
            db.catalog.check_attr(a, "command line")
    return [f for f in feats if f not in exclude]


def cmd_run(args, out: Path) -> None:
    db = _load(args)
    try:
        text = Path(args.queries).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read query file {args.queries}: {exc.strerror}") from exc
    batch = parse_batch(text, db.catalog, dictionaries=db.dictionaries)
    _, summary = _run_batch(args, db, batch, out)
    print(json.dumps(summary, sort_keys=True))


def cmd_covar(args, out: Path) -> None:
    db = _load(args)
    label = args.label
    feats = _features(args, db, exclude=(label,))
    cat = db.catalog.is_categorical
    batch = covar_batch(feats, label, cat)
    result, summary = _run_batch(args, db, batch, out)
    covar = CovarMatrix.from_results(feats, label, cat, result.results)
    if args.command == "covar":
        S, cols = covar.sigma()
        names = [a if c is None else f"{a}={db.decode(a, [c])[0]}" for a, c in cols]
        with open(out / "covar.csv", "w") as fh:
            fh.write(",".join([""] + names) + "\n")
            for name, row in zip(names, S):
                fh.write(",".join([name] + [repr(float(v)) for v in row]) + "\n")
        print(json.dumps(summary, sort_keys=True))
        return
    if cat(label):
        raise UsageError(f"label {label} must be continuous for linear regression")
    model = bgd_train(covar, args.lam, max_iter=args.max_iter)
    lines = []
    for (a, code), theta in zip(model.columns, model.theta):
        name = a if code is None else f"{a}={db.decode(a, [code])[0]}"
        lines.append(f"{name}\t{float(theta)!r}")
    text = "\n".join(lines) + "\n"
    (out / "model.txt").write_text(text)
    meta = {"iterations": model.iterations, "converged": model.converged,
            "singular": model.singular, "objective": float(model.trace[-1]) if model.trace else None}
    (out / "model.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    sys.stdout.write(text)


def cmd_cube(args, out: Path) -> None:
    db = _load(args)
    dims, measures = _split(args.dims), _split(args.measures)
    for a in dims + measures:
        db.catalog.check_attr(a, "command line")
    batch = data_cube_batch(dims, measures, args.agg)
    result, summary = _run_batch(args, db, batch, out)
    write_cube_csv(out / "cube.csv", result.results, dims, measures, db.decode)
    print(json.dumps(summary, sort_keys=True))


def cmd_mi(args, out: Path) -> None:
    db = _load(args)
    attrs = _split(args.attrs)
    for a in attrs:
        db.catalog.check_attr(a, "command line")
    result, _ = _run_batch(args, db, mutual_information_batch(attrs), out)
    mi = mi_matrix(result.results, attrs)
    lines = []
    if args.command == "mi":
        for (i, j), v in sorted(mi.values.items()):
            lines.append(f"{attrs[i]}\t{attrs[j]}\t{v!r}")
        name = "mi.tsv"
    else:
        for i, j in chow_liu(mi):
            lines.append(f"{attrs[i]}\t{attrs[j]}\t{mi(i, j)!r}")
        name = "chowliu.tsv"
    text = "\n".join(lines) + "\n"
    (out / name).write_text(text)
    sys.stdout.write(text)


def cmd_tree(args, out: Path) -> None:
    db = _load(args)
    feats = _features(args, db, exclude=(args.label,))
    is_cat = db.catalog.is_categorical(args.label)
    if args.command == "rtree" and is_cat:
        raise UsageError(f"label {args.label} is categorical; use ctree")
    if args.command == "ctree" and not is_cat:
        raise UsageError(f"label {args.label} is continuous; use rtree")
    engine = Engine(db, args.threads)
    tree = cart_train(engine, args.label, feats, args.max_depth, args.min_split, args.buckets,
                      args.cost)
    text = tree.render(db.decode, args.label if is_cat else None)
    out.mkdir(parents=True, exist_ok=True)
    (out / "tree.txt").write_text(text)
    sys.stdout.write(text)


def cmd_gen(args, out: Path) -> None:
    from .testkit import RandomDbSpec, favorita_db, generate_db

    if args.favorita:
        db = favorita_db(args.favorita, seed=args.seed)
    else:
        kw = {}
        for item in _split(args.spec):
            k, _, v = item.partition("=")
            if k not in RandomDbSpec.__dataclass_fields__ or k == "seed":
                raise UsageError(f"unknown spec field {k!r}")
            cur = RandomDbSpec.__dataclass_fields__[k].default
            try:
                kw[k] = type(cur)(v) if not isinstance(cur, tuple) else tuple(
                    int(x) for x in v.split(":"))
            except ValueError as exc:
                raise UsageError(f"bad value for {k}: {v!r}") from exc
        db = generate_db(RandomDbSpec(seed=args.seed, **kw))
    out.mkdir(parents=True, exist_ok=True)
    (out / "schema.cfg").write_text(format_config(db.catalog))
    db.write_csv_dir(out)
    print(f"wrote {len(db.tables)} relations to {out}")


COMMANDS = {"run": cmd_run, "covar": cmd_covar, "linreg": cmd_covar, "cube": cmd_cube,
            "mi": cmd_mi, "chowliu": cmd_mi, "rtree": cmd_tree, "ctree": cmd_tree,
            "gen": cmd_gen}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    out = Path(args.out)
    try:
        if args.command != "gen":
            out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, out)
    except CONFIG_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (errors.AggForgeError, ArithmeticError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
