"""Command-line front end.

Exit codes:
    0  success
    2  usage error (bad or conflicting flags)
    3  input error (unreadable/malformed file, invalid parameter for the data)
    4  numerical failure (SVD or linear solve did not succeed)
"""
from __future__ import annotations

import argparse
import json
import sys
import time
import warnings
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from ._runtime import derive_seed, thread_budget
from .dataset import PointCloud, load_csv, load_idx, sample_points, save_csv, center
from .distortion import DEFAULT_BINS, DEFAULT_HIST_MAX, default_mode, evaluate, parse_mode
from .downstream import WEIGHTS, cross_validate, retrieval_accuracy
from .embed import BACKENDS, fit, fit_with_split, load_model, save_model, transform_all
from .errors import AdagioError, NumericalError
from .jl import jl_dimension
from .spectral import exact_top_svd, randomized_top_svd, stable_rank
from .sweep import METHODS, load_external_matrix, min_dim_for_distortion, rows_to_csv, tradeoff

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INPUT = 3
EXIT_NUMERICAL = 4


class UsageError(Exception):
    pass


def load_schema(name: str) -> dict:
    """JSON schema shipped for the output of a subcommand (e.g. 'fit', 'ssl')."""
    from importlib.resources import files

    return json.loads(files("adagio").joinpath("schemas", f"{name}.json").read_text())


def _parse_int_list(text: str) -> list[int]:
    """'10,20,30' or 'start:stop:step' (stop inclusive)."""
    text = text.strip()
    if ":" in text:
        parts = [int(p) for p in text.split(":")]
        if len(parts) == 2:
            parts.append(1)
        start, stop, step = parts
        if step < 1:
            raise argparse.ArgumentTypeError("range step must be >= 1")
        return list(range(start, stop + 1, step))
    try:
        return [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a list of integers, got {text!r}") from None


def _parse_split(text: str) -> tuple[int, int]:
    try:
        s, k = (int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--split expects 's,k', got {text!r}") from None
    return s, k


def _add_input(parser, flag: str = "--input", required: bool = True, labels: bool = True):
    dest = flag.lstrip("-").replace("-", "_")
    parser.add_argument(flag, required=required, help="point cloud file")
    parser.add_argument(f"{flag}-format", dest=f"{dest}_format", choices=("csv", "idx"), default="csv")
    parser.add_argument(f"{flag}-has-header", dest=f"{dest}_has_header", action="store_true")
    if labels:
        parser.add_argument(
            f"{flag}-label-column", dest=f"{dest}_label_column", type=int, default=None,
            help="0-based CSV column holding integer labels (negative counts from the end)",
        )
        parser.add_argument(f"{flag}-labels", dest=f"{dest}_labels", default=None, help="IDX label file")
    parser.add_argument(
        f"{flag}-sample", dest=f"{dest}_sample", type=int, default=None,
        help="use M points drawn uniformly without replacement",
    )


def _load_input(args, flag: str = "--input") -> PointCloud:
    dest = flag.lstrip("-").replace("-", "_")
    path = getattr(args, dest)
    fmt = getattr(args, f"{dest}_format")
    label_column = getattr(args, f"{dest}_label_column", None)
    labels_path = getattr(args, f"{dest}_labels", None)
    if fmt == "idx":
        cloud = load_idx(path, labels_path)
    else:
        cloud = load_csv(path, getattr(args, f"{dest}_has_header"), label_column)
    m = getattr(args, f"{dest}_sample")
    if m is not None:
        cloud = sample_points(cloud, m, derive_seed(args.seed, "sampling"))
    return cloud


@contextmanager
def _output(args):
    if args.output in (None, "-"):
        yield sys.stdout
    else:
        with open(args.output, "w", newline="") as fh:
            yield fh


def _emit_json(args, payload: dict, timing: dict | None = None) -> None:
    if timing is not None:
        payload = dict(payload, timing=timing)
    with _output(args) as fh:
        fh.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _emit_text(args, text: str) -> None:
    with _output(args) as fh:
        fh.write(text)


def cmd_fit(args) -> int:
    cloud = _load_input(args)
    model_seed = derive_seed(args.seed, "jl")
    t0 = time.perf_counter()
    if args.target_dim is not None:
        model = fit(cloud, args.target_dim, args.backend, model_seed)
    elif args.split is not None:
        s, k = args.split
        model = fit_with_split(cloud, s, k, args.backend, model_seed)
    else:
        k = jl_dimension(cloud.n, args.epsilon, args.gamma, args.jl_multiplier)
        model = fit_with_split(cloud, args.pca_dims, k, args.backend, model_seed)
    elapsed = time.perf_counter() - t0
    save_model(model, args.model_out)
    _emit_json(
        args,
        {"d": model.d, "s": model.s, "k": model.k, "r": model.r, "backend": model.backend,
         "seed": model.seed, "n_points": cloud.n, "model": str(args.model_out)},
        {"fit_seconds": elapsed},
    )
    return EXIT_OK


def cmd_transform(args) -> int:
    model = load_model(args.model)
    cloud = _load_input(args)
    embedded = transform_all(model, cloud)
    if args.output in (None, "-"):
        raise UsageError("transform needs --output PATH for the embedded CSV")
    save_csv(embedded, args.output)
    return EXIT_OK


def cmd_distort(args) -> int:
    original = _load_input(args, "--original")
    if (args.embedded is None) == (args.model is None):
        raise UsageError("give exactly one of --embedded or --model")
    if args.model is not None:
        embedded = transform_all(load_model(args.model), original)
    else:
        embedded = load_csv(args.embedded, args.embedded_has_header, args.embedded_label_column)
    pair_seed = derive_seed(args.seed, "pairs")
    mode = parse_mode(args.mode, pair_seed) if args.mode else default_mode(original.n, pair_seed)
    t0 = time.perf_counter()
    report = evaluate(original, embedded, mode, args.bins, args.hist_max)
    elapsed = time.perf_counter() - t0
    if args.format == "csv":
        _emit_text(args, report.histogram_csv())
    else:
        _emit_json(args, report.to_dict(), {"eval_seconds": elapsed})
    return EXIT_OK


def cmd_sweep(args) -> int:
    cloud = _load_input(args)
    seeds = args.seeds if args.seeds is not None else [args.seed]
    mode = parse_mode(args.mode, derive_seed(args.seed, "pairs")) if args.mode else None
    external = load_external_matrix(args.external) if args.external else None
    if "external" in args.methods and external is None:
        raise UsageError("method 'external' needs --external MATRIX")

    if args.delta is not None:
        results = []
        for method in args.methods:
            if method == "external":
                continue
            for seed in seeds:
                results.append(
                    min_dim_for_distortion(cloud, method, args.delta, seed, args.r_min, args.r_max, mode)
                )
        if args.format == "json":
            _emit_json(
                args,
                {"results": [r.to_dict() for r in results]},
                {"fit_seconds": [r.fit_seconds for r in results]},
            )
        else:
            lines = ["method,delta,seed,target_dim,max_distortion,achieved,non_monotone\n"]
            for r in results:
                lines.append(
                    f"{r.method},{r.delta!r},{r.seed},{'' if r.target_dim is None else r.target_dim},"
                    f"{r.max_distortion!r},{str(r.achieved).lower()},{str(r.non_monotone).lower()}\n"
                )
            _emit_text(args, "".join(lines))
        return EXIT_OK

    if not args.dims:
        raise UsageError("sweep needs --dims unless --delta is given")
    rows = tradeoff(cloud, args.dims, args.methods, seeds, mode, external)
    if args.format == "json":
        _emit_json(
            args,
            {"rows": [
                {"method": r.method, "target_dim": r.target_dim, "seed": r.seed,
                 "max_distortion": r.max_distortion} for r in rows
            ]},
            {"rows": [{"fit_seconds": r.fit_seconds, "eval_seconds": r.eval_seconds} for r in rows]},
        )
    else:
        _emit_text(args, rows_to_csv(rows, timing=not args.no_timing))
    return EXIT_OK


def cmd_stablerank(args) -> int:
    cloud = _load_input(args)
    centered, _ = center(cloud)
    if args.rank is None:
        _, summary = exact_top_svd(centered, 1)
    else:
        print(
            "warning: stable rank over a truncated randomized spectrum; "
            "the full-spectrum quantity needs the exact backend",
            file=sys.stderr,
        )
        _, summary = randomized_top_svd(
            centered, args.rank, min(10, min(cloud.n, cloud.d) - args.rank), 2,
            derive_seed(args.seed, "range_finder"),
        )
    value = stable_rank(summary)
    if args.spectrum_out:
        with open(args.spectrum_out, "w") as fh:
            fh.write("index,singular_value\n")
            for i, sigma in enumerate(summary.singular_values, start=1):
                fh.write(f"{i},{float(sigma)!r}\n")
    _emit_json(
        args,
        {"stable_rank": value, "n_singular_values": int(summary.singular_values.shape[0]),
         "approximate": summary.approximate, "n_points": cloud.n, "d": cloud.d},
    )
    return EXIT_OK


def _split_query_table(path, has_header, group_column, label_column) -> tuple[PointCloud, np.ndarray]:
    table = load_csv(path, has_header).data
    width = table.shape[1]
    g, lab = group_column % width, label_column % width
    if g == lab:
        raise UsageError("query group and label columns must differ")
    features = np.delete(table, [g, lab], axis=1)
    if features.shape[1] < 1:
        raise UsageError("query file has no feature columns")
    return PointCloud(features, table[:, lab]), table[:, g].astype(np.int64)


def cmd_knn(args) -> int:
    database = load_csv(args.database, args.database_has_header, args.database_label_column)
    queries, groups = _split_query_table(
        args.queries, args.queries_has_header, args.query_group_column, args.query_label_column
    )
    t0 = time.perf_counter()
    if args.model is not None:
        model = load_model(args.model)
        database = transform_all(model, database)
        queries = transform_all(model, queries)
    t1 = time.perf_counter()
    tie_seed = args.tie_seed if args.tie_seed is not None else derive_seed(args.seed, "ties")
    result, group_ids = retrieval_accuracy(database, queries, groups, args.k, tie_seed)
    t2 = time.perf_counter()
    truth = {int(g): int(queries.labels[groups == g][0]) for g in group_ids}
    _emit_json(
        args,
        {
            "accuracy": result.accuracy,
            "n_objects": int(group_ids.shape[0]),
            "n_correct": int(round(result.accuracy * group_ids.shape[0])),
            "k": args.k,
            "target_dim": database.d,
            "predictions": [
                {"group": int(g), "label": truth[int(g)], "predicted": int(p)}
                for g, p in zip(group_ids, result.predicted)
            ],
        },
        {"embed_seconds": t1 - t0, "query_seconds": t2 - t1},
    )
    return EXIT_OK


def cmd_ssl(args) -> int:
    cloud = _load_input(args)
    if cloud.labels is None:
        raise UsageError("ssl needs labels (--input-label-column or --input-labels)")
    model = load_model(args.model) if args.model else None
    t0 = time.perf_counter()
    result = cross_validate(
        cloud, args.folds, args.k, model, derive_seed(args.seed, "folds"), args.weights
    )
    elapsed = time.perf_counter() - t0
    payload = result.to_dict()
    payload.update({"folds": args.folds, "k": args.k, "weights": args.weights})
    _emit_json(args, payload, {"total_seconds": elapsed})
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    common.add_argument("--threads", type=int, default=None, help="worker budget (default: all CPUs)")
    common.add_argument("--output", default=None, help="output path (default stdout)")
    common.add_argument("--format", choices=("json", "csv"), default=None)

    parser = argparse.ArgumentParser(prog="adagio", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", parents=[common], help="fit and save an embedding model")
    _add_input(p)
    size = p.add_mutually_exclusive_group(required=True)
    size.add_argument("--target-dim", type=int, help="output dimension r (floor/ceil split)")
    size.add_argument("--split", type=_parse_split, help="explicit 's,k'")
    size.add_argument("--epsilon", type=float, help="JL distortion target; k from the union bound")
    p.add_argument("--gamma", type=float, default=0.01, help="failure probability for --epsilon")
    p.add_argument("--jl-multiplier", type=float, default=1.0, help="scale the --epsilon row count")
    p.add_argument("--pca-dims", type=int, default=10, help="principal rows used with --epsilon")
    p.add_argument("--backend", choices=BACKENDS, default="exact")
    p.add_argument("--model-out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("transform", parents=[common], help="embed a point cloud with a saved model")
    p.add_argument("--model", required=True)
    _add_input(p)
    p.set_defaults(func=cmd_transform)

    p = sub.add_parser("distort", parents=[common], help="pairwise distortion report")
    _add_input(p, "--original")
    p.add_argument("--embedded", default=None, help="embedded cloud CSV (same row order)")
    p.add_argument("--embedded-has-header", action="store_true")
    p.add_argument("--embedded-label-column", type=int, default=None)
    p.add_argument("--model", default=None, help="embed --original with this model instead")
    p.add_argument("--mode", default=None, help="'all' or 'sample:M' (default: all pairs up to n=5000)")
    p.add_argument("--bins", type=int, default=DEFAULT_BINS)
    p.add_argument("--hist-max", type=float, default=DEFAULT_HIST_MAX)
    p.set_defaults(func=cmd_distort)

    p = sub.add_parser("sweep", parents=[common], help="dimension/distortion trade-off")
    _add_input(p)
    p.add_argument("--dims", type=_parse_int_list, default=None, help="'10,20,40' or 'start:stop:step'")
    p.add_argument("--methods", type=lambda t: [m.strip() for m in t.split(",")],
                   default=["adagio_exact", "pca", "jl"], help=f"comma list from {', '.join(METHODS)}")
    p.add_argument("--seeds", type=_parse_int_list, default=None, help="per-row seeds (default: --seed)")
    p.add_argument("--delta", type=float, default=None, help="search the minimal r reaching this distortion")
    p.add_argument("--r-min", type=int, default=None)
    p.add_argument("--r-max", type=int, default=None)
    p.add_argument("--mode", default=None, help="'all' or 'sample:M'")
    p.add_argument("--external", default=None, help="r x d embedding matrix (.npy or CSV)")
    p.add_argument("--no-timing", action="store_true", help="omit timing columns from CSV output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("stablerank", parents=[common], help="stable rank of the centered data")
    _add_input(p, labels=True)
    p.add_argument("--rank", type=int, default=None, help="use a truncated randomized spectrum instead")
    p.add_argument("--spectrum-out", default=None, help="write singular values as CSV")
    p.set_defaults(func=cmd_stablerank)

    p = sub.add_parser("knn", parents=[common], help="majority-vote retrieval accuracy")
    p.add_argument("--database", required=True, help="descriptor CSV with a label column")
    p.add_argument("--database-has-header", action="store_true")
    p.add_argument("--database-label-column", type=int, default=-1)
    p.add_argument("--queries", required=True, help="query descriptor CSV with group and label columns")
    p.add_argument("--queries-has-header", action="store_true")
    p.add_argument("--query-group-column", type=int, default=0)
    p.add_argument("--query-label-column", type=int, default=1)
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--model", default=None)
    p.add_argument("--tie-seed", type=int, default=None, help="default: derived from --seed")
    p.set_defaults(func=cmd_knn)

    p = sub.add_parser("ssl", parents=[common], help="cross-validated harmonic label propagation")
    _add_input(p)
    p.add_argument("--k", type=int, default=30)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--model", default=None)
    p.add_argument("--weights", choices=WEIGHTS, default="binary")
    p.set_defaults(func=cmd_ssl)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("always")
            warnings.showwarning = lambda msg, *a, **k: print(f"warning: {msg}", file=sys.stderr)
            with thread_budget(args.threads):
                return args.func(args)
    except UsageError as exc:
        print(f"adagio {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, np.linalg.LinAlgError) as exc:
        print(f"adagio {args.command}: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (AdagioError, ValueError, OSError) as exc:
        print(f"adagio {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
