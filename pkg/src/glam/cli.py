"""``glam`` command line: train, sweep, ablate, analyze, make-split.

Exit codes: 0 success, 1 usage or configuration error, 2 numerical failure.
Hyperparameters resolve as flags > ``--config`` file > defaults, and every
run writes ``resolved_config.json`` into its output directory.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from glam import analysis
from glam.baseline import gcn_hyperparams, gcn_sweep_spec
from glam.data import (
    DatasetError,
    _data_lines,
    _parse_ints,
    boosted_features,
    load_dataset,
    make_split,
    write_split,
)
from glam.graphs import homophily, read_edges
from glam.model import (
    GlamHyperParams,
    glam_forward,
    init_params,
    load_checkpoint,
    prepare_inputs,
    save_checkpoint,
)
from glam.numerics import ParameterError
from glam.trainer import (
    DivergenceError,
    SweepSpec,
    evaluate_seeds,
    summarize,
    sweep,
    train,
)

log = logging.getLogger("glam")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

HP_HELP = {
    "k": "neighbors in the cosine kNN graph",
    "w_ck": "weight of the cropped kNN graph; the affinity graph gets 1 - w_ck",
    "beta": "coefficient of the affinity loss",
    "alpha_a": "squared-norm penalty on the affinity weights",
    "alpha_c": "squared-norm penalty on the GCN weights",
    "lr": "Adam learning rate",
    "dropout_a": "dropout on the affinity model input and hidden layer",
    "dropout_c": "dropout on the GCN input and hidden layer",
    "hidden_a": "affinity hidden size",
    "hidden_c": "GCN hidden size",
    "temperature": "Gumbel-softmax temperature",
    "epochs": "maximum epochs (at most 500)",
    "patience": "early-stopping patience in epochs without a better validation accuracy",
    "seed": "master seed",
    "boosted": "use boosted features for kNN and the affinity model",
    "gcn_input": "GCN input features: raw or boosted",
    "resample": "affinity graph sampling: per-epoch or once",
    "clip_affinity_weights": "clip mutual affinity edges to weight 1",
    "graph_mode": "hard (Gumbel-argmax + straight-through) or relaxed",
    "straight_through": "pass gradients through the sampled affinity graph",
    "use_affinity": "enable the affinity model",
    "crop": "crop kNN edges into labeled nodes",
    "adam_beta1": "Adam first-moment decay",
    "adam_beta2": "Adam second-moment decay",
    "adam_eps": "Adam epsilon",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_hp_flags(p: argparse.ArgumentParser) -> None:
    group = p.add_argument_group("hyperparameters (override --config)")
    for f in fields(GlamHyperParams):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "seed":
            continue
        if f.type in ("bool", bool):
            group.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None,
                               help=HP_HELP[f.name])
        else:
            kind = {"int": int, "float": float, "str": str}[str(f.type)]
            group.add_argument(flag, dest=f.name, type=kind, default=None, help=HP_HELP[f.name])


def _common(p: argparse.ArgumentParser, dataset_required=True) -> None:
    p.add_argument("--dataset", required=dataset_required, help="dataset directory")
    p.add_argument("--config", help="JSON file of hyperparameters (or a best_config.json from sweep)")
    p.add_argument("--seed", type=int, default=None, help="master seed")
    p.add_argument("--out", default="runs/out", help="output directory")
    p.add_argument("--workers", type=int, default=None, help="parallel workers (default: GLAM_WORKERS or 1)")
    p.add_argument("-v", "--verbose", action="store_true")


def _seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _floats(text: str) -> list[float]:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="glam", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train over several seeds and report mean/std test accuracy")
    _common(p)
    p.add_argument("--seeds", type=_seeds, default=[0], help="comma-separated seeds (default: 0)")
    p.add_argument("--model", choices=["glam", "gcn-knn"], default="glam")
    _add_hp_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sweep", help="random hyperparameter search ranked by validation accuracy")
    _common(p)
    p.add_argument("--spec", help="JSON sweep spec (ranges, budget, seeds_per_trial, seed)")
    p.add_argument("--budget", type=int, default=None, help="number of sampled configurations")
    p.add_argument("--seeds-per-trial", type=int, default=None)
    p.add_argument("--model", choices=["glam", "gcn-knn"], default="glam",
                   help="gcn-knn searches only the GCN knobs of the space")
    _add_hp_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate", help="full GLAM vs. without affinity graph vs. without affinity loss")
    _common(p)
    p.add_argument("--seeds", type=_seeds, default=[0, 1, 2, 3, 4])
    _add_hp_flags(p)
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("analyze", help="graph metrics and diagnostic curves")
    asub = p.add_subparsers(dest="analysis", required=True, parser_class=_Parser)
    q = asub.add_parser("graph-metrics", help="homophily, weighted homophily and bad neighbor ratio")
    _common(q)
    src = q.add_mutually_exclusive_group(required=True)
    src.add_argument("--edges", help="edges.tsv to evaluate as a raw adjacency")
    src.add_argument("--checkpoint", help="checkpoint whose evaluation Laplacian is evaluated")
    q.add_argument("--exclude-self-loops", action="store_true", help="ignore self-loop weight")
    q.set_defaults(func=cmd_graph_metrics)
    q = asub.add_parser("noise-curve", help="GCN accuracy on a perfect kNN graph under edge noise")
    _common(q)
    q.add_argument("--mode", choices=["add", "remove"], required=True)
    q.add_argument("--fractions", type=_floats, required=True)
    q.add_argument("--seeds", type=_seeds, default=[0, 1, 2])
    _add_hp_flags(q)
    q.set_defaults(func=cmd_noise_curve)
    q = asub.add_parser("weight-sweep", help="GLAM accuracy as a function of the affinity graph weight")
    _common(q)
    q.add_argument("--weights", type=_floats, required=True)
    q.add_argument("--seeds", type=_seeds, default=[0, 1, 2, 3, 4])
    _add_hp_flags(q)
    q.set_defaults(func=cmd_weight_sweep)

    p = sub.add_parser("make-split", help="seeded split with a fixed number of train nodes per class")
    p.add_argument("--dataset", required=True, help="directory containing labels.tsv")
    p.add_argument("--per-class", type=int, default=20)
    p.add_argument("--val", type=int, default=500)
    p.add_argument("--test", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output split file (default: <dataset>/split.tsv)")
    p.set_defaults(func=cmd_make_split)
    return parser


# --- config resolution -------------------------------------------------------


def resolve_hyperparams(args) -> GlamHyperParams:
    values = GlamHyperParams().to_dict()
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        try:
            data = json.loads(path.read_text())
        except json.JSONDecodeError as err:
            raise UsageError(f"{path}: invalid JSON ({err})") from None
        data = data.get("hyperparams", data)
        unknown = set(data) - set(values)
        if unknown:
            raise UsageError(f"{path}: unknown hyperparameters {sorted(unknown)}")
        values.update(data)
    for name in values:
        flag_value = getattr(args, name, None)
        if flag_value is not None:
            values[name] = flag_value
    hp = GlamHyperParams(**values)
    hp.validate()
    return hp


def _load(args):
    path = Path(args.dataset)
    if not path.is_dir():
        raise UsageError(f"dataset directory not found: {path}")
    return load_dataset(path)


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _write_resolved(out: Path, args, hp: GlamHyperParams | None, extra: dict | None = None) -> None:
    resolved = {"command": args.command}
    for key, value in sorted(vars(args).items()):
        if key in ("func",) or key in GlamHyperParams().to_dict():
            continue
        resolved[key] = value
    if hp is not None:
        resolved["hyperparams"] = hp.to_dict()
    if extra:
        resolved.update(extra)
    _dump(out / "resolved_config.json", resolved)


# --- commands ----------------------------------------------------------------


def cmd_train(args) -> int:
    ds = _load(args)
    hp = resolve_hyperparams(args)
    if args.model == "gcn-knn":
        hp = gcn_hyperparams(hp)
    out = _outdir(args)
    _write_resolved(out, args, hp)
    boosted = boosted_features(ds.features) if hp.boosted else None
    inputs = prepare_inputs(ds, hp, ds.labels[ds.split.train], boosted=boosted)
    accs, timings, failed = [], {}, []
    for seed in args.seeds:
        try:
            params, report = train(ds, hp.replace(seed=seed), inputs=inputs)
        except DivergenceError as err:
            failed.append(seed)
            if err.report is not None:
                (out / f"report_seed{seed}.json").write_text(err.report.to_json() + "\n")
            print(f"seed {seed}: {err}", file=sys.stderr)
            continue
        (out / f"report_seed{seed}.json").write_text(report.to_json() + "\n")
        (out / f"curve_seed{seed}.csv").write_text(report.curve_csv())
        save_checkpoint(out / f"checkpoint_seed{seed}.json", params, hp.replace(seed=seed))
        timings[str(seed)] = report.wall_clock_seconds
        accs.append(report.test_acc)
        print(f"seed {seed}: best epoch {report.best_epoch}, val {report.best_val_acc:.2f}, test {report.test_acc:.2f}")
    mean, std = summarize(accs)
    _dump(out / "summary.json", {"model": args.model, "seeds": args.seeds, "test_accuracies": accs,
                                  "mean": mean, "std": std, "failed_seeds": failed})
    _dump(out / "timing.json", {"wall_clock_seconds": timings})
    if failed:
        print(f"{len(failed)} seed(s) diverged: {failed}", file=sys.stderr)
        return EXIT_NUMERIC
    print(f"test accuracy: {mean:.2f} ± {std:.2f} over {len(accs)} seed(s)")
    return EXIT_OK


def cmd_sweep(args) -> int:
    ds = _load(args)
    hp = resolve_hyperparams(args)
    spec = SweepSpec()
    if args.spec:
        path = Path(args.spec)
        if not path.is_file():
            raise UsageError(f"sweep spec not found: {path}")
        try:
            spec = SweepSpec.from_dict(json.loads(path.read_text()))
        except (json.JSONDecodeError, TypeError, ValueError) as err:
            raise UsageError(f"{path}: invalid sweep spec ({err})") from None
    if args.budget is not None:
        spec.budget = args.budget
    if args.seeds_per_trial is not None:
        spec.seeds_per_trial = args.seeds_per_trial
    if args.seed is not None:
        spec.seed = args.seed
    if args.model == "gcn-knn":
        hp, spec = gcn_hyperparams(hp), gcn_sweep_spec(spec)
    try:
        spec.validate()
    except ValueError as err:
        raise UsageError(str(err)) from None
    out = _outdir(args)
    _write_resolved(out, args, hp, {"sweep_spec": spec.to_dict()})
    best, board = sweep(ds, spec, base=hp, workers=args.workers)
    _dump(out / "leaderboard.json", board)
    _dump(out / "best_config.json", {"hyperparams": best.to_dict(), "val_acc": board[0]["val_acc"]})
    print(f"best validation accuracy {board[0]['val_acc']:.2f} (trial {board[0]['trial']})")
    return EXIT_OK


ABLATIONS = ("glam", "w/o affinity graph", "w/o affinity loss")


def cmd_ablate(args) -> int:
    ds = _load(args)
    hp = resolve_hyperparams(args)
    out = _outdir(args)
    _write_resolved(out, args, hp)
    boosted = boosted_features(ds.features) if hp.boosted else None
    variants = {
        "glam": hp,
        "w/o affinity graph": hp.replace(w_ck=1.0),
        "w/o affinity loss": hp.replace(beta=0.0),
    }
    rows = []
    for name in ABLATIONS:
        vhp = variants[name]
        inputs = prepare_inputs(ds, vhp, ds.labels[ds.split.train], boosted=boosted)
        reports = []
        summary = evaluate_seeds(ds, vhp, args.seeds, inputs=inputs, reports=reports)
        if name == "w/o affinity graph":
            built = glam_forward(_dummy_params(vhp, inputs), vhp, inputs).diagnostics["affinity_graph_built"]
            assert not built, "the w/o-affinity-graph variant must not build an affinity graph"
        rows.append({"variant": name, "mean": summary.mean, "std": summary.std,
                     "failed_seeds": summary.failed_seeds})
        print(f"{name:>20}: {summary.mean:.2f} ± {summary.std:.2f}")
    _dump(out / "ablation.json", rows)
    lines = ["variant,mean,std"] + [f"{r['variant']},{r['mean']!r},{r['std']!r}" for r in rows]
    (out / "ablation.csv").write_text("\n".join(lines) + "\n")
    return EXIT_NUMERIC if any(r["failed_seeds"] for r in rows) else EXIT_OK


def _dummy_params(hp, inputs):
    return init_params(hp, inputs.x_affinity.shape[1], inputs.x_gcn.shape[1], inputs.labeled, inputs.num_classes)


def cmd_graph_metrics(args) -> int:
    ds = _load(args)
    out = _outdir(args)
    if args.edges:
        if not Path(args.edges).is_file():
            raise UsageError(f"edges file not found: {args.edges}")
        graph = read_edges(args.edges)
        if graph.shape[0] != ds.n:
            raise UsageError(f"edges cover {graph.shape[0]} nodes, dataset has {ds.n}")
        view = graph
        hp = None
    else:
        if not Path(args.checkpoint).is_file():
            raise UsageError(f"checkpoint not found: {args.checkpoint}")
        params, hp = load_checkpoint(args.checkpoint)
        boosted = boosted_features(ds.features) if hp.boosted else None
        inputs = prepare_inputs(ds, hp, ds.labels[ds.split.train], boosted=boosted)
        result = glam_forward(params, hp, inputs, training=False)
        graph, view = result.graph, result.laplacian
    metrics = {
        "homophily": homophily(graph, ds.labels),
        "weighted_homophily": analysis.weighted_homophily(view, ds.labels, args.exclude_self_loops),
        "bad_neighbor_ratio": analysis.bad_neighbor_ratio(view, ds.labels, args.exclude_self_loops),
        "exclude_self_loops": args.exclude_self_loops,
        "source": args.edges or args.checkpoint,
    }
    _write_resolved(out, args, hp)
    _dump(out / "graph_metrics.json", metrics)
    print(json.dumps(metrics, indent=2, sort_keys=True))
    return EXIT_OK


def cmd_noise_curve(args) -> int:
    ds = _load(args)
    hp = resolve_hyperparams(args)
    out = _outdir(args)
    _write_resolved(out, args, hp)
    mode = "add_noise" if args.mode == "add" else "remove_good"
    points = analysis.noise_experiment(ds, hp, args.fractions, mode, args.seeds)
    (out / f"noise_{args.mode}.csv").write_text(analysis.curve_csv(points))
    _dump(out / f"noise_{args.mode}.json", [p.to_dict() for p in points])
    sys.stdout.write(analysis.curve_csv(points))
    return EXIT_NUMERIC if any(p.failed_seeds for p in points) else EXIT_OK


def cmd_weight_sweep(args) -> int:
    ds = _load(args)
    hp = resolve_hyperparams(args)
    out = _outdir(args)
    _write_resolved(out, args, hp)
    points = analysis.affinity_weight_sweep(ds, hp, args.weights, args.seeds)
    (out / "weight_sweep.csv").write_text(analysis.curve_csv(points))
    _dump(out / "weight_sweep.json", [p.to_dict() for p in points])
    sys.stdout.write(analysis.curve_csv(points))
    return EXIT_NUMERIC if any(p.failed_seeds for p in points) else EXIT_OK


def cmd_make_split(args) -> int:
    root = Path(args.dataset)
    labels_path = root / "labels.tsv"
    if not labels_path.is_file():
        raise UsageError(f"labels file not found: {labels_path}")
    labels = _read_labels(labels_path)
    split = make_split(labels, args.per_class, args.val, args.test, args.seed)
    out = Path(args.out) if args.out else root / "split.tsv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_split(split, out)
    print(f"wrote {out}: {split.train.size} train, {split.val.size} val, {split.test.size} test")
    return EXIT_OK


def _read_labels(path: Path) -> np.ndarray:
    lines = _data_lines(path)
    try:
        next(lines)
    except StopIteration:
        raise DatasetError(f"{path}: empty file") from None
    pairs = sorted(_parse_ints(path, lineno, fields_, 2) for lineno, fields_ in lines)
    return np.array([y for _, y in pairs], dtype=np.int64)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, DatasetError, ParameterError) as err:
        print(f"glam: error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as err:
        print(f"glam: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC
    except FloatingPointError as err:
        print(f"glam: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
