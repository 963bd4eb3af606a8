"""Command-line front end.

Subcommands: synth, prepare, train, evaluate, ablate. Options resolve with
flag > config file > built-in default; config files hold `key=value` lines
with `#` comments, and unknown keys are rejected. Heavy imports are deferred
so the IMGREC_THREADS cap is applied before numpy loads its BLAS.

Exit codes: 0 ok, 2 bad input or configuration, 3 training divergence,
4 checkpoint mismatch, 5 evaluation protocol violation.
"""

import argparse
import logging
import os
import sys

from .errors import (
    CheckpointMismatchError,
    ConfigError,
    DivergenceError,
    ImgrecError,
    InputError,
    ProtocolError,
)

log = logging.getLogger(__name__)

EXIT_INPUT = 2
EXIT_DIVERGENCE = 3
EXIT_CHECKPOINT = 4
EXIT_PROTOCOL = 5


def _apply_thread_cap() -> None:
    raw = os.environ.get("IMGREC_THREADS")
    if raw is None or raw == "":
        return
    try:
        n = int(raw)
    except ValueError:
        n = 0
    if n < 1:
        raise ConfigError(f"IMGREC_THREADS must be a positive integer, got {raw!r}")
    for var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
        "VECLIB_MAXIMUM_THREADS",
    ):
        os.environ[var] = str(n)


def _cast_int(s: str) -> int:
    try:
        return int(s)
    except ValueError:
        raise ConfigError(f"expected an integer, got {s!r}") from None


def _cast_float(s: str) -> float:
    try:
        return float(s)
    except ValueError:
        raise ConfigError(f"expected a number, got {s!r}") from None


def _cast_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"expected a boolean (1/0/true/false), got {s!r}")


def _cast_str(s: str) -> str:
    return s


def _cast_intlist(s: str) -> tuple:
    s = s.strip()
    if not s:
        return ()
    try:
        return tuple(int(part) for part in s.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated integers, got {s!r}") from None


def _cast_choice(*options: str):
    def cast(s: str) -> str:
        if s not in options:
            raise ConfigError(f"expected one of {options}, got {s!r}")
        return s

    return cast


# key -> (cast, default, help); default None means "required or resolved later"
_DATA_OPTS = {
    "interactions": (_cast_str, None, "interaction log path"),
    "format": (_cast_choice("csv", "tsv"), "csv", "interaction log delimiter"),
    "features": (_cast_str, None, "item feature file (IFV1)"),
    "negatives": (_cast_int, 100, "evaluation negatives per user"),
    "seed": (_cast_int, 0, "master seed (split, init, sampling)"),
    "out": (_cast_str, None, "output directory"),
}
_MODEL_OPTS = {
    "mode": (_cast_choice("dir", "ft", "ete"), None, "feature incorporation mode"),
    "k": (_cast_int, 20, "embedding width"),
    "f_ft": (_cast_int, 150, "feature transform width (ft/ete)"),
    "head_layers": (_cast_intlist, (64, 32), "extractor head widths (ete)"),
    "normalize_features": (_cast_bool, False, "L2-normalize raw features"),
}
_TRAIN_OPTS = {
    "lr": (_cast_float, 1e-4, "Adam learning rate"),
    "lr_stage2": (_cast_float, None, "stage-2 learning rate (default: same as lr)"),
    "l2_stage1": (_cast_float, None, "stage-1 L2 (default 0.1; 1e-6 for ete)"),
    "l2_stage2": (_cast_float, 5e-5, "stage-2 L2 (ete)"),
    "neg_per_pos": (_cast_int, 1, "sampled negatives per positive"),
    "batch_size": (_cast_int, 256, "minibatch size"),
    "epochs_stage1": (_cast_int, 100, "max stage-1 epochs"),
    "epochs_stage2": (_cast_int, 50, "max stage-2 epochs (ete)"),
    "patience": (_cast_int, 10, "early-stop patience in epochs (<=0 disables)"),
    "stage2_restart_patience": (_cast_bool, True, "reset patience at stage 2"),
}
_EVAL_OPTS = {
    "trials": (_cast_int, 5, "negative-resampling trials"),
}
_BPR_OPTS = {
    "bpr_k": (_cast_int, 20, "BPR-MF factor count"),
    "bpr_lr": (_cast_float, 0.05, "BPR-MF learning rate"),
    "bpr_l2": (_cast_float, 0.01, "BPR-MF L2"),
    "bpr_epochs": (_cast_int, 100, "BPR-MF epochs"),
}

_COMMAND_OPTS = {
    "synth": {
        "kind": (_cast_choice("overfit", "random", "planted"), "planted", "corpus kind"),
        "seed": _DATA_OPTS["seed"],
        "out": _DATA_OPTS["out"],
    },
    "prepare": dict(_DATA_OPTS),
    "train": {**_DATA_OPTS, **_MODEL_OPTS, **_TRAIN_OPTS},
    "evaluate": {
        **_DATA_OPTS,
        **_EVAL_OPTS,
        **_BPR_OPTS,
        "checkpoint": (_cast_str, None, "model checkpoint to score with"),
        "scorer": (_cast_choice("model", "poprank", "bprmf"), "model", "scorer"),
    },
    "ablate": {
        **_DATA_OPTS,
        **_MODEL_OPTS,
        **_TRAIN_OPTS,
        **_EVAL_OPTS,
        **_BPR_OPTS,
        "features_cut": (_cast_str, None, "alternate feature file for ete"),
        "retrain_trials": (_cast_int, 1, "full retrainings per scorer"),
    },
}
del _COMMAND_OPTS["ablate"]["mode"]  # ablate always runs all three modes


def parse_config_file(path: str) -> dict[str, str]:
    if not os.path.isfile(path):
        raise InputError(f"config file not found: {path}")
    entries: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ConfigError(
                    f"{path}:{lineno}: expected key=value, got {stripped!r}"
                )
            key, _, value = stripped.partition("=")
            entries[key.strip()] = value.strip()
    return entries


def resolve_options(command: str, args: argparse.Namespace) -> dict:
    """Merge built-in defaults, config file entries, and flags (in that
    order of increasing precedence), casting and rejecting unknown keys."""
    registry = _COMMAND_OPTS[command]
    merged = {key: default for key, (_, default, _) in registry.items()}
    if args.config is not None:
        for key, raw in parse_config_file(args.config).items():
            if key not in registry:
                raise ConfigError(
                    f"unknown config key {key!r} for command {command!r}"
                )
            merged[key] = registry[key][0](raw)
    for key in registry:
        raw = getattr(args, key, None)
        if raw is not None:
            merged[key] = registry[key][0](raw)
    return merged


def _require(options: dict, *keys: str) -> None:
    missing = [k for k in keys if options.get(k) is None]
    if missing:
        flags = ", ".join("--" + k.replace("_", "-") for k in missing)
        raise ConfigError(f"missing required option(s): {flags}")


def _require_file(path: str, what: str) -> None:
    if not os.path.isfile(path):
        raise InputError(f"{what} not found: {path}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imgrec",
        description="image-feature-aware recommender engine",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    descriptions = {
        "synth": "write a synthetic interactions/features corpus",
        "prepare": "validate inputs and materialize the evaluation split",
        "train": "train one mode and write checkpoints",
        "evaluate": "score a checkpoint or baseline on the test split",
        "ablate": "train and compare all modes plus baselines",
    }
    for command, registry in _COMMAND_OPTS.items():
        p = sub.add_parser(command, help=descriptions[command])
        p.add_argument("--config", default=None, help="key=value config file")
        for key, (_, default, help_text) in registry.items():
            p.add_argument(
                "--" + key.replace("_", "-"),
                dest=key,
                default=None,
                help=f"{help_text} (default: {default})",
            )
    return parser


def _load_split_and_store(options: dict, need_features: bool = True):
    from .data import build_dataset, leave_one_out_split, load_feature_store, load_interactions

    _require(options, "interactions")
    _require_file(options["interactions"], "interaction log")
    logrec = load_interactions(options["interactions"], options["format"])
    dataset = build_dataset(logrec.records)
    split = leave_one_out_split(dataset, options["negatives"], options["seed"])
    store = None
    if need_features or options.get("features"):
        _require(options, "features")
        _require_file(options["features"], "feature file")
        store = load_feature_store(options["features"], dataset)
    return logrec, dataset, split, store


def cmd_synth(options: dict) -> int:
    from .synthetic import write_demo_files

    _require(options, "out")
    inter, feats = write_demo_files(options["out"], options["kind"], options["seed"])
    print(f"interactions: {inter}")
    print(f"features: {feats}")
    return 0


def cmd_prepare(options: dict) -> int:
    from .data import save_artifacts

    _require(options, "out")
    logrec, dataset, split, store = _load_split_and_store(options, need_features=False)
    os.makedirs(options["out"], exist_ok=True)
    save_artifacts(split, options["out"])
    n_eligible = len(split.eligible_users)
    print(f"users={dataset.M}")
    print(f"items={dataset.N}")
    print(f"interactions={dataset.n_interactions}")
    print(f"malformed_lines={logrec.n_malformed}")
    print(f"eval_users={n_eligible}")
    print(f"excluded_users={len(split.excluded_users)}")
    print(f"eval_negatives={options['negatives']}")
    if store is not None:
        print(f"feature_dim={store.F}")
    print(f"artifacts={options['out']}")
    return 0


def _model_config(options: dict, mode: str, store):
    from .model import Mode, ModelConfig

    parsed = Mode.parse(mode)
    head = tuple(options["head_layers"]) if parsed == Mode.ETE else ()
    return ModelConfig(
        mode=parsed,
        K=options["k"],
        F_raw=store.F,
        F_ft=options["f_ft"],
        head_layers=head,
        normalize_features=options["normalize_features"],
        seed=options["seed"],
    )


def _train_config(options: dict, mode: str):
    from .model import Mode
    from .training import TrainConfig

    l2_stage1 = options["l2_stage1"]
    if l2_stage1 is None:
        l2_stage1 = 1e-6 if Mode.parse(mode) == Mode.ETE else 0.1
    return TrainConfig(
        lr=options["lr"],
        lr_stage2=options["lr_stage2"],
        l2_stage1=l2_stage1,
        l2_stage2=options["l2_stage2"],
        neg_per_pos=options["neg_per_pos"],
        batch_size=options["batch_size"],
        epochs_stage1=options["epochs_stage1"],
        epochs_stage2=options["epochs_stage2"],
        early_stop_patience=options["patience"],
        stage2_restart_patience=options["stage2_restart_patience"],
        seed=options["seed"],
    )


def _train_one(options: dict, mode: str, split, store, out_dir: str | None):
    from .model import Mode, save_checkpoint
    from .training import export_history, train

    result = train(_train_config(options, mode), _model_config(options, mode, store), split, store)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        stage1_path = os.path.join(out_dir, f"model.{mode}.stage1.best")
        save_checkpoint(result.stage1_best, stage1_path)
        print(f"checkpoint={stage1_path}")
        if result.stage2_best is not None:
            stage2_path = os.path.join(out_dir, f"model.{mode}.stage2.best")
            save_checkpoint(result.stage2_best, stage2_path)
            print(f"checkpoint={stage2_path}")
        history_path = os.path.join(out_dir, f"history.{mode}.csv")
        export_history(result.history, history_path)
        print(f"history={history_path}")
    return result


def cmd_train(options: dict) -> int:
    _require(options, "mode", "out")
    _, dataset, split, store = _load_split_and_store(options)
    result = _train_one(options, options["mode"], split, store, options["out"])
    finite = [r.val_auc for r in result.history if r.val_auc == r.val_auc]
    if finite:
        print(f"best_val_auc={max(finite):.6g}")
    print(f"epochs_run={len(result.history)}")
    return 0


def cmd_evaluate(options: dict) -> int:
    from .evaluate import evaluate, export_report, format_report

    _require(options, "out")
    _, dataset, split, store = _load_split_and_store(
        options, need_features=options["scorer"] == "model"
    )
    if options["scorer"] == "model":
        from .model import load_checkpoint, make_scorer

        _require(options, "checkpoint")
        _require_file(options["checkpoint"], "checkpoint")
        params = load_checkpoint(options["checkpoint"], dims=(dataset.M, dataset.N))
        if store.F != params.config.F_raw:
            raise CheckpointMismatchError(
                f"feature width {store.F} does not match checkpoint "
                f"F_raw {params.config.F_raw}"
            )
        scorer = make_scorer(params, store)
    elif options["scorer"] == "poprank":
        from .baselines import poprank_scorer, poprank_train

        scorer = poprank_scorer(poprank_train(split))
    else:
        from .baselines import bpr_scorer, bprmf_train

        bpr_params, _ = bprmf_train(
            split,
            K=options["bpr_k"],
            lr=options["bpr_lr"],
            l2=options["bpr_l2"],
            epochs=options["bpr_epochs"],
            seed=options["seed"],
        )
        scorer = bpr_scorer(bpr_params)
    report = evaluate(
        scorer,
        split,
        trials=options["trials"],
        n_negatives=options["negatives"],
        seed=options["seed"],
    )
    os.makedirs(options["out"], exist_ok=True)
    report_path = os.path.join(options["out"], "report.csv")
    export_report(report, report_path)
    print(format_report(report))
    print(f"report={report_path}")
    return 0


def cmd_ablate(options: dict) -> int:
    from .baselines import bpr_scorer, bprmf_train, poprank_scorer, poprank_train
    from .evaluate import evaluate
    from .model import make_scorer

    _require(options, "out")
    _, dataset, split, store = _load_split_and_store(options)
    store_cut = store
    if options["features_cut"] is not None:
        from .data import load_feature_store

        _require_file(options["features_cut"], "cut feature file")
        store_cut = load_feature_store(options["features_cut"], dataset)

    n_retrain = options["retrain_trials"]
    if n_retrain < 1:
        raise ConfigError("retrain_trials must be >= 1")

    rows = []  # (name, [per-retrain mean AUC])
    for mode in ("dir", "ft", "ete"):
        mode_store = store_cut if mode == "ete" else store
        means = []
        for r in range(n_retrain):
            run_options = dict(options, seed=options["seed"] + r)
            result = _train_one(run_options, mode, split, mode_store, None)
            report = evaluate(
                make_scorer(result.params, mode_store),
                split,
                trials=options["trials"],
                n_negatives=options["negatives"],
                seed=options["seed"],
            )
            means.append(report.mean_auc)
        rows.append((mode, means))

    pop_report = evaluate(
        poprank_scorer(poprank_train(split)),
        split,
        trials=options["trials"],
        n_negatives=options["negatives"],
        seed=options["seed"],
    )
    rows.append(("poprank", [pop_report.mean_auc]))

    bpr_means = []
    for r in range(n_retrain):
        bpr_params, _ = bprmf_train(
            split,
            K=options["bpr_k"],
            lr=options["bpr_lr"],
            l2=options["bpr_l2"],
            epochs=options["bpr_epochs"],
            seed=options["seed"] + r,
        )
        bpr_report = evaluate(
            bpr_scorer(bpr_params),
            split,
            trials=options["trials"],
            n_negatives=options["negatives"],
            seed=options["seed"],
        )
        bpr_means.append(bpr_report.mean_auc)
    rows.append(("bpr-mf", bpr_means))

    os.makedirs(options["out"], exist_ok=True)
    csv_path = os.path.join(options["out"], "ablation.csv")
    with open(csv_path, "w", encoding="utf-8") as fh:
        fh.write("scorer,mean_auc,retrain_aucs\n")
        for name, means in rows:
            joined = ";".join(f"{m:.12g}" for m in means)
            fh.write(f"{name},{float(sum(means) / len(means)):.12g},{joined}\n")

    print(f"{'scorer':<10} {'mean AUC':>9}")
    for name, means in rows:
        print(f"{name:<10} {sum(means) / len(means):>9.4f}")
    print(f"ablation={csv_path}")
    return 0


_DISPATCH = {
    "synth": cmd_synth,
    "prepare": cmd_prepare,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
}


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("IMGREC_LOG", "INFO"),
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _apply_thread_cap()
        args = build_parser().parse_args(argv)
        options = resolve_options(args.command, args)
        return _DISPATCH[args.command](options)
    except DivergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGENCE
    except CheckpointMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except ProtocolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PROTOCOL
    except ImgrecError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
