"""Command-line entry point: ``pretrain-nli <subcommand> [flags]``.

Every run first writes a JSON manifest (subcommand, resolved config, input
digests, seed, version) and then its outputs, each atomically. Flag values
come from, in decreasing priority: the command line, ``--config FILE``
(flat ``key = value`` lines), built-in defaults. Relative input paths that do
not exist are looked up under ``$PRETRAIN_NLI_DATA``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from . import __version__
from . import experiments as exps
from . import hypersearch as hs
from . import negation as neg
from .embeddings import (EmbeddingFormatError, load_embeddings, mean_center, rescale_unit_std,
                         save_embeddings)
from .initializers import InitSpec
from .io_utils import atomic_write_text, file_digest
from .retrofit import RetrofitConfig, load_lexicon, retrofit
from .seq2seq import ModelConfig, NumericalError
from .trainer import (TUNED_PRESETS, Classifier, TrainConfig, TrainingDiverged, Vocab,
                      evaluate, read_pairs, train)

log = logging.getLogger("pretrain_nli")

DATA_ROOT_ENV = "PRETRAIN_NLI_DATA"
DEFAULT_SEED = 1234

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# ------------------------------------------------------------- arg helpers

def int_list(text: str) -> list:
    try:
        return [int(t) for t in text.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def name_list(text: str) -> list:
    return [t for t in text.replace(" ", "").split(",") if t]


def boolean(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def family_path(text: str):
    """``name=path`` (or ``name=random`` for random embeddings)."""
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected name=path, got {text!r}")
    name, path = text.split("=", 1)
    return name, (None if path == "random" else path)


def resolve_input(path):
    """Use ``path`` as given if it exists, else try under the data root."""
    if path is None or os.path.isabs(path) or os.path.exists(path):
        return path
    root = os.environ.get(DATA_ROOT_ENV)
    if root and os.path.exists(os.path.join(root, path)):
        return os.path.join(root, path)
    return path


def read_config_file(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment; keys use - or _."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected 'key = value'")
            key, value = (s.strip() for s in line.split("=", 1))
            out[key.replace("-", "_")] = value
    return out


# --------------------------------------------------------------- parsers

def _model_flags(p):
    p.add_argument("--d", type=int, default=32, help="hidden and embedding size")
    p.add_argument("--layers", type=int, default=2)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--attention", type=boolean, default=True)
    p.add_argument("--window", type=int, default=5, help="attention half-width D")
    p.add_argument("--dtype", choices=("float64", "float32"), default="float64")


def _train_flags(p):
    p.add_argument("--preset", default=None,
                   help="family/scheme, e.g. retro_glove/orthogonal; overrides lr, kappa and scheme")
    p.add_argument("--lr", type=float, default=0.5)
    p.add_argument("--kappa", type=float, default=1.0)
    p.add_argument("--init-scheme", choices=("gaussian", "orthogonal"), default="gaussian")
    p.add_argument("--ortho-depth-correction", type=boolean, default=False)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--clip-norm", type=float, default=3.0)
    p.add_argument("--decay-start", type=int, default=5)
    p.add_argument("--decay-rate", type=float, default=0.8)
    p.add_argument("--unfreeze-epoch", type=int, default=5,
                   help="first epoch with trainable embeddings (0 for random embeddings)")
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--patience", type=int, default=5, help="0 disables early stopping")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pretrain-nli", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key = value file of defaults for this command")
        p.add_argument("--seed", type=int, default=DEFAULT_SEED)
        p.add_argument("--threads", type=int, default=1)
        p.add_argument("--manifest", help="manifest path (default: next to the output)")
        p.add_argument("--log-level", default="INFO")
        return p

    p = command("preprocess", "mean-centre and rescale an embedding file")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--expected-dim", type=int)
    p.add_argument("--center", type=boolean, default=True)
    p.add_argument("--rescale", type=boolean, default=True)
    p.add_argument("--task-data", help="pairs TSV; statistics use only its tokens")

    p = command("retrofit", "retrofit embeddings to a lexicon graph")
    p.add_argument("--embeddings", required=True)
    p.add_argument("--lexicon", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--iters", type=int, default=10)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--tol", type=float, default=1e-6)

    p = command("gen-negation", "expand base word pairs with recursive negation")
    p.add_argument("--base", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--train-depth", type=int, default=2)
    p.add_argument("--test-depths", type=int_list, default=[3, 4, 5, 6])
    p.add_argument("--downsample", type=int, default=10000, help="0 keeps every test pair")
    p.add_argument("--cumulative-tests", type=boolean, default=False)

    p = command("search", "coarse random search then annealed refinement")
    p.add_argument("--space", help="space file (default: lr and kappa on [0.001, 3], scheme)")
    p.add_argument("--train", required=True)
    p.add_argument("--dev", required=True)
    p.add_argument("--embeddings", help="pretrained embeddings (default: random)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--coarse-trials", type=int, default=50)
    p.add_argument("--anneal-iters", type=int, default=5)
    p.add_argument("--shrink", type=float, default=0.9)
    p.add_argument("--trials", type=int, default=50, help="trials per anneal iteration")
    p.add_argument("--freeze", type=name_list, default=[],
                   help="comma-separated dimensions held at the coarse winner")
    _model_flags(p)
    _train_flags(p)

    p = command("train", "train an entailment classifier")
    p.add_argument("--train", required=True)
    p.add_argument("--dev")
    p.add_argument("--embeddings", help="pretrained embeddings (default: random)")
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", help="per-epoch JSONL log (default: <out>.log.jsonl)")
    _model_flags(p)
    _train_flags(p)

    p = command("eval", "accuracy of a checkpoint on a dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True, help="JSON result path")

    p = command("report", "run an experiment recipe and write its report")
    p.add_argument("--recipe", choices=exps.RECIPES, required=True)
    p.add_argument("--data", help="pairs TSV (wordpair, snli_smoke)")
    p.add_argument("--train", help="training TSV (negation)")
    p.add_argument("--tests-dir", help="directory with test_l<k>.tsv files (negation)")
    p.add_argument("--family", type=family_path, action="append", default=[],
                   help="name=path or name=random; repeatable")
    p.add_argument("--out", required=True, help="JSON report path")
    p.add_argument("--subsample", type=int, default=2000)
    _model_flags(p)
    _train_flags(p)
    p.set_defaults(epochs=35, patience=0, unfreeze_epoch=5)
    return parser


def parse_args(argv) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_usage(sys.stderr)
        raise UsageError("a subcommand is required")
    if args.config:
        sub = parser._subparsers._group_actions[0].choices[args.command]
        try:
            values = read_config_file(resolve_input(args.config))
        except OSError as exc:
            raise UsageError(f"cannot read config: {exc}")
        known = {a.dest: a for a in sub._actions}
        for key in values:
            if key not in known or key in ("config", "help"):
                raise UsageError(f"{args.config}: unknown key {key!r}")
        # file values become defaults, so explicit flags still win
        sub.set_defaults(**{k: _from_text(known[k], v) for k, v in values.items()})
        args = parser.parse_args(argv)
    if getattr(args, "preset", None):
        apply_preset(args)
    return args


def apply_preset(args) -> None:
    """``--preset family/scheme`` replaces lr, kappa and init scheme."""
    family, _, scheme = args.preset.partition("/")
    if (family, scheme) not in TUNED_PRESETS:
        raise UsageError(f"unknown preset {args.preset!r}; choose from "
                         + ", ".join(f"{f}/{s}" for f, s in TUNED_PRESETS))
    args.lr, args.kappa = TUNED_PRESETS[(family, scheme)]
    args.init_scheme = scheme


def _from_text(action, text):
    if action.type is None:
        return text
    try:
        return action.type(text)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise UsageError(f"bad value for {action.dest}: {exc}")


# ---------------------------------------------------------------- manifest

INPUT_KEYS = ("embeddings", "lexicon", "base", "space", "train", "dev", "model", "data",
              "task_data", "config")


def _inputs(args) -> dict:
    out = {}
    for key in INPUT_KEYS:
        path = getattr(args, key, None)
        if path:
            out[key] = path
    for name, path in getattr(args, "family", []) or []:
        if path:
            out[f"family:{name}"] = path
    tests_dir = getattr(args, "tests_dir", None)
    if tests_dir:
        for fname in sorted(os.listdir(tests_dir)):
            out[f"tests:{fname}"] = os.path.join(tests_dir, fname)
    return out


def build_manifest(args) -> dict:
    config = {k: v for k, v in vars(args).items()
              if k not in ("command", "manifest", "log_level")}
    digests = {}
    for key, path in _inputs(args).items():
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing input {path}")
        digests[key] = {"path": path, "sha256": file_digest(path)}
    return {"subcommand": args.command, "config": config, "inputs": digests,
            "seed": args.seed, "version": __version__}


def manifest_path(args) -> str:
    if args.manifest:
        return args.manifest
    out_dir = getattr(args, "out_dir", None)
    if out_dir:
        return os.path.join(out_dir, "manifest.json")
    return args.out + ".manifest.json"


def argv_from_manifest(manifest: dict) -> list:
    """Command line that reruns the manifest's configuration."""
    argv = [manifest["subcommand"]]
    for key, value in manifest["config"].items():
        if value is None or key == "config":
            continue
        flag = "--" + key.replace("_", "-")
        if key == "family":
            for name, path in value:
                argv += [flag, f"{name}={'random' if path is None else path}"]
        elif isinstance(value, list):
            argv += [flag, ",".join(map(str, value))]
        else:
            argv += [flag, str(value)]
    return argv


# ---------------------------------------------------------------- commands

def cmd_preprocess(args):
    e = load_embeddings(args.embeddings, expected_dim=args.expected_dim)
    stats = None
    if args.task_data:
        stats = sorted({t for p, h, _ in read_pairs(args.task_data) for t in (*p, *h)})
    if args.center:
        e = mean_center(e, stats)
    if args.rescale:
        e = rescale_unit_std(e, stats)
    save_embeddings(e, args.out)
    log.info("wrote %d x %d to %s", len(e.vocab), e.dim, args.out)


def cmd_retrofit(args):
    e = load_embeddings(args.embeddings)
    lex = load_lexicon(args.lexicon)
    cfg = RetrofitConfig(alpha=args.alpha, max_iterations=args.iters,
                         convergence_tol=args.tol)
    out = retrofit(e, lex, cfg)
    save_embeddings(out, args.out)
    log.info("retrofitted %d words to %s", len(out.vocab), args.out)


def cmd_gen_negation(args):
    base = neg.read_tsv(args.base)
    ds = neg.generate_dataset(base, args.train_depth, args.test_depths,
                              args.downsample or None, args.seed, args.cumulative_tests)
    os.makedirs(args.out_dir, exist_ok=True)
    atomic_write_text(os.path.join(args.out_dir, "train.tsv"), neg.format_tsv(ds.train))
    for k, exs in ds.tests.items():
        atomic_write_text(os.path.join(args.out_dir, f"test_l{k}.tsv"), neg.format_tsv(exs))
    atomic_write_text(os.path.join(args.out_dir, "stats.json"),
                      json.dumps(ds.stats, indent=2, sort_keys=True, default=str) + "\n")


def _train_config(args, **overrides) -> TrainConfig:
    kw = dict(learning_rate=args.lr, kappa=args.kappa, init_scheme=args.init_scheme,
              batch_size=args.batch_size, clip_norm=args.clip_norm,
              lr_decay_start_epoch=args.decay_start, lr_decay_rate=args.decay_rate,
              embedding_unfreeze_epoch=args.unfreeze_epoch, max_epochs=args.epochs,
              patience=args.patience or None, seed=args.seed)
    kw.update(overrides)
    return TrainConfig(**kw)


def _model_config(args, num_labels) -> ModelConfig:
    return ModelConfig(d=args.d, layers=args.layers, num_labels=num_labels,
                       dropout_p=args.dropout, attention=args.attention,
                       window_D=args.window, dtype=args.dtype)


def _build(args, tc: TrainConfig, datasets, labels, embeddings):
    vocab = Vocab.from_examples(*datasets)
    init = InitSpec(tc.init_scheme, tc.kappa, args.layers, tc.seed,
                    ortho_depth_correction=args.ortho_depth_correction)
    return Classifier.build(_model_config(args, len(labels)), vocab, labels, init,
                            embeddings, emb_seed=tc.seed)


def _labels(train_set, *others):
    labels = sorted({y for *_, y in train_set})
    extra = {y for ds in others for *_, y in ds} - set(labels)
    if extra:
        raise ValueError(f"labels {sorted(extra)} do not occur in the training data")
    return labels


def cmd_train(args):
    tr = read_pairs(args.train)
    dv = read_pairs(args.dev) if args.dev else []
    labels = _labels(tr, dv)
    emb = load_embeddings(args.embeddings) if args.embeddings else None
    tc = _train_config(args)
    model = _build(args, tc, [tr, dv], labels, emb)
    log_path = args.log or args.out + ".log.jsonl"
    try:
        model, tlog = train(model, tr, dv, tc, threads=args.threads)
    except TrainingDiverged as exc:
        exc.last_good.save(args.out)
        atomic_write_text(log_path, exc.log.to_jsonl())
        raise
    model.save(args.out)
    atomic_write_text(log_path, tlog.to_jsonl())
    if dv:
        log.info("final dev accuracy %.4f", tlog.epochs[-1].dev_accuracy)


def cmd_search(args):
    space = hs.load_space(args.space) if args.space else hs.default_space()
    tr, dv = read_pairs(args.train), read_pairs(args.dev)
    labels = _labels(tr, dv)
    emb = load_embeddings(args.embeddings) if args.embeddings else None

    def evaluator(params, seed):
        over = {"seed": seed % (2 ** 31)}
        if "learning_rate" in params:
            over["learning_rate"] = params["learning_rate"]
        if "kappa" in params:
            over["kappa"] = params["kappa"]
        if "init_scheme" in params:
            over["init_scheme"] = params["init_scheme"]
        tc = _train_config(args, **over)
        model = _build(args, tc, [tr, dv], labels, emb)
        _, tlog = train(model, tr, dv, tc)
        return max(r.dev_accuracy for r in tlog.epochs)

    best, coarse = hs.coarse_search(space, evaluator, args.coarse_trials, args.seed,
                                    threads=args.threads)
    cfg = hs.AnnealConfig(shrink=args.shrink, iterations=args.anneal_iters,
                          trials_per_iteration=args.trials, freeze=tuple(args.freeze))
    best, history = hs.annealed_search(space, evaluator, cfg, best, args.seed,
                                       threads=args.threads)
    os.makedirs(args.out_dir, exist_ok=True)
    atomic_write_text(os.path.join(args.out_dir, "trials.jsonl"), "".join(
        json.dumps(t.to_record(), sort_keys=True) + "\n" for t in coarse + history))
    atomic_write_text(os.path.join(args.out_dir, "best_params.json"),
                      json.dumps(best.to_record(), indent=2, sort_keys=True) + "\n")
    log.info("best %.4f at %s", best.score, best.params)


def cmd_eval(args):
    model = Classifier.load(args.model)
    data = read_pairs(args.data)
    unknown = {y for *_, y in data} - set(model.labels)
    if unknown:
        raise ValueError(f"labels {sorted(unknown)} unknown to the model")
    acc = evaluate(model, data)
    atomic_write_text(args.out, json.dumps({"accuracy": acc, "n": len(data)}, indent=2) + "\n")
    print(f"accuracy {acc:.4f} on {len(data)} examples")


def cmd_report(args):
    families = dict(args.family) or {"random": None}
    paths = {"embeddings": {k: resolve_input(v) for k, v in families.items()}}
    if args.recipe == "negation":
        if not (args.train and args.tests_dir):
            raise UsageError("negation needs --train and --tests-dir")
        tests = {}
        for fname in sorted(os.listdir(args.tests_dir)):
            if fname.startswith("test_l") and fname.endswith(".tsv"):
                tests[int(fname[6:-4])] = os.path.join(args.tests_dir, fname)
        if not tests:
            raise FileNotFoundError(f"no test_l<k>.tsv files in {args.tests_dir}")
        paths.update(train=args.train, tests=tests)
    else:
        if not args.data:
            raise UsageError(f"{args.recipe} needs --data")
        paths["data"] = args.data
    cfg = exps.ExperimentConfig(d=args.d, layers=args.layers, dropout_p=args.dropout,
                                attention=args.attention, window_D=args.window,
                                train=_train_config(args), subsample=args.subsample or None,
                                seed=args.seed)
    rep = exps.run_experiment(args.recipe, paths, cfg)
    atomic_write_text(args.out, json.dumps(rep, indent=2, sort_keys=True) + "\n")
    print(exps.format_report(rep), end="")


COMMANDS = {"preprocess": cmd_preprocess, "retrofit": cmd_retrofit,
            "gen-negation": cmd_gen_negation, "search": cmd_search, "train": cmd_train,
            "eval": cmd_eval, "report": cmd_report}

PATH_ARGS = ("embeddings", "lexicon", "base", "space", "train", "dev", "model", "data",
             "task_data", "tests_dir")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                        format="%(levelname)s %(name)s: %(message)s")
    for key in PATH_ARGS:
        if getattr(args, key, None):
            setattr(args, key, resolve_input(getattr(args, key)))
    if args.threads < 1:
        print("--threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        manifest = build_manifest(args)
        path = manifest_path(args)
        if os.path.dirname(path):
            os.makedirs(os.path.dirname(path), exist_ok=True)
        atomic_write_text(path, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, TrainingDiverged, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ValueError, KeyError, EmbeddingFormatError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
