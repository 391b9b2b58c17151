"""Command-line entry point: train, distill, parse, eval, bench, stats.

Exit status is 0 on success, 1 on a usage error and 2 when input data,
a model file or the configuration is bad.  Positional ``key=value``
arguments override config entries (same names as the config file).
"""
import argparse
import logging
import os
import sys
from contextlib import contextmanager
from dataclasses import replace

import numpy as np

from .conllu import read_conllu, treebank_stats, write_conllu, write_stats_csv
from .errors import (
    ConfigError, ConlluParseError, EmbeddingFormatError, ModelLoadError, SizingError, TrainingError,
)
from .evaluate import EvalPair, bench_speed, emit_csv, format_summary, uas_las
from .inference import parse as parse_sentences
from .model import ModelConfig, count_params, load_model, save_model, size_student
from .training import (
    TrainingHyper, apply_overrides, read_config, train_baseline, train_distilled, write_history,
)

log = logging.getLogger("depdistill")

DATA_ERRORS = (ConfigError, ConlluParseError, EmbeddingFormatError, ModelLoadError, SizingError,
               TrainingError, OSError, ValueError)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"expected a boolean, got {text!r}")


def _fraction(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < value <= 1.0:
        raise argparse.ArgumentTypeError("fraction must be in (0, 1]")
    return value


def _int_list(text):
    try:
        values = [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or min(values) < 1:
        raise argparse.ArgumentTypeError("batch sizes must be positive integers")
    return values


def _positive(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def fraction_tag(prefix, fraction):
    return f"{prefix}-{round(fraction * 100):d}"


def build_parser():
    p = _Parser(prog="depdistill", description=__doc__.splitlines()[0])
    p.add_argument("--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    def training_flags(sp):
        sp.add_argument("args", nargs="+", metavar="TRAIN [DEV] [key=value ...]")
        sp.add_argument("--config", help="flat key = value config file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--batch-size", type=_positive, help="training batch size in sentences")
        sp.add_argument("--out", required=True, help="model file to write")
        sp.add_argument("--history", help="per-epoch CSV (default: OUT.history.csv)")
        sp.add_argument("--tag", help="model tag stored in the file")

    sp = sub.add_parser("train", help="train a baseline parser")
    training_flags(sp)
    sp.add_argument("--fraction", type=_fraction,
                    help="shrink the config to this parameter fraction (a B-F baseline)")

    sp = sub.add_parser("distill", help="distil a teacher into a smaller student")
    training_flags(sp)
    sp.add_argument("--teacher", required=True)
    sp.add_argument("--fraction", type=_fraction, default=0.2)
    sp.add_argument("--init-from-teacher", action="store_true",
                    help="start from the teacher's weights (needs --fraction 1)")

    sp = sub.add_parser("parse", help="annotate CoNLL-U with predicted heads and labels")
    sp.add_argument("input")
    sp.add_argument("--model", required=True)
    sp.add_argument("--out", help="output CoNLL-U (default stdout)")
    sp.add_argument("--batch-size", type=_positive, default=32)
    sp.add_argument("--single-root", type=_bool, default=True)

    sp = sub.add_parser("eval", help="UAS/LAS against gold CoNLL-U")
    sp.add_argument("gold")
    sp.add_argument("--model", required=True)
    sp.add_argument("--batch-size", type=_positive, default=32)
    sp.add_argument("--include-punct", type=_bool, default=True)
    sp.add_argument("--single-root", type=_bool, default=True)
    sp.add_argument("--out", help="eval CSV (model_tag,treebank,uas,las)")
    sp.add_argument("--tag")

    sp = sub.add_parser("bench", help="single-core throughput sweep")
    sp.add_argument("corpus")
    sp.add_argument("--model", action="append", required=True, help="repeatable")
    sp.add_argument("--tag", action="append", help="repeatable, one per --model")
    sp.add_argument("--batch-sizes", type=_int_list, default=[1, 16, 64, 256])
    sp.add_argument("--batch-size", type=_positive, help="shorthand for a single batch size")
    sp.add_argument("--runs", type=_positive, default=5)
    sp.add_argument("--single-root", type=_bool, default=True)
    sp.add_argument("--float32", action="store_true", help="run inference in single precision")
    sp.add_argument("--out", help="CSV path (default stdout; the summary then goes to stderr)")

    sp = sub.add_parser("stats", help="treebank statistics")
    sp.add_argument("treebanks", nargs="+")
    sp.add_argument("--out", help="CSV path (default stdout)")
    return p


@contextmanager
def _output(path, mode="w"):
    if path is None or path == "-":
        yield sys.stdout.buffer if "b" in mode else sys.stdout
    else:
        with open(path, mode, encoding=None if "b" in mode else "utf-8") as f:
            yield f


def _split_args(args, max_paths):
    paths = [a for a in args if "=" not in a]
    overrides = [a for a in args if "=" in a]
    if not paths or len(paths) > max_paths:
        raise UsageError(f"expected 1 to {max_paths} data paths, got {len(paths)}")
    return paths, overrides


def _settings(ns, overrides, config=None):
    config, hyper = config or ModelConfig(), TrainingHyper()
    if ns.config:
        config, hyper = read_config(ns.config, config, hyper)
    config, hyper = apply_overrides(config, hyper, overrides)
    if ns.seed is not None:
        hyper = replace(hyper, seed=ns.seed)
    if ns.batch_size is not None:
        hyper = replace(hyper, batch_size_sentences=ns.batch_size)
    return config, hyper


def _load_data(paths):
    train = read_conllu(paths[0])
    dev = read_conllu(paths[1]) if len(paths) > 1 else []
    if not train:
        raise ValueError(f"{paths[0]}: no sentences")
    return train, dev


def _finish_training(ns, model, history, tag):
    model.tag = tag
    save_model(ns.out, model)
    with open(ns.history or ns.out + ".history.csv", "w", encoding="utf-8") as f:
        write_history(history, f)
    best = max(history, key=lambda r: r["dev_las"], default=None)
    if best is not None:
        log.info("%s: best dev LAS %.2f at epoch %d", tag, best["dev_las"], best["epoch"])
    log.info("wrote %s (%d parameters)", ns.out, model.n_params())


def cmd_train(ns):
    paths, overrides = _split_args(ns.args, 2)
    config, hyper = _settings(ns, overrides)
    train, dev = _load_data(paths)
    tag = ns.tag or ("Full" if ns.fraction is None else fraction_tag("B", ns.fraction))
    if ns.fraction is not None and ns.fraction < 1.0:
        full = config
        config = size_student(config, ns.fraction)
        log.info("%s config: %d of %d parameters at default vocab sizes", tag,
                 count_params(config), count_params(full))
    model, history = train_baseline(config, train, dev, hyper)
    _finish_training(ns, model, history, tag)
    return 0


def cmd_distill(ns):
    paths, overrides = _split_args(ns.args, 2)
    teacher = load_model(ns.teacher)
    if teacher.vocab is None:
        raise ConfigError("teacher model has no vocabulary")
    config, hyper = _settings(ns, overrides, teacher.config)
    train, dev = _load_data(paths)
    student_config = size_student(config, ns.fraction) if ns.fraction < 1.0 else config
    if ns.init_from_teacher and ns.fraction < 1.0:
        raise ConfigError("--init-from-teacher needs --fraction 1")
    model, history = train_distilled(teacher, student_config, train, dev, hyper,
                                     init_from_teacher=ns.init_from_teacher)
    _finish_training(ns, model, history, ns.tag or fraction_tag("D", ns.fraction))
    return 0


def cmd_parse(ns):
    model = load_model(ns.model)
    sents = read_conllu(ns.input)
    out = parse_sentences(model, sents, ns.batch_size, ns.single_root)
    with _output(ns.out) as f:
        write_conllu(out, f)
    return 0


def _tag(model, path):
    return model.tag or os.path.splitext(os.path.basename(path))[0]


def cmd_eval(ns):
    model = load_model(ns.model)
    gold = read_conllu(ns.gold)
    if not gold:
        raise ValueError(f"{ns.gold}: no sentences")
    pred = parse_sentences(model, gold, ns.batch_size, ns.single_root)
    uas, las = uas_las([EvalPair(g, p) for g, p in zip(gold, pred)], ns.include_punct)
    print(f"UAS {uas:.2f}  LAS {las:.2f}")
    if ns.out:
        treebank = os.path.splitext(os.path.basename(ns.gold))[0]
        with _output(ns.out) as f:
            emit_csv([(ns.tag or _tag(model, ns.model), treebank, uas, las)], f, kind="eval")
    return 0


def cmd_bench(ns):
    if ns.tag and len(ns.tag) != len(ns.model):
        raise UsageError("give one --tag per --model")
    models = []
    for i, path in enumerate(ns.model):
        m = load_model(path)
        if ns.float32:
            m = m.astype(np.float32)
        models.append((ns.tag[i] if ns.tag else _tag(m, path), m))
    sents = read_conllu(ns.corpus)
    sizes = [ns.batch_size] if ns.batch_size else ns.batch_sizes
    records = []
    for tag, m in models:  # all loading and parsing is done before any timing
        records.extend(bench_speed(m, sents, sizes, ns.runs, tag, ns.single_root))
    with _output(ns.out) as f:
        emit_csv(records, f, kind="bench")
    summary = format_summary(records)
    print(summary, file=sys.stdout if ns.out else sys.stderr)
    return 0


def cmd_stats(ns):
    rows = []
    for path in ns.treebanks:
        name = os.path.splitext(os.path.basename(path))[0]
        rows.append((name, treebank_stats(read_conllu(path))))
    with _output(ns.out) as f:
        write_stats_csv(rows, f)
    return 0


COMMANDS = {"train": cmd_train, "distill": cmd_distill, "parse": cmd_parse, "eval": cmd_eval,
            "bench": cmd_bench, "stats": cmd_stats}


def main(argv=None):
    try:
        parser = build_parser()
        ns, extra = parser.parse_known_args(argv)
        # key=value overrides may follow the options; argparse leaves those over
        stray = [a for a in extra if a.startswith("-") or "=" not in a]
        if stray or (extra and ns.command not in ("train", "distill")):
            parser.error(f"unrecognized arguments: {' '.join(extra)}")
        if extra:
            ns.args = ns.args + extra
        logging.basicConfig(level=logging.WARNING if ns.quiet else logging.INFO,
                            format="%(levelname)s %(message)s", stream=sys.stderr)
        return COMMANDS[ns.command](ns)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except DATA_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
