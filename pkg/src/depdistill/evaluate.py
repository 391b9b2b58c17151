"""Attachment scores and the single-core throughput benchmark."""
import csv
import math
import statistics
import time
from contextlib import contextmanager
from dataclasses import dataclass

from .inference import iter_batches, predict_batch
from .model import make_batch


@dataclass
class EvalPair:
    """Gold tree and prediction for one sentence.

    ``predicted`` needs ``heads`` and ``labels`` comparable to the gold ones.
    """

    gold: object
    predicted: object


def uas_las(pairs, include_punct=True):
    """Micro-averaged (UAS, LAS) in percent.

    With ``include_punct`` off, tokens whose gold UPOS is PUNCT are left
    out of numerator and denominator.
    """
    if not pairs:
        raise ValueError("uas_las needs at least one pair")
    total = heads_ok = both_ok = 0
    for pair in pairs:
        gold, pred = pair.gold, pair.predicted
        if len(gold.heads) != len(pred.heads) or len(gold.labels) != len(pred.labels):
            raise ValueError("gold and predicted lengths differ")
        for i, (gh, ph) in enumerate(zip(gold.heads, pred.heads)):
            if not include_punct and gold.upos[i] == "PUNCT":
                continue
            total += 1
            if gh == ph:
                heads_ok += 1
                if gold.labels[i] == pred.labels[i]:
                    both_ok += 1
    if total == 0:
        return 0.0, 0.0
    return 100.0 * heads_ok / total, 100.0 * both_ok / total


def evaluate(model, sentences, batch_size=32, include_punct=True, single_root=True):
    from .inference import parse
    predicted = parse(model, sentences, batch_size, single_root)
    return uas_las([EvalPair(g, p) for g, p in zip(sentences, predicted)], include_punct)


# ------------------------------------------------------------------ benchmark

@dataclass
class BenchRecord:
    model_tag: str
    batch_size: int
    run_index: int
    sentences_per_sec: float
    tokens_per_sec: float
    wall_seconds: float
    note: str = ""


BENCH_COLUMNS = ("model_tag", "batch_size", "run", "sent_per_s", "tok_per_s", "wall_s")
EVAL_COLUMNS = ("model_tag", "treebank", "uas", "las")


@contextmanager
def single_thread():
    """Limit BLAS/OpenMP pools to one thread for the duration."""
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        yield
        return
    with threadpool_limits(limits=1):
        yield


def inference_pass(model, sentences, batch_size, single_root=True, clock=time.perf_counter):
    """Time one full pass (batching, encode, score, CLE, labels).  Returns seconds."""
    start = clock()
    for _, chunk in iter_batches(sentences, batch_size):
        predict_batch(model, make_batch(chunk, model.vocab), single_root)
    return clock() - start


def bench_speed(model, sentences, batch_sizes, runs=5, model_tag="Full", single_root=True,
                clock=time.perf_counter):
    """Throughput per (batch size, run), timed with one compute thread.

    Model loading and file parsing happen before this is called and are not
    timed.  A batch size above the corpus size degenerates to one batch and
    is noted on the record.
    """
    sentences = list(sentences)
    if not sentences:
        raise ValueError("bench_speed needs a non-empty treebank")
    n_tokens = sum(len(s) for s in sentences)
    records = []
    with single_thread():
        for bs in batch_sizes:
            note = "single-batch: batch size exceeds corpus" if bs > len(sentences) else ""
            for run in range(runs):
                wall = inference_pass(model, sentences, bs, single_root, clock)
                wall = max(wall, 1e-12)
                sps = len(sentences) / wall
                records.append(BenchRecord(model_tag, bs, run, sps, sps * (n_tokens / len(sentences)),
                                           wall, note))
    return records


def summarize(records):
    """``{(tag, batch_size): (mean tok/s, se, mean sent/s, se)}``; se = stdev / sqrt(runs)."""
    groups = {}
    for r in records:
        groups.setdefault((r.model_tag, r.batch_size), []).append(r)
    out = {}
    for key, rs in groups.items():
        tok = [r.tokens_per_sec for r in rs]
        sent = [r.sentences_per_sec for r in rs]

        def se(xs):
            return statistics.stdev(xs) / math.sqrt(len(xs)) if len(xs) > 1 else 0.0

        out[key] = (statistics.fmean(tok), se(tok), statistics.fmean(sent), se(sent))
    return out


def format_summary(records):
    """Table with tok/s and sent/s rows per model, one column per batch size."""
    summary = summarize(records)
    tags = list(dict.fromkeys(r.model_tag for r in records))
    sizes = sorted({r.batch_size for r in records})
    lines = ["model   unit     " + "".join(f"{'bs=' + str(b):>22}" for b in sizes)]
    for tag in tags:
        for unit, idx in (("tok/s", 0), ("sent/s", 2)):
            cells = []
            for b in sizes:
                if (tag, b) in summary:
                    s = summary[(tag, b)]
                    cells.append(f"{s[idx]:>12.1f} +- {s[idx + 1]:<6.1f}")
                else:
                    cells.append(f"{'-':>22}")
            lines.append(f"{tag:<7} {unit:<8} " + "".join(cells))
    return "\n".join(lines)


def emit_csv(rows, stream, kind=None):
    """Write bench records or eval rows as CSV with a header.

    Eval rows are ``(model_tag, treebank, uas, las)`` tuples.  ``kind`` is
    inferred from the rows when they are non-empty, else defaults to bench.
    """
    rows = list(rows)
    if kind is None:
        kind = "eval" if rows and not isinstance(rows[0], BenchRecord) else "bench"
    writer = csv.writer(stream, lineterminator="\n")
    if kind == "bench":
        writer.writerow(BENCH_COLUMNS)
        for r in rows:
            writer.writerow([r.model_tag, r.batch_size, r.run_index, repr(r.sentences_per_sec),
                             repr(r.tokens_per_sec), repr(r.wall_seconds)])
    else:
        writer.writerow(EVAL_COLUMNS)
        for tag, treebank, uas, las in rows:
            writer.writerow([tag, treebank, repr(float(uas)), repr(float(las))])


def read_bench_csv(stream):
    reader = csv.DictReader(stream)
    return [BenchRecord(row["model_tag"], int(row["batch_size"]), int(row["run"]),
                        float(row["sent_per_s"]), float(row["tok_per_s"]), float(row["wall_s"]))
            for row in reader]
