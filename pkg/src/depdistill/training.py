"""Losses, teacher targets, and the baseline and distillation training loops.

The KL term is the usual nonnegative ``sum P (ln P - ln Q)``; minimising
it pulls the student's distributions toward the teacher's.
"""
import csv
import logging
import time
from dataclasses import asdict, dataclass, field, fields, replace

import numpy as np

from . import autodiff as ad
from .conllu import build_vocab
from .errors import ConfigError, ContractViolation, TrainingError
from .evaluate import evaluate
from .model import BiaffineParser, ModelConfig, arc_validity, make_batch
from .optim import AdamState, adam_update

log = logging.getLogger(__name__)


@dataclass
class TrainingHyper:
    learning_rate: float = 2e-3
    anneal_base: float = 0.75
    anneal_denom: float = 5000
    beta1: float = 0.9
    beta2: float = 0.9
    epsilon: float = 1e-12
    epochs: int = 100
    batch_size_sentences: int = 32
    emb_dropout: float = 0.33
    dropout: float = 0.33
    seed: int = 1
    temperature: float = 1.0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.anneal_base <= 0 or self.anneal_denom <= 0:
            raise ValueError("learning rate and annealing settings must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size_sentences < 1:
            raise ValueError("batch_size_sentences must be >= 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")


# ------------------------------------------------------------------ config files

def _coerce(value, template):
    if isinstance(template, bool):
        return value.lower() in ("1", "true", "yes", "on")
    if isinstance(template, int):
        return int(value)
    if isinstance(template, float):
        return float(value)
    return value


def config_keys():
    return {f.name for f in fields(ModelConfig)} | {f.name for f in fields(TrainingHyper)}


def apply_overrides(config, hyper, pairs):
    """Apply ``key=value`` strings to a (ModelConfig, TrainingHyper) pair."""
    model_names = {f.name for f in fields(ModelConfig)}
    hyper_names = {f.name for f in fields(TrainingHyper)}
    model_updates, hyper_updates = {}, {}
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"expected key=value, got {pair!r}")
        key, value = (s.strip() for s in pair.split("=", 1))
        try:
            # dropout rates live in both; the hyper value drives training
            if key in hyper_names:
                hyper_updates[key] = _coerce(value, getattr(hyper, key))
            if key in model_names:
                model_updates[key] = _coerce(value, getattr(config, key))
        except ValueError:
            raise ConfigError(f"bad value for {key}: {value!r}") from None
        if key not in hyper_names and key not in model_names:
            raise ConfigError(f"unknown config key {key!r}")
    try:
        return replace(config, **model_updates), replace(hyper, **hyper_updates)
    except ValueError as e:
        raise ConfigError(str(e)) from None


def read_config(path, config=None, hyper=None):
    """Flat ``key = value`` file; blank lines and ``#`` comments ignored."""
    pairs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            pairs.append(line)
    return apply_overrides(config or ModelConfig(), hyper or TrainingHyper(), pairs)


def write_config(path, config, hyper):
    with open(path, "w", encoding="utf-8") as f:
        for k, v in {**asdict(config), **asdict(hyper)}.items():
            f.write(f"{k} = {v}\n")


# ------------------------------------------------------------------ losses

@dataclass
class Loss:
    """Scalar loss (graph node) plus summed components for logging."""

    total: ad.Tensor
    components: dict = field(default_factory=dict)
    n_tokens: int = 0


def ce_loss(log_probs, gold, mask):
    """Cross entropy ``-sum log p(gold)`` over masked-in rows.

    Returns ``(sum, mean)`` graph scalars; the mean divides by the number
    of masked-in rows.
    """
    log_probs = ad.as_tensor(log_probs)
    gold = np.asarray(gold)
    mask = np.asarray(mask, dtype=bool)
    k = log_probs.shape[-1]
    if gold[mask].size and (gold[mask].min() < 0 or gold[mask].max() >= k):
        raise ContractViolation(f"gold id out of range [0, {k})")
    picked = ad.gather_last(log_probs, np.where(mask, gold, 0))
    weights = mask.astype(log_probs.data.dtype)
    total = ad.exact_sum(picked * weights) * -1.0
    count = max(int(mask.sum()), 1)
    return total, total * (1.0 / count)


def kl_loss(p, q_log, mask, check_tol=1e-4, p_log=None):
    """``sum_rows sum_k P (ln P - Q_log)`` over masked-in rows; always >= 0.

    ``p_log`` optionally gives ``ln P`` (as computed by the teacher).
    """
    p = np.asarray(p)
    mask = np.asarray(mask, dtype=bool)
    sums = p.sum(axis=-1)
    if np.any(np.abs(sums[mask] - 1.0) > check_tol):
        raise ContractViolation("teacher rows must sum to 1")
    per_row = ad.rowsum(ad.kl_terms(np.where(mask[..., None], p, 0.0), q_log, p_log))
    return ad.exact_sum(per_row * mask.astype(per_row.data.dtype))


def _arc_log_probs(arc_scores, batch, temperature=1.0):
    valid = arc_validity(batch)
    # padded rows get a dummy candidate so softmax stays finite; they are masked out of losses
    valid[:, :, 0] |= ~batch.token_mask
    scores = arc_scores if temperature == 1.0 else arc_scores * (1.0 / temperature)
    return ad.log_softmax(scores, mask=valid)


def _label_log_probs(label_scores, temperature=1.0):
    scores = label_scores if temperature == 1.0 else label_scores * (1.0 / temperature)
    return ad.log_softmax(scores)


def baseline_loss(model, batch, train=False, rng=None):
    bundle = model.forward(batch, train=train, rng=rng)
    ce_arc, _ = ce_loss(_arc_log_probs(bundle.arc_scores, batch), batch.heads, batch.token_mask)
    ce_lab, _ = ce_loss(_label_log_probs(bundle.label_scores), batch.labels, batch.token_mask)
    n = batch.n_tokens
    total = (ce_arc + ce_lab) * (1.0 / max(n, 1))
    return Loss(total, {"ce_arc": ce_arc.item(), "ce_lab": ce_lab.item(),
                        "kl_arc": 0.0, "kl_lab": 0.0}, n)


@dataclass
class DistillationTargets:
    """Teacher distributions for one batch: arc rows (B, n, n+1), label rows (B, n, L).

    ``arc_log`` and ``label_log`` hold the matching log-probabilities when
    known; they keep the KL terms exact when teacher and student agree.
    """

    arc: np.ndarray
    label: np.ndarray
    arc_log: np.ndarray = None
    label_log: np.ndarray = None


def teacher_distributions(teacher, batch, temperature=1.0, vocab=None):
    """Teacher softmax rows in inference mode; labels conditioned on the gold head."""
    if vocab is not None and teacher.vocab is not None and teacher.vocab != vocab:
        raise ConfigError("teacher vocabulary does not match the data vocabulary")
    ctx = teacher.encode(batch, train=False)
    arcs = teacher.score_arcs(ctx, mask=batch.mask).data
    labels = teacher.score_labels(ctx, batch.heads, mask=batch.mask).data
    valid = arc_validity(batch)
    valid[:, :, 0] |= ~batch.token_mask
    arc_log = ad._log_softmax_array(arcs if temperature == 1.0 else arcs * (1.0 / temperature), valid)
    label_log = ad._log_softmax_array(labels if temperature == 1.0 else labels * (1.0 / temperature))
    return DistillationTargets(np.exp(arc_log), np.exp(label_log), arc_log, label_log)


def distill_loss(targets, bundle, batch, temperature=1.0):
    """KL(T_h, S_h) + KL(T_lab, S_lab) + CE(h) + CE(lab), equal weights.

    Student scores are tempered like the teacher's before the KL terms;
    the gold cross-entropy terms use untempered scores.  ``total`` is the
    sum divided by the token count; ``components`` holds the raw sums.
    """
    mask = batch.token_mask
    kl_arc = kl_loss(targets.arc, _arc_log_probs(bundle.arc_scores, batch, temperature), mask,
                     p_log=targets.arc_log)
    kl_lab = kl_loss(targets.label, _label_log_probs(bundle.label_scores, temperature), mask,
                     p_log=targets.label_log)
    ce_arc, _ = ce_loss(_arc_log_probs(bundle.arc_scores, batch), batch.heads, mask)
    ce_lab, _ = ce_loss(_label_log_probs(bundle.label_scores), batch.labels, mask)
    summed = kl_arc + kl_lab + ce_arc + ce_lab
    n = batch.n_tokens
    return Loss(summed * (1.0 / max(n, 1)),
                {"kl_arc": kl_arc.item(), "kl_lab": kl_lab.item(),
                 "ce_arc": ce_arc.item(), "ce_lab": ce_lab.item()}, n)


# ------------------------------------------------------------------ training loops

HISTORY_COLUMNS = ("epoch", "train_loss", "kl_arc", "kl_lab", "ce_arc", "ce_lab",
                   "dev_uas", "dev_las", "seconds")


def make_batches(sentences, batch_size, rng):
    """Length-bucketed batches in shuffled order."""
    order = sorted(range(len(sentences)), key=lambda i: (len(sentences[i]), rng.random()))
    chunks = [order[i:i + batch_size] for i in range(0, len(order), batch_size)]
    rng.shuffle(chunks)
    return [[sentences[i] for i in chunk] for chunk in chunks]


def _train(model, train_sents, dev_sents, hyper, loss_fn, rng, dropout_on, eval_batch_size=64,
           callback=None):
    params = {k: t for k, t in model.params.items()}
    state = AdamState()
    history = []
    best_las, best = -1.0, None
    for epoch in range(1, hyper.epochs + 1):
        start = time.perf_counter()
        sums = {"loss": 0.0, "kl_arc": 0.0, "kl_lab": 0.0, "ce_arc": 0.0, "ce_lab": 0.0}
        for chunk in make_batches(train_sents, hyper.batch_size_sentences, rng):
            batch = make_batch(chunk, model.vocab)
            loss = loss_fn(model, batch, dropout_on, rng)
            value = loss.total.item()
            if not np.isfinite(value):
                raise TrainingError(f"non-finite loss {value} in epoch {epoch}", step=state.t)
            grads = ad.backward(loss.total, params.values())
            adam_update({k: t.data for k, t in params.items()},
                        {k: grads[t] for k, t in params.items()}, state, hyper)
            sums["loss"] += value * loss.n_tokens
            for k, v in loss.components.items():
                sums[k] += v
        n_tokens = sum(len(s) for s in train_sents)
        uas, las = evaluate(model, dev_sents, eval_batch_size) if dev_sents else (0.0, 0.0)
        row = {"epoch": epoch, "train_loss": sums["loss"] / max(n_tokens, 1),
               "kl_arc": sums["kl_arc"], "kl_lab": sums["kl_lab"], "ce_arc": sums["ce_arc"],
               "ce_lab": sums["ce_lab"], "dev_uas": uas, "dev_las": las,
               "seconds": time.perf_counter() - start}
        history.append(row)
        log.info("epoch %d loss %.4f dev UAS %.2f LAS %.2f (%.1fs)", epoch, row["train_loss"],
                 uas, las, row["seconds"])
        if las > best_las:
            best_las, best = las, model.copy()
        if callback is not None and callback(epoch, model, row):
            break
    return (best if best is not None else model), history


def train_baseline(config, train_sents, dev_sents, hyper, vocab=None, callback=None):
    """Train on CE(h) + CE(lab) with dropout; returns (best-dev-LAS model, history)."""
    rng = np.random.default_rng(hyper.seed)
    vocab = vocab or build_vocab(train_sents)
    config = replace(config, emb_dropout=hyper.emb_dropout, dropout=hyper.dropout)
    model = BiaffineParser.create(config, vocab, rng)

    def loss_fn(m, batch, train, r):
        return baseline_loss(m, batch, train=train, rng=r)

    return _train(model, train_sents, dev_sents, hyper, loss_fn, rng, True, callback=callback)


def train_distilled(teacher, student_config, train_sents, dev_sents, hyper, init_from_teacher=False,
                    callback=None):
    """Distil ``teacher`` into a student of ``student_config`` with all dropout off."""
    rng = np.random.default_rng(hyper.seed)
    vocab = teacher.vocab
    student_config = replace(student_config.with_vocab(vocab), emb_dropout=0.0, dropout=0.0)
    if init_from_teacher:
        if replace(student_config, emb_dropout=0.0, dropout=0.0) != replace(
                teacher.config, emb_dropout=0.0, dropout=0.0):
            raise ConfigError("init_from_teacher needs identical layer sizes")
        student = BiaffineParser(student_config, teacher.copy().arrays(), vocab)
    else:
        student = BiaffineParser.create(student_config, vocab, rng)
    frozen = teacher.copy()
    frozen.set_trainable(False)

    def loss_fn(m, batch, train, r):
        targets = teacher_distributions(frozen, batch, hyper.temperature)
        bundle = m.forward(batch, train=False)
        return distill_loss(targets, bundle, batch, hyper.temperature)

    return _train(student, train_sents, dev_sents, hyper, loss_fn, rng, False, callback=callback)


def write_history(history, stream):
    writer = csv.DictWriter(stream, fieldnames=HISTORY_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in history:
        writer.writerow(row)
