"""Batched parsing: encode, score, decode, label."""
import numpy as np

from . import autodiff as ad
from .conllu import Sentence
from .decode import DecodedTree, chu_liu_edmonds, greedy_heads
from .model import arc_validity, make_batch


def masked_arc_scores(arc_scores, batch):
    """Padding and self-loop candidates set to -inf (arrays, no graph)."""
    return np.where(arc_validity(batch), arc_scores, -np.inf)


def predict_batch(model, batch, single_root=True, decoder="cle"):
    """Decode every sentence of a batch into a :class:`DecodedTree` (label ids)."""
    ctx = model.encode(batch)
    arcs = masked_arc_scores(model.score_arcs(ctx, mask=batch.mask).data, batch)
    lengths = batch.lengths
    heads = np.zeros(batch.heads.shape, dtype=np.int64)
    for r, n in enumerate(lengths):
        sub = arcs[r, :n, :n + 1]
        if decoder == "greedy":
            heads[r, :n] = greedy_heads(sub)
        else:
            heads[r, :n] = chu_liu_edmonds(sub, single_root)
    label_scores = model.score_labels(ctx, heads, mask=batch.mask).data
    labels = np.argmax(label_scores, axis=-1)
    trees = []
    for r, n in enumerate(lengths):
        h = heads[r, :n]
        score = float(np.sum(arcs[r, np.arange(n), h]))
        trees.append(DecodedTree(h.tolist(), labels[r, :n].tolist(), score))
    return trees


def iter_batches(sentences, batch_size):
    """``(positions, chunk)`` pairs over length-sorted sentences, limiting padding."""
    order = sorted(range(len(sentences)), key=lambda i: len(sentences[i]))
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        yield idx, [sentences[i] for i in idx]


def predict(model, sentences, batch_size=32, single_root=True):
    """Decoded trees in input order."""
    sentences = list(sentences)
    out = [None] * len(sentences)
    for idx, chunk in iter_batches(sentences, batch_size):
        for i, tree in zip(idx, predict_batch(model, make_batch(chunk, model.vocab), single_root)):
            out[i] = tree
    return out


def parse(model, sentences, batch_size=32, single_root=True):
    """Copies of ``sentences`` with predicted heads and label strings."""
    labels = model.vocab.labels
    result = []
    for sent, tree in zip(sentences, predict(model, sentences, batch_size, single_root)):
        result.append(Sentence(list(sent.tokens), list(sent.upos), list(tree.heads),
                               [labels[i] for i in tree.labels], list(sent.comments), sent.rows))
    return result


def arc_probabilities(model, batch, temperature=1.0):
    """Softmax over admissible head candidates per token (B, n, n+1)."""
    ctx = model.encode(batch)
    arcs = model.score_arcs(ctx, mask=batch.mask).data / temperature
    return ad.softmax_array(arcs, arc_validity(batch))
