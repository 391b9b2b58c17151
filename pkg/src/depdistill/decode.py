"""Tree decoding from arc and label score matrices."""
from dataclasses import dataclass

import numpy as np

from . import kernels
from .conllu import is_tree


@dataclass
class DecodedTree:
    heads: list
    labels: list
    score: float


def _check(arc_scores):
    arc_scores = np.asarray(arc_scores, dtype=np.float64)
    if arc_scores.ndim != 2 or arc_scores.shape[0] == 0:
        raise ValueError("arc score matrix must be n x (n+1) with n >= 1")
    if arc_scores.shape[1] != arc_scores.shape[0] + 1:
        raise ValueError(f"arc score matrix has shape {arc_scores.shape}, expected n x (n+1)")
    return arc_scores


def chu_liu_edmonds(arc_scores, single_root=True):
    """Maximum spanning arborescence rooted at ROOT (column 0).

    ``arc_scores[i, j]`` scores token ``i + 1`` attaching to head ``j``.
    Masked candidates should be -inf.  With ``single_root`` exactly one
    token attaches to ROOT.
    """
    return kernels.chu_liu_edmonds(_check(arc_scores), bool(single_root))


def greedy_heads(arc_scores):
    """Row-wise argmax, self-attachment excluded; may contain cycles."""
    scores = _check(arc_scores).copy()
    n = scores.shape[0]
    scores[np.arange(n), np.arange(1, n + 1)] = -np.inf
    return np.argmax(scores, axis=1)


def assign_labels(label_scores, heads):
    """``labels[i] = argmax_l label_scores[i, heads[i], l]``."""
    label_scores = np.asarray(label_scores)
    heads = np.asarray(heads)
    return np.argmax(label_scores[np.arange(len(heads)), heads], axis=-1)


def tree_score(arc_scores, heads):
    arc_scores = np.asarray(arc_scores)
    return float(sum(arc_scores[i, h] for i, h in enumerate(heads)))


def well_formed(heads, single_root=False):
    heads = [int(h) for h in heads]
    if not is_tree(heads):
        return False
    return not single_root or heads.count(0) == 1


def decode(arc_scores, label_scores, single_root=True):
    heads = chu_liu_edmonds(arc_scores, single_root)
    return DecodedTree(list(heads), list(assign_labels(label_scores, heads)),
                       tree_score(arc_scores, heads))
