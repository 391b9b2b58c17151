"""CoNLL-U reading and writing, vocabularies, embeddings and treebank statistics."""
import csv
import io
import math
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import ConlluParseError, EmbeddingFormatError

PAD, UNK, ROOT = "<pad>", "<unk>", "<root>"
RESERVED = (PAD, UNK, ROOT)
PAD_ID, UNK_ID, ROOT_ID = 0, 1, 2


@dataclass
class Sentence:
    """One syntactic-word sequence with its gold (or predicted) tree.

    ``heads[i]`` is the 1-based head of token ``i + 1``; 0 is ROOT.
    ``rows`` keeps the original ten columns so writing can preserve the
    fields the parser does not use.
    """

    tokens: list
    upos: list
    heads: list
    labels: list
    comments: list = field(default_factory=list)
    rows: list = None

    def __len__(self):
        return len(self.tokens)

    def __post_init__(self):
        n = len(self.tokens)
        if n == 0:
            raise ValueError("a sentence needs at least one token")
        if not (len(self.upos) == len(self.heads) == len(self.labels) == n):
            raise ValueError("tokens, upos, heads and labels must have equal length")


def tree_error(heads):
    """Return a description of why ``heads`` is not a tree rooted at 0, or None."""
    n = len(heads)
    for i, h in enumerate(heads, start=1):
        if not 0 <= h <= n:
            return f"head {h} of token {i} out of range [0, {n}]"
        if h == i:
            return f"token {i} is its own head"
    state = [0] * (n + 1)  # 0 unvisited, 1 on current path, 2 reaches root
    state[0] = 2
    for start in range(1, n + 1):
        path = []
        node = start
        while state[node] == 0:
            state[node] = 1
            path.append(node)
            node = heads[node - 1]
        if state[node] == 1:
            return f"cycle through token {node}"
        for p in path:
            state[p] = 2
    return None


def is_tree(heads):
    return tree_error(heads) is None


def _finish_block(rows, comments, first_line):
    tokens, upos, heads, labels = [], [], [], []
    for lineno, cols in rows:
        try:
            head = int(cols[6])
        except ValueError:
            raise ConlluParseError(f"non-integer HEAD {cols[6]!r}", lineno) from None
        tokens.append(cols[1])
        upos.append(cols[3])
        heads.append(head)
        labels.append(cols[7])
    n = len(tokens)
    for (lineno, _), h in zip(rows, heads):
        if not 0 <= h <= n:
            raise ConlluParseError(f"HEAD {h} out of range [0, {n}]", lineno)
    problem = tree_error(heads)
    if problem is not None:
        raise ConlluParseError(f"sentence is not a tree: {problem}", first_line)
    return Sentence(tokens, upos, heads, labels, comments, [cols for _, cols in rows])


def iter_conllu(lines):
    """Yield sentences from an iterable of CoNLL-U lines.

    Multiword-token ranges (``1-2``) and empty nodes (``3.1``) are skipped.
    """
    rows, comments, first_line = [], [], None
    lineno = 0
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip("\r\n")
        if not line.strip():
            if rows:
                yield _finish_block(rows, comments, first_line)
            rows, comments, first_line = [], [], None
            continue
        if line.startswith("#"):
            comments.append(line)
            continue
        cols = line.split("\t")
        if len(cols) != 10:
            raise ConlluParseError(f"expected 10 tab-separated columns, got {len(cols)}", lineno)
        if "-" in cols[0] or "." in cols[0]:
            continue
        if not cols[0].isdigit():
            raise ConlluParseError(f"bad token id {cols[0]!r}", lineno)
        if int(cols[0]) != len(rows) + 1:
            raise ConlluParseError(f"token id {cols[0]} out of sequence", lineno)
        if first_line is None:
            first_line = lineno
        rows.append((lineno, cols))
    if rows:
        yield _finish_block(rows, comments, first_line)


def parse_conllu(text):
    """Parse CoNLL-U from a string or text stream into a list of sentences."""
    if isinstance(text, str):
        text = io.StringIO(text)
    return list(iter_conllu(text))


def read_conllu(path):
    with open(path, encoding="utf-8") as f:
        return parse_conllu(f)


def write_conllu(sentences, stream):
    for sent in sentences:
        for comment in sent.comments:
            stream.write(comment + "\n")
        for i in range(len(sent)):
            if sent.rows is not None:
                cols = list(sent.rows[i])
            else:
                cols = [str(i + 1), "_", "_", "_", "_", "_", "_", "_", "_", "_"]
            cols[0] = str(i + 1)
            cols[1] = sent.tokens[i]
            cols[3] = sent.upos[i]
            cols[6] = str(sent.heads[i])
            cols[7] = sent.labels[i]
            stream.write("\t".join(cols) + "\n")
        stream.write("\n")


def format_conllu(sentences):
    buf = io.StringIO()
    write_conllu(sentences, buf)
    return buf.getvalue()


# ------------------------------------------------------------------ statistics

@dataclass
class TreebankStats:
    tree_count: int
    avg_sent_length: float
    avg_arc_length: float
    nonproj_pct: float


STATS_COLUMNS = ("treebank", "trees", "avg_sent_length", "avg_arc_length", "nonproj_arc_pct")


def treebank_stats(sentences, include_root_arcs=False):
    """Tree count, mean length, mean arc length and percent non-projective arcs.

    By default root arcs are left out of both arc statistics: ROOT has no
    position in the sentence.  With ``include_root_arcs`` ROOT is placed
    at position 0 for the arc-length mean only.
    """
    if not sentences:
        raise ValueError("treebank_stats needs at least one sentence")
    tokens = 0
    arc_total = 0
    arc_count = 0
    nonproj = 0
    nonroot = 0
    for sent in sentences:
        heads = np.asarray(sent.heads, dtype=np.int64)
        n = len(heads)
        tokens += n
        positions = np.arange(1, n + 1)
        is_root = heads == 0
        if include_root_arcs:
            arc_total += int(np.abs(positions - heads).sum())
            arc_count += n
        else:
            arc_total += int(np.abs(positions - heads)[~is_root].sum())
            arc_count += int((~is_root).sum())
        nonroot += int((~is_root).sum())
        nonproj += kernels.count_nonprojective(heads)
    return TreebankStats(
        tree_count=len(sentences),
        avg_sent_length=tokens / len(sentences),
        avg_arc_length=arc_total / arc_count if arc_count else 0.0,
        nonproj_pct=100.0 * nonproj / nonroot if nonroot else 0.0,
    )


def write_stats_csv(rows, stream):
    """Write ``(name, TreebankStats)`` rows, one CSV line each."""
    stream.write("# arc statistics exclude root arcs\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(STATS_COLUMNS)
    for name, st in rows:
        writer.writerow([name, st.tree_count, f"{st.avg_sent_length:.4f}",
                         f"{st.avg_arc_length:.4f}", f"{st.nonproj_pct:.4f}"])


# ------------------------------------------------------------------ vocabulary

class Vocab:
    """Word, UPOS and label inventories.

    Words and UPOS tags reserve ids 0-2 for PAD, UNK and ROOT.  Labels have
    no reserved entries.
    """

    def __init__(self, words, upos, labels, word_freq=None):
        self.words = list(words)
        self.upos = list(upos)
        self.labels = list(labels)
        self.word_freq = dict(word_freq or {})
        self.word_index = {w: i for i, w in enumerate(self.words)}
        self.upos_index = {u: i for i, u in enumerate(self.upos)}
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}

    def word_id(self, word):
        return self.word_index.get(word, UNK_ID)

    def upos_id(self, tag):
        return self.upos_index.get(tag, UNK_ID)

    def label_id(self, label):
        return self.label_index.get(label, 0)

    def __eq__(self, other):
        return (isinstance(other, Vocab) and self.words == other.words
                and self.upos == other.upos and self.labels == other.labels
                and self.word_freq == other.word_freq)

    def to_dict(self):
        return {"words": self.words, "upos": self.upos, "labels": self.labels,
                "word_freq": [[w, self.word_freq[w]] for w in sorted(self.word_freq)]}

    @classmethod
    def from_dict(cls, d):
        return cls(d["words"], d["upos"], d["labels"], {w: c for w, c in d["word_freq"]})


def build_vocab(sentences, min_freq=1):
    if min_freq < 1:
        raise ValueError("min_freq must be >= 1")
    freq = Counter(tok for s in sentences for tok in s.tokens)
    words = list(RESERVED) + sorted(w for w, c in freq.items() if c >= min_freq)
    upos = list(RESERVED) + sorted({t for s in sentences for t in s.upos})
    labels = sorted({lab for s in sentences for lab in s.labels})
    return Vocab(words, upos, labels, freq)


def load_embeddings(stream, vocab, dim, rng):
    """Build a ``len(vocab.words) x dim`` matrix from a word-vector text file.

    Rows for words found in the file are copied; the rest are drawn
    uniformly from +-1/sqrt(dim).  Returns ``(matrix, coverage)`` where
    coverage is the fraction of non-reserved vocabulary words found.
    """
    bound = 1.0 / math.sqrt(dim)
    matrix = rng.uniform(-bound, bound, size=(len(vocab.words), dim))
    found = set()
    for lineno, line in enumerate(stream, start=1):
        parts = line.rstrip().split()
        if not parts:
            continue
        if lineno == 1 and len(parts) == 2 and all(p.isdigit() for p in parts):
            continue
        if len(parts) != dim + 1:
            raise EmbeddingFormatError(
                f"expected word plus {dim} values, got {len(parts) - 1} values", lineno)
        idx = vocab.word_index.get(parts[0])
        if idx is None or idx < len(RESERVED):
            continue
        try:
            matrix[idx] = [float(x) for x in parts[1:]]
        except ValueError:
            raise EmbeddingFormatError("non-numeric vector component", lineno) from None
        found.add(idx)
    real = len(vocab.words) - len(RESERVED)
    coverage = len(found) / real if real else 0.0
    return matrix, coverage
