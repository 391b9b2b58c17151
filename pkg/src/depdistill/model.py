"""Biaffine graph-based parser: configuration, parameters, forward pass, sizing, files."""
import json
import math
import struct
from dataclasses import asdict, dataclass, fields, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .conllu import PAD_ID, ROOT_ID, Vocab
from .errors import ContractViolation, ModelLoadError, SizingError


@dataclass(frozen=True)
class ModelConfig:
    """Layer sizes and dropout rates.

    ``lstm_dim`` is the width of the concatenated forward/backward output,
    so each direction has ``lstm_dim // 2`` hidden units.  Defaults follow
    the full-size baseline; the vocabulary sizes are placeholders that the
    training code overwrites from the data.
    """

    word_dim: int = 100
    upos_dim: int = 100
    lstm_dim: int = 400
    lstm_layers: int = 3
    arc_mlp_dim: int = 500
    label_mlp_dim: int = 100
    mlp_layers: int = 1
    emb_dropout: float = 0.33
    dropout: float = 0.33
    label_count: int = 37
    word_vocab_size: int = 20000
    upos_vocab_size: int = 20

    def __post_init__(self):
        for name in ("word_dim", "upos_dim", "lstm_dim", "lstm_layers", "arc_mlp_dim",
                     "label_mlp_dim", "mlp_layers", "label_count", "word_vocab_size",
                     "upos_vocab_size"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.lstm_dim % 2:
            raise ValueError("lstm_dim must be even (split across two directions)")
        for name in ("emb_dropout", "dropout"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise ValueError(f"{name} must be in [0, 1)")

    def with_vocab(self, vocab):
        return replace(self, word_vocab_size=len(vocab.words),
                       upos_vocab_size=len(vocab.upos), label_count=max(1, len(vocab.labels)))

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


MLP_NAMES = ("arc_dep", "arc_head", "lab_dep", "lab_head")


def param_shapes(config):
    """Ordered ``name -> shape`` for every trainable tensor."""
    c = config
    shapes = {
        "word_emb": (c.word_vocab_size, c.word_dim),
        "upos_emb": (c.upos_vocab_size, c.upos_dim),
    }
    hidden = c.lstm_dim // 2
    n_in = c.word_dim + c.upos_dim
    for layer in range(c.lstm_layers):
        for direction in ("fw", "bw"):
            shapes[f"lstm.{layer}.{direction}.w"] = (n_in + hidden, 4 * hidden)
            shapes[f"lstm.{layer}.{direction}.b"] = (4 * hidden,)
        n_in = c.lstm_dim
    for name in MLP_NAMES:
        width = c.arc_mlp_dim if name.startswith("arc") else c.label_mlp_dim
        n_in = c.lstm_dim
        for k in range(c.mlp_layers):
            shapes[f"mlp.{name}.{k}.w"] = (n_in, width)
            shapes[f"mlp.{name}.{k}.b"] = (width,)
            n_in = width
    shapes["arc.U"] = (c.arc_mlp_dim, c.arc_mlp_dim)
    shapes["arc.u"] = (c.arc_mlp_dim,)
    shapes["lab.U"] = (c.label_mlp_dim, c.label_count, c.label_mlp_dim)
    shapes["lab.W"] = (2 * c.label_mlp_dim, c.label_count)
    shapes["lab.b"] = (c.label_count,)
    return shapes


def count_params(config):
    """Closed-form trainable parameter count."""
    c = config
    hidden = c.lstm_dim // 2
    total = c.word_vocab_size * c.word_dim + c.upos_vocab_size * c.upos_dim
    n_in = c.word_dim + c.upos_dim
    for _ in range(c.lstm_layers):
        total += 2 * ((n_in + hidden) * 4 * hidden + 4 * hidden)
        n_in = c.lstm_dim
    for width in (c.arc_mlp_dim, c.arc_mlp_dim, c.label_mlp_dim, c.label_mlp_dim):
        total += c.lstm_dim * width + width
        total += (c.mlp_layers - 1) * (width * width + width)
    total += c.arc_mlp_dim * c.arc_mlp_dim + c.arc_mlp_dim
    total += c.label_count * c.label_mlp_dim * c.label_mlp_dim
    total += 2 * c.label_mlp_dim * c.label_count + c.label_count
    return total


def init_params(config, rng, dtype=np.float64):
    """Uniform +-1/sqrt(fan_in) weights, zero biases."""
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith(".b") or name == "arc.u":
            value = np.zeros(shape)
        elif name in ("word_emb", "upos_emb"):
            bound = 1.0 / math.sqrt(shape[1])
            value = rng.uniform(-bound, bound, size=shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            value = rng.uniform(-bound, bound, size=shape)
        params[name] = value.astype(dtype)
    if "arc.u" in params:
        bound = 1.0 / math.sqrt(config.arc_mlp_dim)
        params["arc.u"] = rng.uniform(-bound, bound, size=params["arc.u"].shape).astype(dtype)
    return params


@dataclass
class Batch:
    """Padded id tensors for a list of sentences.

    Position 0 of every row is ROOT.  ``mask`` (B, T) marks ROOT and real
    tokens; ``token_mask`` (B, T-1) marks real dependents.
    """

    sentences: list
    word_ids: np.ndarray
    upos_ids: np.ndarray
    mask: np.ndarray
    token_mask: np.ndarray
    heads: np.ndarray
    labels: np.ndarray

    @property
    def lengths(self):
        return self.token_mask.sum(axis=1)

    @property
    def n_tokens(self):
        return int(self.token_mask.sum())


def make_batch(sentences, vocab, pad_to=None):
    n = max(len(s) for s in sentences)
    if pad_to is not None:
        n = max(n, pad_to)
    b = len(sentences)
    word_ids = np.full((b, n + 1), PAD_ID, dtype=np.int64)
    upos_ids = np.full((b, n + 1), PAD_ID, dtype=np.int64)
    word_ids[:, 0] = ROOT_ID
    upos_ids[:, 0] = ROOT_ID
    mask = np.zeros((b, n + 1), dtype=bool)
    heads = np.zeros((b, n), dtype=np.int64)
    labels = np.zeros((b, n), dtype=np.int64)
    for r, s in enumerate(sentences):
        k = len(s)
        word_ids[r, 1:k + 1] = [vocab.word_id(w) for w in s.tokens]
        upos_ids[r, 1:k + 1] = [vocab.upos_id(u) for u in s.upos]
        mask[r, :k + 1] = True
        heads[r, :k] = s.heads
        labels[r, :k] = [vocab.label_id(lab) for lab in s.labels]
    return Batch(list(sentences), word_ids, upos_ids, mask, mask[:, 1:].copy(), heads, labels)


@dataclass
class ScoreBundle:
    """Network outputs for a batch.

    ``arc_scores`` is (B, n, n+1): dependent rows, head-candidate columns
    with ROOT in column 0.  ``label_scores`` is (B, n, L) evaluated at the
    head each token was conditioned on.
    """

    context: Tensor
    arc_scores: Tensor
    label_scores: Tensor = None


class BiaffineParser:
    """Parameters plus forward pass.  ``params`` maps names to :class:`Tensor`."""

    def __init__(self, config, params, vocab=None, tag=None):
        self.config = config
        self.vocab = vocab
        self.tag = tag  # experiment name such as "Full", "B-20" or "D-20"
        shapes = param_shapes(config)
        missing = set(shapes) - set(params)
        if missing:
            raise ContractViolation(f"missing parameters: {sorted(missing)}")
        self.params = {}
        for name, shape in shapes.items():
            value = params[name]
            data = value.data if isinstance(value, Tensor) else np.asarray(value)
            if data.shape != shape:
                raise ContractViolation(f"{name} has shape {data.shape}, expected {shape}")
            self.params[name] = Tensor(data, requires_grad=True, name=name)

    @classmethod
    def create(cls, config, vocab, rng, dtype=np.float64):
        config = config.with_vocab(vocab) if vocab is not None else config
        return cls(config, init_params(config, rng, dtype), vocab)

    def arrays(self):
        return {k: t.data for k, t in self.params.items()}

    def copy(self):
        return BiaffineParser(self.config, {k: t.data.copy() for k, t in self.params.items()},
                              self.vocab, self.tag)

    def astype(self, dtype):
        return BiaffineParser(self.config, {k: t.data.astype(dtype) for k, t in self.params.items()},
                              self.vocab, self.tag)

    def set_trainable(self, flag):
        for t in self.params.values():
            t.requires_grad = flag

    @property
    def dtype(self):
        return self.params["word_emb"].data.dtype

    def n_params(self):
        return int(np.sum([t.size for t in self.params.values()]))

    # ------------------------------------------------------------ forward

    def encode(self, batch, train=False, rng=None):
        """Embeddings -> stacked BiLSTM; returns (B, T, lstm_dim) context vectors."""
        p, c = self.params, self.config
        if train and rng is None:
            raise ValueError("train mode needs an rng for dropout")
        x = ad.concat([ad.embed(p["word_emb"], batch.word_ids),
                       ad.embed(p["upos_emb"], batch.upos_ids)], axis=-1)
        x = ad.dropout(x, c.emb_dropout, rng, train)
        for layer in range(c.lstm_layers):
            fw = ad.lstm_sequence(x, batch.mask, p[f"lstm.{layer}.fw.w"], p[f"lstm.{layer}.fw.b"])
            bw = ad.lstm_sequence(x, batch.mask, p[f"lstm.{layer}.bw.w"], p[f"lstm.{layer}.bw.b"],
                                  reverse=True)
            x = ad.concat([fw, bw], axis=-1)
            x = ad.dropout(x, c.dropout, rng, train)
        return x

    def _mlp(self, name, x, train, rng, mask=None):
        if mask is not None:
            # run on real positions only; padding comes back as zeros
            inner = self._mlp(name, ad.getitem(x, mask), train, rng)
            return ad.scatter(inner, mask, tuple(mask.shape) + (inner.shape[-1],))
        for k in range(self.config.mlp_layers):
            x = ad.relu(x @ self.params[f"mlp.{name}.{k}.w"] + self.params[f"mlp.{name}.{k}.b"])
            x = ad.dropout(x, self.config.dropout, rng, train)
        return x

    def score_arcs(self, ctx, train=False, rng=None, mask=None):
        """Raw biaffine arc scores (B, n, n+1), unmasked.

        With the batch ``mask`` the MLPs skip padded positions; scores at
        admissible arcs are unchanged.
        """
        dep = self._mlp("arc_dep", ctx, train, rng, mask)[:, 1:]
        head = self._mlp("arc_head", ctx, train, rng, mask)
        return biaffine_arc(dep, head, self.params["arc.U"], self.params["arc.u"])

    def label_features(self, ctx, train=False, rng=None, mask=None):
        return (self._mlp("lab_dep", ctx, train, rng, mask)[:, 1:],
                self._mlp("lab_head", ctx, train, rng, mask))

    def score_labels(self, ctx, heads, train=False, rng=None, features=None, mask=None):
        """Label scores (B, n, L) for each token paired with ``heads``."""
        heads = np.asarray(heads)
        if heads.size and (heads.min() < 0 or heads.max() >= ctx.shape[1]):
            raise ContractViolation(f"head index out of range [0, {ctx.shape[1] - 1}]")
        dep, head = features if features is not None else self.label_features(ctx, train, rng, mask)
        rows = np.arange(heads.shape[0])[:, None]
        chosen = head[rows, heads]
        return biaffine_label(dep, chosen, self.params["lab.U"], self.params["lab.W"],
                              self.params["lab.b"])

    def score_labels_all(self, ctx):
        """Label scores for every (dependent, head) pair: (B, n, n+1, L)."""
        dep, head = self.label_features(ctx)
        n, t = dep.shape[1], head.shape[1]
        out = np.empty(dep.shape[:2] + (t, self.config.label_count), dtype=dep.data.dtype)
        for j in range(t):
            heads = np.full((dep.shape[0], n), j)
            out[:, :, j] = self.score_labels(ctx, heads, features=(dep, head)).data
        return out

    def forward(self, batch, heads=None, train=False, rng=None):
        """Context, arc scores and label scores conditioned on ``heads`` (gold by default)."""
        ctx = self.encode(batch, train, rng)
        arcs = self.score_arcs(ctx, train, rng, batch.mask)
        labels = self.score_labels(ctx, batch.heads if heads is None else heads, train, rng,
                                   mask=batch.mask)
        return ScoreBundle(ctx, arcs, labels)


def biaffine_arc(dep, head, U, u):
    """``s[b, i, j] = dep_i . U . head_j + u . head_j``."""
    left = dep @ U
    bilinear = left @ ad.swapaxes(head, -1, -2)
    bias = ad.reshape(head @ ad.reshape(u, (-1, 1)), (head.shape[0], 1, head.shape[1]))
    return bilinear + bias


def biaffine_label(dep, head, U, W, b):
    """Per-label bilinear form plus linear terms on ``[dep; head]`` plus bias."""
    d = dep.shape[-1]
    labels = U.shape[1]
    proj = ad.reshape(dep @ ad.reshape(U, (d, labels * d)), dep.shape[:-1] + (labels, d))
    head4 = ad.reshape(head, head.shape[:-1] + (1, d))
    bilinear = ad.sum(proj * head4, axis=-1)
    linear = ad.concat([dep, head], axis=-1) @ W
    return bilinear + linear + b


def arc_validity(batch):
    """(B, n, n+1) mask of admissible head candidates: real heads, no self loops."""
    valid = batch.token_mask[:, :, None] & batch.mask[:, None, :]
    n = batch.token_mask.shape[1]
    valid[:, np.arange(n), np.arange(1, n + 1)] = False
    return valid


# ------------------------------------------------------------------ sizing

SCALED_DIMS = ("word_dim", "upos_dim", "lstm_dim", "arc_mlp_dim", "label_mlp_dim")


def scale_config(config, alpha):
    dims = {}
    for name in SCALED_DIMS:
        value = getattr(config, name) * alpha
        if name == "lstm_dim":
            dims[name] = max(2, 2 * int(round(value / 2)))
        else:
            dims[name] = max(2, int(round(value)))
    return replace(config, **dims)


def size_student(full, target_fraction, tolerance=0.01):
    """Shrink every layer width by a common factor to hit a parameter budget.

    The factor is found by bisection on the achieved fraction
    ``count_params(student) / count_params(full)``; the closest of the two
    final brackets is returned.  Raises :class:`SizingError` if rounding
    keeps the result more than ``tolerance`` away from the target.
    """
    if not 0.0 < target_fraction <= 1.0:
        raise ValueError("target_fraction must be in (0, 1]")
    if target_fraction == 1.0:
        return full
    total = count_params(full)

    def frac(alpha):
        return count_params(scale_config(full, alpha)) / total

    lo, hi = 0.0, 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if frac(mid) < target_fraction:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda a: abs(frac(a) - target_fraction))
    achieved = frac(best)
    if abs(achieved - target_fraction) > tolerance:
        raise SizingError(
            f"cannot reach {target_fraction:.3f} of the parameters; closest is {achieved:.4f}",
            closest_fraction=achieved)
    return scale_config(full, best)


# ------------------------------------------------------------------ model files

MAGIC = b"DEPDSTL\x00"
FORMAT_VERSION = 1


def save_model(path_or_stream, model):
    """Write magic, version, a JSON header (config, vocab, tensor index) and raw tensors.

    Layout (all integers little-endian)::

        8 bytes   magic  b"DEPDSTL\\0"
        uint32    format version
        uint64    header length H
        H bytes   UTF-8 JSON: {"config", "vocab", "tag", "tensors": [{"name", "dtype", "shape"}]}
        ...       tensor payloads in header order, C order, little-endian
    """
    names = list(param_shapes(model.config))
    arrays = [np.ascontiguousarray(model.params[n].data) for n in names]
    header = {
        "config": model.config.to_dict(),
        "vocab": model.vocab.to_dict() if model.vocab is not None else None,
        "tag": model.tag,
        "tensors": [{"name": n, "dtype": a.dtype.newbyteorder("<").str, "shape": list(a.shape)}
                    for n, a in zip(names, arrays)],
    }
    blob = json.dumps(header, sort_keys=True, ensure_ascii=False).encode("utf-8")
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<Q", len(blob)), blob]
    parts.extend(a.astype(a.dtype.newbyteorder("<"), copy=False).tobytes() for a in arrays)
    data = b"".join(parts)
    if hasattr(path_or_stream, "write"):
        path_or_stream.write(data)
    else:
        with open(path_or_stream, "wb") as f:
            f.write(data)


def load_model(path_or_stream):
    if hasattr(path_or_stream, "read"):
        data = path_or_stream.read()
    else:
        with open(path_or_stream, "rb") as f:
            data = f.read()
    if data[:8] != MAGIC:
        raise ModelLoadError("not a model file (bad magic)")
    if len(data) < 20:
        raise ModelLoadError("truncated model file")
    (version,) = struct.unpack("<I", data[8:12])
    if version != FORMAT_VERSION:
        raise ModelLoadError(f"unsupported model format version {version}")
    (hlen,) = struct.unpack("<Q", data[12:20])
    if len(data) < 20 + hlen:
        raise ModelLoadError("truncated model header")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise ModelLoadError(f"corrupt model header: {e}") from None
    config = ModelConfig.from_dict(header["config"])
    vocab = Vocab.from_dict(header["vocab"]) if header["vocab"] is not None else None
    offset = 20 + hlen
    params = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        shape = tuple(entry["shape"])
        nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
        if offset + nbytes > len(data):
            raise ModelLoadError(f"truncated tensor {entry['name']!r}")
        params[entry["name"]] = np.frombuffer(data, dtype=dtype, count=int(np.prod(shape)),
                                              offset=offset).reshape(shape).astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(data):
        raise ModelLoadError("trailing bytes after last tensor")
    return BiaffineParser(config, params, vocab, header.get("tag"))
