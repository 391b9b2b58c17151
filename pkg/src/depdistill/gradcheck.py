"""Central finite-difference checks for reverse-mode gradients."""
import numpy as np

from . import autodiff as ad


def relative_error(analytic, numeric, floor=1e-6):
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``, maximised."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom)) if analytic.size else 0.0


def numeric_grad(fn, tensor, eps=1e-5, indices=None):
    """Central differences of scalar ``fn()`` w.r.t. entries of ``tensor.data`` (in place)."""
    flat = tensor.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = np.zeros(flat.size)
    for k in indices:
        orig = flat[k]
        flat[k] = orig + eps
        up = float(fn().data)
        flat[k] = orig - eps
        down = float(fn().data)
        flat[k] = orig
        out[k] = (up - down) / (2 * eps)
    return out.reshape(tensor.shape)


def check(fn, tensors, eps=1e-5, max_entries=None, rng=None, floor=1e-6):
    """Max relative error between backward and finite differences over ``tensors``.

    ``fn`` rebuilds the graph from the current tensor values and returns a
    scalar Tensor.  With ``max_entries`` only that many random entries per
    tensor are probed (the error is measured on those entries only).
    """
    loss = fn()
    grads = ad.backward(loss, tensors)
    worst = 0.0
    for t in tensors:
        if max_entries is not None and t.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(t.size, size=max_entries, replace=False)
        else:
            idx = np.arange(t.size)
        num = numeric_grad(fn, t, eps, idx).reshape(-1)[idx]
        ana = np.asarray(grads[t]).reshape(-1)[idx]
        worst = max(worst, relative_error(ana, num, floor))
    return worst
