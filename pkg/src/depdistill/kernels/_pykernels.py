"""Pure-Python/numpy versions of the decoding and statistics kernels.

Same algorithms and tie-breaking as the compiled module; used when the
extension is not built or ``DEPDISTILL_PURE_PYTHON=1`` is set.
"""
import numpy as np

NEG_INF = -np.inf


def _find_cycle(heads):
    n = len(heads)
    color = [0] * n
    color[0] = 2
    for start in range(1, n):
        path = []
        v = start
        while color[v] == 0:
            color[v] = 1
            path.append(v)
            v = heads[v]
        if color[v] == 1:
            cycle = [v]
            u = heads[v]
            while u != v:
                cycle.append(u)
                u = heads[u]
            return sorted(cycle)
        for p in path:
            color[p] = 2
    return None


def _mst(scores):
    """Maximum arborescence on a square ``scores[dep, head]`` matrix rooted at 0."""
    n = scores.shape[0]
    heads = np.empty(n, dtype=np.int64)
    heads[0] = -1
    heads[1:] = np.argmax(scores[1:], axis=1)
    cycle = _find_cycle(heads.tolist())
    if cycle is None:
        return heads

    in_cycle = np.zeros(n, dtype=bool)
    in_cycle[cycle] = True
    rest = np.flatnonzero(~in_cycle)
    cyc = np.asarray(cycle)
    m = len(rest)
    c = m

    reduced = np.full((m + 1, m + 1), NEG_INF)
    reduced[:m, :m] = scores[np.ix_(rest, rest)]
    # cycle acting as head of an outside dependent
    out_block = scores[np.ix_(rest, cyc)]
    best_head = np.argmax(out_block, axis=1)
    reduced[:m, c] = out_block[np.arange(m), best_head]
    # outside head entering the cycle, paying for the broken cycle arc
    kept = scores[cyc, heads[cyc]]
    in_block = scores[np.ix_(cyc, rest)] - kept[:, None]
    best_dep = np.argmax(in_block, axis=0)
    reduced[c, :m] = in_block[best_dep, np.arange(m)]
    reduced[0, :] = NEG_INF
    np.fill_diagonal(reduced, NEG_INF)

    sub = _mst(reduced)
    result = heads.copy()
    for i in range(1, m):
        h = sub[i]
        result[rest[i]] = cyc[best_head[i]] if h == c else rest[h]
    h = sub[c]
    result[cyc[best_dep[h]]] = rest[h]
    return result


def _square(arc_scores):
    n = arc_scores.shape[0]
    scores = np.full((n + 1, n + 1), NEG_INF)
    scores[1:, :] = arc_scores
    np.fill_diagonal(scores, NEG_INF)
    return scores


def _tree_score(scores, heads):
    total = 0.0
    for d in range(1, len(heads)):
        total += scores[d, heads[d]]
    return total


def chu_liu_edmonds(arc_scores, single_root=True):
    """Heads (1-based, 0 = ROOT) of the best tree for an ``n x (n+1)`` matrix."""
    arc_scores = np.asarray(arc_scores, dtype=np.float64)
    n = arc_scores.shape[0]
    scores = _square(arc_scores)
    heads = _mst(scores)
    if not single_root or n == 1 or int(np.count_nonzero(heads[1:] == 0)) == 1:
        return heads[1:]
    best, best_score = None, NEG_INF
    for r in range(1, n + 1):
        if scores[r, 0] == NEG_INF:
            continue
        constrained = scores.copy()
        constrained[1:, 0] = NEG_INF
        constrained[r, 0] = scores[r, 0]
        cand = _mst(constrained)
        # score under the constraint: a forced fallback onto a removed root arc counts as -inf
        s = _tree_score(constrained, cand)
        if best is None or s > best_score:
            best, best_score = cand, s
    return (heads if best is None else best)[1:]


def count_nonprojective(heads):
    """Number of non-root arcs crossed by at least one other non-root arc."""
    heads = np.asarray(heads, dtype=np.int64)
    deps = np.arange(1, len(heads) + 1)
    keep = heads != 0
    lo = np.minimum(heads, deps)[keep]
    hi = np.maximum(heads, deps)[keep]
    cross = (lo[:, None] < lo[None, :]) & (lo[None, :] < hi[:, None]) & (hi[:, None] < hi[None, :])
    cross |= cross.T
    return int(np.count_nonzero(cross.any(axis=1)))
