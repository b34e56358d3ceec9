"""Brute-force reference implementations used as test oracles."""
import math


def naive_pool(S, mask, WQ, WK, WV, heads, scale="head", average="all"):
    """Masked multi-head attention pooling with explicit scalar loops.

    S is a list of T frames, each a list of d floats; W* are d x d nested
    lists applied as W @ s. Returns the pooled d-vector as a list.
    """
    T, d = len(S), len(S[0])
    dh = d // heads

    def project(W, s):
        return [sum(W[i][j] * s[j] for j in range(d)) for i in range(d)]

    Q = [project(WQ, s) for s in S]
    K = [project(WK, s) for s in S]
    V = [project(WV, s) for s in S]
    denom = math.sqrt(dh) if scale == "head" else math.sqrt(d)
    rows = []
    for t in range(T):
        out = [0.0] * d
        for h in range(heads):
            lo = h * dh
            scores = []
            for u in range(T):
                if mask[u]:
                    scores.append(sum(Q[t][lo + k] * K[u][lo + k] for k in range(dh)) / denom)
                else:
                    scores.append(None)
            top = max(x for x in scores if x is not None)
            ex = [0.0 if x is None else math.exp(x - top) for x in scores]
            z = sum(ex)
            for u in range(T):
                w = ex[u] / z
                for k in range(dh):
                    out[lo + k] += w * V[u][lo + k]
        rows.append(out)
    if average == "all":
        keep = list(range(T))
        n = T
    else:
        keep = [t for t in range(T) if mask[t]]
        n = len(keep)
    return [sum(rows[t][i] for t in keep) / n for i in range(d)]


def naive_l2(a, b):
    return math.sqrt(sum((x - y) ** 2 for x, y in zip(a, b)))
