"""Independent straight-line references used as test oracles.

Everything here is written with plain loops and numpy expressions, never with
the package's tape, graph kernels, or module code, so a disagreement points
at the production path.
"""

from __future__ import annotations

import math

import numpy as np


def naive_cosine_topk(dest: np.ndarray, src: np.ndarray, k: int) -> np.ndarray:
    """Per-row cosine top-k, descending similarity, ties by ascending index."""
    eps = 1e-12

    def unit(a):
        out = np.array(a, dtype=np.float64)
        for i in range(out.shape[0]):
            n = math.sqrt(float((out[i] * out[i]).sum()))
            out[i] = out[i] / max(n, eps)
        return out

    dn, sn = unit(dest), unit(src)
    rows = []
    for i in range(dn.shape[0]):
        sims = [float(np.dot(dn[i], sn[j])) for j in range(sn.shape[0])]
        order = sorted(range(sn.shape[0]), key=lambda j: (-sims[j], j))
        rows.append(order[:k])
    return np.asarray(rows, dtype=np.int64)


def gelu_ref(x: np.ndarray) -> np.ndarray:
    c = math.sqrt(2.0 / math.pi)
    return 0.5 * x * (1.0 + np.tanh(c * (x + 0.044715 * x**3)))


def rmsnorm_ref(z: np.ndarray, gain: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    out = np.empty_like(z)
    for i in range(z.shape[0]):
        norm = math.sqrt(float((z[i] * z[i]).sum()))
        out[i] = z[i] / max(norm, eps) * math.sqrt(z.shape[1]) * gain
    return out


def reference_group_kgcn(
    dest: np.ndarray,
    src: np.ndarray,
    weights: dict[str, np.ndarray],
    groups: int,
    k: int,
) -> np.ndarray:
    """Replay the module update step by step.

    weights holds fuse_w, fuse_b, norm_g, w1, b1, w2, b2 as plain arrays.
    The grouped graph is rebuilt here with the naive top-k; the aggregation,
    fuse, gained RMS normalization, and residual FFN are spelled out with
    loops where it matters.
    """
    n_dest, c = dest.shape
    width = c // groups
    kk = min(k, src.shape[0])
    parts = []
    for g in range(groups):
        lo, hi = g * width, (g + 1) * width
        d, s = dest[:, lo:hi], src[:, lo:hi]
        idx = naive_cosine_topk(d, s, kk)
        agg = np.empty_like(d)
        for i in range(n_dest):
            diffs = d[i][None, :] - s[idx[i]]
            agg[i] = diffs.max(axis=0)
        parts.append(agg)
    cat = np.concatenate([dest] + parts, axis=1)
    z = rmsnorm_ref(dest + (cat @ weights["fuse_w"] + weights["fuse_b"]), weights["norm_g"])
    hidden = gelu_ref(z @ weights["w1"] + weights["b1"])
    return dest + (hidden @ weights["w2"] + weights["b2"])


def module_weights(params) -> dict[str, np.ndarray]:
    """Extract plain arrays from a GroupKgcnParams."""
    return {
        "fuse_w": params.fuse.w.value.data.copy(),
        "fuse_b": params.fuse.b.value.data.copy(),
        "norm_g": params.norm_gain.value.data.copy(),
        "w1": params.ffn_w1.w.value.data.copy(),
        "b1": params.ffn_w1.b.value.data.copy(),
        "w2": params.ffn_w2.w.value.data.copy(),
        "b2": params.ffn_w2.b.value.data.copy(),
    }


def confusion_metrics_ref(scores: np.ndarray, targets: np.ndarray, threshold: float = 0.5):
    """Brute-force TP/FP/FN metric suite for the evaluate() oracle."""
    n, num_classes = scores.shape
    preds = (scores >= threshold).astype(int)

    def prf(p_mat):
        per_p, per_r = [], []
        tp_all = fp_all = fn_all = 0
        for c in range(num_classes):
            tp = fp = fn = 0
            for i in range(n):
                if p_mat[i, c] == 1 and targets[i, c] == 1:
                    tp += 1
                elif p_mat[i, c] == 1:
                    fp += 1
                elif targets[i, c] == 1:
                    fn += 1
            per_p.append(tp / (tp + fp) if tp + fp else 0.0)
            per_r.append(tp / (tp + fn) if tp + fn else 0.0)
            tp_all += tp
            fp_all += fp
            fn_all += fn
        cp = sum(per_p) / num_classes
        cr = sum(per_r) / num_classes
        op = tp_all / (tp_all + fp_all) if tp_all + fp_all else 0.0
        orr = tp_all / (tp_all + fn_all) if tp_all + fn_all else 0.0
        f1 = lambda p, r: 2 * p * r / (p + r) if p + r else 0.0
        return cp, cr, f1(cp, cr), op, orr, f1(op, orr)

    def ap_ref(col_scores, col_targets):
        order = sorted(range(n), key=lambda i: (-col_scores[i], i))
        hits = 0
        precisions = []
        for rank, i in enumerate(order, start=1):
            if col_targets[i] == 1:
                hits += 1
                precisions.append(hits / rank)
        return sum(precisions) / len(precisions)

    aps = [
        ap_ref(scores[:, c], targets[:, c])
        for c in range(num_classes)
        if targets[:, c].sum() > 0
    ]
    mean_ap = sum(aps) / len(aps) if aps else 0.0

    top3 = np.zeros_like(preds)
    take = min(3, num_classes)
    for i in range(n):
        order = sorted(range(num_classes), key=lambda c: (-scores[i, c], c))
        for c in order[:take]:
            top3[i, c] = 1

    cp, cr, cf1, op, orr, of1 = prf(preds)
    _, _, t3_cf1, _, _, t3_of1 = prf(top3)
    return {
        "map": mean_ap,
        "cp": cp,
        "cr": cr,
        "cf1": cf1,
        "op": op,
        "or": orr,
        "of1": of1,
        "top3_cf1": t3_cf1,
        "top3_of1": t3_of1,
    }
