"""Reference implementations of the hot kernels in plain numpy.

Every function here has a compiled twin in `_fast.pyx`; the package selects
one backend at import time. Keep signatures and numerical contracts in sync.
"""

import numpy as np


def nn_dist(query: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Euclidean distance from each query row to its nearest ref row.

    query (N, K), ref (M, K) with M >= 1; returns (N,) float64.
    """
    q = np.asarray(query, dtype=np.float64)
    r = np.asarray(ref, dtype=np.float64)
    if q.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    if r.shape[0] == 0:
        raise ValueError("reference set is empty")
    # Chunk the query axis so the (N, M, K) difference tensor stays bounded;
    # per-row arithmetic is unchanged, so results match the unchunked form.
    block = max(1, int(2**22 // max(1, r.shape[0] * r.shape[1])))
    out = np.empty(q.shape[0], dtype=np.float64)
    for s in range(0, q.shape[0], block):
        chunk = q[s:s + block]
        diff = chunk[:, None, :] - r[None, :, :]
        d2 = np.einsum("nmk,nmk->nm", diff, diff)
        out[s:s + block] = np.sqrt(d2.min(axis=1))
    return out


def point_seg_dist(points: np.ndarray, seg_a: np.ndarray, seg_b: np.ndarray) -> np.ndarray:
    """Distance from each point to its nearest segment, exact clamped projection.

    points (N, K); seg_a, seg_b (M, K) are segment endpoints, M >= 1.
    Zero-length segments degrade to points. Returns (N,) float64.
    """
    p = np.asarray(points, dtype=np.float64)
    a = np.asarray(seg_a, dtype=np.float64)
    b = np.asarray(seg_b, dtype=np.float64)
    if p.shape[0] == 0:
        return np.zeros(0, dtype=np.float64)
    if a.shape[0] == 0 or a.shape != b.shape:
        raise ValueError("segment arrays must be non-empty and congruent")
    d = b - a
    l2 = np.einsum("mk,mk->m", d, d)
    t = np.einsum("nmk,mk->nm", p[:, None, :] - a[None, :, :], d)
    safe = np.where(l2 > 0.0, l2, 1.0)
    t = np.clip(np.where(l2 > 0.0, t / safe, 0.0), 0.0, 1.0)
    proj = a[None, :, :] + t[:, :, None] * d[None, :, :]
    diff = p[:, None, :] - proj
    dist2 = np.einsum("nmk,nmk->nm", diff, diff)
    return np.sqrt(dist2.min(axis=1))


def masked_softmax(scores: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Softmax over the last axis restricted to mask-true entries.

    `mask` broadcasts against `scores`. Masked entries get probability 0;
    rows with no admissible entry come back all-zero rather than NaN.
    """
    s = np.asarray(scores, dtype=np.float64)
    m = np.broadcast_to(np.asarray(mask, dtype=bool), s.shape)
    neg = np.where(m, s, -np.inf)
    mx = np.max(neg, axis=-1, keepdims=True)
    mx = np.where(np.isfinite(mx), mx, 0.0)
    e = np.where(m, np.exp(neg - mx), 0.0)
    denom = e.sum(axis=-1, keepdims=True)
    return np.where(denom > 0.0, e / np.where(denom > 0.0, denom, 1.0), 0.0)
