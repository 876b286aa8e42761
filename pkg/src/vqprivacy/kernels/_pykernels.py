"""Pure numpy versions of the hot kernels.

Results are bit-identical to the compiled versions: squared distances are
accumulated dimension by dimension starting from zero, and per-prototype sums
are accumulated in frame order.
"""
import numpy as np

# Relative slack for the expansion-based screen; candidates inside it are
# re-scored exactly.
_SCREEN_RTOL = 1e-9


def _exact_sqdist(h: np.ndarray, e: np.ndarray) -> np.ndarray:
    """Row-wise ||h - e||^2 with sequential accumulation over dimensions."""
    acc = np.zeros(h.shape[0])
    for k in range(h.shape[1]):
        diff = h[:, k] - e[:, k]
        acc += diff * diff
    return acc


def nearest_prototype(h: np.ndarray, protos: np.ndarray):
    """Index of the closest prototype per row (lowest index on ties) and its squared distance."""
    J = h.shape[0]
    h_norm = np.einsum("ij,ij->i", h, h)
    p_norm = np.einsum("ij,ij->i", protos, protos)
    approx = h_norm[:, None] - 2.0 * (h @ protos.T) + p_norm[None, :]
    best = approx.min(axis=1)
    slack = _SCREEN_RTOL * (h_norm + p_norm.max()) + 1e-300
    cand = approx <= (best + slack)[:, None]
    idx = np.argmax(cand, axis=1).astype(np.int64)
    ambiguous = np.flatnonzero(cand.sum(axis=1) > 1)
    if ambiguous.size:
        rows, cols = np.nonzero(cand[ambiguous])
        rows = ambiguous[rows]
        d = _exact_sqdist(h[rows], protos[cols])
        # rows come out grouped and cols ascending, so the first minimum per
        # row is the lowest prototype index
        for r in ambiguous:
            sel = rows == r
            idx[r] = cols[sel][np.argmin(d[sel])]
    dist = _exact_sqdist(h, protos[idx]) if J else np.zeros(0)
    return idx, dist


def accumulate_assignments(h: np.ndarray, idx: np.ndarray, V: int):
    """Per-prototype assignment counts and summed frames."""
    counts = np.zeros(V)
    sums = np.zeros((V, h.shape[1]))
    np.add.at(counts, idx, 1.0)
    np.add.at(sums, idx, h)
    return counts, sums
