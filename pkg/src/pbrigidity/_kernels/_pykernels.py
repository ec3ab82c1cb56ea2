"""Pure numpy/scipy versions of the compiled kernels (same signatures, same output)."""
import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

_CHUNK = 1 << 20


def _winding(qx, qy, px, py):
    wn = np.zeros(px.shape, dtype=np.int32)
    for e in range(4):
        f = (e + 1) % 4
        x0, y0, x1, y1 = qx[:, e], qy[:, e], qx[:, f], qy[:, f]
        left = (x1 - x0) * (py - y0) - (px - x0) * (y1 - y0)
        up = (y0 <= py) & (y1 > py) & (left > 0)
        down = (y0 > py) & (y1 <= py) & (left < 0)
        wn += up.astype(np.int32) - down.astype(np.int32)
    return wn


def count_preimages(fq, gq, u0, du, nu, v0, dv, nv, offset=0.5):
    fq = np.ascontiguousarray(fq, dtype=float)
    gq = np.ascontiguousarray(gq, dtype=float)
    counts = np.zeros((nu, nv), dtype=np.int32)
    area = (fq[:, 0] - fq[:, 2]) * (gq[:, 1] - gq[:, 3]) - (fq[:, 1] - fq[:, 3]) * (gq[:, 0] - gq[:, 2])
    live = area != 0.0
    degenerate = int(np.count_nonzero(~live))
    fq, gq = fq[live], gq[live]
    if len(fq) == 0:
        return counts, degenerate
    a0 = np.maximum(np.ceil((fq.min(1) - u0) / du - offset), 0).astype(np.int64)
    a1 = np.minimum(np.floor((fq.max(1) - u0) / du - offset), nu - 1).astype(np.int64)
    b0 = np.maximum(np.ceil((gq.min(1) - v0) / dv - offset), 0).astype(np.int64)
    b1 = np.minimum(np.floor((gq.max(1) - v0) / dv - offset), nv - 1).astype(np.int64)
    na = np.maximum(a1 - a0 + 1, 0)
    nb = np.maximum(b1 - b0 + 1, 0)
    npairs = na * nb
    keep = npairs > 0
    fq, gq, a0, b0, nb, npairs = fq[keep], gq[keep], a0[keep], b0[keep], nb[keep], npairs[keep]
    ends = np.cumsum(npairs)
    start = 0
    while start < len(fq):
        # chunk over quads so the expanded (quad, sample) table stays bounded
        base = ends[start - 1] if start else 0
        stop = int(np.searchsorted(ends, base + _CHUNK, side="right"))
        stop = max(stop, start + 1)
        sel = slice(start, stop)
        reps = npairs[sel]
        owner = np.repeat(np.arange(start, stop), reps)
        local = np.arange(int(reps.sum())) - np.repeat(np.cumsum(reps) - reps, reps)
        a = a0[owner] + local // nb[owner]
        b = b0[owner] + local % nb[owner]
        px = u0 + (a + offset) * du
        py = v0 + (b + offset) * dv
        hit = _winding(fq[owner], gq[owner], px, py) != 0
        np.add.at(counts, (a[hit], b[hit]), 1)
        start = stop
    return counts, degenerate


def label_equal_keys(keys, periodic_x, periodic_y):
    keys = np.asarray(keys, dtype=np.int64)
    nx, ny = keys.shape
    idx = np.arange(nx * ny).reshape(nx, ny)
    rows, cols = [], []
    pairs = [
        (keys[:-1, :], keys[1:, :], idx[:-1, :], idx[1:, :]),
        (keys[:, :-1], keys[:, 1:], idx[:, :-1], idx[:, 1:]),
    ]
    if periodic_x:
        pairs.append((keys[-1:, :], keys[:1, :], idx[-1:, :], idx[:1, :]))
    if periodic_y:
        pairs.append((keys[:, -1:], keys[:, :1], idx[:, -1:], idx[:, :1]))
    for ka, kb, ia, ib in pairs:
        same = (ka == kb) & (ka >= 0)
        rows.append(ia[same])
        cols.append(ib[same])
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    graph = coo_matrix((np.ones(len(r), dtype=np.int8), (r, c)), shape=(nx * ny, nx * ny))
    _, raw = connected_components(graph, directed=False)
    raw = raw.reshape(nx, ny)
    live = keys >= 0
    labels = np.full((nx, ny), -1, dtype=np.int32)
    if not live.any():
        return labels, 0
    # renumber by first C-order occurrence to match the compiled kernel
    flat_raw = raw[live]
    flat_idx = idx[live]
    uniq, first = np.unique(flat_raw, return_index=True)
    order = np.argsort(flat_idx[first], kind="stable")
    remap = np.empty(uniq.max() + 1, dtype=np.int32)
    remap[uniq[order]] = np.arange(len(uniq), dtype=np.int32)
    labels[live] = remap[flat_raw]
    return labels, len(uniq)
