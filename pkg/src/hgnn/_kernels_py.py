"""Pure-numpy implementations of the message-passing hot kernels.

Semantics are kept bit-identical to the compiled core in ``_kernels.pyx``:
all scatter additions run in index order (``np.add.at`` is sequential and
unbuffered), and max reductions keep the first maximal contributor.
"""

import numpy as np


def edge_scatter_add(out, src, dst, w, x):
    """out[dst[e]] += w[e] * x[src[e]] for every edge e."""
    if len(src) == 0:
        return
    np.add.at(out, dst, w[:, None] * x[src])


def scatter_add_rows(out, idx, rows):
    """out[idx[k]] += rows[k]; entries with idx < 0 are skipped."""
    if len(idx) == 0:
        return
    keep = idx >= 0
    if keep.all():
        np.add.at(out, idx, rows)
    else:
        np.add.at(out, idx[keep], rows[keep])


def edge_max(src, dst, x, n_out):
    """Per-row elementwise max of x[src] grouped by dst.

    Returns (out, arg) where arg[i, j] is the x-row that supplied the
    maximum (first edge in input order wins ties) and -1 for rows with no
    incoming edge, which are left at 0.
    """
    d = x.shape[1]
    out = np.zeros((n_out, d), dtype=np.float64)
    arg = np.full((n_out, d), -1, dtype=np.int64)
    if len(src) == 0:
        return out, arg
    order = np.argsort(dst, kind="stable")
    ds = dst[order]
    vals = x[src[order]]
    starts = np.flatnonzero(np.r_[True, ds[1:] != ds[:-1]])
    seg_rows = ds[starts]
    mx = np.maximum.reduceat(vals, starts, axis=0)
    reps = np.diff(np.r_[starts, len(ds)])
    # first position (in sorted == input order within a segment) hitting the max
    pos = np.arange(len(ds))
    cand = np.where(vals == np.repeat(mx, reps, axis=0), pos[:, None], len(ds))
    first = np.minimum.reduceat(cand, starts, axis=0)
    out[seg_rows] = mx
    arg[seg_rows] = src[order][first]
    return out, arg


def edge_max_backward(arg, grad_out, n_in):
    """Route grad_out back to the argmax rows recorded by edge_max."""
    d = grad_out.shape[1]
    gx = np.zeros((n_in, d), dtype=np.float64)
    keep = arg >= 0
    if keep.any():
        rows = arg[keep]
        cols = np.broadcast_to(np.arange(d), arg.shape)[keep]
        np.add.at(gx, (rows, cols), grad_out[keep])
    return gx
