"""Spatial difference operators over the selected subsample.

An operator is a sparse M x N linear map taking vectors indexed by the N
selected observations to M differenced equations. Every row sums to zero,
so anything constant within the row's neighborhood (location effects,
sub-location effects under membership graphs) is annihilated. Three kinds:

pairwise      one row per unordered selected neighbor pair {i, k}: +1, -1
fixed_effect  one row per selected anchor i: +1 at i, -1/N_d at each
              selected neighbor
kernel        like fixed_effect but neighbors weighted by a kernel in the
              distance between plug-in index values, normalised to sum one

Rows never mix locations; neighbors from a different location are skipped
and counted. Anchors that yield no row (no usable neighbor, or zero total
kernel weight) are counted in `dropped_anchors`.
"""

from __future__ import annotations

import csv as _csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import sparse

from .dataset import NeighborhoodGraph
from .exceptions import ValidationError

KERNELS = ("epanechnikov", "gaussian")


@dataclass
class DifferenceOperator:
    """Sparse difference map with bookkeeping for diagnostics.

    `anchor[r]` is the operator-column index of row r's anchor observation;
    for pairwise operators `partner[r]` is the column of the subtracted
    observation. `selected_indices[c]` maps column c back to the dataset
    row it represents.
    """

    kind: str
    rows: int
    cols: int
    matrix: sparse.csr_matrix
    anchor: np.ndarray
    partner: np.ndarray | None
    selected_indices: np.ndarray
    dropped_anchors: int = 0
    skipped_cross_location: int = 0

    @cached_property
    def entries(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Sparse triples (row, col, weight) in row-major order."""
        coo = self.matrix.tocoo()
        return coo.row.astype(np.int64), coo.col.astype(np.int64), coo.data

    @property
    def pair_index(self) -> list[tuple[int, int | None]]:
        if self.partner is None:
            return [(int(a), None) for a in self.anchor]
        return [(int(a), int(k)) for a, k in zip(self.anchor, self.partner)]

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Apply the operator to a vector or matrix over selected observations."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.cols:
            raise ValidationError(
                f"operator expects leading dimension {self.cols}, got {v.shape[0]}"
            )
        return self.matrix @ v

    def apply_transpose(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64)
        if u.shape[0] != self.rows:
            raise ValidationError(
                f"operator transpose expects leading dimension {self.rows}, got {u.shape[0]}"
            )
        return self.matrix.T @ u

    def row_weight_norms(self) -> np.ndarray:
        """Euclidean norm squared of each row's weights."""
        return np.asarray(self.matrix.multiply(self.matrix).sum(axis=1)).ravel()

    def dump_csv(self, path) -> None:
        """Debug dump as a triple-list CSV (row,col,weight)."""
        r, c, w = self.entries
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["row", "col", "weight"])
            for triple in zip(r.tolist(), c.tolist(), w.tolist()):
                writer.writerow([triple[0], triple[1], repr(triple[2])])


# ---------------------------------------------------------------------------
# construction helpers
# ---------------------------------------------------------------------------


@dataclass
class _SelectedView:
    """Selected observations of a graph: column order, group/neighbor info."""

    sel_idx: np.ndarray          # dataset index per operator column
    col_of: np.ndarray           # dataset index -> column (or -1)
    location: np.ndarray         # location code per column


def _selected_view(graph: NeighborhoodGraph, selected) -> _SelectedView:
    sel_idx = np.asarray(selected, dtype=np.int64)
    if sel_idx.ndim != 1:
        raise ValidationError("selected must be a 1-d index array")
    if len(sel_idx) and not (
        (np.diff(sel_idx) > 0).all() and 0 <= sel_idx[0] and sel_idx[-1] < graph.n_obs
    ):
        raise ValidationError(
            "selected must be strictly increasing observation indices within the graph"
        )
    col_of = np.full(graph.n_obs, -1, dtype=np.int64)
    col_of[sel_idx] = np.arange(len(sel_idx))
    return _SelectedView(sel_idx=sel_idx, col_of=col_of,
                         location=graph.location_codes[sel_idx])


def _membership_groups(graph: NeighborhoodGraph, view: _SelectedView):
    """Selected columns grouped by membership code, groups contiguous.

    Returns (order, sizes) where `order` lists operator columns sorted by
    group and `sizes` the per-group member counts (only groups with at
    least one selected member).
    """
    codes = graph.group_codes[view.sel_idx]
    order = np.argsort(codes, kind="stable").astype(np.int64)
    sorted_codes = codes[order]
    boundary = np.flatnonzero(np.r_[True, sorted_codes[1:] != sorted_codes[:-1]])
    sizes = np.diff(np.r_[boundary, len(order)]).astype(np.int64)
    return order, sizes


def _neighbor_lists(graph: NeighborhoodGraph, view: _SelectedView):
    """Flattened selected same-location neighbor lists per selected anchor.

    Returns (anchor_col_per_edge, neighbor_col_per_edge, counts, skipped)
    where counts[c] is the usable-neighbor count of column c and skipped
    the number of cross-location neighbor links discarded.
    """
    indptr, indices = graph.indptr, graph.indices
    sel = view.sel_idx
    starts, stops = indptr[sel], indptr[sel + 1]
    degs = (stops - starts).astype(np.int64)
    total = int(degs.sum())
    flat_nbr = np.empty(total, dtype=np.int64)
    offs = np.zeros(len(sel) + 1, dtype=np.int64)
    np.cumsum(degs, out=offs[1:])
    for t in range(len(sel)):
        flat_nbr[offs[t]:offs[t + 1]] = indices[starts[t]:stops[t]]
    anchor_col = np.repeat(np.arange(len(sel), dtype=np.int64), degs)

    nbr_col = view.col_of[flat_nbr]
    selected_mask = nbr_col >= 0
    same_loc = graph.location_codes[flat_nbr] == view.location[anchor_col]
    keep = selected_mask & same_loc
    skipped = int((selected_mask & ~same_loc).sum())
    anchor_col, nbr_col = anchor_col[keep], nbr_col[keep]
    counts = np.bincount(anchor_col, minlength=len(sel)).astype(np.int64)
    return anchor_col, nbr_col, counts, skipped


def _segmented_grid(order: np.ndarray, sizes: np.ndarray):
    """All (anchor, partner) position pairs inside contiguous groups.

    For groups laid out back to back in `order` with the given sizes,
    returns (anchor_cols, partner_cols, row_of_pair, rows_sizes) covering
    the full m x m grid per group including the diagonal.
    """
    sizes_sq = sizes * sizes
    total = int(sizes_sq.sum())
    group_of = np.repeat(np.arange(len(sizes), dtype=np.int64), sizes_sq)
    starts = np.r_[0, np.cumsum(sizes)[:-1]].astype(np.int64)
    sq_starts = np.r_[0, np.cumsum(sizes_sq)[:-1]].astype(np.int64)
    local = np.arange(total, dtype=np.int64) - sq_starts[group_of]
    m = sizes[group_of]
    row_local = local // m
    col_local = local - row_local * m
    anchor_pos = starts[group_of] + row_local
    partner_pos = starts[group_of] + col_local
    return order[anchor_pos], order[partner_pos], anchor_pos, m


def _finish(kind, rows, cols, data, indices, indptr, anchor, partner, view,
            skipped) -> DifferenceOperator:
    mat = sparse.csr_matrix((data, indices, indptr), shape=(rows, cols))
    if kind == "pairwise":
        # a selected observation is "dropped" when it appears in no pair
        touched = np.zeros(cols, dtype=bool)
        touched[anchor] = True
        if partner is not None:
            touched[partner] = True
        dropped = cols - int(touched.sum())
    else:
        dropped = cols - len(np.unique(anchor))
    return DifferenceOperator(
        kind=kind, rows=rows, cols=cols, matrix=mat,
        anchor=anchor, partner=partner,
        selected_indices=view.sel_idx,
        dropped_anchors=int(dropped),
        skipped_cross_location=skipped,
    )


# ---------------------------------------------------------------------------
# public constructors
# ---------------------------------------------------------------------------


def pairwise_operator(graph: NeighborhoodGraph, selected) -> DifferenceOperator:
    """One +1/-1 row per unordered selected neighbor pair within a location.

    Each pair appears once, anchored at the lower column index. An empty
    operator (no usable pairs) is allowed.
    """
    view = _selected_view(graph, selected)
    n = len(view.sel_idx)
    if graph.group_codes is not None:
        order, sizes = _membership_groups(graph, view)
        a, k, _, _ = _segmented_grid(order, sizes)
        keep = a < k
        a, k = a[keep], k[keep]
        pair_order = np.lexsort((k, a))
        a, k = a[pair_order], k[pair_order]
        skipped = 0
    else:
        anchor_col, nbr_col, _, skipped = _neighbor_lists(graph, view)
        keep = anchor_col < nbr_col
        a, k = anchor_col[keep], nbr_col[keep]
        pair_order = np.lexsort((k, a))
        a, k = a[pair_order], k[pair_order]
    m = len(a)
    data = np.empty(2 * m)
    data[0::2], data[1::2] = 1.0, -1.0
    indices = np.empty(2 * m, dtype=np.int64)
    indices[0::2], indices[1::2] = a, k
    indptr = np.arange(0, 2 * m + 1, 2, dtype=np.int64)
    return _finish("pairwise", m, n, data, indices, indptr, a, k, view, skipped)


def fixed_effect_operator(graph: NeighborhoodGraph, selected, *,
                          include_self: bool = False) -> DifferenceOperator:
    """One row per selected anchor: +1 at the anchor, -1/N_d at each
    selected same-location neighbor.

    N_d counts selected neighbors only. With `include_self` the anchor joins
    its own averaging set (diagonal weight 1 - 1/(N_d + 1)). Anchors with no
    usable neighbor produce no row and are counted in `dropped_anchors`.
    """
    view = _selected_view(graph, selected)
    n = len(view.sel_idx)

    if graph.group_codes is not None:
        order, sizes = _membership_groups(graph, view)
        a_cols, p_cols, _, m = _segmented_grid(order, sizes)
        keep = m >= 2
        a_cols, p_cols, m = a_cols[keep], p_cols[keep], m[keep]
        denom = (m - 1).astype(np.float64) if not include_self else m.astype(np.float64)
        data = -1.0 / denom
        diag = a_cols == p_cols
        data[diag] = 1.0 if not include_self else 1.0 - 1.0 / denom[diag]
        # rows are grid rows: one per anchor, m entries each, ascending columns
        row_sizes = m[diag]
        anchors = a_cols[diag]
        indptr = np.zeros(len(anchors) + 1, dtype=np.int64)
        np.cumsum(row_sizes, out=indptr[1:])
        return _finish("fixed_effect", len(anchors), n, data, p_cols, indptr,
                       anchors, None, view, 0)

    anchor_col, nbr_col, counts, skipped = _neighbor_lists(graph, view)
    has_row = counts > 0
    anchors = np.flatnonzero(has_row).astype(np.int64)
    n_d = counts[anchors].astype(np.float64)
    denom = n_d if not include_self else n_d + 1.0
    # entries: per anchor, its neighbors then itself; sort columns per row
    row_of_edge = np.searchsorted(anchors, anchor_col)
    r = np.concatenate([row_of_edge, np.arange(len(anchors), dtype=np.int64)])
    c = np.concatenate([nbr_col, anchors])
    w = np.concatenate([-1.0 / denom[row_of_edge],
                        np.ones(len(anchors)) if not include_self else 1.0 - 1.0 / denom])
    order2 = np.lexsort((c, r))
    r, c, w = r[order2], c[order2], w[order2]
    indptr = np.zeros(len(anchors) + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=len(anchors)), out=indptr[1:])
    return _finish("fixed_effect", len(anchors), len(view.sel_idx), w, c, indptr,
                   anchors, None, view, skipped)


def _kernel_values(u: np.ndarray, kernel: str) -> np.ndarray:
    if kernel == "epanechnikov":
        out = 0.75 * (1.0 - u * u)
        out[np.abs(u) >= 1.0] = 0.0
        return out
    if kernel == "gaussian":
        return np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    raise ValidationError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")


def kernel_operator(graph: NeighborhoodGraph, selected, index_values,
                    bandwidth: float, kernel: str = "epanechnikov") -> DifferenceOperator:
    """Kernel-weighted neighborhood difference rows.

    `index_values` holds one plug-in index value per selected observation
    (operator column order). Raw neighbor weights are
    K((index_i - index_k) / h) / h over selected same-location neighbors,
    then normalised to sum one so each row sums to zero. Anchors whose raw
    weights sum to zero produce no row and are counted in `dropped_anchors`.
    """
    if not bandwidth > 0:
        raise ValidationError("bandwidth must be positive")
    if kernel not in KERNELS:
        raise ValidationError(f"unknown kernel {kernel!r}; expected one of {KERNELS}")
    view = _selected_view(graph, selected)
    n = len(view.sel_idx)
    index_values = np.asarray(index_values, dtype=np.float64)
    if index_values.shape != (n,):
        raise ValidationError(
            f"index_values must have one entry per selected observation ({n}), got {index_values.shape}"
        )

    if graph.group_codes is not None:
        a_cols, p_cols, _, m = _segmented_grid(*_membership_groups(graph, view))
        keep = (m >= 2) & (a_cols != p_cols)
        a_cols, p_cols = a_cols[keep], p_cols[keep]
        skipped = 0
    else:
        a_cols, p_cols, _, skipped = _neighbor_lists(graph, view)

    u = (index_values[a_cols] - index_values[p_cols]) / bandwidth
    raw = _kernel_values(u, kernel) / bandwidth
    pos = raw > 0
    a_cols, p_cols, raw = a_cols[pos], p_cols[pos], raw[pos]
    totals = np.bincount(a_cols, weights=raw, minlength=n)
    anchors = np.flatnonzero(totals > 0).astype(np.int64)
    row_of = np.full(n, -1, dtype=np.int64)
    row_of[anchors] = np.arange(len(anchors))

    r = np.concatenate([row_of[a_cols], np.arange(len(anchors), dtype=np.int64)])
    c = np.concatenate([p_cols, anchors])
    w = np.concatenate([-raw / totals[a_cols], np.ones(len(anchors))])
    order2 = np.lexsort((c, r))
    r, c, w = r[order2], c[order2], w[order2]
    indptr = np.zeros(len(anchors) + 1, dtype=np.int64)
    np.cumsum(np.bincount(r, minlength=len(anchors)), out=indptr[1:])
    return _finish("kernel", len(anchors), n, w, c, indptr, anchors, None,
                   view, skipped)
