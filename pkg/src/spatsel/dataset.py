"""Clustered cross-sectional data: validation, CSV ingestion, neighborhoods.

A dataset is a flat list of observations, each belonging to one location
and one sub-location nested inside it. Selection is a 0/1 indicator; the
outcome is recorded only for selected rows. Storage is column-oriented
(numpy arrays) so the simulation harness can build thousands of datasets
cheaply; per-row `Observation` views are materialised on demand.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np

from .exceptions import ValidationError

NEIGHBOR_RULES = ("sublocation", "location", "edges", "distance")


@dataclass(frozen=True)
class Observation:
    """One row of a clustered dataset."""

    obs_id: object
    location_id: object
    sublocation_id: object
    selected: bool
    outcome: float | None
    x: np.ndarray
    z: np.ndarray
    coords: tuple[float, float] | None = None


@dataclass
class ClusteredDataset:
    """Validated clustered cross-section.

    Columns are stored as arrays aligned on the observation index:
    `location_ids` / `sublocation_ids` hold the raw identifiers while
    `location_codes` / `sublocation_codes` hold dense integer codes
    (sub-location codes are unique per (location, sublocation) pair).
    `outcome` is NaN exactly where `selected` is False.
    """

    obs_ids: np.ndarray
    location_ids: np.ndarray
    sublocation_ids: np.ndarray
    selected: np.ndarray
    outcome: np.ndarray
    x: np.ndarray
    z: np.ndarray
    coords: np.ndarray | None = None
    x_names: list[str] = field(default_factory=list)
    z_names: list[str] = field(default_factory=list)

    location_codes: np.ndarray = field(init=False, repr=False)
    sublocation_codes: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.obs_ids = np.asarray(self.obs_ids)
        self.location_ids = np.asarray(self.location_ids)
        self.sublocation_ids = np.asarray(self.sublocation_ids)
        self.selected = np.asarray(self.selected, dtype=bool)
        self.outcome = np.asarray(self.outcome, dtype=np.float64)
        self.x = np.ascontiguousarray(np.atleast_2d(self.x), dtype=np.float64)
        self.z = np.ascontiguousarray(np.atleast_2d(self.z), dtype=np.float64)
        if self.x.shape[0] != self.n_obs:
            self.x = self.x.T
        if self.z.shape[0] != self.n_obs:
            self.z = self.z.T
        if not self.x_names:
            self.x_names = [f"x{i + 1}" for i in range(self.p)]
        if not self.z_names:
            self.z_names = [f"z{i + 1}" for i in range(self.q)]
        self._validate()

    # -- basic dimensions -------------------------------------------------
    @property
    def n_obs(self) -> int:
        return len(self.obs_ids)

    @property
    def p(self) -> int:
        return self.x.shape[1]

    @property
    def q(self) -> int:
        return self.z.shape[1]

    @property
    def n_selected(self) -> int:
        return int(self.selected.sum())

    def selected_indices(self) -> np.ndarray:
        return np.flatnonzero(self.selected)

    # -- validation --------------------------------------------------------
    def _validate(self) -> None:
        n = self.n_obs
        for name, arr in (
            ("location_ids", self.location_ids),
            ("sublocation_ids", self.sublocation_ids),
            ("selected", self.selected),
            ("outcome", self.outcome),
        ):
            if len(arr) != n:
                raise ValidationError(f"{name} has length {len(arr)}, expected {n}")
        if self.x.shape[0] != n or self.z.shape[0] != n:
            raise ValidationError("x and z must have one row per observation")
        if self.coords is not None:
            self.coords = np.asarray(self.coords, dtype=np.float64)
            if self.coords.shape != (n, 2):
                raise ValidationError("coords must be an (n, 2) array")

        if len(np.unique(self.obs_ids)) != n:
            raise ValidationError("duplicate obs_id values present")

        bad = np.flatnonzero(self.selected != np.isfinite(self.outcome))
        if bad.size:
            i = int(bad[0])
            if self.selected[i]:
                raise ValidationError(
                    f"observation {self.obs_ids[i]!r} (row {i}) is selected but has no outcome"
                )
            raise ValidationError(
                f"observation {self.obs_ids[i]!r} (row {i}) is not selected but carries an outcome"
            )
        if not (np.isfinite(self.x).all() and np.isfinite(self.z).all()):
            raise ValidationError("x and z must be finite")

        loc_unique, loc_codes = np.unique(self.location_ids, return_inverse=True)
        if len(loc_unique) < 2:
            raise ValidationError("dataset must contain at least 2 locations")
        # Sub-locations nest within locations: code the (location, sublocation) pair.
        sub_unique, sub_within = np.unique(self.sublocation_ids, return_inverse=True)
        pair = loc_codes.astype(np.int64) * (len(sub_unique) + 1) + sub_within
        _, sub_codes = np.unique(pair, return_inverse=True)
        self.location_codes = loc_codes.astype(np.int64)
        self.sublocation_codes = sub_codes.astype(np.int64)

        counts = np.bincount(loc_codes)
        singles = np.flatnonzero(counts == 1)
        if singles.size:
            ids = ", ".join(repr(loc_unique[i]) for i in singles[:5])
            warnings.warn(
                f"{singles.size} location(s) contain a single observation "
                f"(no within-location pair exists): {ids}",
                stacklevel=3,
            )

    # -- index maps (API/diagnostics; derived lazily) ----------------------
    @cached_property
    def locations(self) -> dict:
        """Map location_id -> array of member observation indices."""
        out: dict = {}
        order = np.argsort(self.location_codes, kind="stable")
        codes = self.location_codes[order]
        bounds = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1], True])
        for a, b in zip(bounds[:-1], bounds[1:]):
            members = order[a:b]
            out[self.location_ids[members[0]]] = members
        return out

    @cached_property
    def sublocations(self) -> dict:
        """Map (location_id, sublocation_id) -> array of member indices."""
        out: dict = {}
        order = np.argsort(self.sublocation_codes, kind="stable")
        codes = self.sublocation_codes[order]
        bounds = np.flatnonzero(np.r_[True, codes[1:] != codes[:-1], True])
        for a, b in zip(bounds[:-1], bounds[1:]):
            members = order[a:b]
            i = members[0]
            out[(self.location_ids[i], self.sublocation_ids[i])] = members
        return out

    # -- row views ----------------------------------------------------------
    def observation(self, i: int) -> Observation:
        return Observation(
            obs_id=self.obs_ids[i],
            location_id=self.location_ids[i],
            sublocation_id=self.sublocation_ids[i],
            selected=bool(self.selected[i]),
            outcome=float(self.outcome[i]) if self.selected[i] else None,
            x=self.x[i].copy(),
            z=self.z[i].copy(),
            coords=tuple(self.coords[i]) if self.coords is not None else None,
        )

    def observations(self) -> Iterator[Observation]:
        return (self.observation(i) for i in range(self.n_obs))


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass
class CsvSchema:
    """Column mapping for CSV ingestion.

    `x_cols`/`z_cols` left empty means auto-detection of `x1..xp` / `z1..zq`
    prefixes from the header. Coordinates are optional.
    """

    obs_id: str = "obs_id"
    location: str = "location"
    sublocation: str = "sublocation"
    selected: str = "selected"
    outcome: str = "y2"
    x_cols: list[str] = field(default_factory=list)
    z_cols: list[str] = field(default_factory=list)
    coord_x: str | None = None
    coord_y: str | None = None


def _detect_block(header: Sequence[str], prefix: str) -> list[str]:
    cols = []
    k = 1
    while f"{prefix}{k}" in header:
        cols.append(f"{prefix}{k}")
        k += 1
    return cols


def _parse_float(text: str, row: int, col: str) -> float:
    try:
        return float(text)
    except ValueError:
        raise ValidationError(f"row {row}: column {col!r} has unparseable value {text!r}") from None


def load_csv(path, schema: CsvSchema | None = None) -> ClusteredDataset:
    """Load and validate a clustered dataset from a UTF-8 CSV file.

    The header row is required. Canonical columns are
    `obs_id, location, sublocation, selected, y2, x1..xp, z1..zq[, coord_x, coord_y]`;
    `schema` remaps any of them. A missing outcome is an empty field.
    Row numbers in error messages count the header as row 1.
    """
    schema = schema or CsvSchema()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: file is empty") from None
        header = [h.strip() for h in header]
        pos = {name: i for i, name in enumerate(header)}

        x_cols = schema.x_cols or _detect_block(header, "x")
        z_cols = schema.z_cols or _detect_block(header, "z")
        coord_cols = []
        if schema.coord_x and schema.coord_y:
            coord_cols = [schema.coord_x, schema.coord_y]
        elif "coord_x" in pos and "coord_y" in pos and schema.coord_x is None:
            coord_cols = ["coord_x", "coord_y"]

        required = [schema.obs_id, schema.location, schema.sublocation,
                    schema.selected, schema.outcome, *x_cols, *z_cols, *coord_cols]
        missing = [c for c in required if c not in pos]
        if missing:
            raise ValidationError(f"{path}: missing column(s) {missing}")
        if not x_cols:
            raise ValidationError(f"{path}: no x columns found (expected x1, x2, ...)")
        if not z_cols:
            raise ValidationError(f"{path}: no z columns found (expected z1, z2, ...)")

        obs_ids, loc_ids, sub_ids = [], [], []
        selected, outcome, xs, zs, coords = [], [], [], [], []
        seen: set = set()
        for rownum, row in enumerate(reader, start=2):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) < len(header):
                raise ValidationError(f"row {rownum}: expected {len(header)} fields, got {len(row)}")
            oid = row[pos[schema.obs_id]].strip()
            if oid in seen:
                raise ValidationError(f"row {rownum}: duplicate obs_id {oid!r}")
            seen.add(oid)
            sel_raw = row[pos[schema.selected]].strip()
            if sel_raw not in ("0", "1"):
                raise ValidationError(f"row {rownum}: column {schema.selected!r} must be 0 or 1, got {sel_raw!r}")
            sel = sel_raw == "1"
            out_raw = row[pos[schema.outcome]].strip()
            if sel and out_raw == "":
                raise ValidationError(f"row {rownum}: selected observation {oid!r} has empty outcome")
            if not sel and out_raw != "":
                raise ValidationError(f"row {rownum}: non-selected observation {oid!r} carries an outcome")
            obs_ids.append(oid)
            loc_ids.append(row[pos[schema.location]].strip())
            sub_ids.append(row[pos[schema.sublocation]].strip())
            selected.append(sel)
            outcome.append(_parse_float(out_raw, rownum, schema.outcome) if sel else np.nan)
            xs.append([_parse_float(row[pos[c]], rownum, c) for c in x_cols])
            zs.append([_parse_float(row[pos[c]], rownum, c) for c in z_cols])
            if coord_cols:
                coords.append([_parse_float(row[pos[c]], rownum, c) for c in coord_cols])

    if not obs_ids:
        raise ValidationError(f"{path}: no data rows")
    return ClusteredDataset(
        obs_ids=np.array(obs_ids, dtype=object),
        location_ids=np.array(loc_ids, dtype=object),
        sublocation_ids=np.array(sub_ids, dtype=object),
        selected=np.array(selected, dtype=bool),
        outcome=np.array(outcome, dtype=np.float64),
        x=np.array(xs, dtype=np.float64),
        z=np.array(zs, dtype=np.float64),
        coords=np.array(coords, dtype=np.float64) if coord_cols else None,
        x_names=x_cols,
        z_names=z_cols,
    )


def write_csv(ds: ClusteredDataset, path) -> None:
    """Write a dataset in the canonical CSV layout (full float precision)."""
    header = ["obs_id", "location", "sublocation", "selected", "y2",
              *ds.x_names, *ds.z_names]
    if ds.coords is not None:
        header += ["coord_x", "coord_y"]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(ds.n_obs):
            row = [ds.obs_ids[i], ds.location_ids[i], ds.sublocation_ids[i],
                   int(ds.selected[i]),
                   repr(float(ds.outcome[i])) if ds.selected[i] else ""]
            row += [repr(float(v)) for v in ds.x[i]]
            row += [repr(float(v)) for v in ds.z[i]]
            if ds.coords is not None:
                row += [repr(float(v)) for v in ds.coords[i]]
            writer.writerow(row)


def load_adjacency(path) -> list[tuple[str, str]]:
    """Read a two-column CSV of obs_id pairs (no header)."""
    pairs = []
    with open(path, newline="", encoding="utf-8") as fh:
        for rownum, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not f.strip() for f in row):
                continue
            if len(row) < 2:
                raise ValidationError(f"adjacency row {rownum}: expected two obs_id fields")
            pairs.append((row[0].strip(), row[1].strip()))
    return pairs


# ---------------------------------------------------------------------------
# Neighborhood graphs
# ---------------------------------------------------------------------------


@dataclass
class NeighborhoodGraph:
    """Symmetric, irreflexive neighbor sets over the observations of a dataset.

    For the membership rules (`sublocation`, `location`) only the group
    codes are stored; adjacency lists are materialised lazily since the
    operator builders can work from the codes directly.
    """

    n_obs: int
    source: str
    location_codes: np.ndarray
    group_codes: np.ndarray | None = None
    _indptr: np.ndarray | None = None
    _indices: np.ndarray | None = None

    def _materialize(self) -> None:
        if self._indptr is not None:
            return
        codes = self.group_codes
        order = np.argsort(codes, kind="stable")
        sizes = np.bincount(codes)
        degrees = (sizes[codes] - 1).astype(np.int64)
        indptr = np.zeros(self.n_obs + 1, dtype=np.int64)
        np.cumsum(degrees, out=indptr[1:])
        indices = np.empty(int(indptr[-1]), dtype=np.int64)
        # groups are contiguous in `order`
        boundaries = np.flatnonzero(np.r_[True, codes[order][1:] != codes[order][:-1], True])
        for a, b in zip(boundaries[:-1], boundaries[1:]):
            members = np.sort(order[a:b])
            m = len(members)
            if m < 2:
                continue
            for t in range(m):
                i = members[t]
                row = np.delete(members, t)
                indices[indptr[i]:indptr[i] + m - 1] = row
        self._indptr = indptr
        self._indices = indices

    @property
    def indptr(self) -> np.ndarray:
        if self._indptr is None:
            self._materialize()
        return self._indptr

    @property
    def indices(self) -> np.ndarray:
        if self._indices is None:
            self._materialize()
        return self._indices

    def neighbors_of(self, i: int) -> set:
        """The neighbor set of observation index i (self excluded)."""
        return set(self.indices[self.indptr[i]:self.indptr[i + 1]].tolist())

    def neighbor_map(self) -> dict[int, set]:
        return {i: self.neighbors_of(i) for i in range(self.n_obs)}

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)


def _graph_from_pairs(ds: ClusteredDataset, src: np.ndarray, dst: np.ndarray,
                      source: str) -> NeighborhoodGraph:
    # Symmetrize, drop self loops and duplicates, then pack to CSR.
    keep = src != dst
    if not keep.all():
        warnings.warn("adjacency contains self-pairs; they were dropped", stacklevel=3)
        src, dst = src[keep], dst[keep]
    a = np.concatenate([src, dst])
    b = np.concatenate([dst, src])
    key = a * np.int64(ds.n_obs) + b
    _, uniq = np.unique(key, return_index=True)
    a, b = a[uniq], b[uniq]
    order = np.lexsort((b, a))
    a, b = a[order], b[order]
    indptr = np.zeros(ds.n_obs + 1, dtype=np.int64)
    np.cumsum(np.bincount(a, minlength=ds.n_obs), out=indptr[1:])
    return NeighborhoodGraph(
        n_obs=ds.n_obs, source=source, location_codes=ds.location_codes,
        group_codes=None, _indptr=indptr, _indices=b.astype(np.int64),
    )


def build_neighborhoods(ds: ClusteredDataset, rule: str, *,
                        d: float | None = None,
                        edges: Sequence[tuple] | None = None) -> NeighborhoodGraph:
    """Build the neighbor sets of every observation under one of four rules.

    rule = "sublocation": all other members of the observation's sub-location.
    rule = "location":    all other members of the observation's location.
    rule = "edges":       an explicit list of obs_id pairs; an asymmetric
                          (directed) list is symmetrized with a warning.
    rule = "distance":    all observations within Euclidean distance d
                          (requires coordinates and d > 0).

    The result is always symmetric and irreflexive.
    """
    if rule not in NEIGHBOR_RULES:
        raise ValidationError(f"unknown neighborhood rule {rule!r}; expected one of {NEIGHBOR_RULES}")

    if rule == "sublocation":
        return NeighborhoodGraph(n_obs=ds.n_obs, source=rule,
                                 location_codes=ds.location_codes,
                                 group_codes=ds.sublocation_codes)
    if rule == "location":
        return NeighborhoodGraph(n_obs=ds.n_obs, source=rule,
                                 location_codes=ds.location_codes,
                                 group_codes=ds.location_codes)
    if rule == "edges":
        if edges is None:
            raise ValidationError("rule 'edges' requires an adjacency list")
        id_to_idx = {oid: i for i, oid in enumerate(ds.obs_ids.tolist())}
        src, dst = [], []
        for a_id, b_id in edges:
            if a_id not in id_to_idx or b_id not in id_to_idx:
                raise ValidationError(f"adjacency references unknown obs_id {a_id!r} or {b_id!r}")
            src.append(id_to_idx[a_id])
            dst.append(id_to_idx[b_id])
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        directed = set(zip(src.tolist(), dst.tolist()))
        if any((b, a) not in directed for a, b in directed if a != b):
            warnings.warn("edge list is asymmetric; it was symmetrized", stacklevel=2)
        return _graph_from_pairs(ds, src, dst, "edges")

    # distance rule
    if d is None or not d > 0:
        raise ValidationError("rule 'distance' requires a threshold d > 0")
    if ds.coords is None:
        raise ValidationError("rule 'distance' requires coordinates on every observation")
    from scipy.spatial import cKDTree

    tree = cKDTree(ds.coords)
    pairs = tree.query_pairs(r=float(d), output_type="ndarray")
    if len(pairs) == 0:
        src = np.empty(0, dtype=np.int64)
        dst = np.empty(0, dtype=np.int64)
    else:
        src, dst = pairs[:, 0].astype(np.int64), pairs[:, 1].astype(np.int64)
    return _graph_from_pairs(ds, src, dst, "distance")
