"""Tabular problem specification and compilation.

The input format is one record per table entry: a categorical value per
dimension, a value column and a weight column. A record whose dimension
value equals that dimension's aggregate sentinel (0 by default) describes a
sum over that dimension. Weights classify records: ``inf`` marks a hard
constraint, a finite positive weight an observation, and 0 a missing
granular cell. See the README for the full format.

Compilation produces a :class:`Problem`: granular cells are mapped to a
flat coordinate vector (lexicographic, last declared dimension fastest),
constraint aggregates become rows of the operator A with margins s,
observation aggregates rows of B with values and weights, and missing
cells are excluded from the observation selector.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .errors import (
    BadValue,
    BadWeight,
    BoundsInvalid,
    ConstraintWithoutValue,
    DuplicateCell,
    EmptyProblem,
    InconsistentMargins,
    IncompleteTable,
    UnknownColumn,
)
from .linop import AggOperator, gram
from .losses import make_loss

RANK_TOL = 1e-10
MARGIN_CONSISTENCY_TOL = 1e-8

ROLE_OBSERVED = "observed"
ROLE_MISSING = "missing"
ROLE_CONSTRAINT = "constraint"
ROLE_AGG_OBSERVATION = "aggregate_observation"


@dataclass(frozen=True)
class DimSpec:
    """One categorical dimension of the table.

    ``aggregate_sentinel`` is the categorical value that marks "summed over
    this dimension" in aggregate records; it must not itself be a level.
    Levels may be declared up front or inferred (sorted) from the data.
    """

    name: str
    aggregate_sentinel: object = 0
    levels: tuple = None

    def __post_init__(self):
        if self.levels is not None:
            levels = tuple(_coerce_category(v) for v in self.levels)
            if len(set(levels)) != len(levels):
                raise BadValue(f"dimension {self.name!r}: duplicate levels declared")
            object.__setattr__(self, "levels", levels)
            sentinel = _coerce_category(self.aggregate_sentinel)
            object.__setattr__(self, "aggregate_sentinel", sentinel)
            if sentinel in levels:
                raise BadValue(
                    f"dimension {self.name!r}: sentinel {sentinel!r} collides with a level"
                )
        else:
            object.__setattr__(
                self, "aggregate_sentinel", _coerce_category(self.aggregate_sentinel)
            )


@dataclass(frozen=True)
class RakingRow:
    """One classified input record."""

    dim_values: tuple
    value: float
    weight: float
    role: str


@dataclass
class RakingData:
    """Parsed and validated tabular input."""

    dims: list
    rows: list
    value_col: str
    weight_col: str

    def rows_with_role(self, role):
        return [r for r in self.rows if r.role == role]

    def to_records(self):
        """Emit back to tabular records (round-trips through parse_table)."""
        recs = []
        for row in self.rows:
            rec = {d.name: v for d, v in zip(self.dims, row.dim_values)}
            rec[self.value_col] = math.nan if row.role == ROLE_MISSING else row.value
            rec[self.weight_col] = row.weight
            recs.append(rec)
        return recs


def _coerce_category(v):
    """Canonical form of a categorical value: ints stay ints, numeric
    strings become ints, everything else a stripped string."""
    if isinstance(v, bool):
        return v
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        if math.isnan(v):
            raise BadValue("dimension value is NaN")
        if float(v).is_integer():
            return int(v)
        return float(v)
    s = str(v).strip()
    try:
        return int(s)
    except ValueError:
        return s


def _parse_value(raw):
    """Value-column entry to float, NaN meaning missing."""
    if raw is None:
        return math.nan
    if isinstance(raw, str):
        s = raw.strip()
        if s == "" or s.lower() == "nan":
            return math.nan
        try:
            return float(s)
        except ValueError:
            raise BadValue(f"cannot parse value {raw!r}")
    return float(raw)


def _parse_weight(raw, where):
    if raw is None:
        raise BadWeight(f"{where}: weight is missing")
    try:
        w = float(raw.strip()) if isinstance(raw, str) else float(raw)
    except ValueError:
        raise BadWeight(f"{where}: cannot parse weight {raw!r}")
    if math.isnan(w):
        raise BadWeight(f"{where}: weight is NaN")
    if w < 0:
        raise BadWeight(f"{where}: weight {w} is negative")
    return w


def _normalize_dim_specs(dim_specs):
    if isinstance(dim_specs, dict):
        return [DimSpec(name, sentinel) for name, sentinel in dim_specs.items()]
    out = []
    for d in dim_specs:
        if isinstance(d, DimSpec):
            out.append(d)
        else:
            out.append(DimSpec(str(d)))
    if not out:
        raise BadValue("at least one dimension is required")
    return out


def _level_sort_key(v):
    # numbers before strings, each group ordered naturally
    if isinstance(v, (int, float)) and not isinstance(v, bool):
        return (0, float(v), "")
    return (1, 0.0, str(v))


def parse_table(rows, dim_specs, value_col="value", weight_col="weights"):
    """Parse tabular records into a validated :class:`RakingData`.

    ``rows`` is an iterable of mappings (or anything with a pandas-style
    ``to_dict('records')``). ``dim_specs`` is a {name: sentinel} mapping,
    a list of names, or a list of :class:`DimSpec`.
    """
    if hasattr(rows, "to_dict"):
        rows = rows.to_dict("records")
    dims = _normalize_dim_specs(dim_specs)

    parsed = []
    seen = {}
    level_sets = [set() for _ in dims]
    for i, rec in enumerate(rows):
        where = f"row {i}"
        missing_cols = [c for c in [d.name for d in dims] + [value_col]
                        + ([weight_col] if weight_col else []) if c not in rec]
        if missing_cols:
            raise UnknownColumn(f"{where}: missing column(s) {missing_cols}")
        dim_values = tuple(_coerce_category(rec[d.name]) for d in dims)
        value = _parse_value(rec[value_col])
        weight = _parse_weight(rec[weight_col], where) if weight_col else 1.0

        if dim_values in seen:
            raise DuplicateCell(
                f"{where}: dimension tuple {dim_values} already appeared at row {seen[dim_values]}"
            )
        seen[dim_values] = i

        is_aggregate = any(v == d.aggregate_sentinel for v, d in zip(dim_values, dims))
        if is_aggregate:
            if weight == 0:
                raise BadWeight(f"{where}: aggregate row {dim_values} has weight 0")
            if math.isnan(value):
                if math.isinf(weight):
                    raise ConstraintWithoutValue(
                        f"{where}: aggregate row {dim_values} has no value"
                    )
                raise BadValue(f"{where}: aggregate observation {dim_values} has no value")
            role = ROLE_CONSTRAINT if math.isinf(weight) else ROLE_AGG_OBSERVATION
        else:
            if weight == 0:
                if not math.isnan(value):
                    warnings.warn(
                        f"{where}: cell {dim_values} has weight 0; its value is ignored "
                        "and the cell is treated as missing"
                    )
                role = ROLE_MISSING
                value = math.nan
            else:
                if math.isnan(value):
                    if math.isinf(weight):
                        raise ConstraintWithoutValue(
                            f"{where}: cell {dim_values} pinned by infinite weight needs a value"
                        )
                    raise BadValue(
                        f"{where}: cell {dim_values} has no value; use weight 0 to mark it missing"
                    )
                role = ROLE_OBSERVED
        for k, (v, d) in enumerate(zip(dim_values, dims)):
            if v != d.aggregate_sentinel:
                level_sets[k].add(v)
        parsed.append(RakingRow(dim_values, value, weight, role))

    resolved = []
    for d, found in zip(dims, level_sets):
        if d.levels is None:
            levels = tuple(sorted(found, key=_level_sort_key))
            if not levels:
                raise IncompleteTable(f"dimension {d.name!r} has no levels in the data")
            resolved.append(DimSpec(d.name, d.aggregate_sentinel, levels))
        else:
            unknown = found - set(d.levels)
            if unknown:
                raise BadValue(
                    f"dimension {d.name!r}: values {sorted(unknown, key=_level_sort_key)} "
                    "not among the declared levels"
                )
            resolved.append(d)

    granular = {r.dim_values for r in parsed if r.role in (ROLE_OBSERVED, ROLE_MISSING)}
    n_cells = math.prod(len(d.levels) for d in resolved)
    if len(granular) != n_cells:
        for combo in itertools.product(*(d.levels for d in resolved)):
            if combo not in granular:
                raise IncompleteTable(
                    f"granular cell {combo} is absent: {len(granular)} of {n_cells} "
                    "cells covered (every cell must appear as observed or missing)"
                )
    return RakingData(resolved, parsed, value_col, weight_col or "weights")


@dataclass
class Problem:
    """Compiled optimization instance.

    Granular cells occupy coordinates 0..p-1 in lexicographic order with
    the last declared dimension varying fastest. A holds the ``k_A``
    pruned constraint rows with margins ``s``; B the ``k_B`` aggregate
    observations with values ``s_b`` and weights ``w_b``. ``obs_idx``
    selects the observed coordinates, the rest are missing.
    """

    dims: list
    shape: tuple
    obs_idx: np.ndarray
    missing_idx: np.ndarray
    y_obs: np.ndarray
    w_obs: np.ndarray
    A: AggOperator
    s: np.ndarray
    a_labels: list
    dropped_constraints: list
    B: AggOperator
    s_b: np.ndarray
    w_b: np.ndarray
    b_labels: list
    loss_kind: str
    lower: np.ndarray = None
    upper: np.ndarray = None
    _labels: list = field(default=None, repr=False)

    @property
    def p(self):
        return self.A.ncols

    @property
    def n_obs(self):
        return self.obs_idx.size

    @property
    def k_a(self):
        return self.A.nrows

    @property
    def k_b(self):
        return self.B.nrows

    def cell_index(self, dim_values):
        idx = tuple(d.levels.index(v) for d, v in zip(self.dims, dim_values))
        return int(np.ravel_multi_index(idx, self.shape))

    def labels(self):
        """Dimension-value tuple of every coordinate, in index order."""
        if self._labels is None:
            self._labels = list(itertools.product(*(d.levels for d in self.dims)))
        return self._labels

    def granular_loss(self):
        """Loss over the observed coordinates."""
        lo = self.lower[self.obs_idx] if self.lower is not None else None
        hi = self.upper[self.obs_idx] if self.upper is not None else None
        return make_loss(self.loss_kind, self.y_obs, self.w_obs, lower=lo, upper=hi)

    def aggregate_loss(self):
        """Loss over the aggregate observations (None when there are none).

        For the logistic kind the bounds of an aggregate are the sums of
        its member-cell bounds, which bracket any feasible aggregate value.
        """
        if self.k_b == 0:
            return None
        lo = hi = None
        if self.loss_kind == "logistic":
            lo = np.array([self.lower[self.B.row(i)].sum() for i in range(self.k_b)])
            hi = np.array([self.upper[self.B.row(i)].sum() for i in range(self.k_b)])
        return make_loss(self.loss_kind, self.s_b, self.w_b, lower=lo, upper=hi)


def _member_cells(shape, selector):
    """Flat indices of all cells matching a per-dimension selector
    (an int level index, or None meaning summed over)."""
    axes = [np.arange(s) if v is None else np.array([v]) for v, s in zip(selector, shape)]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.ravel_multi_index([g.ravel() for g in grids], shape)


def build_problem(data: RakingData, loss="entropic", lower=None, upper=None) -> Problem:
    """Compile parsed data into a :class:`Problem` with full-rank constraints.

    ``lower``/``upper`` (logistic loss) are scalars or length-p arrays in
    coordinate order.
    """
    dims = data.dims
    shape = tuple(len(d.levels) for d in dims)
    p = math.prod(shape)
    level_pos = [{v: i for i, v in enumerate(d.levels)} for d in dims]

    def flat_index(dim_values):
        return int(np.ravel_multi_index(
            tuple(pos[v] for pos, v in zip(level_pos, dim_values)), shape))

    granular = data.rows_with_role(ROLE_OBSERVED)
    missing = data.rows_with_role(ROLE_MISSING)
    if not granular and not missing:
        raise EmptyProblem("no granular cells in the input")
    if not granular:
        raise EmptyProblem("all granular cells are missing")

    obs = sorted(((flat_index(r.dim_values), r) for r in granular), key=lambda t: t[0])
    obs_idx = np.array([i for i, _ in obs], dtype=np.int64)
    y_obs = np.array([r.value for _, r in obs])
    w_obs = np.array([r.weight for _, r in obs])
    missing_idx = np.array(sorted(flat_index(r.dim_values) for r in missing), dtype=np.int64)

    def agg_rows(rows):
        members, values, weights, labels = [], [], [], []
        for r in rows:
            selector = [
                None if v == d.aggregate_sentinel else pos[v]
                for v, d, pos in zip(r.dim_values, dims, level_pos)
            ]
            members.append(_member_cells(shape, selector))
            values.append(r.value)
            weights.append(r.weight)
            labels.append(r.dim_values)
        return members, np.array(values), np.array(weights), labels

    a_members, s, _, a_labels = agg_rows(data.rows_with_role(ROLE_CONSTRAINT))
    b_members, s_b, w_b, b_labels = agg_rows(data.rows_with_role(ROLE_AGG_OBSERVATION))

    A = AggOperator(a_members, p)
    A, s, dropped = prune_constraints(A, s)
    dropped_constraints = [(i, a_labels[i]) for i in dropped]
    a_labels = [lab for i, lab in enumerate(a_labels) if i not in set(dropped)]

    lo_arr = hi_arr = None
    if loss == "logistic":
        if lower is None or upper is None:
            raise BoundsInvalid("logistic loss requires lower and upper bounds")
        lo_arr = np.broadcast_to(np.asarray(lower, dtype=float), (p,)).copy()
        hi_arr = np.broadcast_to(np.asarray(upper, dtype=float), (p,)).copy()

    problem = Problem(
        dims=dims, shape=shape,
        obs_idx=obs_idx, missing_idx=missing_idx, y_obs=y_obs, w_obs=w_obs,
        A=A, s=s, a_labels=a_labels, dropped_constraints=dropped_constraints,
        B=AggOperator(b_members, p), s_b=s_b, w_b=w_b, b_labels=b_labels,
        loss_kind=loss, lower=lo_arr, upper=hi_arr,
    )
    problem.granular_loss()   # validates loss-domain invariants eagerly
    problem.aggregate_loss()
    return problem


def prune_constraints(A: AggOperator, s, rank_tol=RANK_TOL,
                      consistency_tol=MARGIN_CONSISTENCY_TOL):
    """Drop linearly dependent constraint rows, greedily in input order.

    A row is dropped when its residual after projection onto the retained
    rows falls below ``rank_tol`` times the largest singular value of A.
    Dropped rows must carry the margin implied by the retained ones within
    ``consistency_tol`` (relative), else the inputs are contradictory.

    Returns the pruned operator, its margins, and the dropped row ids.
    """
    s = np.asarray(s, dtype=float)
    k = A.nrows
    if s.shape != (k,):
        raise InconsistentMargins(f"margin vector has length {s.size}, expected {k}")
    if k == 0:
        return A, s, []

    M = gram(A)
    sigma_max = math.sqrt(max(float(np.linalg.eigvalsh(M)[-1]), 0.0))
    tol = rank_tol * max(sigma_max, 1.0)

    retained, dropped = [], []
    L = np.zeros((k, k))          # Cholesky factor of the retained Gram block
    ret_idx = np.empty(0, dtype=np.int64)   # concatenated member indices
    ret_lens = []
    scratch = np.zeros(A.ncols)

    for i in range(k):
        m = len(retained)
        g = M[retained, i]
        z = solve_triangular(L[:m, :m], g, lower=True) if m else np.zeros(0)

        # explicit residual of row i against the retained rows; the Gram
        # route alone loses half the digits to cancellation
        coef = solve_triangular(L[:m, :m].T, z, lower=False) if m else np.zeros(0)
        scratch[:] = 0.0
        scratch[A.row(i)] = 1.0
        if m:
            np.subtract.at(scratch, ret_idx, np.repeat(coef, ret_lens))
            # one refinement step recovers full precision on exact dependencies
            corr = np.add.reduceat(np.append(scratch[ret_idx], 0.0),
                                   np.concatenate(([0], np.cumsum(ret_lens)))[:-1])
            delta = solve_triangular(
                L[:m, :m].T, solve_triangular(L[:m, :m], corr, lower=True), lower=False)
            coef = coef + delta
            scratch[:] = 0.0
            scratch[A.row(i)] = 1.0
            np.subtract.at(scratch, ret_idx, np.repeat(coef, ret_lens))
        res = float(np.linalg.norm(scratch))

        if res > tol:
            L[m, :m] = z
            L[m, m] = math.sqrt(max(M[i, i] - float(z @ z), res * res))
            retained.append(i)
            ret_idx = np.concatenate([ret_idx, A.row(i)])
            ret_lens.append(len(A.row(i)))
        else:
            implied = float(coef @ s[retained]) if m else 0.0
            scale = max(1.0, abs(s[i]), abs(implied))
            if abs(s[i] - implied) > consistency_tol * scale:
                raise InconsistentMargins(
                    f"constraint row {i} is implied by rows {retained} with margin "
                    f"{implied:.12g}, but {s[i]:.12g} was given"
                )
            dropped.append(i)

    if not dropped:
        return A, s, []
    pruned = AggOperator([A.row(i) for i in retained], A.ncols)
    return pruned, s[retained], dropped
