"""Shared test utilities: instance generators and independent oracles.

The KKT oracle solves the primal stationarity system directly with its own
damped Newton iteration, dense linear algebra and locally written primal
derivatives, so it shares no solution path with the package's dual solvers.
"""

import itertools
import math

import numpy as np

from rakekit import build_problem, parse_table

INF = float("inf")


# ---------------------------------------------------------------------------
# instance generation
# ---------------------------------------------------------------------------

def grid_records(y, weights=None, aggregates=(), missing=(), dim_names=None):
    """Records for a full d-dimensional table plus aggregate rows.

    ``y`` is the d-dim array of granular values (levels are 1..size along
    each axis, sentinel 0). ``aggregates`` is a list of
    (summed_axes, values_or_None, weight) tuples; values default to the
    exact sums of ``y`` over those axes. ``missing`` lists cell index
    tuples to mark missing (weight 0).
    """
    y = np.asarray(y, dtype=float)
    d = y.ndim
    names = dim_names or [f"X{i + 1}" for i in range(d)]
    if weights is None:
        weights = np.ones_like(y)
    else:
        weights = np.broadcast_to(np.asarray(weights, dtype=float), y.shape)
    missing = {tuple(m) for m in missing}

    records = []
    for cell in itertools.product(*(range(s) for s in y.shape)):
        rec = {names[k]: cell[k] + 1 for k in range(d)}
        if cell in missing:
            rec.update({"value": math.nan, "weights": 0.0})
        else:
            rec.update({"value": float(y[cell]), "weights": float(weights[cell])})
        records.append(rec)

    for summed_axes, values, weight in aggregates:
        summed_axes = tuple(summed_axes)
        sums = np.asarray(y.sum(axis=summed_axes))
        if values is not None:
            values = np.asarray(values, dtype=float)
            sums = values.reshape(sums.shape) if values.size == sums.size \
                else np.broadcast_to(values, sums.shape)
        kept_axes = [k for k in range(d) if k not in summed_axes]
        for kept_cell in itertools.product(*(range(y.shape[k]) for k in kept_axes)):
            rec = {names[k]: 0 for k in range(d)}
            for ax, lev in zip(kept_axes, kept_cell):
                rec[names[ax]] = lev + 1
            rec["value"] = float(sums[kept_cell]) if kept_cell else float(sums)
            rec["weights"] = weight
            records.append(rec)
    return records, {n: 0 for n in names}


def build_grid_problem(y, weights=None, aggregates=(), missing=(), loss="entropic",
                       lower=None, upper=None):
    records, dim_specs = grid_records(y, weights, aggregates, missing)
    data = parse_table(records, dim_specs)
    return build_problem(data, loss=loss, lower=lower, upper=upper)


# ---------------------------------------------------------------------------
# primal derivatives (local, for the oracle)
# ---------------------------------------------------------------------------

def _fprime(kind, beta, y, lower, upper):
    if kind == "chi2":
        return (beta - y) / y
    if kind == "entropic":
        return np.log(beta / y)
    return np.log((beta - lower) / (y - lower)) - np.log((upper - beta) / (upper - y))


def _fsecond(kind, beta, y, lower, upper):
    if kind == "chi2":
        return 1.0 / y
    if kind == "entropic":
        return 1.0 / beta
    return 1.0 / (beta - lower) + 1.0 / (upper - beta)


def _in_domain(kind, beta, lower, upper):
    if kind == "chi2":
        return np.all(np.isfinite(beta))
    if kind == "entropic":
        return np.all(beta > 0)
    return np.all((beta > lower) & (beta < upper))


def oracle_rake(problem, tol=1e-12, max_iter=300):
    """Dense damped Newton on the primal KKT conditions.

    Unknowns are the non-pinned cells (missing cells carry no loss term),
    the fitted aggregate observations, and one multiplier per A/B row.
    Returns (beta, lam) or raises on a singular system.
    """
    kind = problem.loss_kind
    p, ka, kb = problem.p, problem.k_a, problem.k_b
    A = problem.A.assemble_dense() if ka else np.zeros((0, p))
    B = problem.B.assemble_dense() if kb else np.zeros((0, p))
    s, s_b, w_b = problem.s, problem.s_b, problem.w_b

    y = np.zeros(p)
    y[problem.obs_idx] = problem.y_obs
    w = np.zeros(p)
    w[problem.obs_idx] = problem.w_obs
    lower = problem.lower if problem.lower is not None else np.full(p, -np.inf)
    upper = problem.upper if problem.upper is not None else np.full(p, np.inf)

    pinned = np.zeros(p, dtype=bool)
    pinned[problem.obs_idx] = np.isinf(problem.w_obs)
    observed = np.zeros(p, dtype=bool)
    observed[problem.obs_idx] = True
    unk = np.flatnonzero(~pinned)               # free observed + missing cells
    lossy = observed[unk] & ~pinned[unk]        # unknowns that carry a loss term
    nu = unk.size

    lo_b = np.array([lower[problem.B.row(i)].sum() for i in range(kb)]) \
        if kind == "logistic" and kb else np.full(kb, -np.inf)
    hi_b = np.array([upper[problem.B.row(i)].sum() for i in range(kb)]) \
        if kind == "logistic" and kb else np.full(kb, np.inf)

    A_u, A_p = A[:, unk], A[:, pinned]
    B_u, B_p = B[:, unk], B[:, pinned]
    y_pin = y[pinned]

    beta_u = np.where(observed[unk], y[unk], max(float(np.mean(problem.y_obs)), 1e-3))
    zeta = s_b.copy()
    lam = np.zeros(ka + kb)

    def residual(bu, zt, lm):
        la, lb = lm[:ka], lm[ka:]
        f1 = A_u.T @ la + B_u.T @ lb
        with np.errstate(all="ignore"):  # masked entries may evaluate to nan
            f1 = f1 + np.where(
                lossy, w[unk] * _fprime(kind, bu, y[unk], lower[unk], upper[unk]), 0.0)
        f2 = w_b * _fprime(kind, zt, s_b, lo_b, hi_b) - lb if kb else np.zeros(0)
        f3 = A_u @ bu + A_p @ y_pin - s
        f4 = (B_u @ bu + B_p @ y_pin - zt) if kb else np.zeros(0)
        return np.concatenate([f1, f2, f3, f4])

    for _ in range(max_iter):
        F = residual(beta_u, zeta, lam)
        if np.max(np.abs(F), initial=0.0) <= tol * max(1.0, np.max(np.abs(s), initial=1.0)):
            break
        with np.errstate(all="ignore"):
            h1 = np.where(
                lossy, w[unk] * _fsecond(kind, beta_u, y[unk], lower[unk], upper[unk]), 0.0)
        h2 = w_b * _fsecond(kind, zeta, s_b, lo_b, hi_b) if kb else np.zeros(0)
        n = nu + kb + ka + kb
        J = np.zeros((n, n))
        J[:nu, :nu] = np.diag(h1)
        J[:nu, nu + kb:nu + kb + ka] = A_u.T
        J[:nu, nu + kb + ka:] = B_u.T
        if kb:
            J[nu:nu + kb, nu:nu + kb] = np.diag(h2)
            J[nu:nu + kb, nu + kb + ka:] = -np.eye(kb)
        J[nu + kb:nu + kb + ka, :nu] = A_u
        if kb:
            J[nu + kb + ka:, :nu] = B_u
            J[nu + kb + ka:, nu:nu + kb] = -np.eye(kb)
        step = np.linalg.solve(J, -F)

        t = 1.0
        norm0 = np.linalg.norm(F)
        for _ in range(60):
            bu = beta_u + t * step[:nu]
            zt = zeta + t * step[nu:nu + kb]
            lm = lam + t * step[nu + kb:]
            valid = _in_domain(kind, bu[lossy], lower[unk][lossy], upper[unk][lossy])
            if kb:
                valid = valid and _in_domain(kind, zt, lo_b, hi_b)
            if valid and np.linalg.norm(residual(bu, zt, lm)) <= (1 - 1e-4 * t) * norm0:
                beta_u, zeta, lam = bu, zt, lm
                break
            t *= 0.5
        else:
            raise RuntimeError("oracle line search failed")
    else:
        raise RuntimeError("oracle did not converge")

    beta = np.empty(p)
    beta[pinned] = y_pin
    beta[unk] = beta_u
    return beta, lam


def legendre_transform_numeric(f, z, grid):
    """Brute-force conjugate sup_x (x z - f(x)) over a dense grid."""
    vals = z * grid - f(grid)
    return float(np.max(vals))
