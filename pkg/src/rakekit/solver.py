"""Raking solvers on the dual problem.

The dual of the constrained rake is an unconstrained smooth convex
minimization over one multiplier per aggregate; raked values come back
through the gradient of the conjugate loss. Specializations:

* 1D entropic raking with a single total has a closed form (proportional
  scaling); differential weights reduce it to a scalar Newton solve.
* The quadratic loss admits a closed-form dual solve for any constraint
  structure.
* 2D entropic raking supports IPF (alternating block maximization of the
  dual), kept mainly as a benchmark baseline.
* Everything else runs a damped inexact Newton on the joint multipliers
  with matrix-free Hessian actions and a MINRES inner solve. Missing
  cells add affine equality constraints on the dual, handled by solving
  the per-step KKT system; unobserved raked values are recovered from a
  final linear system when the aggregate structure identifies them.

Work is tracked in matvec-equivalents: one O(nnz) operator pass costs one
unit, so a Hessian-vector product costs two and an IPF half-sweep one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve
from scipy.sparse.linalg import LinearOperator, minres

from .errors import (
    DomainError,
    InconsistentMargins,
    InputError,
    MissingUnrecoverable,
    NoConvergence,
    NonPositiveInput,
    SingularSystem,
)
from .linop import AggOperator, WorkCounter, gram, hvp, hvp_diagonal, stack
from .losses import EntropicLoss
from .table import Problem

RECOVERY_RANK_TOL = 1e-10


@dataclass
class SolverOptions:
    max_outer: int = 50
    grad_tol: float = 1e-10
    cons_tol: float = 1e-8
    krylov_rtol: float = 1e-4
    krylov_maxit: int = 100
    armijo_c: float = 1e-4
    min_step: float = 2.0 ** -30
    ipf_max_sweeps: int = 200_000
    trace_every: int = 1

    def __post_init__(self):
        if min(self.grad_tol, self.cons_tol, self.krylov_rtol) <= 0:
            raise InputError("tolerances must be positive")
        if self.max_outer < 1 or self.krylov_maxit < 1:
            raise InputError("iteration limits must be >= 1")


@dataclass
class Solution:
    """Raked values with dual multipliers and solver diagnostics.

    ``beta`` covers all p coordinates (missing entries recovered, NaN when
    unrecoverable); ``lam`` stacks the A-row then B-row multipliers;
    ``zeta`` holds the fitted aggregate observations. ``diagnostics`` is a
    JSON-serializable dict with keys path, outer_iters, matvecs, dual_obj,
    grad_norm, cons_violation, converged and a per-iteration trace.
    """

    beta: np.ndarray
    lam: np.ndarray
    zeta: np.ndarray
    diagnostics: dict
    missing_idx: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))
    missing_recovered: bool = True


def _inf_norm(v):
    return float(np.max(np.abs(v), initial=0.0))


def _trace_entry(it, counter, obj, grad_norm, violation):
    return {
        "iteration": int(it),
        "matvecs": float(counter.units),
        "dual_obj": float(obj),
        "grad_norm": float(grad_norm),
        "max_violation": float(violation),
    }


# ---------------------------------------------------------------------------
# 1D entropic
# ---------------------------------------------------------------------------

def solve_1d_entropic(y, s, w=None, options=None) -> Solution:
    """Rake y to a single total s under the entropic distance.

    Equal finite weights give the exact proportional-scaling closed form;
    differential weights require a scalar Newton solve on the dual.
    """
    opts = options or SolverOptions()
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if np.any(y < 0) or y.sum() <= 0:
        raise NonPositiveInput("1D entropic raking needs y >= 0 with a positive sum")
    if not np.isfinite(s) or s <= 0:
        raise NonPositiveInput(f"margin must be positive, got {s}")

    uniform = w is None
    if not uniform:
        w = np.broadcast_to(np.asarray(w, dtype=float), y.shape)
        finite = np.isfinite(w)
        uniform = finite.all() and np.all(w == w.flat[0])

    counter = WorkCounter()
    if uniform:
        factor = float(s) / float(y.sum())
        beta = y * factor
        lam = -math.log(factor)
        counter.add(1.0)
        diag = {
            "path": "1d_closed_form", "outer_iters": 0, "matvecs": counter.units,
            "dual_obj": None, "grad_norm": 0.0,
            "cons_violation": abs(float(beta.sum()) - float(s)),
            "converged": True, "trace": [],
        }
        return Solution(beta, np.array([lam]), np.zeros(0), diag)

    loss = EntropicLoss(y, w)
    lam = 0.0

    def dual(l):
        return l * s + float(loss.conjugate(np.full(y.shape, -l)))

    obj = dual(lam)
    trace = []
    converged = False
    for it in range(opts.max_outer):
        z = np.full(y.shape, -lam)
        beta = loss.grad_conjugate(z)
        g = float(s - beta.sum())
        h = float(loss.hess_conjugate_diag(z).sum())
        counter.add(1.0)
        trace.append(_trace_entry(it, counter, obj, abs(g), abs(g)))
        if abs(g) <= max(opts.grad_tol, opts.cons_tol * 1e-2):
            converged = True
            break
        step = -g / h
        t = 1.0
        slack = 1e-14 * max(1.0, abs(obj))
        while t >= opts.min_step:
            trial = dual(lam + t * step)
            counter.add(0.5)
            if np.isfinite(trial) and trial <= obj + opts.armijo_c * t * g * step + slack:
                break
            t *= 0.5
        else:
            break
        lam += t * step
        obj = trial

    z = np.full(y.shape, -lam)
    beta = loss.grad_conjugate(z)
    violation = abs(float(beta.sum()) - float(s))
    if not (converged or violation <= opts.cons_tol):
        raise NoConvergence(
            f"1D weighted rake stalled at |sum(beta) - s| = {violation:.3e}",
            grad_norm=violation, cons_violation=violation)
    diag = {
        "path": "1d_weighted_newton", "outer_iters": len(trace), "matvecs": counter.units,
        "dual_obj": dual(lam), "grad_norm": violation, "cons_violation": violation,
        "converged": True, "trace": trace,
    }
    return Solution(beta, np.array([lam]), np.zeros(0), diag)


# ---------------------------------------------------------------------------
# chi-square closed form
# ---------------------------------------------------------------------------

def solve_chi2_closed_form(problem: Problem, options=None) -> Solution:
    """Direct dual solve for the quadratic loss with constraint aggregates.

    The dual is a quadratic, so lambda solves (A S A^T) lambda = A y - s
    with S the constant conjugate curvature y/w.
    """
    opts = options or SolverOptions()
    if problem.loss_kind != "chi2":
        raise InputError("closed form applies to the chi2 loss only")
    if problem.k_b:
        raise InputError("closed form needs all aggregates as constraints")
    if problem.missing_idx.size:
        raise InputError("closed form does not support missing cells")

    counter = WorkCounter()
    loss = problem.granular_loss()
    y = np.zeros(problem.p)
    y[problem.obs_idx] = problem.y_obs
    s_diag = np.zeros(problem.p)
    s_diag[problem.obs_idx] = loss.hess_conjugate_diag(np.zeros(problem.n_obs))

    if problem.k_a == 0:
        lam = np.zeros(0)
        beta = y.copy()
    else:
        H = gram(problem.A, s_diag)
        rhs = problem.A.apply(y, counter=counter) - problem.s
        counter.add(problem.k_a)  # dense Hessian assembly, one pass per row
        try:
            lam = cho_solve((np.linalg.cholesky(H), True), rhs)
        except np.linalg.LinAlgError:
            raise SingularSystem("A S A^T is singular; prune constraints first")
        z = -problem.A.apply_transpose(lam, counter=counter)
        beta = np.zeros(problem.p)
        beta[problem.obs_idx] = loss.grad_conjugate(z[problem.obs_idx])

    violation = _inf_norm(problem.A.apply(beta) - problem.s) if problem.k_a else 0.0
    diag = {
        "path": "chi2_closed_form", "outer_iters": 1, "matvecs": counter.units,
        "dual_obj": None, "grad_norm": violation, "cons_violation": violation,
        "converged": True, "trace": [],
    }
    return Solution(beta, lam, np.zeros(0), diag)


# ---------------------------------------------------------------------------
# 2D IPF
# ---------------------------------------------------------------------------

def solve_ipf_2d(y, s_r, s_c, options=None) -> Solution:
    """Iterative proportional fitting of a strictly positive m-by-n table.

    Alternates closed-form row and column multiplier updates (block
    maximization of the entropic dual) until the worst margin violation
    falls under ``cons_tol``. One half-sweep counts as one matvec.
    """
    opts = options or SolverOptions()
    y = np.asarray(y, dtype=float)
    s_r = np.asarray(s_r, dtype=float)
    s_c = np.asarray(s_c, dtype=float)
    if y.ndim != 2:
        raise InputError("IPF needs a 2D table")
    m, n = y.shape
    if s_r.shape != (m,) or s_c.shape != (n,):
        raise InputError("margin lengths must match the table shape")
    if np.any(y <= 0) or np.any(s_r <= 0) or np.any(s_c <= 0):
        raise NonPositiveInput("IPF needs strictly positive table and margins")
    total_r, total_c = float(s_r.sum()), float(s_c.sum())
    if abs(total_r - total_c) > 1e-8 * max(1.0, abs(total_r), abs(total_c)):
        raise InconsistentMargins(
            f"row margins sum to {total_r:.12g} but column margins to {total_c:.12g}")

    counter = WorkCounter()
    alpha = np.ones(m)
    gamma = np.ones(n)
    trace = []
    converged = False
    sweeps = 0

    def current():
        beta = y * alpha[:, None] * gamma[None, :]
        violation = max(_inf_norm(beta.sum(axis=1) - s_r),
                        _inf_norm(beta.sum(axis=0) - s_c))
        obj = (-float(s_r @ np.log(alpha)) - float(s_c @ np.log(gamma))
               + float(beta.sum() - y.sum()))
        return beta, violation, obj

    beta, violation, obj = current()
    trace.append(_trace_entry(0, counter, obj, violation, violation))
    if violation <= opts.cons_tol:
        converged = True

    while not converged and sweeps < opts.ipf_max_sweeps:
        alpha = s_r / (y @ gamma)
        counter.add(1.0)
        sweeps += 1
        beta, violation, obj = current()
        if sweeps % opts.trace_every == 0:
            trace.append(_trace_entry(sweeps, counter, obj, violation, violation))
        if violation <= opts.cons_tol:
            converged = True
            break

        gamma = s_c / (y.T @ alpha)
        counter.add(1.0)
        sweeps += 1
        beta, violation, obj = current()
        if sweeps % opts.trace_every == 0:
            trace.append(_trace_entry(sweeps, counter, obj, violation, violation))
        if violation <= opts.cons_tol:
            converged = True

    if not converged:
        raise NoConvergence(
            f"IPF stalled at violation {violation:.3e} after {sweeps} sweeps",
            cons_violation=violation)

    lam = np.concatenate([-np.log(alpha), -np.log(gamma)])
    diag = {
        "path": "ipf_2d", "outer_iters": sweeps, "matvecs": counter.units,
        "dual_obj": obj, "grad_norm": violation, "cons_violation": violation,
        "converged": True, "trace": trace,
    }
    return Solution(beta.ravel(), lam, np.zeros(0), diag)


# ---------------------------------------------------------------------------
# general Newton on the (reduced) dual
# ---------------------------------------------------------------------------

class _DualModel:
    """Joint dual over (lambda_A, lambda_B) with optional missing-cell
    equality constraints; evaluates objective, gradient, curvature and
    Hessian actions matrix-free."""

    def __init__(self, problem: Problem, counter: WorkCounter):
        self.problem = problem
        self.counter = counter
        self.loss1 = problem.granular_loss()
        self.loss2 = problem.aggregate_loss()
        self.k_a, self.k_b = problem.k_a, problem.k_b
        self.k = self.k_a + self.k_b
        ops = []
        if self.k_a:
            ops.append(problem.A)
        if self.k_b:
            ops.append(problem.B)
        self.op = stack(ops) if ops else AggOperator([], problem.p)
        self.obs_idx = problem.obs_idx
        self.miss_idx = problem.missing_idx
        # dual equality constraints: one per missing cell, coefficients are
        # that cell's memberships across the stacked rows
        if self.miss_idx.size:
            dense_cols = np.zeros((self.k, self.miss_idx.size))
            pos = {c: t for t, c in enumerate(self.miss_idx)}
            for r in range(self.k):
                for c in self.op.row(r):
                    t = pos.get(int(c))
                    if t is not None:
                        dense_cols[r, t] = 1.0
            self.C = dense_cols.T          # (n_miss, k)
            self.pinv_C = np.linalg.pinv(self.C)
            self.pinv_CT = np.linalg.pinv(self.C.T)
        else:
            self.C = None

    def split(self, lam):
        return lam[:self.k_a], lam[self.k_a:]

    def z_full(self, lam):
        return -self.op.apply_transpose(lam, counter=self.counter)

    def objective(self, lam, z_full=None):
        z = self.z_full(lam) if z_full is None else z_full
        lam_a, lam_b = self.split(lam)
        val = float(lam_a @ self.problem.s) + float(self.loss1.conjugate(z[self.obs_idx]))
        if self.loss2 is not None:
            val += float(self.loss2.conjugate(lam_b))
        return val

    def state(self, lam, z_full=None):
        """Objective, gradient, scattered beta and curvature at lam."""
        z = self.z_full(lam) if z_full is None else z_full
        z_obs = z[self.obs_idx]
        lam_a, lam_b = self.split(lam)
        beta_obs = self.loss1.grad_conjugate(z_obs)
        beta_t = np.zeros(self.problem.p)
        beta_t[self.obs_idx] = beta_obs
        agg = self.op.apply(beta_t, counter=self.counter)
        zeta = (self.loss2.grad_conjugate(lam_b)
                if self.loss2 is not None else np.zeros(0))
        grad = np.concatenate([self.problem.s - agg[:self.k_a], zeta - agg[self.k_a:]])
        obj = float(lam_a @ self.problem.s) + float(self.loss1.conjugate(z_obs))
        if self.loss2 is not None:
            obj += float(self.loss2.conjugate(lam_b))
        s_diag = np.zeros(self.problem.p)
        s_diag[self.obs_idx] = self.loss1.hess_conjugate_diag(z_obs)
        d2 = (self.loss2.hess_conjugate_diag(lam_b)
              if self.loss2 is not None else np.zeros(0))
        violation = _inf_norm(agg[:self.k_a] - self.problem.s)
        return obj, grad, beta_t, zeta, s_diag, d2, violation

    def projected_gradient(self, grad):
        if self.C is None:
            return grad
        nu = -self.pinv_CT @ grad
        return grad + self.C.T @ nu

    def project_feasible(self, lam):
        if self.C is None:
            return lam
        return lam - self.pinv_C @ (self.C @ lam)

    def hess_vec(self, s_diag, d2, v):
        out = hvp(self.op, s_diag, v, counter=self.counter)
        if self.k_b:
            out[self.k_a:] += d2 * v[self.k_a:]
        return out

    def hess_diag(self, s_diag, d2):
        h = hvp_diagonal(self.op, s_diag, counter=self.counter)
        if self.k_b:
            h[self.k_a:] += d2
        return h


def _newton_direction(model, grad, s_diag, d2, opts):
    """Inexact Newton step; with missing cells this is a per-step KKT solve
    confined to the dual constraint null space."""
    k = model.k
    h_diag = model.hess_diag(s_diag, d2)
    floor = 1e-12 * max(float(h_diag.max(initial=0.0)), 1.0)
    h_prec = np.maximum(h_diag, floor)

    if model.C is None:
        mv = lambda v: model.hess_vec(s_diag, d2, v)
        prec = 1.0 / h_prec
        b = -grad
        size = k
    else:
        n_miss = model.C.shape[0]

        def mv(v):
            d, nu = v[:k], v[k:]
            top = model.hess_vec(s_diag, d2, d) + model.C.T @ nu
            return np.concatenate([top, model.C @ d])

        prec = np.concatenate([1.0 / h_prec, np.ones(n_miss)])
        b = np.concatenate([-grad, np.zeros(n_miss)])
        size = k + n_miss

    A_op = LinearOperator((size, size), matvec=mv)
    M_op = LinearOperator((size, size), matvec=lambda v: prec * v)
    x, info = minres(A_op, b, rtol=opts.krylov_rtol, maxiter=opts.krylov_maxit, M=M_op)
    if info < 0:
        x, info = minres(A_op, b, rtol=opts.krylov_rtol,
                         maxiter=2 * opts.krylov_maxit)
        if info < 0:
            raise SingularSystem("MINRES breakdown on the dual Newton system")
    d = x[:k]
    slope = float(grad @ d)
    if not np.isfinite(slope) or slope >= 0.0:
        # fall back to a preconditioned steepest-descent step
        d = -grad / h_prec
        if model.C is not None:
            d = model.project_feasible(d)
        slope = float(grad @ d)
    return d, slope


def _recover_missing(problem, beta_t, zeta):
    """Solve for unobserved cells from the aggregate structure.

    The stacked operator columns at the missing coordinates must have full
    rank; otherwise the cells are flagged unrecoverable.
    """
    miss = problem.missing_idx
    k = problem.k_a + problem.k_b
    cols = np.zeros((k, miss.size))
    pos = {int(c): t for t, c in enumerate(miss)}
    rows = [problem.A.row(i) for i in range(problem.k_a)]
    rows += [problem.B.row(i) for i in range(problem.k_b)]
    for r, members in enumerate(rows):
        for c in members:
            t = pos.get(int(c))
            if t is not None:
                cols[r, t] = 1.0
    rhs = np.concatenate([problem.s, zeta])
    rhs -= np.concatenate([problem.A.apply(beta_t), problem.B.apply(beta_t)])
    if miss.size == 0:
        return np.zeros(0), True, 0.0
    svals = np.linalg.svd(cols, compute_uv=False) if k else np.zeros(1)
    ok = k > 0 and svals.size >= miss.size and \
        svals[min(miss.size, svals.size) - 1] > RECOVERY_RANK_TOL * max(svals[0], 1.0)
    if not ok:
        return np.full(miss.size, np.nan), False, math.nan
    sol, *_ = np.linalg.lstsq(cols, rhs, rcond=None)
    residual = _inf_norm(cols @ sol - rhs)
    return sol, True, residual


def _solve_newton_core(problem: Problem, opts: SolverOptions, path: str) -> Solution:
    counter = WorkCounter()
    model = _DualModel(problem, counter)
    lam = np.zeros(model.k)
    z_cache = np.zeros(problem.p)

    trace = []
    converged = False
    obj, grad, beta_t, zeta, s_diag, d2, violation = model.state(lam, z_full=z_cache)
    pg = model.projected_gradient(grad)
    grad_norm = _inf_norm(pg)
    trace.append(_trace_entry(0, counter, obj, grad_norm, violation))
    line_search_floor = False
    it = 0

    while it < opts.max_outer:
        if grad_norm <= opts.grad_tol:
            converged = True
            break
        d, slope = _newton_direction(model, pg, s_diag, d2, opts)
        t = 1.0
        accepted = False
        slack = 1e-14 * max(1.0, abs(obj))   # rounding allowance near the floor
        while t >= opts.min_step:
            lam_trial = lam + t * d
            z_trial = model.z_full(lam_trial)
            obj_trial = model.objective(lam_trial, z_full=z_trial)
            if np.isfinite(obj_trial) and \
                    obj_trial <= obj + opts.armijo_c * t * slope + slack:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            line_search_floor = True
            break
        lam = model.project_feasible(lam_trial)
        z_cache = z_trial if model.C is None else model.z_full(lam)
        it += 1
        obj, grad, beta_t, zeta, s_diag, d2, violation = model.state(lam, z_full=z_cache)
        pg = model.projected_gradient(grad)
        grad_norm = _inf_norm(pg)
        trace.append(_trace_entry(it, counter, obj, grad_norm, violation))

    if grad_norm <= opts.grad_tol:
        converged = True
    if not converged:
        floor_ok = violation <= opts.cons_tol and \
            (model.k_a > 0 or grad_norm <= opts.cons_tol)
        if floor_ok:
            converged = True
        else:
            reason = "line search floor" if line_search_floor else "iteration limit"
            raise NoConvergence(
                f"dual Newton stopped at {reason}: grad {grad_norm:.3e}, "
                f"violation {violation:.3e}",
                grad_norm=grad_norm, cons_violation=violation)

    beta = beta_t.copy()
    missing_ok = True
    recovery_residual = 0.0
    if problem.missing_idx.size:
        vals, missing_ok, recovery_residual = _recover_missing(problem, beta_t, zeta)
        beta[problem.missing_idx] = vals
        if missing_ok:
            violation = _inf_norm(problem.A.apply(beta) - problem.s) if problem.k_a else 0.0

    diag = {
        "path": path, "outer_iters": it, "matvecs": counter.units,
        "dual_obj": obj, "grad_norm": grad_norm, "cons_violation": violation,
        "converged": bool(converged), "trace": trace,
        "missing_recovery_residual": recovery_residual,
    }
    sol = Solution(beta, lam, zeta, diag,
                   missing_idx=problem.missing_idx.copy(),
                   missing_recovered=missing_ok)
    if not missing_ok:
        raise MissingUnrecoverable(
            "aggregate structure does not identify the missing cells "
            f"(columns at {problem.missing_idx.tolist()} are rank deficient); "
            "observed raked values attached", solution=sol)
    return sol


def solve_newton_dual(problem: Problem, options=None) -> Solution:
    """Damped inexact Newton on the joint dual multipliers."""
    opts = options or SolverOptions()
    path = "reduced_dual_newton" if problem.missing_idx.size else "newton_dual"
    return _solve_newton_core(problem, opts, path)


def solve_missing(problem: Problem, options=None) -> Solution:
    """Reduced-dual Newton with missing-cell recovery.

    Without missing coordinates this is exactly the generic Newton solve.
    """
    opts = options or SolverOptions()
    path = "reduced_dual_newton" if problem.missing_idx.size else "newton_dual"
    return _solve_newton_core(problem, opts, path)


# ---------------------------------------------------------------------------
# dispatch
# ---------------------------------------------------------------------------

def _is_simple_1d(problem: Problem) -> bool:
    if problem.loss_kind != "entropic" or problem.k_b or problem.missing_idx.size:
        return False
    if problem.k_a != 1 or problem.A.row(0).size != problem.p:
        return False
    return bool(np.all(problem.y_obs > 0) and problem.s[0] > 0)


def _ipf_pieces(problem: Problem):
    """Extract (y, s_r, s_c) for the specialized 2D IPF path, inferring a
    pruned margin from the retained ones when needed."""
    if problem.loss_kind != "entropic" or problem.k_b or problem.missing_idx.size:
        raise InputError("IPF path needs a 2D entropic problem with constraint margins only")
    if len(problem.shape) != 2 or problem.n_obs != problem.p:
        raise InputError("IPF path needs a fully observed 2D table")
    if not np.all(problem.w_obs == 1.0):
        raise InputError("IPF path supports unweighted raking only")
    m, n = problem.shape
    y = np.zeros(problem.p)
    y[problem.obs_idx] = problem.y_obs
    y = y.reshape(m, n)
    s_r = np.full(m, np.nan)
    s_c = np.full(n, np.nan)
    sent = [d.aggregate_sentinel for d in problem.dims]
    lv = [list(d.levels) for d in problem.dims]
    for label, sval in zip(problem.a_labels, problem.s):
        v1, v2 = label
        if v2 == sent[1] and v1 != sent[0]:
            s_r[lv[0].index(v1)] = sval
        elif v1 == sent[0] and v2 != sent[1]:
            s_c[lv[1].index(v2)] = sval
        else:
            raise InputError(f"aggregate {label} is not a single-dimension margin")
    for vec, other in ((s_r, s_c), (s_c, s_r)):
        hole = np.isnan(vec)
        if hole.sum() == 1 and not np.isnan(other).any():
            vec[hole] = other.sum() - vec[~hole].sum()
    if np.isnan(s_r).any() or np.isnan(s_c).any():
        raise InputError("IPF path needs complete row and column margins")
    return y, s_r, s_c


def solve(problem: Problem, options=None, force_path=None) -> Solution:
    """Dispatch to the most specialized applicable solver.

    ``force_path`` overrides dispatch with one of 1d_closed_form,
    chi2_closed_form, ipf_2d, newton_dual or reduced_dual_newton; the
    chosen path is recorded in the diagnostics.
    """
    opts = options or SolverOptions()

    if force_path in (None, "auto"):
        if problem.missing_idx.size:
            force_path = "reduced_dual_newton"
        elif problem.loss_kind == "chi2" and problem.k_b == 0:
            force_path = "chi2_closed_form"
        elif _is_simple_1d(problem):
            force_path = "1d_closed_form"
        else:
            force_path = "newton_dual"

    if force_path == "1d_closed_form":
        if not _is_simple_1d(problem):
            raise InputError("1D closed form needs an entropic problem whose single "
                             "constraint is the total")
        w_obs = problem.w_obs
        uniform = np.all(np.isfinite(w_obs)) and np.all(w_obs == w_obs[0])
        sol = solve_1d_entropic(problem.y_obs, float(problem.s[0]),
                                w=None if uniform else w_obs, options=opts)
        beta = np.zeros(problem.p)
        beta[problem.obs_idx] = sol.beta
        sol.beta = beta
        return sol
    if force_path == "chi2_closed_form":
        return solve_chi2_closed_form(problem, opts)
    if force_path == "ipf_2d":
        y, s_r, s_c = _ipf_pieces(problem)
        return solve_ipf_2d(y, s_r, s_c, opts)
    if force_path in ("newton_dual", "reduced_dual_newton"):
        return _solve_newton_core(
            problem, opts,
            "reduced_dual_newton" if problem.missing_idx.size else "newton_dual")
    raise InputError(f"unknown solver path {force_path!r}")
