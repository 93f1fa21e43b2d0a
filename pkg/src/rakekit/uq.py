"""Covariance propagation through the raking map.

The raked values solve the stationarity system F(beta, lambda; y, s) = 0,
so differentiating implicitly gives the sensitivity d(beta)/d(y, s) as the
solution of one linear system with the KKT Jacobian; the covariance of the
raked values is then sens @ Sigma @ sens.T. A closed form exists for the
quadratic loss, and a seeded Monte-Carlo driver (rake every draw of the
inputs) serves as the brute-force baseline.

Coordinates follow the problem layout: the first n_obs columns of any
(y, s) object are the observed cells in index order, the remaining k_A the
pruned constraint margins. Supported in this version are problems whose
aggregates are all constraints and whose cells are all observed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, minres

from .errors import (
    DrawSolveFailed,
    IndexOutOfRange,
    InputError,
    NotConverged,
    SingularKKT,
    SingularSystem,
)
from .linop import gram
from .losses import make_loss
from .solver import Solution, SolverOptions, solve
from .table import Problem

DENSE_KKT_CAP = 2000
SYMMETRY_TOL = 1e-12
PSD_TOL = 1e-10


@dataclass
class InputCovariance:
    """Symmetric PSD covariance of the stacked (y, s) inputs."""

    sigma: np.ndarray

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=float)
        if sigma.ndim == 1:
            sigma = np.diag(sigma)
        if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
            raise InputError("covariance must be square (or a 1D variance diagonal)")
        scale = max(float(np.abs(sigma).max(initial=0.0)), 1.0)
        if np.abs(sigma - sigma.T).max(initial=0.0) > SYMMETRY_TOL * scale:
            raise InputError("covariance is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        eigmin = float(np.linalg.eigvalsh(sigma)[0]) if sigma.size else 0.0
        if eigmin < -PSD_TOL * scale:
            raise InputError(f"covariance is not PSD (smallest eigenvalue {eigmin:.3e})")
        self.sigma = sigma

    @classmethod
    def from_variances(cls, var_y, var_s=None):
        """Diagonal covariance from per-cell (and optional per-margin) variances."""
        var_y = np.atleast_1d(np.asarray(var_y, dtype=float))
        var_s = np.zeros(0) if var_s is None else np.atleast_1d(np.asarray(var_s, dtype=float))
        return cls(np.concatenate([var_y, var_s]))

    @property
    def dim(self):
        return self.sigma.shape[0]

    def factor(self):
        """A matrix L with L L^T = sigma (eigen-based, tolerates semidefiniteness)."""
        vals, vecs = np.linalg.eigh(self.sigma)
        vals = np.clip(vals, 0.0, None)
        return vecs * np.sqrt(vals)


@dataclass
class CovarianceResult:
    """Raked-value covariance and the sensitivity d(beta)/d(y, s)."""

    sigma_beta: np.ndarray
    sensitivity: np.ndarray

    @property
    def sd(self):
        return np.sqrt(np.clip(np.diag(self.sigma_beta), 0.0, None))


def _check_uq_supported(problem: Problem):
    if problem.k_b:
        raise InputError("uncertainty propagation supports constraint aggregates only")
    if problem.missing_idx.size:
        raise InputError("uncertainty propagation requires fully observed tables")


def _check_sigma_dim(problem: Problem, input_cov: InputCovariance):
    want = problem.n_obs + problem.k_a
    if input_cov.dim != want:
        raise InputError(
            f"covariance has dimension {input_cov.dim}, expected n_obs + k_A = {want}")


def delta_covariance(problem: Problem, solution: Solution,
                     input_cov: InputCovariance) -> CovarianceResult:
    """First-order covariance of the raked values via implicit differentiation.

    Assembles the KKT Jacobian [[W f'', A^T], [A, 0]] at the solution and
    solves it against the mixed-derivative block; coordinates pinned by an
    infinite weight are eliminated first (their raked value tracks their
    own observation exactly).
    """
    _check_uq_supported(problem)
    _check_sigma_dim(problem, input_cov)
    if not solution.diagnostics.get("converged", False):
        raise NotConverged("delta method needs a converged solution")

    p, k = problem.p, problem.k_a
    loss = problem.granular_loss()
    beta = solution.beta
    pinned = np.isinf(problem.w_obs)
    free = ~pinned
    free_idx = np.flatnonzero(free)
    nf = free_idx.size

    h = loss.hess_primal_diag(beta)        # w f''(beta)
    mixed = loss.dgrad_dy_diag(beta)        # w d(f')/dy
    a_dense = problem.A.assemble_dense() if k else np.zeros((0, p))
    a_free = a_dense[:, free_idx]
    a_pin = a_dense[:, ~free] if pinned.any() else None

    # right-hand sides of the implicit-function system, one per input:
    # observed-cell columns hit the scoring rows, margin columns (and the
    # pinned cells they force) hit the constraint rows
    n_in = p + k
    rhs = np.zeros((nf + k, n_in))
    rhs[np.arange(nf), free_idx] = -mixed[free_idx]
    if pinned.any() and k:
        rhs[nf:, np.flatnonzero(pinned)] = -a_pin
    if k:
        rhs[nf:, p:] = np.eye(k)

    if nf + k <= DENSE_KKT_CAP:
        kkt = np.zeros((nf + k, nf + k))
        kkt[:nf, :nf] = np.diag(h[free_idx])
        kkt[:nf, nf:] = a_free.T
        kkt[nf:, :nf] = a_free
        try:
            x = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            raise SingularKKT("KKT Jacobian is singular; check constraint rank "
                              "and loss curvature")
        cond_probe = np.linalg.norm(kkt @ x - rhs) / max(np.linalg.norm(rhs), 1.0)
        if not np.isfinite(cond_probe) or cond_probe > 1e-6:
            raise SingularKKT("KKT solve is numerically unreliable")
    else:
        x = _kkt_solve_krylov(h[free_idx], a_free, rhs)

    sens = np.zeros((p, n_in))
    sens[free_idx, :] = x[:nf, :]
    if pinned.any():
        sens[np.flatnonzero(pinned), np.flatnonzero(pinned)] = 1.0

    sigma_beta = sens @ input_cov.sigma @ sens.T
    return CovarianceResult(0.5 * (sigma_beta + sigma_beta.T), sens)


def _kkt_solve_krylov(h_free, a_free, rhs):
    nf = h_free.size
    k = a_free.shape[0]

    def mv(v):
        top = h_free * v[:nf] + a_free.T @ v[nf:]
        return np.concatenate([top, a_free @ v[:nf]])

    op = LinearOperator((nf + k, nf + k), matvec=mv)
    prec_diag = np.concatenate([np.maximum(h_free, 1e-12), np.ones(k)])
    M = LinearOperator((nf + k, nf + k), matvec=lambda v: v / prec_diag)
    out = np.empty_like(rhs)
    for j in range(rhs.shape[1]):
        x, info = minres(op, rhs[:, j], rtol=1e-12, maxiter=10 * (nf + k), M=M)
        if info != 0:
            raise SingularKKT(f"Krylov KKT solve failed on column {j} (info {info})")
        out[:, j] = x
    return out


def chi2_closed_form_covariance(problem: Problem,
                                input_cov: InputCovariance) -> CovarianceResult:
    """Exact covariance for the quadratic loss.

    The raked values are affine in (y, s): beta = T y + U s with
    T = I - W^{-1} A^T Phi^{-1} A, U = W^{-1} A^T Phi^{-1}, Phi = A W^{-1} A^T,
    where W holds the quadratic curvatures w/y.
    """
    _check_uq_supported(problem)
    _check_sigma_dim(problem, input_cov)
    if problem.loss_kind != "chi2":
        raise InputError("closed-form covariance applies to the chi2 loss only")

    p, k = problem.p, problem.k_a
    w_inv = np.where(np.isinf(problem.w_obs), 0.0, problem.y_obs / problem.w_obs)
    if k:
        a_dense = problem.A.assemble_dense()
        phi = gram(problem.A, w_inv)
        try:
            phi_inv = np.linalg.inv(phi)
        except np.linalg.LinAlgError:
            raise SingularSystem("A W^{-1} A^T is singular")
        u = (w_inv[:, None] * a_dense.T) @ phi_inv
        t = np.eye(p) - u @ a_dense
    else:
        u = np.zeros((p, 0))
        t = np.eye(p)

    sens = np.concatenate([t, u], axis=1)
    sig = input_cov.sigma
    sigma_beta = sens @ sig @ sens.T
    return CovarianceResult(0.5 * (sigma_beta + sigma_beta.T), sens)


def sensitivity_query(result: CovarianceResult, target=None, source=None):
    """One row (influences on a raked value) or column (influence of one
    input on all raked values) of the sensitivity matrix."""
    if (target is None) == (source is None):
        raise InputError("specify exactly one of target (beta row) or source (input column)")
    p, n_in = result.sensitivity.shape
    if target is not None:
        if not 0 <= target < p:
            raise IndexOutOfRange(f"target {target} outside [0, {p})")
        return result.sensitivity[target, :].copy()
    if not 0 <= source < n_in:
        raise IndexOutOfRange(f"source {source} outside [0, {n_in})")
    return result.sensitivity[:, source].copy()


# ---------------------------------------------------------------------------
# Monte Carlo baseline
# ---------------------------------------------------------------------------

def monte_carlo_covariance(problem: Problem, input_cov: InputCovariance,
                           n_draws, rng_seed, options=None, chunk=100_000):
    """Rake every draw of (y, s) and return sample statistics.

    Draws are multivariate normal around the problem inputs with the given
    covariance; each draw's margins constrain that draw's rake. Returns
    (mean_beta, sample_cov, draws_beta), deterministic for a fixed seed.
    """
    _check_uq_supported(problem)
    _check_sigma_dim(problem, input_cov)
    if n_draws < 2:
        raise InputError("need at least 2 draws for a sample covariance")
    opts = options or SolverOptions()

    p, k = problem.p, problem.k_a
    theta = np.concatenate([problem.y_obs, problem.s])
    fact = input_cov.factor()
    rng = np.random.default_rng(rng_seed)

    use_batch = k * p <= 10**6 and problem.loss_kind in ("chi2", "entropic", "logistic")
    a_dense = problem.A.assemble_dense() if (k and use_batch) else None

    beta_draws = np.empty((n_draws, p))
    done = 0
    while done < n_draws:
        m = min(chunk, n_draws - done)
        z = rng.standard_normal((m, fact.shape[1]))
        draws = theta[None, :] + z @ fact.T
        y_d, s_d = draws[:, :p], draws[:, p:]
        if use_batch:
            beta_chunk = _rake_batch(problem, y_d, s_d, a_dense, opts, first_index=done)
        else:
            beta_chunk = _rake_loop(problem, y_d, s_d, opts, first_index=done)
        beta_draws[done:done + m] = beta_chunk
        done += m

    mean_beta = beta_draws.mean(axis=0)
    centered = beta_draws - mean_beta
    sample_cov = centered.T @ centered / (n_draws - 1)
    return mean_beta, sample_cov, beta_draws


def _rake_loop(problem, y_d, s_d, opts, first_index):
    out = np.empty_like(y_d)
    for i in range(y_d.shape[0]):
        prob_i = _with_inputs(problem, y_d[i], s_d[i])
        try:
            out[i] = solve(prob_i, opts).beta
        except Exception as exc:
            raise DrawSolveFailed(f"draw {first_index + i} failed: {exc}",
                                  draw_index=first_index + i) from exc
    return out


def _with_inputs(problem: Problem, y, s):
    import copy
    prob = copy.copy(problem)
    prob.y_obs = np.asarray(y, dtype=float)
    prob.s = np.asarray(s, dtype=float)
    return prob


def _rake_batch(problem, y_d, s_d, a_dense, opts, first_index):
    """Vectorized dense dual Newton across draws (small dense problems).

    Draws are raked exactly as sampled: sign checks on the references are
    skipped (a Gaussian draw may dip below zero), so occasional draws sit
    on the analytic continuation of the loss. Logistic bounds stay hard.
    """
    n, p = y_d.shape
    k = problem.k_a
    lo = problem.lower[problem.obs_idx] if problem.lower is not None else None
    hi = problem.upper[problem.obs_idx] if problem.upper is not None else None
    if problem.loss_kind == "logistic":
        bad = (y_d <= lo) | (y_d >= hi)
        if bad.any():
            i = int(np.flatnonzero(bad.any(axis=1))[0])
            raise DrawSolveFailed(
                f"draw {first_index + i}: sampled value outside the logistic bounds",
                draw_index=first_index + i)

    def loss_for(y_rows):
        return make_loss(problem.loss_kind, y_rows, problem.w_obs,
                         lower=lo, upper=hi, validate=False)

    loss = loss_for(y_d)
    if k == 0:
        return y_d.copy()

    if problem.loss_kind == "chi2":
        s_diag = loss.hess_conjugate_diag(np.zeros((n, p)))
        h = np.matmul(a_dense[None, :, :] * s_diag[:, None, :], a_dense.T)
        rhs = y_d @ a_dense.T - s_d
        try:
            lam = np.linalg.solve(h, rhs[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise DrawSolveFailed(f"chi2 batch solve failed: {exc}",
                                  draw_index=first_index) from exc
        return loss.grad_conjugate(-lam @ a_dense)

    lam = np.zeros((n, k))

    def objective(lam_):
        return np.einsum("nk,nk->n", lam_, s_d) + loss.conjugate(-lam_ @ a_dense)

    obj = objective(lam)
    gnorm = np.full(n, np.inf)
    for _ in range(2 * opts.max_outer):
        z = -lam @ a_dense
        beta = loss.grad_conjugate(z)
        grad = s_d - np.einsum("np,kp->nk", beta, a_dense)
        gnorm = np.abs(grad).max(axis=1)
        active = gnorm > opts.grad_tol
        if not active.any():
            break
        s_diag = loss.hess_conjugate_diag(z)
        idx = np.flatnonzero(active)
        h = np.matmul(a_dense[None, :, :] * s_diag[idx, None, :], a_dense.T)
        # tiny ridge keeps draws on the analytic continuation factorizable
        h += 1e-14 * np.trace(h, axis1=1, axis2=2)[:, None, None] * np.eye(k)
        try:
            step = -np.linalg.solve(h, grad[idx, :, None])[..., 0]
        except np.linalg.LinAlgError:
            step = -grad[idx]
        slope = np.einsum("nk,nk->n", grad[idx], step)
        descent = slope < 0
        step[~descent] = -grad[idx][~descent]
        slope = np.einsum("nk,nk->n", grad[idx], step)

        t = np.ones(idx.size)
        remaining = np.ones(idx.size, dtype=bool)
        lam_new = lam[idx].copy()
        for _ in range(60):
            if not remaining.any():
                break
            rows = idx[remaining]
            trial_lam = lam[rows] + t[remaining, None] * step[remaining]
            sub_loss = loss_for(y_d[rows])
            trial_obj = np.einsum("nk,nk->n", trial_lam, s_d[rows]) \
                + sub_loss.conjugate(-trial_lam @ a_dense)
            # rounding allowance keeps the test meaningful once the true
            # decrease falls below float precision at the objective's scale
            slack = 1e-14 * np.maximum(1.0, np.abs(obj[rows]))
            ok = np.isfinite(trial_obj) & (
                trial_obj <= obj[rows] + opts.armijo_c * t[remaining] * slope[remaining]
                + slack)
            rem_ids = np.flatnonzero(remaining)
            lam_new[rem_ids[ok]] = trial_lam[ok]
            remaining[rem_ids[ok]] = False
            t[remaining] *= 0.5
        if remaining.any():
            bad = int(idx[np.flatnonzero(remaining)[0]])
            raise DrawSolveFailed(
                f"draw {first_index + bad}: line search failed in batched Newton",
                draw_index=first_index + bad)
        lam[idx] = lam_new
        obj = objective(lam)
    else:
        bad = int(np.argmax(gnorm))
        raise DrawSolveFailed(
            f"draw {first_index + bad}: batched Newton hit the iteration limit "
            f"(residual {gnorm[bad]:.3e})", draw_index=first_index + bad)

    return loss.grad_conjugate(-lam @ a_dense)
