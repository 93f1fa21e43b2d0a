"""Synthetic experiment suite behind ``rakekit experiment``.

Each scenario regenerates a small study end to end from a seed and returns
plot-ready tables as (column names, rows) pairs; the CLI writes them as
CSV. Scenarios:

* ``loss_comparison``: one 4x5 table raked under all three losses, showing
  sign and bound behavior of the raked values.
* ``weights_simulation``: two binomial death rates raked to a known total,
  with and without inverse-variance weights, across many simulations.
* ``aggregate_observations``: a noisy 3x4x5 table whose 47 exact margins
  enter as soft observations with increasing weight.
* ``missing_data``: the same 3D layout with one fiber removed, comparing
  four treatments of the missing cells against a no-missing baseline.
* ``uq_comparison``: a 3x5 table with a known input covariance, comparing
  delta-method uncertainties against raked-draws sample statistics.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.special import expit, logit

from .errors import UnknownExperiment
from .solver import SolverOptions, solve, solve_1d_entropic
from .table import build_problem, parse_table
from .uq import InputCovariance, delta_covariance, monte_carlo_covariance, \
    sensitivity_query

EXPERIMENT_NAMES = (
    "loss_comparison",
    "weights_simulation",
    "aggregate_observations",
    "missing_data",
    "uq_comparison",
)

INF = float("inf")


def _grid_records(values, weights, dim_names):
    records = []
    for cell in itertools.product(*(range(s) for s in values.shape)):
        rec = {n: c + 1 for n, c in zip(dim_names, cell)}
        rec["value"] = float(values[cell])
        rec["weights"] = float(weights[cell])
        records.append(rec)
    return records


def _margin_records(values, summed_axes, weight, dim_names, keep=None):
    """Aggregate rows for the sums of ``values`` over ``summed_axes``;
    ``keep`` optionally filters which kept-cells are emitted."""
    sums = np.asarray(values.sum(axis=tuple(summed_axes)))
    kept_axes = [k for k in range(values.ndim) if k not in summed_axes]
    records = []
    for kept_cell in itertools.product(*(range(values.shape[k]) for k in kept_axes)):
        if keep is not None and not keep(kept_cell):
            continue
        rec = {n: 0 for n in dim_names}
        for ax, lev in zip(kept_axes, kept_cell):
            rec[dim_names[ax]] = lev + 1
        rec["value"] = float(sums[kept_cell]) if kept_cell else float(sums)
        rec["weights"] = weight
        records.append(rec)
    return records


def run_experiment(name, seed, simulations=500, draws=(100, 1000, 10000),
                   gentle_noise=False, missing_weight=1e-3, loss="entropic"):
    """Run one named scenario; returns {table_name: (columns, rows)}."""
    if name == "loss_comparison":
        return loss_comparison(seed)
    if name == "weights_simulation":
        return weights_simulation(seed, simulations=simulations)
    if name == "aggregate_observations":
        return aggregate_observations(seed, gentle_noise=gentle_noise)
    if name == "missing_data":
        return missing_data(seed, gentle_noise=gentle_noise,
                            missing_weight=missing_weight)
    if name == "uq_comparison":
        return uq_comparison(seed, draws=draws, loss=loss)
    raise UnknownExperiment(
        f"unknown experiment {name!r}; expected one of {EXPERIMENT_NAMES}")


# ---------------------------------------------------------------------------

def loss_comparison(seed, shape=(4, 5), lower=0.5, upper=4.0):
    """Rake one table under chi2, entropic and logistic losses.

    Row sums are forced to 5 and column sums to 4 (consistent totals), well
    below the table's natural sums, with inverse-square weights.
    """
    rng = np.random.default_rng(seed)
    m, n = shape
    y = rng.uniform(2.0, 4.0, size=shape)
    weights = 1.0 / y**2
    names = ["X1", "X2"]
    base = _grid_records(y, weights, names)
    base += _margin_records(np.full(shape, 5.0 / n), (1,), INF, names)
    base += _margin_records(np.full(shape, 4.0 / m), (0,), INF, names)

    columns = ["loss", "X1", "X2", "value", "weight", "raked_value"]
    rows = []
    for kind in ("chi2", "entropic", "logistic"):
        data = parse_table(base, {n: 0 for n in names})
        kwargs = {"lower": lower, "upper": upper} if kind == "logistic" else {}
        prob = build_problem(data, loss=kind, **kwargs)
        beta = solve(prob).beta
        for (i, j), label in zip(itertools.product(range(m), range(n)),
                                 prob.labels()):
            idx = prob.cell_index(label)
            rows.append([kind, label[0], label[1], y[i, j], weights[i, j], beta[idx]])
    return {"raked": (columns, rows)}


def weights_simulation(seed, simulations=500, n_obs=10, margin=0.2, p_true=0.1,
                       bias_sd=0.5):
    """Two death rates raked to a known all-cause total.

    Cause 1 is a clean binomial rate; cause 2 draws its per-observation
    success probability through a noisy biased logit. Weights are inverse
    plug-in variances of the pooled rate estimates.
    """
    rng = np.random.default_rng(seed)
    columns = ["simulation", "cause", "true_rate", "initial_rate",
               "raked_unweighted", "raked_weighted", "weight"]
    rows = []
    for sim in range(simulations):
        counts = rng.integers(100, 201, size=(2, n_obs))
        p2 = expit(logit(p_true) + rng.normal(0.0, bias_sd, size=n_obs))
        deaths1 = rng.binomial(counts[0], p_true)
        deaths2 = rng.binomial(counts[1], p2)
        rates = np.array([deaths1.sum() / counts[0].sum(),
                          deaths2.sum() / counts[1].sum()])
        variances = rates * (1.0 - rates) / counts.sum(axis=1)
        w = 1.0 / np.maximum(variances, 1e-12)
        raked_unw = solve_1d_entropic(rates, margin).beta
        raked_w = solve_1d_entropic(rates, margin, w=w).beta
        for c in range(2):
            rows.append([sim, c + 1, p_true, rates[c], raked_unw[c], raked_w[c], w[c]])
    return {"simulations": (columns, rows)}


def _two_way_margin_axes(ndim):
    return [(ax,) for ax in range(ndim)]


def aggregate_observations(seed, shape=(3, 4, 5), gentle_noise=False,
                           margin_weights=(1.0, 2.0, 10.0)):
    """Noisy table raked against its exact margins as soft observations.

    Margins over each single axis (47 for a 3x4x5 table) plus no hard
    constraints: the dual runs entirely on observation multipliers.
    """
    rng = np.random.default_rng(seed)
    truth = rng.uniform(0.0, 10.0, size=shape)
    lo, hi = (1.0, 1.1) if gentle_noise else (10.0, 11.0)
    noisy = truth * rng.uniform(lo, hi, size=shape)
    names = ["X1", "X2", "X3"]

    columns = ["margin_weight", "X1", "X2", "X3", "truth", "noisy", "raked",
               "rel_err_noisy", "rel_err_raked"]
    rows = []
    for w_margin in margin_weights:
        records = _grid_records(noisy, np.ones(shape), names)
        for axes in _two_way_margin_axes(len(shape)):
            records += _margin_records(truth, axes, float(w_margin), names)
        prob = build_problem(parse_table(records, {n: 0 for n in names}))
        beta = solve(prob).beta
        for cell, label in zip(itertools.product(*(range(s) for s in shape)),
                               prob.labels()):
            idx = prob.cell_index(label)
            t = truth[cell]
            scale = max(abs(t), 1e-12)
            rows.append([w_margin, *label, t, noisy[cell], beta[idx],
                         abs(noisy[cell] - t) / scale, abs(beta[idx] - t) / scale])
    return {"raked": (columns, rows)}


def missing_data(seed, shape=(3, 4, 5), gentle_noise=True, missing_weight=1e-3,
                 agg_weight=1.0):
    """Remove one first-dimension fiber and compare four treatments.

    The base problem has 3 hard constraints (sums per first-dimension
    level) and 36 aggregate observations (sums over the first and second
    dimensions, plus the grand total). Removing the fiber also removes the
    one first-dimension-sum observation that covers it.
    """
    rng = np.random.default_rng(seed)
    truth = rng.uniform(1.0, 10.0, size=shape)
    lo, hi = (1.0, 1.1) if gentle_noise else (10.0, 11.0)
    noisy = truth * rng.uniform(lo, hi, size=shape)
    names = ["X1", "X2", "X3"]
    j0, k0 = int(rng.integers(shape[1])), int(rng.integers(shape[2]))
    fiber = [(i, j0, k0) for i in range(shape[0])]

    def aggregate_rows(drop_fiber_sum):
        recs = _margin_records(truth, (1, 2), INF, names)         # 3 constraints
        keep = (lambda cell: cell != (j0, k0)) if drop_fiber_sum else None
        recs += _margin_records(truth, (0,), agg_weight, names, keep=keep)
        recs += _margin_records(truth, (1,), agg_weight, names)
        recs += _margin_records(truth, (0, 1, 2), agg_weight, names)
        return recs

    mean_obs = float(np.mean([noisy[c] for c in
                              itertools.product(*(range(s) for s in shape))
                              if c not in fiber]))

    def granular_rows(treatment):
        recs = []
        for cell in itertools.product(*(range(s) for s in shape)):
            rec = {n: c + 1 for n, c in zip(names, cell)}
            if cell in fiber:
                if treatment == "zero_observation":
                    rec.update(value=0.0, weights=1.0)
                elif treatment in ("missing_no_aggregate", "missing_with_aggregate"):
                    rec.update(value=math.nan, weights=0.0)
                elif treatment == "small_weight_imputation":
                    rec.update(value=mean_obs, weights=missing_weight)
                else:
                    rec.update(value=float(noisy[cell]), weights=1.0)
            else:
                rec.update(value=float(noisy[cell]), weights=1.0)
            recs.append(rec)
        return recs

    scenarios = ["baseline", "zero_observation", "missing_no_aggregate",
                 "missing_with_aggregate", "small_weight_imputation"]
    columns = ["scenario", "X1", "X2", "X3", "truth", "observed", "raked",
               "is_missing_cell"]
    rows = []
    for scen in scenarios:
        records = granular_rows(scen) + aggregate_rows(
            drop_fiber_sum=(scen == "missing_no_aggregate"))
        prob = build_problem(parse_table(records, {n: 0 for n in names}))
        beta = solve(prob).beta
        for cell, label in zip(itertools.product(*(range(s) for s in shape)),
                               prob.labels()):
            idx = prob.cell_index(label)
            rows.append([scen, *label, truth[cell], noisy[cell], beta[idx],
                         int(cell in fiber)])
    return {"raked": (columns, rows)}


def uq_comparison(seed, shape=(3, 5), draws=(100, 1000, 10000), loss="entropic",
                  noise_sd=0.1, offdiag=0.01, diag_step=0.1):
    """Delta-method uncertainty against raked-draws sample statistics.

    A balanced table provides exact margins; the observations are the
    balanced values plus noise, with a full covariance (constant
    off-diagonal, linearly growing diagonal). Margins carry no uncertainty.
    """
    rng = np.random.default_rng(seed)
    m, n = shape
    p = m * n
    balanced = rng.uniform(2.0, 3.0, size=shape)
    y0 = balanced + rng.normal(0.0, noise_sd, size=shape)
    names = ["X1", "X2"]
    records = _grid_records(y0, np.ones(shape), names)
    records += _margin_records(balanced, (1,), INF, names)
    records += _margin_records(balanced, (0,), INF, names)
    prob = build_problem(parse_table(records, {n_: 0 for n_ in names}), loss=loss,
                         **({"lower": 0.0, "upper": 10.0} if loss == "logistic" else {}))

    sigma_y = np.full((p, p), offdiag) + np.diag(
        diag_step * np.arange(1, p + 1) - offdiag)
    sigma = np.zeros((p + prob.k_a, p + prob.k_a))
    sigma[:p, :p] = sigma_y
    cov = InputCovariance(sigma)

    opts = SolverOptions()
    sol = solve(prob, opts)
    delta = delta_covariance(prob, sol, cov)

    columns = ["method", "n_draws", "X1", "X2", "estimate", "sd"]
    rows = []
    labels = prob.labels()
    for label in labels:
        idx = prob.cell_index(label)
        rows.append(["input", 0, *label, y0.ravel()[idx], math.sqrt(sigma_y[idx, idx])])
        rows.append(["delta", 0, *label, sol.beta[idx], delta.sd[idx]])
    for n_draws in draws:
        mean_b, cov_b, _ = monte_carlo_covariance(
            prob, cov, int(n_draws), rng_seed=seed + 1)
        sd = np.sqrt(np.clip(np.diag(cov_b), 0.0, None))
        for label in labels:
            idx = prob.cell_index(label)
            rows.append(["draws", int(n_draws), *label, mean_b[idx], sd[idx]])

    target = prob.cell_index((3, 4))
    influence_of = sensitivity_query(delta, source=target)
    influence_on = sensitivity_query(delta, target=target)
    sens_columns = ["direction", "X1", "X2", "value"]
    sens_rows = []
    for label in labels:
        idx = prob.cell_index(label)
        sens_rows.append(["of_y34_on_raked", *label, influence_of[idx]])
        sens_rows.append(["on_raked34_of_y", *label, influence_on[idx]])
    return {"raked": (columns, rows), "sensitivity": (sens_columns, sens_rows)}
