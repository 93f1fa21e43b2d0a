"""Separable raking losses with their convex conjugates.

Each loss knows its primal value f, conjugate f*, conjugate gradient and
conjugate-Hessian diagonal, plus the primal derivatives needed for
sensitivity analysis. Per-coordinate weights w scale the loss as
w_i f_i(beta_i), whose conjugate is w_i f_i*(z_i / w_i); an infinite weight
pins the coordinate to its reference value (the conjugate degenerates to
y_i z_i, its gradient to y_i and its curvature to 0).

All evaluators are vectorized and broadcast over leading batch axes, so a
z of shape (n_draws, p) against references of shape (p,) works directly.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

from .errors import BoundsInvalid, DomainError

LOSS_KINDS = ("chi2", "entropic", "logistic")


def _as_coord_array(x, shape, name):
    out = np.broadcast_to(np.asarray(x, dtype=float), shape).copy()
    if np.isnan(out).any():
        raise DomainError(f"{name} contains NaN")
    return out


class Loss:
    """Weighted separable loss over n coordinates.

    Subclasses implement the unit-weight scalar calculus; this base applies
    the weight transform and the reductions. References may carry leading
    batch axes (shape (..., n)) to evaluate many problem instances at once.
    """

    kind = None

    def __init__(self, y, w=None, *, validate=True):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        self.n = y.shape[-1]
        self.y = _as_coord_array(y, y.shape, "y")
        w = 1.0 if w is None else w
        self.w = _as_coord_array(w, self.y.shape, "w")
        if np.any(self.w <= 0):
            raise DomainError("weights must be positive (use weight 0 only to mark missing cells)")
        self._pinned = np.isinf(self.w)
        self._setup()
        if validate:
            self._validate()

    def _setup(self):
        pass

    def _validate(self):
        pass

    # unit-weight hooks -------------------------------------------------
    def _f(self, beta):
        raise NotImplementedError

    def _fstar(self, z):
        raise NotImplementedError

    def _grad_fstar(self, z):
        raise NotImplementedError

    def _hess_fstar(self, z):
        raise NotImplementedError

    def _check_domain(self, beta):
        raise NotImplementedError

    # weighted interface ------------------------------------------------
    def eval(self, beta):
        """Sum of w_i f_i(beta_i); zero when beta equals the reference."""
        beta = np.asarray(beta, dtype=float)
        self._check_domain(beta)
        vals = self._f(beta)
        # pinned coordinates contribute 0 at beta = y and +inf elsewhere;
        # represent the finite branch (callers never move them off y)
        return np.sum(np.where(self._pinned, 0.0, self.w * vals), axis=-1)

    def conjugate(self, z):
        """Sum of w_i f_i*(z_i / w_i); linear y_i z_i on pinned coordinates."""
        z = np.asarray(z, dtype=float)
        w = np.where(self._pinned, 1.0, self.w)
        vals = w * self._fstar(z / w)
        return np.sum(np.where(self._pinned, self.y * z, vals), axis=-1)

    def grad_conjugate(self, z):
        """Coordinate-wise gradient of the weighted conjugate (the recovery map)."""
        z = np.asarray(z, dtype=float)
        return np.where(self._pinned, self.y, self._grad_fstar(z / self.w))

    def hess_conjugate_diag(self, z):
        """Positive diagonal of the weighted conjugate Hessian (0 when pinned)."""
        z = np.asarray(z, dtype=float)
        w = np.where(self._pinned, 1.0, self.w)
        vals = self._hess_fstar(z / w) / w
        return np.where(self._pinned, 0.0, vals)

    # primal derivatives for sensitivity analysis -----------------------
    def grad_primal(self, beta):
        """Per-coordinate w_i f_i'(beta_i); zero on pinned coordinates."""
        beta = np.asarray(beta, dtype=float)
        return np.where(self._pinned, 0.0, self.w * self._fprime(beta))

    def hess_primal_diag(self, beta):
        """Per-coordinate w_i f_i''(beta_i)."""
        beta = np.asarray(beta, dtype=float)
        return np.where(self._pinned, np.inf, self.w * self._fdoubleprime(beta))

    def dgrad_dy_diag(self, beta):
        """Per-coordinate w_i * d(f_i')/dy_i, the mixed curvature block."""
        beta = np.asarray(beta, dtype=float)
        return np.where(self._pinned, -np.inf, self.w * self._dfprime_dy(beta))


class Chi2Loss(Loss):
    """Quadratic distance (beta - y)^2 / (2 y), the curvature-matched
    second-order expansion of the entropic distance."""

    kind = "chi2"

    def _validate(self):
        if np.any(self.y <= 0):
            raise DomainError("chi2 loss needs y > 0 (y enters the 1/(2y) curvature)")

    def _f(self, beta):
        return (beta - self.y) ** 2 / (2.0 * self.y)

    def _fstar(self, z):
        return self.y * (z * z / 2.0 + z)

    def _grad_fstar(self, z):
        return self.y * (z + 1.0)

    def _hess_fstar(self, z):
        return np.broadcast_to(self.y, np.broadcast_shapes(np.shape(z), self.y.shape)).copy()

    def _check_domain(self, beta):
        pass  # finite everywhere

    def _fprime(self, beta):
        return (beta - self.y) / self.y

    def _fdoubleprime(self, beta):
        return np.broadcast_to(1.0 / self.y, np.broadcast_shapes(np.shape(beta), self.y.shape))

    def _dfprime_dy(self, beta):
        # the 1/(2y) curvature is treated as a fixed weight for sensitivity
        # purposes (standard weighted-least-squares convention); this keeps
        # the implicit-function covariance identical to the explicit
        # affine-map form. The exact data-dependent term would be -beta/y^2.
        shape = np.broadcast_shapes(np.shape(beta), self.y.shape)
        return np.broadcast_to(-1.0 / self.y, shape)


class EntropicLoss(Loss):
    """Kullback-Leibler style distance beta log(beta/y) - (beta - y).

    Positive references keep raked values positive; a zero reference
    freezes its coordinate at zero (its conjugate vanishes identically).
    """

    kind = "entropic"

    def _validate(self):
        if np.any(self.y < 0):
            raise DomainError("entropic loss needs y >= 0")

    def _f(self, beta):
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(beta > 0, beta / np.where(self.y > 0, self.y, 1.0), 1.0)
            ent = np.where(beta > 0, beta * np.log(ratio), 0.0)
        return ent - (beta - self.y)

    def _fstar(self, z):
        return self.y * np.expm1(z)

    def _grad_fstar(self, z):
        return self.y * np.exp(z)

    def _hess_fstar(self, z):
        return self.y * np.exp(z)

    def _check_domain(self, beta):
        if np.any(beta < 0):
            raise DomainError("entropic loss defined for beta >= 0")
        if np.any((np.broadcast_to(self.y, np.shape(beta)) == 0) & (beta > 0)):
            raise DomainError("coordinate with y = 0 admits only beta = 0")

    def _fprime(self, beta):
        return np.log(beta / self.y)

    def _fdoubleprime(self, beta):
        return 1.0 / beta

    def _dfprime_dy(self, beta):
        return -1.0 / np.broadcast_to(self.y, np.shape(beta))


class LogisticLoss(Loss):
    """Two-sided entropic distance on (l, u), enforcing the bounds
    through its recovery map."""

    kind = "logistic"

    def __init__(self, y, w=None, lower=0.0, upper=1.0):
        y = np.atleast_1d(np.asarray(y, dtype=float))
        self.lower = _as_coord_array(lower, y.shape, "lower")
        self.upper = _as_coord_array(upper, y.shape, "upper")
        super().__init__(y, w)

    def _validate(self):
        if np.any(self.lower >= self.upper):
            raise BoundsInvalid("logistic loss needs lower < upper")
        if np.any((self.y <= self.lower) | (self.y >= self.upper)):
            raise BoundsInvalid("logistic loss needs lower < y < upper strictly")

    def _setup(self):
        span = self.upper - self.lower
        with np.errstate(divide="ignore", invalid="ignore"):
            self._a = (self.y - self.lower) / span       # in (0, 1) when valid
            self._logit_a = np.log(self._a) - np.log1p(-self._a)

    def _f(self, beta):
        lo = beta - self.lower
        hi = self.upper - beta
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = np.where(lo > 0, lo * np.log(lo / (self.y - self.lower)), 0.0)
            t2 = np.where(hi > 0, hi * np.log(hi / (self.upper - self.y)), 0.0)
        return t1 + t2

    def _fstar(self, z):
        # (u-l) log(a e^z + 1 - a) + l z, log-sum-exp shifted by max(z, 0)
        m = np.maximum(z, 0.0)
        core = m + np.log(self._a * np.exp(z - m) + (1.0 - self._a) * np.exp(-m))
        return (self.upper - self.lower) * core + self.lower * z

    def _sigmoid(self, z):
        return expit(z + self._logit_a)

    def _grad_fstar(self, z):
        return self.lower + (self.upper - self.lower) * self._sigmoid(z)

    def _hess_fstar(self, z):
        x = self._sigmoid(z)
        return (self.upper - self.lower) * x * (1.0 - x)

    def _check_domain(self, beta):
        if np.any((beta < self.lower) | (beta > self.upper)):
            raise DomainError("logistic loss defined for lower <= beta <= upper")

    def _fprime(self, beta):
        return np.log((beta - self.lower) / (self.y - self.lower)) \
            - np.log((self.upper - beta) / (self.upper - self.y))

    def _fdoubleprime(self, beta):
        return 1.0 / (beta - self.lower) + 1.0 / (self.upper - beta)

    def _dfprime_dy(self, beta):
        shape = np.broadcast_shapes(np.shape(beta), self.y.shape)
        return np.broadcast_to(-1.0 / (self.y - self.lower) - 1.0 / (self.upper - self.y), shape)


def make_loss(kind, y, w=None, lower=None, upper=None, validate=True) -> Loss:
    """Construct a loss by name; bounds apply to the logistic kind only.

    ``validate=False`` skips the reference-sign checks for the chi2 and
    entropic kinds (used when raking Monte-Carlo draws as sampled); the
    logistic bounds are structural and always enforced.
    """
    if kind == "chi2":
        return Chi2Loss(y, w, validate=validate)
    if kind == "entropic":
        return EntropicLoss(y, w, validate=validate)
    if kind == "logistic":
        if lower is None or upper is None:
            raise BoundsInvalid("logistic loss requires lower and upper bounds")
        return LogisticLoss(y, w, lower=lower, upper=upper)
    raise DomainError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
