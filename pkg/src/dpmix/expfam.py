"""Exponential-family likelihoods and their conjugate posteriors.

Every likelihood is written as

.. math::
    p(x | \\eta) = h(x) \\exp(\\eta^T T(x) - a(\\eta))

and its conjugate prior/posterior over the natural parameter as

.. math::
    p(\\eta | \\tau) \\propto \\exp(\\tau_1^T \\eta + \\tau_2 (-a(\\eta)) - a_p(\\tau))

so that a batch of observations updates ``tau1 += Σ T(x)`` and
``tau2 += N``. The posterior expectations ``E[η]`` and ``E[-a(η)]`` are the
partial derivatives of ``a_p`` with respect to ``tau1`` and ``tau2``.

Supported pairs:

=====================  ===============
likelihood             posterior
=====================  ===============
Binomial(n)            Beta
Multinomial(k, n)      Dirichlet
Poisson                Gamma
MultivariateNormal(d)  Normal-Wishart
=====================  ===============

Posterior methods on the family classes operate on *stacked* parameters,
``tau1`` of shape ``(..., S)`` and ``tau2`` of shape ``(...)``, so the
mixture code can evaluate all components at once.
"""

from dataclasses import dataclass, field
from typing import Any, ClassVar, Dict, Tuple

import numpy as np
from scipy import special as sp
from scipy import stats

from .errors import (
    ConditioningError,
    ParameterDomainError,
    SamplingError,
    ShapeError,
    SupportError,
)
from .special import log_multivariate_gamma, multivariate_digamma

LOG_2PI = np.log(2.0 * np.pi)

# SPD safeguard: first jitter is 1e-9 * trace / d, then x10 per retry.
JITTER_SCALE = 1e-9
JITTER_RETRIES = 3


def symmetrize(mat):
    return 0.5 * (mat + np.swapaxes(mat, -1, -2))


def _cholesky_single(mat):
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    d = mat.shape[-1]
    trace = np.trace(mat)
    base = JITTER_SCALE * (abs(trace) / d if np.isfinite(trace) and trace != 0 else 1.0)
    for attempt in range(JITTER_RETRIES):
        jitter = base * 10.0**attempt
        try:
            return np.linalg.cholesky(mat + jitter * np.eye(d))
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError(
        f"matrix is not positive definite after {JITTER_RETRIES} jitter retries"
    )


def safe_cholesky(mat):
    """Lower Cholesky factor of a (stack of) symmetric positive definite matrices.

    Each matrix is symmetrized first. Matrices that fail to factorize are
    retried with diagonal jitter ``1e-9 * trace / d``, growing tenfold per
    retry; :class:`ConditioningError` is raised after the last retry.
    """
    mat = symmetrize(np.asarray(mat, dtype=float))
    if not np.all(np.isfinite(mat)):
        raise ConditioningError("matrix has non-finite entries")
    try:
        return np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        pass
    flat = mat.reshape(-1, mat.shape[-2], mat.shape[-1])
    out = np.stack([_cholesky_single(m) for m in flat])
    return out.reshape(mat.shape)


def _chol_logdet(chol):
    return 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(-1)


def _chol_inverse(chol):
    d = chol.shape[-1]
    eye = np.broadcast_to(np.eye(d), chol.shape)
    linv = np.linalg.solve(chol, eye)
    return symmetrize(np.swapaxes(linv, -1, -2) @ linv)


def _as_rows(x, width):
    """Return ``(rows, single)`` with rows of shape (N, width)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        if width != 1:
            raise ShapeError(f"expected a vector of length {width}, got a scalar")
        return arr.reshape(1, 1), True
    if arr.ndim == 1:
        if width == 1 and arr.shape[0] != 1:
            return arr.reshape(-1, 1), False
        if arr.shape[0] != width:
            raise ShapeError(f"expected length {width}, got {arr.shape[0]}")
        return arr.reshape(1, width), True
    if arr.ndim != 2 or arr.shape[1] != width:
        raise ShapeError(f"expected shape (N, {width}), got {arr.shape}")
    return arr, False


def _unwrap(values, single):
    return values[0] if single else values


class ExpFamily:
    """Base class for a likelihood family with a conjugate posterior.

    Subclasses are frozen dataclasses so they compare by value and can be
    used as dictionary keys.
    """

    name: ClassVar[str]
    posterior_name: ClassVar[str]

    @property
    def width(self) -> int:
        """Number of raw data columns consumed by one observation."""
        raise NotImplementedError

    @property
    def natural_dim(self) -> int:
        raise NotImplementedError

    @property
    def stat_dim(self) -> int:
        return self.natural_dim

    def to_dict(self) -> Dict[str, Any]:
        raise NotImplementedError

    # -- likelihood side -------------------------------------------------
    def to_natural(self, params):
        raise NotImplementedError

    def from_natural(self, eta):
        raise NotImplementedError

    def check_support(self, rows):
        pass

    def _stats(self, rows):
        raise NotImplementedError

    def _log_base(self, rows):
        raise NotImplementedError

    def sufficient_stats(self, x):
        rows, single = _as_rows(x, self.width)
        self.check_support(rows)
        return _unwrap(self._stats(rows), single)

    def log_base_measure(self, x):
        rows, single = _as_rows(x, self.width)
        self.check_support(rows)
        return _unwrap(self._log_base(rows), single)

    def log_partition(self, eta) -> float:
        """Likelihood log-partition ``a(η)``."""
        raise NotImplementedError

    def _check_eta(self, eta):
        eta = np.asarray(eta, dtype=float).ravel()
        if eta.shape[0] != self.natural_dim:
            raise ShapeError(
                f"{self.name} expects {self.natural_dim} natural parameters, got {eta.shape[0]}"
            )
        if not np.all(np.isfinite(eta)):
            raise ParameterDomainError("natural parameters must be finite")
        return eta

    def log_density(self, eta, x):
        """``ln h(x) + η·T(x) - a(η)`` for one or many observations."""
        eta = self._check_eta(eta)
        rows, single = _as_rows(x, self.width)
        self.check_support(rows)
        out = self._log_base(rows) + self._stats(rows) @ eta - self.log_partition(eta)
        return float(out[0]) if single else out

    # -- conjugate side ----------------------------------------------------
    def _split_posterior(self, tau1, tau2):
        tau1 = np.asarray(tau1, dtype=float)
        tau2 = np.asarray(tau2, dtype=float)
        if tau1.shape[-1] != self.stat_dim or tau1.shape[:-1] != tau2.shape:
            raise ShapeError(
                f"{self.posterior_name} parameters need tau1 (..., {self.stat_dim}) and "
                f"matching tau2, got {tau1.shape} and {tau2.shape}"
            )
        return tau1, tau2

    def validate_posterior(self, tau1, tau2):
        """Raise :class:`ParameterDomainError` if ``(tau1, tau2)`` is not a proper posterior."""
        raise NotImplementedError

    def posterior_classical(self, tau1, tau2):
        raise NotImplementedError

    def expectations(self, tau1, tau2):
        """Return ``(E[η], E[-a(η)])`` with shapes ``(..., S)`` and ``(...)``."""
        raise NotImplementedError

    def prior_log_partition(self, tau1, tau2):
        """Log-normalizer ``a_p(τ)`` of the conjugate density."""
        raise NotImplementedError

    def sample_draws(self, tau1, tau2, rng, size):
        """Draw ``size`` likelihood parameters from one posterior.

        Returns a dict of stacked arrays understood by :meth:`draw_log_likelihood`.
        """
        raise NotImplementedError

    def draw_log_likelihood(self, rows, draws):
        """Log-likelihood of each row under each draw, shape (N, size)."""
        raise NotImplementedError


# ---------------------------------------------------------------------------
# Binomial / Beta
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Binomial(ExpFamily):
    """Binomial with a fixed number of trials; ``n=1`` is Bernoulli."""

    n: int = 1
    name: ClassVar[str] = "binomial"
    posterior_name: ClassVar[str] = "beta"

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 1:
            raise ParameterDomainError(f"trial count must be a positive integer, got {self.n}")

    width = property(lambda self: 1)
    natural_dim = property(lambda self: 1)

    def to_dict(self):
        return {"family": self.name, "n": int(self.n)}

    def to_natural(self, p):
        p = float(p)
        if not 0.0 < p < 1.0:
            raise ParameterDomainError(f"probability must lie in (0, 1), got {p}")
        return np.array([np.log(p) - np.log1p(-p)])

    def from_natural(self, eta):
        eta = self._check_eta(eta)
        return float(sp.expit(eta[0]))

    def check_support(self, rows):
        if np.any(rows < 0) or np.any(rows > self.n) or np.any(rows != np.round(rows)):
            raise SupportError(f"binomial observations must be integers in [0, {self.n}]")

    def _stats(self, rows):
        return rows.copy()

    def _log_base(self, rows):
        x = rows[:, 0]
        return sp.gammaln(self.n + 1) - sp.gammaln(x + 1) - sp.gammaln(self.n - x + 1)

    def log_partition(self, eta):
        eta = self._check_eta(eta)
        return float(self.n * np.logaddexp(0.0, eta[0]))

    def conjugate_prior(self, alpha=1.0, beta=1.0):
        if alpha <= 0 or beta <= 0:
            raise ParameterDomainError("Beta parameters must be positive")
        return ConjugatePosterior(self, np.array([alpha - 1.0]), (alpha + beta - 2.0) / self.n)

    def _ab(self, tau1, tau2):
        t = tau1[..., 0]
        return t + 1.0, self.n * tau2 - t + 1.0

    def validate_posterior(self, tau1, tau2):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        a, b = self._ab(tau1, tau2)
        if not (np.all(a > 0) and np.all(b > 0)):
            raise ParameterDomainError("Beta posterior needs alpha > 0 and beta > 0")

    def posterior_classical(self, tau1, tau2):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        return self._ab(tau1, tau2)

    def expectations(self, tau1, tau2):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        a, b = self._ab(tau1, tau2)
        psi_ab = sp.digamma(a + b)
        # η = logit p, so E[η] = E[ln p] - E[ln(1-p)] = ψ(α) - ψ(β)
        e_eta = (sp.digamma(a) - sp.digamma(b))[..., None]
        e_neg_a = self.n * (sp.digamma(b) - psi_ab)
        return e_eta, e_neg_a

    def prior_log_partition(self, tau1, tau2):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        a, b = self._ab(tau1, tau2)
        return sp.betaln(a, b)

    def sample_draws(self, tau1, tau2, rng, size):
        a, b = self._ab(*self._split_posterior(tau1, tau2))
        if not (a > 0 and b > 0):
            raise SamplingError("degenerate Beta posterior")
        return {"p": rng.beta(a, b, size=size)}

    def draw_log_likelihood(self, rows, draws):
        x = rows[:, :1]
        p = draws["p"][None, :]
        return self._log_base(rows)[:, None] + sp.xlogy(x, p) + sp.xlog1py(self.n - x, -p)


# ---------------------------------------------------------------------------
# Multinomial / Dirichlet
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Multinomial(ExpFamily):
    """Multinomial over ``k`` categories; ``n=1`` is a one-hot categorical.

    The log-partition is zero because the natural parameters are constrained
    to ``Σ exp(η_i) = 1``; that constraint is enforced rather than relaxed.
    """

    k: int
    n: int = 1
    name: ClassVar[str] = "multinomial"
    posterior_name: ClassVar[str] = "dirichlet"
    constraint_tol: ClassVar[float] = 1e-9

    def __post_init__(self):
        if int(self.k) != self.k or self.k < 1:
            raise ParameterDomainError(f"category count must be >= 1, got {self.k}")
        if int(self.n) != self.n or self.n < 1:
            raise ParameterDomainError(f"trial count must be >= 1, got {self.n}")

    width = property(lambda self: self.k)
    natural_dim = property(lambda self: self.k)

    def to_dict(self):
        return {"family": self.name, "k": int(self.k), "n": int(self.n)}

    def to_natural(self, p):
        p = np.asarray(p, dtype=float).ravel()
        if p.shape[0] != self.k:
            raise ShapeError(f"expected {self.k} probabilities, got {p.shape[0]}")
        if np.any(p <= 0) or np.any(p > 1) or abs(p.sum() - 1.0) > self.constraint_tol:
            raise ParameterDomainError("probabilities must be positive and sum to 1")
        return np.log(p)

    def from_natural(self, eta):
        eta = self._check_eta(eta)
        p = np.exp(eta)
        if abs(p.sum() - 1.0) > self.constraint_tol:
            raise ParameterDomainError(
                f"multinomial natural parameters must satisfy sum(exp(eta)) = 1, got {p.sum()}"
            )
        return p

    def check_support(self, rows):
        if (
            np.any(rows < 0)
            or np.any(rows != np.round(rows))
            or np.any(rows.sum(axis=1) != self.n)
        ):
            raise SupportError(f"multinomial rows must be non-negative integers summing to {self.n}")

    def _stats(self, rows):
        return rows.copy()

    def _log_base(self, rows):
        return sp.gammaln(self.n + 1) - sp.gammaln(rows + 1).sum(axis=1)

    def log_partition(self, eta):
        self.from_natural(eta)
        return 0.0

    def conjugate_prior(self, alpha=1.0):
        alpha = np.broadcast_to(np.asarray(alpha, dtype=float), (self.k,)).copy()
        if np.any(alpha <= 0):
            raise ParameterDomainError("Dirichlet parameters must be positive")
        return ConjugatePosterior(self, alpha - 1.0, 0.0)

    def validate_posterior(self, tau1, tau2):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        if not np.all(tau1 + 1.0 > 0):
            raise ParameterDomainError("Dirichlet posterior needs all alpha > 0")

    def posterior_classical(self, tau1, tau2):
        tau1, _ = self._split_posterior(tau1, tau2)
        return tau1 + 1.0

    def expectations(self, tau1, tau2):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        alpha = tau1 + 1.0
        e_eta = sp.digamma(alpha) - sp.digamma(alpha.sum(-1, keepdims=True))
        return e_eta, np.zeros(tau2.shape)

    def prior_log_partition(self, tau1, tau2):
        tau1, _ = self._split_posterior(tau1, tau2)
        alpha = tau1 + 1.0
        return sp.gammaln(alpha).sum(-1) - sp.gammaln(alpha.sum(-1))

    def sample_draws(self, tau1, tau2, rng, size):
        alpha = self.posterior_classical(tau1, tau2)
        if np.any(alpha <= 0):
            raise SamplingError("degenerate Dirichlet posterior")
        return {"p": rng.dirichlet(alpha, size=size)}

    def draw_log_likelihood(self, rows, draws):
        logp = np.log(draws["p"])  # (size, k)
        with np.errstate(invalid="ignore"):
            term = rows[:, None, :] * logp[None, :, :]
        term = np.where(rows[:, None, :] == 0, 0.0, term)
        return self._log_base(rows)[:, None] + term.sum(-1)


# ---------------------------------------------------------------------------
# Poisson / Gamma
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Poisson(ExpFamily):
    name: ClassVar[str] = "poisson"
    posterior_name: ClassVar[str] = "gamma"

    width = property(lambda self: 1)
    natural_dim = property(lambda self: 1)

    def to_dict(self):
        return {"family": self.name}

    def to_natural(self, rate):
        rate = float(rate)
        if not rate > 0:
            raise ParameterDomainError(f"Poisson rate must be positive, got {rate}")
        return np.array([np.log(rate)])

    def from_natural(self, eta):
        eta = self._check_eta(eta)
        return float(np.exp(eta[0]))

    def check_support(self, rows):
        if np.any(rows < 0) or np.any(rows != np.round(rows)):
            raise SupportError("Poisson observations must be non-negative integers")

    def _stats(self, rows):
        return rows.copy()

    def _log_base(self, rows):
        return -sp.gammaln(rows[:, 0] + 1.0)

    def log_partition(self, eta):
        eta = self._check_eta(eta)
        return float(np.exp(eta[0]))

    def conjugate_prior(self, shape=1.0, rate=1.0):
        if shape <= 0 or rate <= 0:
            raise ParameterDomainError("Gamma parameters must be positive")
        return ConjugatePosterior(self, np.array([shape - 1.0]), float(rate))

    def validate_posterior(self, tau1, tau2):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        if not (np.all(tau1[..., 0] + 1.0 > 0) and np.all(tau2 > 0)):
            raise ParameterDomainError("Gamma posterior needs shape > 0 and rate > 0")

    def posterior_classical(self, tau1, tau2):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        return tau1[..., 0] + 1.0, tau2

    def expectations(self, tau1, tau2):
        shape, rate = self.posterior_classical(tau1, tau2)
        e_eta = (sp.digamma(shape) - np.log(rate))[..., None]
        # a(η) = λ, so E[-a] = -E[λ] = -shape/rate
        return e_eta, -shape / rate

    def prior_log_partition(self, tau1, tau2):
        shape, rate = self.posterior_classical(tau1, tau2)
        return sp.gammaln(shape) - shape * np.log(rate)

    def sample_draws(self, tau1, tau2, rng, size):
        shape, rate = self.posterior_classical(tau1, tau2)
        if not (shape > 0 and rate > 0):
            raise SamplingError("degenerate Gamma posterior")
        return {"rate": rng.gamma(shape, 1.0 / rate, size=size)}

    def draw_log_likelihood(self, rows, draws):
        x = rows[:, :1]
        lam = draws["rate"][None, :]
        return self._log_base(rows)[:, None] + sp.xlogy(x, lam) - lam


# ---------------------------------------------------------------------------
# Multivariate normal / Normal-Wishart
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MultivariateNormal(ExpFamily):
    """Multivariate normal; ``T(x) = (x, vec(x x^T))`` with row-major ``vec``.

    The Normal-Wishart posterior is parameterized by ``tau1 = (τ11, vec τ12)``
    and ``tau2``, mapping to ``mean = τ11/τ2``, ``kappa = τ2``,
    ``V = (τ12 - τ11 τ11^T / τ2)^{-1}`` and ``dof = τ2 + d``; the
    parameterization forces ``kappa = dof - d``.
    """

    d: int
    name: ClassVar[str] = "mvnormal"
    posterior_name: ClassVar[str] = "normal-wishart"

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ParameterDomainError(f"dimension must be >= 1, got {self.d}")

    width = property(lambda self: self.d)
    natural_dim = property(lambda self: self.d + self.d * self.d)

    def to_dict(self):
        return {"family": self.name, "d": int(self.d)}

    def _split_eta(self, eta):
        d = self.d
        return eta[..., :d], eta[..., d:].reshape(eta.shape[:-1] + (d, d))

    def to_natural(self, params):
        mean, cov = params
        mean = np.asarray(mean, dtype=float).reshape(self.d)
        cov = np.asarray(cov, dtype=float).reshape(self.d, self.d)
        if not np.allclose(cov, cov.T, rtol=1e-12, atol=1e-14):
            raise ParameterDomainError("covariance must be symmetric")
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise ParameterDomainError("covariance must be positive definite") from None
        precision = _chol_inverse(chol)
        return np.concatenate([precision @ mean, (-0.5 * precision).ravel()])

    def from_natural(self, eta):
        eta = self._check_eta(eta)
        eta1, eta2 = self._split_eta(eta)
        precision = symmetrize(-2.0 * eta2)
        try:
            chol = np.linalg.cholesky(precision)
        except np.linalg.LinAlgError:
            raise ConditioningError("-2*eta2 is not positive definite") from None
        cov = _chol_inverse(chol)
        return cov @ eta1, cov

    def _stats(self, rows):
        outer = rows[:, :, None] * rows[:, None, :]
        return np.concatenate([rows, outer.reshape(rows.shape[0], -1)], axis=1)

    def _log_base(self, rows):
        return np.full(rows.shape[0], -0.5 * self.d * LOG_2PI)

    def check_support(self, rows):
        if not np.all(np.isfinite(rows)):
            raise SupportError("normal observations must be finite")

    def log_partition(self, eta):
        mean, cov = self.from_natural(eta)
        chol = np.linalg.cholesky(cov)
        quad = mean @ np.linalg.solve(cov, mean)
        return float(0.5 * quad + 0.5 * _chol_logdet(chol))

    def conjugate_prior(self, mean, scale, dof, kappa=None):
        """Normal-Wishart prior with Wishart scale ``V`` and ``dof``.

        ``kappa`` (precision scaling of the mean) is tied to ``dof - d``; passing
        any other value raises :class:`ParameterDomainError`.
        """
        d = self.d
        mean = np.asarray(mean, dtype=float).reshape(d)
        scale = np.asarray(scale, dtype=float).reshape(d, d)
        k = dof - d
        if kappa is not None and not np.isclose(kappa, k, rtol=1e-12, atol=0):
            raise ParameterDomainError(f"kappa must equal dof - d = {k}, got {kappa}")
        if k <= 0:
            raise ParameterDomainError(f"dof must exceed d = {d}, got {dof}")
        chol = safe_cholesky(scale)
        scale_inv = _chol_inverse(chol)
        tau12 = scale_inv + k * np.outer(mean, mean)
        return ConjugatePosterior(self, np.concatenate([k * mean, tau12.ravel()]), float(k))

    def _nw_core(self, tau1, tau2):
        d = self.d
        tau11, tau12 = self._split_eta(tau1)
        tau12 = symmetrize(tau12)
        mean = tau11 / tau2[..., None]
        scatter = tau12 - tau11[..., :, None] * tau11[..., None, :] / tau2[..., None, None]
        chol = safe_cholesky(scatter)
        scale = _chol_inverse(chol)
        logdet_scale = -_chol_logdet(chol)
        dof = tau2 + d
        return mean, scale, logdet_scale, dof

    def validate_posterior(self, tau1, tau2):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        if not np.all(tau2 > 0):
            raise ParameterDomainError("Normal-Wishart posterior needs kappa = tau2 > 0")
        tau11, tau12 = self._split_eta(tau1)
        scatter = symmetrize(tau12) - tau11[..., :, None] * tau11[..., None, :] / tau2[..., None, None]
        try:
            np.linalg.cholesky(symmetrize(scatter))
        except np.linalg.LinAlgError:
            raise ParameterDomainError("Normal-Wishart scale matrix is not positive definite") from None

    def posterior_classical(self, tau1, tau2):
        """Return ``(mean, kappa, scale V, dof)``."""
        tau1, tau2 = self._split_posterior(tau1, tau2)
        mean, scale, _, dof = self._nw_core(tau1, tau2)
        return mean, tau2, scale, dof

    def expectations(self, tau1, tau2):
        d = self.d
        tau1, tau2 = self._split_posterior(tau1, tau2)
        mean, scale, logdet_scale, dof = self._nw_core(tau1, tau2)
        scale_mean = np.einsum("...ij,...j->...i", scale, mean)
        e_eta1 = dof[..., None] * scale_mean  # E[Λμ]
        e_eta2 = -0.5 * dof[..., None, None] * scale  # E[-Λ/2]
        e_logdet = multivariate_digamma(d, dof / 2.0) + d * np.log(2.0) + logdet_scale
        e_quad = dof * np.einsum("...i,...i->...", mean, scale_mean) + d / tau2  # E[μᵀΛμ]
        e_neg_a = 0.5 * e_logdet - 0.5 * e_quad
        e_eta = np.concatenate([e_eta1, e_eta2.reshape(e_eta2.shape[:-2] + (d * d,))], axis=-1)
        return e_eta, e_neg_a

    def prior_log_partition(self, tau1, tau2):
        d = self.d
        tau1, tau2 = self._split_posterior(tau1, tau2)
        _, _, logdet_scale, dof = self._nw_core(tau1, tau2)
        return (
            -0.5 * d * np.log(tau2)
            + 0.5 * dof * d * np.log(2.0)
            + 0.5 * dof * logdet_scale
            + log_multivariate_gamma(d, dof / 2.0)
        )

    def sample_draws(self, tau1, tau2, rng, size):
        tau1, tau2 = self._split_posterior(tau1, tau2)
        if not tau2 > 0:
            raise SamplingError("degenerate Normal-Wishart posterior (kappa <= 0)")
        mean, scale, _, dof = self._nw_core(tau1, tau2)
        d = self.d
        try:
            lam = stats.wishart(df=float(dof), scale=scale).rvs(size=size, random_state=rng)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SamplingError(f"Wishart sampling failed: {exc}") from exc
        lam = np.asarray(lam, dtype=float).reshape(size, d, d)
        chol = safe_cholesky(float(tau2) * lam)
        z = rng.standard_normal((size, d))
        # μ = mean + L^{-T} z has covariance (κΛ)^{-1}
        offset = np.linalg.solve(np.swapaxes(chol, -1, -2), z[..., None])[..., 0]
        return {"mean": mean + offset, "precision": symmetrize(lam)}

    def draw_log_likelihood(self, rows, draws):
        mu = draws["mean"]  # (m, d)
        chol = safe_cholesky(draws["precision"])  # (m, d, d)
        logdet = _chol_logdet(chol)
        diff = rows[:, None, :] - mu[None, :, :]  # (N, m, d)
        proj = np.einsum("mji,nmj->nmi", chol, diff)  # Lᵀ(x - μ)
        quad = (proj * proj).sum(-1)
        return -0.5 * self.d * LOG_2PI + 0.5 * logdet[None, :] - 0.5 * quad


_FAMILIES = {
    Binomial.name: Binomial,
    Multinomial.name: Multinomial,
    Poisson.name: Poisson,
    MultivariateNormal.name: MultivariateNormal,
}


def family_from_dict(data) -> ExpFamily:
    data = dict(data)
    try:
        cls = _FAMILIES[data.pop("family")]
    except KeyError:
        raise ParameterDomainError(f"unknown family description {data!r}") from None
    return cls(**data)


# ---------------------------------------------------------------------------
# Conjugate posterior value type
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConjugatePosterior:
    """Natural parameters ``(tau1, tau2)`` of a conjugate prior or posterior."""

    family: ExpFamily
    tau1: np.ndarray
    tau2: float
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        tau1 = np.array(self.tau1, dtype=float).ravel()
        if tau1.shape[0] != self.family.stat_dim:
            raise ShapeError(
                f"{self.family.posterior_name} tau1 needs {self.family.stat_dim} entries, "
                f"got {tau1.shape[0]}"
            )
        if isinstance(self.family, MultivariateNormal):
            d = self.family.d
            block = symmetrize(tau1[d:].reshape(d, d))
            tau1[d:] = block.ravel()
        tau1.setflags(write=False)
        object.__setattr__(self, "tau1", tau1)
        object.__setattr__(self, "tau2", float(self.tau2))
        if self.validate:
            self.family.validate_posterior(tau1, np.asarray(self.tau2))

    def classical(self):
        return self.family.posterior_classical(self.tau1, np.asarray(self.tau2))

    def expectations(self) -> Tuple[np.ndarray, float]:
        e_eta, e_neg_a = self.family.expectations(self.tau1, np.asarray(self.tau2))
        return e_eta, float(e_neg_a)

    def log_partition(self) -> float:
        return float(self.family.prior_log_partition(self.tau1, np.asarray(self.tau2)))

    def to_dict(self):
        return {
            "family": self.family.to_dict(),
            "tau1": [float(v) for v in self.tau1],
            "tau2": float(self.tau2),
        }

    @classmethod
    def from_dict(cls, data):
        return cls(family_from_dict(data["family"]), np.asarray(data["tau1"]), data["tau2"])


# ---------------------------------------------------------------------------
# Functional surface
# ---------------------------------------------------------------------------


def to_natural(family: ExpFamily, params):
    return family.to_natural(params)


def from_natural(family: ExpFamily, eta):
    return family.from_natural(eta)


def sufficient_stats(family: ExpFamily, x):
    return family.sufficient_stats(x)


def log_density(family: ExpFamily, eta, x):
    return family.log_density(eta, x)


def conjugate_update(prior: ConjugatePosterior, stat_sum, weight) -> ConjugatePosterior:
    """Posterior after absorbing summed sufficient statistics of ``weight`` observations.

    ``weight`` may be fractional, as with soft cluster responsibilities.
    """
    stat_sum = np.asarray(stat_sum, dtype=float)
    if stat_sum.ndim == 0:
        stat_sum = stat_sum.reshape(1)
    if stat_sum.shape != prior.tau1.shape:
        raise ShapeError(f"stat_sum must have shape {prior.tau1.shape}, got {stat_sum.shape}")
    if weight < 0:
        raise ParameterDomainError(f"weight must be non-negative, got {weight}")
    return ConjugatePosterior(prior.family, prior.tau1 + stat_sum, prior.tau2 + weight)


def posterior_expectations(posterior: ConjugatePosterior):
    """``(E[η], E[-a(η)])`` under the posterior."""
    return posterior.expectations()


def sample_likelihood_params(posterior: ConjugatePosterior, rng):
    """One draw of the likelihood's classical parameters.

    Returns ``(mean, precision)`` for Normal-Wishart, a probability vector for
    Dirichlet, a rate for Gamma and a success probability for Beta.
    """
    draws = posterior.family.sample_draws(posterior.tau1, np.asarray(posterior.tau2), rng, 1)
    fam = posterior.family
    if isinstance(fam, MultivariateNormal):
        return draws["mean"][0], draws["precision"][0]
    if isinstance(fam, Multinomial):
        return draws["p"][0]
    if isinstance(fam, Poisson):
        return float(draws["rate"][0])
    return float(draws["p"][0])


def natural_from_draw(family: ExpFamily, draw):
    """Natural parameter of the likelihood for one classical draw."""
    if isinstance(family, MultivariateNormal):
        mean, precision = draw
        return np.concatenate([precision @ mean, (-0.5 * precision).ravel()])
    if isinstance(family, Multinomial):
        return np.log(draw)
    if isinstance(family, Poisson):
        return np.array([np.log(draw)])
    return np.array([np.log(draw) - np.log1p(-draw)])


def neg_log_partition_from_draw(family: ExpFamily, draw) -> float:
    """``-a(η)`` evaluated at one classical draw."""
    if isinstance(family, MultivariateNormal):
        mean, precision = draw
        sign, logdet = np.linalg.slogdet(precision)
        return float(-0.5 * mean @ precision @ mean + 0.5 * logdet)
    if isinstance(family, Multinomial):
        return 0.0
    if isinstance(family, Poisson):
        return -float(draw)
    return float(family.n * np.log1p(-draw))
