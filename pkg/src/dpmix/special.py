"""Special functions with argument checking.

Thin wrappers over :mod:`scipy.special` that raise
:class:`~dpmix.errors.ParameterDomainError` instead of silently returning
``nan``/``inf`` for arguments outside the domain.
"""

import numpy as np
from scipy import special as sp

from .errors import ParameterDomainError


def _positive(x, name="x"):
    arr = np.asarray(x, dtype=float)
    if not np.all(arr > 0):
        raise ParameterDomainError(f"{name} must be > 0, got {x!r}")
    return arr


def _scalar_or_array(value):
    if np.ndim(value) == 0:
        return float(value)
    return value


def digamma(x):
    """Digamma function, the derivative of ``log_gamma``."""
    return _scalar_or_array(sp.digamma(_positive(x)))


def log_gamma(x):
    return _scalar_or_array(sp.gammaln(_positive(x)))


def log_multivariate_gamma(d, x):
    """Log of the d-dimensional gamma function.

    ``ln Γ_d(x) = d(d-1)/4 ln π + Σ_{i=1..d} ln Γ(x + (1 - i)/2)``,
    defined for ``x > (d - 1)/2``.
    """
    d = int(d)
    if d < 1:
        raise ParameterDomainError(f"dimension must be >= 1, got {d}")
    x = np.asarray(x, dtype=float)
    if not np.all(x > (d - 1) / 2.0):
        raise ParameterDomainError(f"x must exceed (d-1)/2 = {(d - 1) / 2}, got {x!r}")
    offsets = (1.0 - np.arange(1, d + 1)) / 2.0
    out = d * (d - 1) / 4.0 * np.log(np.pi) + sp.gammaln(x[..., None] + offsets).sum(-1)
    return _scalar_or_array(out)


def multivariate_digamma(d, x):
    """``Σ_{i=1..d} ψ(x + (1 - i)/2)``, the derivative of ``log_multivariate_gamma``."""
    x = np.asarray(x, dtype=float)
    offsets = (1.0 - np.arange(1, int(d) + 1)) / 2.0
    return _scalar_or_array(sp.digamma(x[..., None] + offsets).sum(-1))


def log_sum_exp(values, axis=None, keepdims=False):
    """Overflow-safe ``log(sum(exp(values)))``.

    Rows made entirely of ``-inf`` give ``-inf`` rather than ``nan``.
    """
    arr = np.asarray(values, dtype=float)
    if arr.size == 0:
        raise ParameterDomainError("log_sum_exp of an empty array")
    out = sp.logsumexp(arr, axis=axis, keepdims=keepdims)
    return _scalar_or_array(out)


def normal_cdf(x):
    return _scalar_or_array(sp.ndtr(np.asarray(x, dtype=float)))


def normal_quantile(u):
    """Inverse of the standard normal CDF on the open interval (0, 1)."""
    u = np.asarray(u, dtype=float)
    if not np.all((u > 0) & (u < 1)):
        raise ParameterDomainError(f"quantile argument must lie in (0, 1), got {u!r}")
    return _scalar_or_array(sp.ndtri(u))


def gamma_cdf(x, shape, scale):
    """Regularized lower incomplete gamma ``P(shape, x / scale)``; zero for x <= 0."""
    _positive(shape, "shape")
    _positive(scale, "scale")
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(sp.gammainc(shape, np.maximum(x, 0.0) / scale))


def gamma_sf(x, shape, scale):
    """Upper tail ``1 - gamma_cdf``, computed without cancellation."""
    _positive(shape, "shape")
    _positive(scale, "scale")
    x = np.asarray(x, dtype=float)
    return _scalar_or_array(sp.gammaincc(shape, np.maximum(x, 0.0) / scale))


def gamma_quantile(u, shape, scale):
    u = np.asarray(u, dtype=float)
    if not np.all((u >= 0) & (u <= 1)):
        raise ParameterDomainError(f"probability must lie in [0, 1], got {u!r}")
    return _scalar_or_array(scale * sp.gammaincinv(shape, u))


def gamma_isf(q, shape, scale):
    """Inverse of ``gamma_sf``."""
    q = np.asarray(q, dtype=float)
    if not np.all((q >= 0) & (q <= 1)):
        raise ParameterDomainError(f"probability must lie in [0, 1], got {q!r}")
    return _scalar_or_array(scale * sp.gammainccinv(shape, q))
