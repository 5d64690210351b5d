"""Numerically stable primitives for simplex geometry.

A point on the n-simplex is represented as a plain float64 ndarray of
n+1 non-negative coordinates with unit l1 norm (``check_simplex``).
Dirichlet parameters are float64 ndarrays of strictly positive entries
(``check_alpha``).  All transforms operate along the last axis, so a
matrix of row vectors goes through unchanged in shape.
"""

from __future__ import annotations

import numpy as np
from scipy.special import gammaln

from .errors import DensityUnboundedError, InvalidInputError

SIMPLEX_ATOL = 1e-9

# Coordinates are clamped to this floor before taking logs in the
# euclidean projection; keeps saturated softmax outputs finite.
LOG_CLAMP = 1e-12


def check_simplex(x, atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate simplex coordinates (non-negative, l1 norm 1 within atol).

    Accepts a single vector or a matrix of row vectors; returns the
    validated float64 array.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim not in (1, 2) or x.shape[-1] < 2:
        raise InvalidInputError(f"expected >=2 simplex coordinates, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInputError("simplex coordinates must be finite")
    if np.any(x < 0):
        raise InvalidInputError("simplex coordinates must be non-negative")
    norms = x.sum(axis=-1)
    if np.any(np.abs(norms - 1.0) > atol):
        worst = float(np.max(np.abs(norms - 1.0)))
        raise InvalidInputError(f"l1 norm deviates from 1 by {worst:.3e} (atol {atol:.1e})")
    return x


def check_alpha(alpha) -> np.ndarray:
    """Validate Dirichlet concentration parameters (finite, all > 0)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size < 2:
        raise InvalidInputError(f"expected a 1-d parameter vector of length >=2, got shape {alpha.shape}")
    if not np.all(np.isfinite(alpha)):
        raise InvalidInputError("concentration parameters must be finite")
    if np.any(alpha <= 0):
        raise InvalidInputError("concentration parameters must be strictly positive")
    return alpha


def softmax(logits) -> np.ndarray:
    """Map logits to the simplex via exp/normalize with max subtraction.

    Operates along the last axis.  The argmax of the output equals the
    argmax of the input.
    """
    t = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(t)):
        raise InvalidInputError("softmax input must be finite")
    shifted = t - t.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_beta(alpha) -> float:
    """Log of the multivariate beta normalizer for a Dirichlet parameter."""
    alpha = check_alpha(alpha)
    return float(gammaln(alpha).sum() - gammaln(alpha.sum()))


def dirichlet_log_pdf(alpha, x) -> float:
    """Log density of Dir(alpha) at a simplex point x.

    Boundary coordinates (x_i == 0) are allowed only where alpha_i >= 1;
    otherwise the density is unbounded there and
    :class:`DensityUnboundedError` is raised.
    """
    alpha = check_alpha(alpha)
    x = check_simplex(x)
    if x.ndim != 1:
        raise InvalidInputError("dirichlet_log_pdf expects a single vector")
    if x.size != alpha.size:
        raise InvalidInputError(f"dimension mismatch: alpha has {alpha.size}, x has {x.size}")
    at_boundary = x == 0.0
    if np.any(at_boundary & (alpha < 1.0)):
        raise DensityUnboundedError("zero coordinate with concentration < 1: density unbounded")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (alpha - 1.0) * np.log(x)
    # 0 * log(0) contributes 0 when alpha_i == 1.
    terms = np.where(at_boundary & (alpha == 1.0), 0.0, terms)
    return float(terms.sum() - log_beta(alpha))


def dirichlet_sample(alpha, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``count`` points from Dir(alpha) as rows of a matrix.

    Independent Gamma(alpha_i, 1) draws normalized by their sum; numpy's
    generator supplies the Marsaglia-Tsang rejection sampler with the
    u**(1/alpha) boost for shapes below 1.
    """
    alpha = check_alpha(alpha)
    if count < 1:
        raise InvalidInputError("count must be >= 1")
    gammas = rng.standard_gamma(alpha, size=(count, alpha.size))
    totals = gammas.sum(axis=1)
    # For very small alpha every gamma can underflow to zero; redraw those rows.
    while np.any(totals == 0.0):
        bad = totals == 0.0
        gammas[bad] = rng.standard_gamma(alpha, size=(int(bad.sum()), alpha.size))
        totals = gammas.sum(axis=1)
    return gammas / totals[:, None]


def logistic_to_simplex(y) -> np.ndarray:
    """Project euclidean vectors onto the simplex.

    x_i = exp(y_i) / (1 + sum_j exp(y_j)) for i <= n and
    x_{n+1} = 1 / (1 + sum_j exp(y_j)); evaluated as a softmax over the
    augmented vector (y, 0) so large coordinates cannot overflow.
    """
    y = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("euclidean coordinates must be finite")
    augmented = np.concatenate([y, np.zeros(y.shape[:-1] + (1,))], axis=-1)
    return softmax(augmented)


def simplex_to_logistic(x) -> np.ndarray:
    """Project simplex points to euclidean space: y_i = ln(x_i / x_{n+1}).

    Coordinates are clamped to ``LOG_CLAMP`` before the log so boundary
    points map to large finite values instead of +-inf.
    """
    x = check_simplex(x)
    clamped = np.maximum(x, LOG_CLAMP)
    logs = np.log(clamped)
    return logs[..., :-1] - logs[..., -1:]
