"""Entropy-regularized optimal transport between weighted point clouds.

All potentials are computed in the log domain, so small regularization
strengths stay finite.  The raw transport value reported is the
entropic objective <P, C> - eps * H(P); the debiased divergence
S(a, b) = OT(a, b) - (OT(a, a) + OT(b, b)) / 2 cancels the entropic
bias so that S(a, a) = 0, and is used as the squared 2-Wasserstein
surrogate in the training loss.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError, NumericalError

WEIGHT_ATOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Weighted point cloud: points (m, d), weights (m,) summing to 1."""

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if points.ndim != 2 or points.shape[0] < 1:
            raise InvalidInputError(f"points must be a non-empty (m, d) matrix, got shape {points.shape}")
        if weights.shape != (points.shape[0],):
            raise InvalidInputError(f"weights shape {weights.shape} does not match {points.shape[0]} points")
        if not (np.all(np.isfinite(points)) and np.all(np.isfinite(weights))):
            raise InvalidInputError("measure entries must be finite")
        if np.any(weights < 0):
            raise InvalidInputError("weights must be non-negative")
        if abs(weights.sum() - 1.0) > WEIGHT_ATOL:
            raise InvalidInputError(f"weights must sum to 1 within {WEIGHT_ATOL:.0e}")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def size(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def uniform_measure(points) -> EmpiricalMeasure:
    """Measure with equal mass on every row of ``points``."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise InvalidInputError("points must be an (m, d) matrix")
    m = points.shape[0]
    return EmpiricalMeasure(points, np.full(m, 1.0 / m))


@dataclass(frozen=True)
class SinkhornConfig:
    """Solver knobs.

    epsilon=None selects 0.05 x mean of the cross-cost matrix, resolved
    per call, which keeps the regularization scale-free across latent
    dimensions.
    """

    epsilon: float | None = None
    max_iters: int = 200
    tol: float = 1e-6
    debiased: bool = True

    def __post_init__(self):
        if self.epsilon is not None and not self.epsilon > 0:
            raise InvalidInputError("epsilon must be > 0")
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if not self.tol > 0:
            raise InvalidInputError("tol must be > 0")


@dataclass(frozen=True)
class SinkhornPotentials:
    f: np.ndarray
    g: np.ndarray
    epsilon: float
    iters_used: int
    converged: bool


def pairwise_sq_cost(a: EmpiricalMeasure, b: EmpiricalMeasure) -> np.ndarray:
    """Squared euclidean cost matrix C[i, j] = ||a_i - b_j||^2."""
    if a.dim != b.dim:
        raise InvalidInputError(f"point dimension mismatch: {a.dim} vs {b.dim}")
    diff = a.points[:, None, :] - b.points[None, :, :]
    return np.sum(diff * diff, axis=-1)


def _logsumexp(a: np.ndarray, axis: int) -> np.ndarray:
    amax = np.max(a, axis=axis, keepdims=True)
    amax = np.where(np.isfinite(amax), amax, 0.0)
    out = np.log(np.sum(np.exp(a - amax), axis=axis)) + np.squeeze(amax, axis=axis)
    return out


def resolve_epsilon(cfg: SinkhornConfig, cost: np.ndarray) -> float:
    if cfg.epsilon is not None:
        return cfg.epsilon
    eps = 0.05 * float(cost.mean())
    return eps if eps > 0 else 1.0


def sinkhorn_potentials(cost, wa, wb, cfg: SinkhornConfig) -> SinkhornPotentials:
    """Alternating log-domain updates until the potentials stabilize.

    The f update runs last, which makes the plan's row marginals exact;
    column marginals are accurate to the convergence tolerance.
    """
    cost = np.asarray(cost, dtype=np.float64)
    wa = np.asarray(wa, dtype=np.float64)
    wb = np.asarray(wb, dtype=np.float64)
    if cost.ndim != 2 or cost.shape != (wa.size, wb.size):
        raise InvalidInputError(f"cost shape {cost.shape} does not match weights ({wa.size}, {wb.size})")
    if not np.all(np.isfinite(cost)):
        raise InvalidInputError("cost matrix must be finite")
    eps = resolve_epsilon(cfg, cost)
    with np.errstate(divide="ignore"):
        log_wa = np.log(wa)
        log_wb = np.log(wb)
    f = np.zeros(wa.size)
    g = np.zeros(wb.size)
    iters_used = cfg.max_iters
    converged = False
    for it in range(cfg.max_iters):
        f_prev = f
        g_prev = g
        g = -eps * _logsumexp(log_wa[:, None] + (f[:, None] - cost) / eps, axis=0)
        f = -eps * _logsumexp(log_wb[None, :] + (g[None, :] - cost) / eps, axis=1)
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NumericalError("non-finite sinkhorn potentials", iteration=it)
        delta = max(np.max(np.abs(f - f_prev)), np.max(np.abs(g - g_prev)))
        if delta < cfg.tol:
            iters_used = it + 1
            converged = True
            break
    return SinkhornPotentials(f=f, g=g, epsilon=eps, iters_used=iters_used, converged=converged)


def transport_plan(cost, wa, wb, pots: SinkhornPotentials) -> np.ndarray:
    """Primal plan P_ij = wa_i wb_j exp((f_i + g_j - C_ij) / eps)."""
    with np.errstate(divide="ignore"):
        log_plan = (
            np.log(wa)[:, None]
            + np.log(wb)[None, :]
            + (pots.f[:, None] + pots.g[None, :] - cost) / pots.epsilon
        )
    return np.exp(log_plan)


def _entropic_value(cost, plan, eps: float) -> float:
    transport = float(np.sum(plan * cost))
    with np.errstate(divide="ignore", invalid="ignore"):
        log_plan = np.where(plan > 0, np.log(plan), 0.0)
    entropy = -float(np.sum(plan * log_plan))
    return transport - eps * entropy


def _ot_solve(a: EmpiricalMeasure, b: EmpiricalMeasure, cfg: SinkhornConfig, eps: float):
    cost = pairwise_sq_cost(a, b)
    solve_cfg = SinkhornConfig(epsilon=eps, max_iters=cfg.max_iters, tol=cfg.tol, debiased=cfg.debiased)
    pots = sinkhorn_potentials(cost, a.weights, b.weights, solve_cfg)
    plan = transport_plan(cost, a.weights, b.weights, pots)
    return _entropic_value(cost, plan, eps), plan, pots.converged


def sinkhorn_divergence(a: EmpiricalMeasure, b: EmpiricalMeasure, cfg: SinkhornConfig) -> float:
    """Entropic OT value between a and b; debiased by the self-transport
    terms when cfg.debiased (the default)."""
    value, _, _ = _divergence_parts(a, b, cfg, need_grad=False)
    return value


def sinkhorn_grad_points(a: EmpiricalMeasure, b: EmpiricalMeasure, cfg: SinkhornConfig):
    """Envelope-theorem gradient of the divergence w.r.t. a.points.

    Potentials are treated as constants at convergence (Danskin), so the
    gradient only sees the plan-weighted barycenter terms.  Returns
    (gradient, converged); an unconverged solve still yields a gradient.
    """
    _, grad, converged = _divergence_parts(a, b, cfg, need_grad=True)
    return grad, converged


def divergence_and_grad(a: EmpiricalMeasure, b: EmpiricalMeasure, cfg: SinkhornConfig):
    """Value and gradient from one set of solves (training fast path)."""
    return _divergence_parts(a, b, cfg, need_grad=True)


def _divergence_parts(a, b, cfg: SinkhornConfig, need_grad: bool):
    cost_ab = pairwise_sq_cost(a, b)
    eps = resolve_epsilon(cfg, cost_ab)
    solve_cfg = SinkhornConfig(epsilon=eps, max_iters=cfg.max_iters, tol=cfg.tol, debiased=cfg.debiased)
    pots_ab = sinkhorn_potentials(cost_ab, a.weights, b.weights, solve_cfg)
    plan_ab = transport_plan(cost_ab, a.weights, b.weights, pots_ab)
    value = _entropic_value(cost_ab, plan_ab, eps)
    converged = pots_ab.converged
    grad = None
    wa_col = a.weights[:, None]
    if not cfg.debiased:
        if need_grad:
            grad = 2.0 * (wa_col * a.points - plan_ab @ b.points)
        return value, grad, converged

    value_aa, plan_aa, conv_aa = _ot_solve(a, a, cfg, eps)
    value_bb, _, conv_bb = _ot_solve(b, b, cfg, eps)
    value = value - 0.5 * value_aa - 0.5 * value_bb
    converged = converged and conv_aa and conv_bb
    if need_grad:
        cross = 2.0 * (wa_col * a.points - plan_ab @ b.points)
        self_term = 2.0 * (wa_col * a.points - plan_aa @ a.points)
        grad = cross - self_term
    return value, grad, converged
