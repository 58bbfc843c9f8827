"""Token alignment onto the text sequence via relaxed optimal transport,
plus the multi-kernel MMD alignment loss.

The solver is entropic Sinkhorn scaling with uniform marginals, run in the
log domain. Relaxed mode softens both marginals with a KL penalty of weight
``tau``, which turns each scaling update into a damped one with exponent
``tau / (tau + epsilon)``; ``tau = inf`` recovers the balanced solver.
Transport plans are treated as constants by the training graph: gradients
flow only through the barycentric projection of the source tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

from .features import FeatureSequence, InvariantError


def _logsumexp(M: np.ndarray, axis: int) -> np.ndarray:
    """Axis-wise log-sum-exp; faster than scipy's for the tiny matrices here."""
    mx = M.max(axis=axis, keepdims=True)
    out = mx + np.log(np.exp(M - mx).sum(axis=axis, keepdims=True))
    return np.squeeze(out, axis=axis)


@dataclass
class RotConfig:
    epsilon: float = 0.05
    tau: float = 1.0  # math.inf selects the balanced solver
    max_iters: int = 200
    tol: float = 1e-6


@dataclass
class TransportPlan:
    matrix: np.ndarray  # (n_src, n_tgt), nonnegative
    epsilon: float
    tau: float
    iterations_run: int
    converged: bool
    violations: list[float] | None = field(default=None, repr=False)


@dataclass
class MmdConfig:
    """RBF bandwidths; "median-heuristic" scales the pooled median pairwise
    distance by ``multipliers``. Only the biased V-statistic is implemented."""

    bandwidths: tuple[float, ...] | str = "median-heuristic"
    multipliers: tuple[float, ...] = (0.5, 1.0, 2.0)
    estimator: str = "biased"

    def __post_init__(self):
        if self.estimator != "biased":
            raise InvariantError(f"unsupported estimator {self.estimator!r}")
        if isinstance(self.bandwidths, str):
            if self.bandwidths != "median-heuristic":
                raise InvariantError(f"unknown bandwidth rule {self.bandwidths!r}")
            if not self.multipliers:
                raise InvariantError("multiplier list must be non-empty")
        else:
            if not self.bandwidths:
                raise InvariantError("bandwidth list must be non-empty")
            if any(b <= 0 for b in self.bandwidths):
                raise InvariantError("bandwidths must be positive")


def _as_matrix(seq) -> np.ndarray:
    if isinstance(seq, FeatureSequence):
        return seq.tokens
    if torch.is_tensor(seq):
        return seq.detach().numpy()
    return np.asarray(seq, dtype=np.float64)


def cost_matrix(src, tgt) -> np.ndarray:
    """Cosine distance 1 - cos(src_i, tgt_j) in [0, 2].

    Zero-norm rows (absent faces) get cos = 0, i.e. a neutral cost of 1.
    """
    a, b = _as_matrix(src), _as_matrix(tgt)
    if a.shape[1] != b.shape[1]:
        raise InvariantError(f"dim mismatch: {a.shape[1]} != {b.shape[1]}")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise InvariantError("cost matrix needs at least one token on each side")
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    denom = np.outer(na, nb)
    cos = np.divide(a @ b.T, denom, out=np.zeros((len(a), len(b))), where=denom > 0)
    return 1.0 - np.clip(cos, -1.0, 1.0)


def rot_solve(
    C: np.ndarray,
    epsilon: float = 0.05,
    tau: float = 1.0,
    max_iters: int = 200,
    tol: float = 1e-6,
    record_violations: bool = False,
) -> TransportPlan:
    """Entropic (relaxed) Sinkhorn with uniform marginals 1/n_src, 1/n_tgt.

    Balanced mode (tau = inf) measures convergence as the max deviation of
    the plan's marginals from uniform; relaxed mode, whose fixed point does
    not satisfy the marginals, measures stationarity of the log scalings.
    """
    C = np.asarray(C, dtype=np.float64)
    if not np.all(np.isfinite(C)):
        raise InvariantError("cost matrix contains non-finite entries")
    if epsilon <= 0:
        raise InvariantError("epsilon must be > 0")
    if not (tau > 0):
        raise InvariantError("tau must be > 0 (or inf for balanced)")
    if max_iters < 1:
        raise InvariantError("max_iters must be >= 1")

    n, m = C.shape
    log_a = math.log(1.0 / n)
    log_b = math.log(1.0 / m)
    fi = 1.0 if math.isinf(tau) else tau / (tau + epsilon)
    S = -C / epsilon  # log-kernel
    phi = np.zeros(n)  # log of the row scalings
    psi = np.zeros(m)

    balanced = math.isinf(tau)
    converged = False
    iterations = 0
    history: list[float] = [] if record_violations else None

    for _ in range(max_iters):
        phi_prev, psi_prev = phi, psi
        phi = fi * (log_a - _logsumexp(S + psi[None, :], axis=1))
        psi = fi * (log_b - _logsumexp(S + phi[:, None], axis=0))
        iterations += 1
        if balanced:
            T = np.exp(phi[:, None] + psi[None, :] + S)
            violation = max(
                np.max(np.abs(T.sum(axis=1) - 1.0 / n)),
                np.max(np.abs(T.sum(axis=0) - 1.0 / m)),
            )
        else:
            violation = max(
                np.max(np.abs(phi - phi_prev)), np.max(np.abs(psi - psi_prev))
            )
        if history is not None:
            history.append(float(violation))
        if violation < tol:
            converged = True
            break

    T = np.exp(phi[:, None] + psi[None, :] + S)
    return TransportPlan(
        matrix=T,
        epsilon=epsilon,
        tau=tau,
        iterations_run=iterations,
        converged=converged,
        violations=history,
    )


def barycentric_project(plan: TransportPlan, src) -> torch.Tensor:
    """Re-express source tokens on the target grid: column-normalized T^T src.

    Differentiable in ``src``; the plan itself is a constant.
    """
    src_t = src if torch.is_tensor(src) else torch.as_tensor(_as_matrix(src))
    T = torch.as_tensor(plan.matrix, dtype=src_t.dtype)
    if T.shape[0] != src_t.shape[0]:
        raise InvariantError(
            f"plan rows {T.shape[0]} do not match source length {src_t.shape[0]}"
        )
    mass = torch.clamp(T.sum(dim=0), min=1e-12)
    return (T.T @ src_t) / mass[:, None]


def project_to_sequence(plan: TransportPlan, src: FeatureSequence) -> FeatureSequence:
    """barycentric_project for ingestion types, keeping the modality tag."""
    with torch.no_grad():
        aligned = barycentric_project(plan, src).numpy()
    return FeatureSequence(src.modality, src.dim, aligned)


def align_to_text(src, text, rot: RotConfig) -> tuple[torch.Tensor, TransportPlan]:
    """Cost -> plan -> projection in one call. The cost uses detached values."""
    plan = rot_solve(
        cost_matrix(src, text),
        epsilon=rot.epsilon,
        tau=rot.tau,
        max_iters=rot.max_iters,
        tol=rot.tol,
    )
    return barycentric_project(plan, src), plan


def _pairwise_sq_dists(x: torch.Tensor, y: torch.Tensor) -> torch.Tensor:
    sq = (x * x).sum(1)[:, None] + (y * y).sum(1)[None, :] - 2.0 * (x @ y.T)
    return torch.clamp(sq, min=0.0)


def resolve_bandwidths(x: torch.Tensor, y: torch.Tensor, cfg: MmdConfig) -> list[float]:
    """Explicit list, or median pairwise distance of the pooled sample times
    the configured multipliers (falling back to 1.0 on a degenerate pool)."""
    if not isinstance(cfg.bandwidths, str):
        return list(cfg.bandwidths)
    with torch.no_grad():
        pool = torch.cat([x, y], dim=0)
        d = torch.sqrt(_pairwise_sq_dists(pool, pool))
        iu = torch.triu_indices(len(pool), len(pool), offset=1)
        pairs = d[iu[0], iu[1]]
        base = float(pairs.median()) if len(pairs) else 0.0
    if base <= 1e-12:
        base = 1.0
    return [m * base for m in cfg.multipliers]


def _as_tensor(seq) -> torch.Tensor:
    if torch.is_tensor(seq):
        return seq
    return torch.as_tensor(_as_matrix(seq), dtype=torch.float64)


def _canonical_order(x: torch.Tensor, y: torch.Tensor) -> bool:
    """True when (x, y) is already the canonical argument order.

    The cross-kernel term is summed in one fixed orientation so that
    mmd(X, Y) == mmd(Y, X) bit-for-bit despite float addition ordering.
    """
    if x.shape != y.shape:
        return tuple(x.shape) <= tuple(y.shape)
    return x.detach().numpy().tobytes() <= y.detach().numpy().tobytes()


def mmd(X, Y, cfg: MmdConfig | None = None) -> torch.Tensor:
    """Biased V-statistic squared MMD, summed over RBF bandwidths."""
    cfg = cfg or MmdConfig()
    x, y = _as_tensor(X), _as_tensor(Y)
    if x.ndim != 2 or y.ndim != 2 or len(x) < 1 or len(y) < 1:
        raise InvariantError("mmd needs non-empty 2-D token sets")
    if x.shape[1] != y.shape[1]:
        raise InvariantError(f"dim mismatch: {x.shape[1]} != {y.shape[1]}")
    dxx = _pairwise_sq_dists(x, x)
    dyy = _pairwise_sq_dists(y, y)
    u, v = (x, y) if _canonical_order(x, y) else (y, x)
    dxy = _pairwise_sq_dists(u, v)
    sigmas = torch.tensor(resolve_bandwidths(x, y, cfg), dtype=x.dtype)
    scales = (2.0 * sigmas * sigmas)[:, None, None]
    total = (
        torch.exp(-dxx / scales).mean(dim=(1, 2))
        + torch.exp(-dyy / scales).mean(dim=(1, 2))
        - 2.0 * torch.exp(-dxy / scales).mean(dim=(1, 2))
    ).sum()
    return torch.clamp(total, min=0.0)


def total_mmd_loss(aligned_audio, aligned_video, aligned_face, text,
                   cfg: MmdConfig | None = None) -> torch.Tensor:
    """Sum of the three aligned-modality-to-text discrepancies."""
    return (
        mmd(aligned_audio, text, cfg)
        + mmd(aligned_video, text, cfg)
        + mmd(aligned_face, text, cfg)
    )
