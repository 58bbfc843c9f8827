"""Fusing aligned modalities into one video vector.

Per token: concat the four modalities, project 4d -> d_model, layer-norm,
soft-gate each token, run a single selective state-space block with a
residual connection, then mean-pool over time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .features import InvariantError

LN_EPS = 1e-5  # floor on the per-token standard deviation
LN_VAR_FLOOR = 1e-12  # below this variance the normalized row is zero


@dataclass
class SsmParams:
    """Selective-SSM block: A = -exp(log_A) stays strictly negative, and the
    per-token step size is softplus-activated so it stays positive."""

    log_A: torch.Tensor  # (d_model, d_state)
    D: torch.Tensor  # (d_model,)
    w_delta: torch.Tensor  # (d_model, d_model)
    b_delta: torch.Tensor  # (d_model,)
    w_B: torch.Tensor  # (d_model, d_state)
    b_B: torch.Tensor  # (d_state,)
    w_C: torch.Tensor  # (d_model, d_state)
    b_C: torch.Tensor  # (d_state,)


@dataclass
class FusionParams:
    proj_w: torch.Tensor  # (4d, d_model)
    proj_b: torch.Tensor  # (d_model,)
    ln_gamma: torch.Tensor  # (d_model,)
    ln_beta: torch.Tensor  # (d_model,)
    gate_w1: torch.Tensor  # (d_model, d_gate)
    gate_b1: torch.Tensor  # (d_gate,)
    gate_w2: torch.Tensor  # (d_gate, 1)
    gate_b2: torch.Tensor  # (1,)
    ssm: SsmParams


def _check_equal_shapes(seqs: list[torch.Tensor]) -> None:
    lengths = {s.shape[0] for s in seqs}
    dims = {s.shape[1] for s in seqs}
    if len(lengths) != 1 or len(dims) != 1:
        raise InvariantError(
            f"modalities must share length and dim, got {[tuple(s.shape) for s in seqs]}"
        )


def layer_norm(x: torch.Tensor, gamma: torch.Tensor, beta: torch.Tensor) -> torch.Tensor:
    """Per-row normalization with a std floor of LN_EPS; rows whose variance
    is below LN_VAR_FLOOR normalize to zero (then the affine applies)."""
    mean = x.mean(dim=-1, keepdim=True)
    var = x.var(dim=-1, unbiased=False, keepdim=True)
    normalized = (x - mean) / torch.sqrt(torch.clamp(var, min=LN_EPS * LN_EPS))
    normalized = torch.where(var < LN_VAR_FLOOR, torch.zeros_like(normalized), normalized)
    return gamma * normalized + beta


def concat_project(text, a_align, v_align, f_align, params: FusionParams) -> torch.Tensor:
    """(q, 4d) concat -> linear -> layer norm, token-wise."""
    seqs = [torch.as_tensor(np.asarray(s) if not torch.is_tensor(s) else s,
                            dtype=torch.float64) for s in (text, a_align, v_align, f_align)]
    _check_equal_shapes(seqs)
    stacked = torch.cat(seqs, dim=1)
    if stacked.shape[1] != params.proj_w.shape[0]:
        raise InvariantError(
            f"concat width {stacked.shape[1]} != proj rows {params.proj_w.shape[0]}"
        )
    projected = stacked @ params.proj_w + params.proj_b
    return layer_norm(projected, params.ln_gamma, params.ln_beta)


def fsf_gate(seq: torch.Tensor, params: FusionParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Soft token selection: scalar sigmoid gate per token, no hard drop."""
    if seq.shape[0] < 1:
        raise InvariantError("gate needs at least one token")
    hidden = torch.relu(seq @ params.gate_w1 + params.gate_b1)
    gates = torch.sigmoid(hidden @ params.gate_w2 + params.gate_b2).squeeze(-1)
    return gates[:, None] * seq, gates


def ssm_encode(seq: torch.Tensor, params: SsmParams) -> torch.Tensor:
    """Left-to-right selective scan with residual output.

    Per channel c: h_j = exp(delta_jc * A_c) * h_{j-1} + delta_jc * B_j * x_jc,
    y_jc = <C_j, h_j> + D_c * x_jc, h_0 = 0 (ZOH on A, Euler on B).
    """
    q, d_model = seq.shape
    if q < 1:
        raise InvariantError("ssm_encode needs at least one token")
    A = -torch.exp(params.log_A)  # (d_model, d_state)
    delta = F.softplus(seq @ params.w_delta + params.b_delta)  # (q, d_model)
    B = seq @ params.w_B + params.b_B  # (q, d_state)
    C = seq @ params.w_C + params.b_C  # (q, d_state)

    # discretize all tokens at once; only the recurrence itself is sequential
    a_bar = torch.exp(delta[:, :, None] * A[None, :, :])  # (q, d_model, d_state)
    b_bar_x = (delta * seq)[:, :, None] * B[:, None, :]  # (q, d_model, d_state)

    h = torch.zeros((d_model, A.shape[1]), dtype=seq.dtype)
    states = []
    for j in range(q):
        h = a_bar[j] * h + b_bar_x[j]
        states.append(h)
    stacked = torch.stack(states, dim=0)  # (q, d_model, d_state)
    y = (stacked * C[:, None, :]).sum(dim=-1) + params.D * seq
    if not torch.all(torch.isfinite(y)):
        bad = int(torch.nonzero(~torch.isfinite(y).all(dim=1))[0])
        raise InvariantError(f"non-finite SSM state at token {bad}")
    return y + seq


def pool_video(seq: torch.Tensor) -> torch.Tensor:
    """Mean over tokens -> one d_model vector."""
    if seq.shape[0] < 1:
        raise InvariantError("cannot pool an empty sequence")
    return seq.mean(dim=0)


def fuse(text, a_align, v_align, f_align, params: FusionParams) -> torch.Tensor:
    """Full fusion stack: project, gate, encode, pool."""
    projected = concat_project(text, a_align, v_align, f_align, params)
    gated, _ = fsf_gate(projected, params)
    return pool_video(ssm_encode(gated, params.ssm))
