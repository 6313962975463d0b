"""Self-attention, self-subject-attention and subject-encoder attention.

All three share one multi-head kernel. Self-subject-attention takes its
query from the generated tokens only and attends over the concatenation of
generated and reference keys/values, both projected with the *same* Key and
Value weights, with an additive log-mask bias on the reference columns.
Subject-encoder attention is a cross-attention onto encoder tokens whose
result is scaled by ``beta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numeric as nx
from .errors import ConfigError
from .numeric import Linear, Module, Rng, ShapeError, Tensor

LOG_ZERO = -1e9


class AttentionParams(Module):
    """Query/Key/Value/Output projections for one attention layer.

    ``context_dim`` is the width of the key/value source (the token width for
    self-attention, the encoder or text width for cross-attention).
    """

    def __init__(
        self,
        dim: int,
        heads: int,
        rng: Rng,
        context_dim: int | None = None,
        zero_out: bool = False,
    ):
        if dim % heads:
            raise ShapeError(f"dim {dim} not divisible by {heads} heads")
        context_dim = dim if context_dim is None else context_dim
        self.to_q = Linear(dim, dim, rng)
        self.to_k = Linear(context_dim, dim, rng)
        self.to_v = Linear(context_dim, dim, rng)
        self.to_out = Linear(dim, dim, rng, zero=zero_out)
        self._heads = heads

    @property
    def heads(self) -> int:
        return self._heads

    @property
    def head_dim(self) -> int:
        return self.to_q.weight.shape[0] // self._heads

    @property
    def context_dim(self) -> int:
        return self.to_k.weight.shape[1]


@dataclass(frozen=True)
class AttentionBias:
    """Additive pre-softmax bias; ``row`` has shape [B, 1, 1, N_gen + N_ref].

    Every head and every query sees the same row, so only the row is stored;
    ``values`` expands it to the full [B, heads, N_gen, N_gen + N_ref].
    """

    row: np.ndarray
    heads: int
    n_gen: int

    @property
    def width(self) -> int:
        return self.row.shape[-1]

    @property
    def values(self) -> np.ndarray:
        B = self.row.shape[0]
        return np.broadcast_to(self.row, (B, self.heads, self.n_gen, self.width))


def build_attention_bias(mask_ref, omega_ref: float, n_gen: int, heads: int) -> AttentionBias:
    """Bias ``[0 ... 0, log(omega_ref * mask)]`` with log(0) clamped to ``LOG_ZERO``."""
    if omega_ref < 0:
        raise ConfigError(f"omega_ref must be >= 0, got {omega_ref}")
    m = np.asarray(mask_ref.data if isinstance(mask_ref, Tensor) else mask_ref, dtype=np.float64)
    if m.ndim == 1:
        m = m[None]
    if not np.all((m == 0) | (m == 1)):
        raise nx.ContractError("reference mask entries must be 0 or 1")
    w = omega_ref * m
    with np.errstate(divide="ignore"):
        ref = np.where(w > 0, np.log(np.where(w > 0, w, 1.0)), LOG_ZERO)
    row = np.concatenate([np.zeros((m.shape[0], n_gen)), ref], axis=1)
    return AttentionBias(row[:, None, None, :], heads, n_gen)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    B, N, C = x.shape
    return x.reshape(B, N, heads, C // heads).transpose(0, 2, 1, 3)


def _merge_heads(x: Tensor) -> Tensor:
    B, h, N, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, N, h * d)


def attend(
    z: Tensor,
    context: Tensor,
    p: AttentionParams,
    bias: np.ndarray | None = None,
    return_probs: bool = False,
):
    """Multi-head scaled dot-product attention of ``z`` onto ``context``.

    Returns the output-projected result (no residual); with ``return_probs``
    also the softmax weights [B, heads, N, M].
    """
    if z.shape[-1] != p.to_q.weight.shape[1]:
        raise ShapeError(f"query width {z.shape[-1]} != projection {p.to_q.weight.shape[1]}")
    if context.shape[-1] != p.context_dim:
        raise ShapeError(f"context width {context.shape[-1]} != key projection {p.context_dim}")
    h = p.heads
    q = _split_heads(p.to_q(z), h)
    k = _split_heads(p.to_k(context), h)
    v = _split_heads(p.to_v(context), h)
    scores = nx.matmul(q, k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(p.head_dim))
    if bias is not None:
        scores = scores + Tensor(bias)
    probs = nx.softmax_last_dim(scores)
    out = p.to_out(_merge_heads(nx.matmul(probs, v)))
    return (out, probs) if return_probs else out


def self_attention(z: Tensor, p: AttentionParams) -> Tensor:
    """Plain multi-head self-attention over the tokens of ``z`` [B, N, C]."""
    return attend(z, z, p)


def _match_batch(z_ref: Tensor, B: int) -> Tensor:
    if z_ref.shape[0] == B:
        return z_ref
    if z_ref.shape[0] != 1:
        raise ShapeError(f"reference batch {z_ref.shape[0]} cannot broadcast to {B}")
    return nx.broadcast_to(z_ref, (B,) + z_ref.shape[1:])


def self_subject_attention(
    z: Tensor,
    z_ref: Tensor,
    bias: AttentionBias,
    p: AttentionParams,
    return_probs: bool = False,
):
    """Self-attention whose keys/values also include reference tokens.

    Keys and values are ``[Key(z), Key(z_ref)]`` / ``[Value(z), Value(z_ref)]``
    from the shared projections; the query comes from ``z`` only.
    """
    B, N, _ = z.shape
    z_ref = _match_batch(z_ref, B)
    if bias.width != N + z_ref.shape[1]:
        raise ShapeError(f"bias width {bias.width} != {N} + {z_ref.shape[1]} keys")
    row = bias.row
    if row.shape[0] not in (1, B):
        raise ShapeError(f"bias batch {row.shape[0]} cannot broadcast to {B}")
    context = nx.concat([z, z_ref], axis=1)
    return attend(z, context, p, bias=row, return_probs=return_probs)


@dataclass
class SubjectFeatures:
    """Subject-encoder token sequence [B, N_se, C_se] and its scale ``beta``."""

    tokens: Tensor
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.tokens.ndim != 3 or self.tokens.shape[1] == 0:
            raise ShapeError(f"subject tokens must be [B, N_se>0, C], got {self.tokens.shape}")
        if self.beta < 0:
            raise ConfigError(f"beta must be >= 0, got {self.beta}")

    def with_beta(self, beta: float) -> SubjectFeatures:
        return SubjectFeatures(self.tokens, beta)


def subject_encoder_attention(z: Tensor, subject: SubjectFeatures, p: AttentionParams) -> Tensor:
    """``beta`` times cross-attention from ``z`` onto the subject tokens."""
    tokens = _match_batch(subject.tokens, z.shape[0])
    return attend(z, tokens, p) * float(subject.beta)
