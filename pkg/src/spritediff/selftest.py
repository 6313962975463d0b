"""Fast built-in oracle and invariant checks, run by ``spritediff selftest``.

Each check compares a production code path against an independent
brute-force computation on small random instances.
"""

from __future__ import annotations

import math
import time
from typing import Callable

import numpy as np

from . import numeric as nx
from .attention import (
    AttentionParams,
    SubjectFeatures,
    build_attention_bias,
    self_attention,
    self_subject_attention,
    subject_encoder_attention,
)
from .checkpoint import Checkpoint
from .guidance import GuidanceConfig, branch_draw, guided_eps
from .numeric import Rng, Tensor
from .numeric.gradcheck import check_gradients
from .schedule import make_schedule, q_sample
from .sprites import uncond_ids


def _loop_attention(z, ctx, p, bias_row=None):
    B, N, C = z.shape
    h, d = p.heads, p.head_dim
    q = z @ p.to_q.weight.data.T + p.to_q.bias.data
    k = ctx @ p.to_k.weight.data.T + p.to_k.bias.data
    v = ctx @ p.to_v.weight.data.T + p.to_v.bias.data
    out = np.zeros((B, N, C))
    for b in range(B):
        for head in range(h):
            sl = slice(head * d, (head + 1) * d)
            for i in range(N):
                s = [q[b, i, sl] @ k[b, j, sl] / math.sqrt(d) for j in range(ctx.shape[1])]
                s = np.array(s) + (0.0 if bias_row is None else bias_row[b])
                w = np.exp(s - s.max())
                out[b, i, sl] = (w / w.sum()) @ v[b, :, sl]
    return out @ p.to_out.weight.data.T + p.to_out.bias.data


def _params(rng: Rng, dim: int, heads: int, ctx_dim=None) -> AttentionParams:
    p = AttentionParams(dim, heads, rng, context_dim=ctx_dim)
    p.to_out.weight.data = rng.normal(p.to_out.weight.shape, 0.3)
    p.to_out.bias.data = rng.normal(p.to_out.bias.shape, 0.1)
    return p


def check_attention_oracles(n: int = 100) -> str:
    worst = 0.0
    for i in range(n):
        rng = Rng(i)
        B, N, Nr, heads = 2, 1 + i % 6, 1 + (i // 6) % 6, (1, 2)[i % 2]
        p = _params(rng, 4, heads)
        z = rng.normal((B, N, 4))
        zr = rng.normal((B, Nr, 4))
        got = self_attention(Tensor(z), p).data
        worst = max(worst, np.abs(got - _loop_attention(z, z, p)).max())
        mask = (rng.uniform((B, Nr)) < 0.6).astype(float)
        omega = float(rng.uniform() * 3)
        bias = build_attention_bias(mask, omega, N, heads)
        got = self_subject_attention(Tensor(z), Tensor(zr), bias, p).data
        want = _loop_attention(z, np.concatenate([z, zr], 1), p, bias.row[:, 0, 0])
        worst = max(worst, np.abs(got - want).max())
        pse = _params(rng, 4, heads, ctx_dim=3)
        tokens = rng.normal((B, 3, 3))
        beta = float(rng.uniform())
        got = subject_encoder_attention(Tensor(z), SubjectFeatures(Tensor(tokens), beta), pse).data
        worst = max(worst, np.abs(got - beta * _loop_attention(z, tokens, pse)).max())
    assert worst <= 1e-10, f"max deviation {worst:.3e}"
    return f"{3 * n} instances, max deviation {worst:.1e}"


def check_reductions() -> str:
    rng = Rng(7)
    p = _params(rng, 4, 2)
    z = Tensor(rng.normal((2, 5, 4)))
    base = self_attention(z, p).data
    zr = Tensor(rng.normal((2, 3, 4)))
    off = self_subject_attention(z, zr, build_attention_bias(np.ones((2, 3)), 0.0, 5, 2), p).data
    dup = self_subject_attention(z, z, build_attention_bias(np.ones((2, 5)), 1.0, 5, 2), p).data
    sea = subject_encoder_attention(z, SubjectFeatures(Tensor(rng.normal((2, 3, 4))), 0.0), p).data
    worst = max(np.abs(off - base).max(), np.abs(dup - base).max(), np.abs(sea).max())
    assert worst <= 1e-9, f"max deviation {worst:.3e}"
    return f"max deviation {worst:.1e}"


def _square(t: Tensor) -> Tensor:
    return t * t


def check_gradients_small() -> str:
    rng = Rng(3)
    worst = 0.0
    x = Tensor(rng.normal((2, 2, 5, 5)), requires_grad=True)
    w = Tensor(rng.normal((3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.normal((3,)), requires_grad=True)
    worst = max(worst, check_gradients(lambda: _square(nx.conv2d(x, w, b, padding=1)).sum(), [x, w, b]))
    g = Tensor(rng.normal((2,)) + 1.0, requires_grad=True)
    be = Tensor(rng.normal((2,)), requires_grad=True)
    worst = max(worst, check_gradients(lambda: (_square(nx.group_norm(x, 2, g, be)) * x).sum(), [x, g, be]))
    p = _params(rng, 4, 2)
    z = Tensor(rng.normal((1, 4, 4)), requires_grad=True)
    zr = Tensor(rng.normal((1, 3, 4)), requires_grad=True)
    bias = build_attention_bias(np.array([[1.0, 0.0, 1.0]]), 2.0, 4, 2)
    leaves = [z, zr, p.to_q.weight, p.to_k.weight]
    for leaf in leaves:
        leaf.requires_grad = True
    worst = max(worst, check_gradients(lambda: _square(self_subject_attention(z, zr, bias, p)).sum(), leaves))
    assert worst <= 1e-6, f"relative error {worst:.3e}"
    return f"worst relative error {worst:.1e}"


def check_guidance() -> str:
    sched = make_schedule()
    x = Rng(1).normal((1, 3, 32, 32))
    ref = Rng(2).uniform((3, 32, 32), -1.0, 1.0)

    def model(x, t, ids, r, t_ref):
        out = 0.5 * x + 0.01 * np.asarray(ids).sum()
        return out if r is None else out + 0.3 * r

    cond = np.arange(1, 11)
    ref_only = guided_eps(x, 10, cond, ref, GuidanceConfig(omega_r=1.0, p_r=1.0), model, sched, 0, 0)[0]
    text_only = guided_eps(x, 10, cond, ref, GuidanceConfig(omega_c=1.0, p_r=0.0), model, sched, 0, 0)[0]
    assert np.array_equal(ref_only, text_only), "unit scales must return the conditional prediction"
    collapsed = guided_eps(x, 10, uncond_ids(), ref, GuidanceConfig(omega_c=4.0, p_r=0.0), model, sched, 0, 0)[0]
    assert np.allclose(collapsed, text_only - 0.01 * cond.sum(), atol=1e-12), "cond == uncond must collapse"
    freq = np.mean([branch_draw(0, i) <= 0.9 for i in range(10_000)])
    assert 0.89 <= freq <= 0.91, f"reference-branch frequency {freq}"
    return f"reference-branch frequency {freq:.4f}"


def check_forward_variance() -> str:
    sched = make_schedule()
    n = 10_000
    out = []
    for t in (0, 10, 40, 70, 99):
        v = q_sample(np.zeros(n), t, Rng(t).normal((n,)), sched).var(ddof=1)
        target = 1.0 - sched.alpha_bar[t]
        assert abs(v - target) <= 3 * target * math.sqrt(2.0 / (n - 1)), f"t={t}: {v} vs {target}"
        out.append(f"{v / target:.3f}")
    return "variance ratios " + " ".join(out)


def check_checkpoint_roundtrip() -> str:
    rng = Rng(5)
    ck = Checkpoint("base", {"k": 1}, {"a": rng.normal((3, 4)), "b": np.array(0.5)})
    raw = ck.to_bytes()
    assert Checkpoint.from_bytes(raw).to_bytes() == raw
    return f"{len(raw)} bytes"


CHECKS: dict[str, Callable[[], str]] = {
    "attention-oracles": check_attention_oracles,
    "reduction-identities": check_reductions,
    "gradients": check_gradients_small,
    "guidance-algebra": check_guidance,
    "forward-variance": check_forward_variance,
    "checkpoint-roundtrip": check_checkpoint_roundtrip,
}


def run(emit: Callable[[str], None] = print) -> bool:
    ok = True
    for name, fn in CHECKS.items():
        t0 = time.perf_counter()
        try:
            detail = fn()
            emit(f"PASS {name}: {detail} ({time.perf_counter() - t0:.1f}s)")
        except AssertionError as e:
            ok = False
            emit(f"FAIL {name}: {e}")
    return ok
