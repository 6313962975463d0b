"""How the reference mask and omega_ref steer self-subject-attention.

A single query attends over four generated tokens and four reference tokens.
Two reference tokens are foreground. As omega_ref grows, attention mass moves
onto the foreground reference tokens; background reference tokens stay at zero
whenever the mask is on.
"""

import numpy as np

from spritediff.attention import AttentionParams, build_attention_bias, self_subject_attention
from spritediff.numeric import Rng, Tensor

rng = np.random.default_rng(0)
params = AttentionParams(8, 1, Rng(0))
z = Tensor(rng.normal(size=(1, 4, 8)))
z_ref = Tensor(rng.normal(size=(1, 4, 8)))
mask = np.array([[1.0, 1.0, 0.0, 0.0]])

print("omega_ref  gen-mass  ref-fg-mass  ref-bg-mass")
for omega in (0.0, 0.5, 1.0, 2.5, 10.0):
    bias = build_attention_bias(mask, omega, n_gen=4, heads=1)
    _, probs = self_subject_attention(z, z_ref, bias, params, return_probs=True)
    p = probs.data[0, 0]  # [query, key] for the only head
    print(f"{omega:9.1f}  {p[:, :4].sum(1).mean():8.3f}  {p[:, 4:6].sum(1).mean():11.3f}  {p[:, 6:].sum(1).mean():11.3f}")
