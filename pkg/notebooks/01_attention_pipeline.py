# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
# ---

# %% [markdown]
# # Attention weights on a toy round
#
# Six clients send parameter vectors. Four of them sit near the previous
# global model, two point somewhere else. We look at each stage of the
# weighting and compare the result with a plain mean.

# %%
import numpy as np

from fedshield import aggregation as agg
from fedshield.aggregation import LocalUpdate

np.set_printoptions(precision=4, suppress=True)
rng = np.random.default_rng(0)

g = rng.normal(size=8)
honest = g + 0.2 * rng.normal(size=(4, 8))
odd = -g + 0.2 * rng.normal(size=(2, 8))
updates = [LocalUpdate(k, v, 100) for k, v in enumerate(np.vstack([honest, odd]))]

# %% [markdown]
# Pairwise cosine similarities, with the diagonal masked out.

# %%
sim = agg.self_attention_matrix(updates)
print(sim)

# %% [markdown]
# Standardise the off-diagonal entries, softmax each row, then read off how
# much attention every client receives from the others.

# %%
probs = agg.row_softmax(agg.zscore_normalize(sim))
eta_self = agg.column_reduce(probs)
eta_temporal = agg.temporal_attention(g, updates)
print("self    ", eta_self)
print("temporal", eta_temporal)

# %%
out, breakdown = agg.attention_aggregate(g, updates, beta=0.75)
print("combined", breakdown.eta_combined)
print("sum", breakdown.eta_combined.sum())

# %% [markdown]
# Distance of each aggregate from the honest mean.

# %%
honest_mean = honest.mean(axis=0)
print("attention ", np.linalg.norm(out - honest_mean))
print("fedavg    ", np.linalg.norm(agg.fed_avg(updates) - honest_mean))
print("multi-krum", np.linalg.norm(agg.multi_krum(updates, num_attackers=2) - honest_mean))
