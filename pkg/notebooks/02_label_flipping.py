# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
# ---

# %% [markdown]
# # One malicious client
#
# Client 1 holds mostly class 1 and relabels it as class 0. With a plain
# mean the class-1 accuracy suffers. The attention weights push client 1
# down instead.

# %%
import numpy as np

from fedshield import orchestrator as orch

np.set_printoptions(precision=3, suppress=True)
ROUNDS = 40

secure = orch.desk_config(ROUNDS, aggregator="fedavg")
data = orch.build_data(secure)
shards, test = data
print("shard size", len(shards[0]), "test size", len(test))
print("client 1 class counts", shards[1].class_counts())

# %%
runs = {}
for name, flips in [("secure", ()), ("attacked", orch.ONE_ATTACKER)]:
    for aggregator in ("fedavg", "dual_attention"):
        cfg = orch.desk_config(ROUNDS, aggregator=aggregator, flips=flips)
        runs[name, aggregator] = orch.run_experiment(cfg, data=data)

for (name, aggregator), res in runs.items():
    fin = res.final
    print(f"{name:9s} {aggregator:15s} loss {fin.test_loss:.4f} acc {fin.accuracy:.4f} class1 {fin.class_accuracy[1]:.4f}")

# %% [markdown]
# Attention given to each client over the last rounds of the attacked run.

# %%
etas = np.array([r.attention.eta_combined for r in runs["attacked", "dual_attention"].records])
print(etas[-20:].mean(axis=0))

# %% [markdown]
# Accuracy per noise level for the attacked attention run. Higher level
# means cleaner samples.

# %%
for level, acc in sorted(runs["attacked", "dual_attention"].final.noise_accuracy.items()):
    print(level, round(acc, 4))
