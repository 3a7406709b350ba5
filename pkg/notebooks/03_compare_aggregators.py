# ---
# jupyter:
#   jupytext:
#     text_representation:
#       extension: .py
#       format_name: percent
#       format_version: '1.3'
# ---

# %% [markdown]
# # Secure, one and two attackers
#
# The same grid the `compare` command writes, run in memory for a few seeds.
# Multi-Krum is told the true number of attackers.

# %%
import numpy as np

from fedshield import orchestrator as orch

ROUNDS = 40
SCENARIOS = {"secure": (), "one": orch.ONE_ATTACKER, "two": orch.TWO_ATTACKERS}
AGGREGATORS = ("none", "multikrum", "dual_attention")

table = {}
for seed in (0, 1, 2):
    data = orch.build_data(orch.desk_config(ROUNDS, seed=seed))
    for scenario, flips in SCENARIOS.items():
        for aggregator in AGGREGATORS:
            cfg = orch.desk_config(ROUNDS, seed=seed, aggregator=aggregator,
                                   flips=flips, multikrum_f=len(flips))
            table[seed, scenario, aggregator] = orch.run_experiment(cfg, data=data).final.test_loss

# %%
print(f"{'':8s}" + "".join(f"{a:>16s}" for a in AGGREGATORS))
for scenario in SCENARIOS:
    losses = [np.mean([table[s, scenario, a] for s in (0, 1, 2)]) for a in AGGREGATORS]
    print(f"{scenario:8s}" + "".join(f"{x:16.4f}" for x in losses))

# %% [markdown]
# With two attackers and the exact `f`, Multi-Krum averages only honest
# clients and ends with the lower loss here. The attention weights still put
# a little mass on the attackers and extra mass on clients that share the
# attacked class.
