"""
Stochastic comparison on ring and exponential graphs
====================================================

Linear regression over 30 agents with heterogeneous local optima.
Every method gets the largest stepsize from a power-of-two grid that
reaches a common final error, and we compare how many iterations each
needs. Curves are averaged over repetitions with independent sample
streams.
"""

import matplotlib.pyplot as plt
import numpy as np

from gtlab import RunConfig, tune_stepsize
from gtlab.harness import build_problem

# %%
# Tune every method to the same target
# ------------------------------------
# Fewer repetitions than a full reproduction keep this quick; raise
# ``reps`` to tighten the curves.

target = 3e-3
shared = dict(n=30, problem="linreg", d=5, sigma_v2=1.0, sigma_n2=0.01, reps=10,
              iters=6000, every=10)
problem = build_problem(RunConfig(**shared))

panels = {"exponential": ("gt", "dsgd", "csgd"), "ring": ("gt", "dsgd", "csgd")}
results = {}
for graph, algos in panels.items():
    for algo in algos:
        res = tune_stepsize(RunConfig(algo=algo, graph=graph, **shared), target, problem=problem)
        results[graph, algo] = res
        print(f"{graph:12s} {algo:5s} alpha={res.alpha:.3g} "
              f"iterations to target={res.iterations_to_target}")

# %%
# Mean and one standard deviation
# -------------------------------

fig, axes = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
for ax, graph in zip(axes, panels):
    for algo in panels[graph]:
        tr = results[graph, algo].trace
        mean, std = tr.mean(), tr.std()
        ax.semilogy(tr.k, mean, label=f"{algo} (alpha={tr.alpha:.3g})")
        ax.fill_between(tr.k, np.maximum(mean - std, 1e-6), mean + std, alpha=0.2)
    ax.axhline(target, color="gray", ls="--", lw=0.8)
    ax.set_title(graph)
    ax.set_xlabel("iteration")
axes[0].set_ylabel("relative error")
axes[0].legend()

plt.show()
