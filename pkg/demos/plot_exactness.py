"""
Exact convergence without noise
===============================

With exact gradients, gradient tracking reaches the global optimum while
decentralized SGD stalls at a bias set by how different the local
objectives are. Both run with the same stepsize on the same problem.
"""

import matplotlib.pyplot as plt

from gtlab import RunConfig, run

# %%
# Heterogeneous quadratics on a ring
# -----------------------------------

base = dict(graph="ring", n=10, problem="quadratic", d=3, deterministic=True,
            alpha=0.1, iters=3000, every=10, reps=1, rule="lazy-uniform")
traces = {algo: run(RunConfig(algo=algo, **base)) for algo in ("gt", "dsgd")}

for algo, tr in traces.items():
    print(f"{algo:5s} final relative error {tr.rel_error[0, -1]:.3e}")

fig, ax = plt.subplots()
for algo, tr in traces.items():
    ax.semilogy(tr.k, tr.rel_error[0], label=algo)
ax.set_xlabel("iteration")
ax.set_ylabel("relative error")
ax.legend()

# %%
# Removing the heterogeneity removes the bias
# -------------------------------------------
# With identical local optima DSGD is exact too.

homo = run(RunConfig(algo="dsgd", sigma_v2=0.0, **base))
print(f"dsgd, shared optimum: {homo.rel_error[0, -1]:.3e}")

plt.show()
