"""
Mixing rates of ring and exponential graphs
===========================================

How fast information spreads over a graph is set by the mixing rate
lambda of its combination matrix. We compare the ring and the
exponential graph as the network grows, then look at the block
decomposition that the tracking analysis builds from the spectrum.
"""

import matplotlib.pyplot as plt
import numpy as np

from gtlab import analysis, build_topology, combination_matrix

# %%
# Spectral gap versus network size
# --------------------------------
# The ring's gap shrinks like 1/n^2 while the exponential graph keeps a
# gap near 1/3 at every size.

sizes = np.arange(4, 65, 4)
gaps = {kind: [combination_matrix(build_topology(kind, n)).gap for n in sizes]
        for kind in ("ring", "exponential")}

for kind in gaps:
    print(f"{kind:12s} n=30 gap = {combination_matrix(build_topology(kind, 30)).gap:.4f}")

fig, ax = plt.subplots()
for kind, g in gaps.items():
    ax.semilogy(sizes, g, "o-", label=kind)
ax.set_xlabel("agents n")
ax.set_ylabel("spectral gap 1 - lambda")
ax.legend()

# %%
# Eigenvalues of the ring
# -----------------------
# Uniform ring weights are circulant, so the spectrum is known in closed
# form. Half of it is negative, which is why the lazy rule is offered when
# a positive semidefinite matrix is wanted.

W = combination_matrix(build_topology("ring", 30))
lazy = combination_matrix(build_topology("ring", 30), "lazy-uniform")
k = np.arange(30)
closed = np.sort((1 + 2 * np.cos(2 * np.pi * k / 30)) / 3)[::-1]
print("max deviation from closed form:", np.max(np.abs(W.eigvals - closed)))

fig, ax = plt.subplots()
ax.plot(W.eigvals, ".", label="uniform")
ax.plot(lazy.eigvals, ".", label="lazy-uniform")
ax.axhline(0, color="gray", lw=0.5)
ax.set_ylabel("eigenvalue")
ax.legend()

# %%
# The block decomposition
# -----------------------
# Each non-unit eigenvalue gives a 2x2 block that is similar to an upper
# triangular matrix with norm at most (1 + lambda) / 2.

for kind in ("ring", "exponential"):
    dec = analysis.decompose(combination_matrix(build_topology(kind, 30)))
    print(f"{kind:12s} gamma = {dec.gamma:.4f}  bound = {(1 + dec.lam) / 2:.4f}  "
          f"c1^2 = {dec.c1**2:.3f}  c2^2 = {dec.c2**2:.3f}")

plt.show()
