# %% [markdown]
# # Ablation grid
#
# Four arms on five seeds: plain majority-vote reward (G-MV), plus
# multiple-attempt sampling (+M), plus confidence weighting (+C), and both.

# %%
import time

from ttrl.analysis import StandardSetup, ablation_grid, standard_arms

start = time.perf_counter()
grid = ablation_grid(standard_arms(), seeds=range(5), setup=StandardSetup().make)
print(grid.format())
print(f"({time.perf_counter() - start:.0f}s)")

# %% [markdown]
# Per-seed rows, ready for a spreadsheet.

# %%
print(grid.to_csv())
