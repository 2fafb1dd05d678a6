# %% [markdown]
# # Functional principal components of pacing
#
# Smooth every race, then diagonalize the sample covariance operator in the
# spline basis.  Each race is summarized by its scores on four components.

# %%
import numpy as np

from pacecurve import default_spec, generate_dataset, fit_corpus_fpca
from pacecurve import eval_smoothed, variance_report, eigenfunction_curve, project_scores, reconstruct_profile

spec = default_spec(500, seed=2)
ds = generate_dataset(spec, n_athletes=70, races_per_athlete=15)
model, smoothed = fit_corpus_fpca(ds.records, n_pc=4)

for k, frac, cum in variance_report(model):
    print(f"PC{k}: {frac:6.3f}  cumulative {cum:6.3f}")

# %% [markdown]
# Eigenfunctions on a coarse grid.  The sign is fixed so the first half of
# the race integrates non-negative.

# %%
x = np.linspace(0, 500, 11)
for j in range(4):
    print(f"PC{j + 1}", np.round(eigenfunction_curve(model, j + 1, x), 4))

# %%
sc = project_scores(model, smoothed[0])
print("scores of race 0:", np.round(sc.scores, 4))
rebuilt = reconstruct_profile(model, sc.scores)
print("rebuilt at x:", np.round(eval_smoothed(rebuilt, x), 4))
