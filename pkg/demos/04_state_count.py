# %% [markdown]
# # How many pacing states?
#
# Fit 2 through 7 states, each split from the previous fit, and compare AIC.
# The rule stops at the first count whose gain is under 5% of the first gain.

# %%
from pacecurve import DESIGN_500, default_spec, generate_dataset, score_sequences, select_states

spec = default_spec(500, seed=0)
ds = generate_dataset(spec, n_athletes=70, races_per_athlete=15)
seqs = score_sequences(list(ds.careers), spec.generating_model())

sweep = select_states(seqs, 2, 7, DESIGN_500, restarts=3, seed=0)
gains = sweep.improvements()
for row in sweep.rows:
    print(f"{row.n_states}  loglik {row.log_likelihood:9.2f}  k {row.n_params:4d}  "
          f"AIC {row.aic:9.2f}  gain {gains.get(row.n_states, float('nan')):7.2f}")
print("chosen:", sweep.chosen)
