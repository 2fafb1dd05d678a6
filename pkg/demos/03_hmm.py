# %% [markdown]
# # Pacing states over a career
#
# Races in an athlete's career are treated as a hidden Markov chain over
# pacing strategies.  Emission means depend on age group and event type.

# %%
import numpy as np

from pacecurve import DESIGN_500, EmConfig, default_spec, em_fit, generate_dataset, decode
from pacecurve import emission_mean, score_sequences

spec = default_spec(500, seed=3)
ds = generate_dataset(spec, n_athletes=70, races_per_athlete=15)
seqs = score_sequences(list(ds.careers), spec.generating_model())
print(len(seqs), "careers,", sum(len(s.scores) for s in seqs), "races")

# %%
model, report = em_fit(seqs, 4, DESIGN_500, EmConfig(restarts=5), seed=3)
print("log-likelihood:", round(report.log_likelihood, 2), "iterations:", report.iterations)
print("transition matrix:")
print(np.round(model.transition, 3))

# %% [markdown]
# Baseline (Open, domestic) means per state, next to the planted values.

# %%
x0 = np.zeros(DESIGN_500.m)
for j in range(4):
    print(f"state {j + 1}", np.round(emission_mean(model, j, x0), 3))
print(np.round(spec.hmm.intercepts, 3))

# %%
d = decode(model, seqs[0])
print(ds.truths[0].state_path)
print(d.viterbi_path)
print(np.round(d.posteriors.max(axis=1), 3))
