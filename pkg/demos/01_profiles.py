# %% [markdown]
# # From split times to velocity profiles
#
# A race is a list of 50 m split times.  Each split becomes a velocity,
# divided by the race average, so every profile has harmonic mean 1 and
# races of different speed can be compared on shape alone.

# %%
import numpy as np

from pacecurve import default_spec, generate_dataset, normalize_profile, mean_profile
from pacecurve import make_basis, smooth_profile, eval_smoothed

ds = generate_dataset(default_spec(500, seed=1), n_athletes=10, races_per_athlete=8)
rec = ds.records[0]
print(rec.athlete_id, rec.race_date, rec.age_group, rec.event_type)
print(rec.segment_times_s)

# %%
prof = normalize_profile(rec)
print("midpoints:", prof.grid_m)
print("v_norm   :", np.round(prof.v_norm, 4))
# harmonic mean over segments is one by construction
print("harmonic mean:", 1 / np.mean(1 / prof.v_norm))

# %% [markdown]
# The corpus mean shows the usual fast start and slow fade.

# %%
profiles = [normalize_profile(r) for r in ds.records]
mean_v = mean_profile(profiles).v_norm
print(np.round(mean_v, 3))

# %% [markdown]
# Smoothing: cubic B-splines, 8 functions on [0, 500].

# %%
basis = make_basis(500)
sp = smooth_profile(prof, basis)
grid = np.linspace(0, 500, 11)
print(np.round(eval_smoothed(sp, grid), 4))
