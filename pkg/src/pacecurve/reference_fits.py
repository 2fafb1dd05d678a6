"""Emission coefficients of the reported four-state fits.

Women's K1 500 m and men's K1 1000 m, states 1-4 in reported order, PC1-PC4
along each row.  Only the emission regressions were reported; the models
built here use uniform initial/transition probabilities and identity
covariances as placeholders, which is enough to evaluate emission means.
"""

from __future__ import annotations

import numpy as np

from .hmm import DESIGN_500, DESIGN_1000, HmmModel

# baseline (Open age group, domestic event) state means: [state][pc]
K1_500_INTERCEPTS = (
    (0.173, 0.230, -0.003, -0.028),
    (-0.418, 0.552, -0.136, 0.168),
    (-0.373, -0.105, 0.070, 0.050),
    (0.063, -0.045, -0.045, -0.039),
)
K1_1000_INTERCEPTS = (
    (-0.871, 0.182, -0.126, -0.137),
    (0.979, 0.287, 0.030, -0.068),
    (-0.107, 0.654, 0.080, 0.185),
    (0.118, 0.007, -0.023, 0.030),
)

# event effects relative to domestic: [state][pc] -> (WCJ, WCO)
K1_500_EVENT = (
    ((-0.570, 0.045), (-0.273, -0.176), (0.190, 0.262), (-0.016, 0.073)),
    ((0.051, 0.246), (-0.045, 0.154), (-0.108, -0.154), (-0.009, -0.012)),
    ((0.363, 0.618), (-0.241, -0.384), (-0.092, 0.037), (-0.012, -0.277)),
    ((0.078, 0.060), (-0.051, -0.047), (0.018, 0.048), (0.014, -0.010)),
)
K1_1000_EVENT = (
    ((0.061, 0.023), (-0.088, -0.119), (0.088, 0.120), (0.084, 0.062)),
    ((0.585, 1.355), (0.285, -0.338), (0.104, 0.647), (-0.664, -0.422)),
    ((0.134, 0.310), (-0.493, 0.404), (-0.193, -0.547), (-0.225, 0.174)),
    ((0.060, 0.424), (-0.082, 0.065), (-0.042, -0.062), (-0.096, -0.047)),
)

# age effects relative to Open: [state][pc] -> (U21, U23) for 500 m
K1_500_AGE = (
    ((-0.016, -0.024), (-0.098, -0.040), (0.028, -0.055), (0.100, 0.040)),
    ((0.287, -0.384), (0.339, 0.103), (-0.041, -0.277), (-0.160, -0.148)),
    ((0.206, 0.288), (-0.645, 0.200), (0.243, 0.376), (-0.176, -0.280)),
    ((-0.383, -0.136), (0.090, 0.103), (-0.023, -0.010), (0.041, -0.021)),
)
# (U18, U21, U23) for 1000 m
K1_1000_AGE = (
    ((1.008, 0.895, 1.216), (0.213, -0.029, -0.061), (-0.037, 0.008, 0.059), (0.124, 0.022, -0.058)),
    ((-1.710, -1.656, -1.529), (-0.291, -0.410, -0.238), (-0.022, 0.238, 0.234), (0.326, 0.312, -0.049)),
    ((0.285, -0.285, -0.090), (-0.231, -0.788, -0.414), (-0.258, -0.442, -0.283), (-0.217, -0.256, 0.099)),
    ((0.538, 0.119, 0.026), (-0.728, 0.118, 0.049), (0.241, 0.148, -0.052), (0.217, 0.049, -0.168)),
)

# reported AIC by number of states (500 m)
AIC_BY_STATES = {2: -934, 3: -1049, 4: -1121, 5: -1124, 6: -1135}


def reference_coefficients(distance_m: int) -> np.ndarray:
    """``(4, 4, 1 + m)`` coefficient array laid out in the distance's design order."""
    if distance_m == 500:
        design, icpt, event, age = DESIGN_500, K1_500_INTERCEPTS, K1_500_EVENT, K1_500_AGE
        age_cols = ("U21", "U23")
    elif distance_m == 1000:
        design, icpt, event, age = DESIGN_1000, K1_1000_INTERCEPTS, K1_1000_EVENT, K1_1000_AGE
        age_cols = ("U18", "U21", "U23")
    else:
        raise ValueError(f"no reference fit for {distance_m} m")
    coefs = np.zeros((4, 4, design.m + 1))
    for j in range(4):
        for i in range(4):
            coefs[j, i, 0] = icpt[j][i]
            for level, value in zip(("WCJ", "WCO"), event[j][i]):
                coefs[j, i, 1 + design.columns.index(level)] = value
            for level, value in zip(age_cols, age[j][i]):
                coefs[j, i, 1 + design.columns.index(level)] = value
    return coefs


def reference_model(distance_m: int) -> HmmModel:
    design = DESIGN_500 if distance_m == 500 else DESIGN_1000
    n = 4
    return HmmModel(
        np.full(n, 1 / n),
        np.full((n, n), 1 / n),
        reference_coefficients(distance_m),
        np.stack([np.eye(4)] * n),
        design,
    )
