"""Glue from race records to score sequences ready for the HMM."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .fbasis import FunctionalBasis, SmoothedProfile, make_basis, smooth_profiles
from .fpca import DEFAULT_N_PC, FpcaModel, fit_fpca, project_many
from .hmm import CovariateDesign, ScoreSequence, design_for_distance
from .ingest import CareerSequence, RaceRecord, build_career_sequences, normalize_profile


def smooth_careers(careers: Sequence[CareerSequence], basis: FunctionalBasis,
                   penalty: float = 0.0) -> list[list[SmoothedProfile]]:
    """Smoothed profiles per career, in race order."""
    flat = [p for c in careers for p in c.profiles]
    smoothed = smooth_profiles(flat, basis, penalty)
    out, k = [], 0
    for c in careers:
        out.append(smoothed[k : k + len(c)])
        k += len(c)
    return out


def fit_corpus_fpca(
    records: Sequence[RaceRecord],
    n_pc: int = DEFAULT_N_PC,
    n_basis: Optional[int] = None,
    order: int = 4,
    penalty: float = 0.0,
) -> tuple[FpcaModel, list[SmoothedProfile]]:
    """Normalize, smooth and fit fPCA on every race of a single-distance corpus."""
    distances = {r.distance_m for r in records}
    if len(distances) != 1:
        raise ValueError(f"corpus must hold a single race distance, found {sorted(distances)}")
    basis = make_basis(distances.pop(), n_basis, order)
    smoothed = smooth_profiles([normalize_profile(r) for r in records], basis, penalty)
    return fit_fpca(smoothed, n_pc), smoothed


def score_sequences(
    careers: Sequence[CareerSequence],
    model: FpcaModel,
    design: Optional[CovariateDesign] = None,
    penalty: float = 0.0,
) -> list[ScoreSequence]:
    """Project every race onto ``model`` and attach covariates.

    Raises :class:`~pacecurve.errors.UnknownCovariateLevel` for a level the
    design cannot encode (U18 in the 500 m design).
    """
    if not careers:
        return []
    design = design or design_for_distance(careers[0].distance_m)
    out = []
    for career, profiles in zip(careers, smooth_careers(careers, model.basis, penalty)):
        X = np.stack([design.encode_record(r) for r in career.records])
        out.append(
            ScoreSequence(
                project_many(model, profiles),
                X,
                athlete_id=career.athlete_id,
                race_dates=tuple(r.race_date for r in career.records),
            )
        )
    return out


def corpus_sequences(records: Sequence[RaceRecord], model: FpcaModel,
                     design: Optional[CovariateDesign] = None) -> list[ScoreSequence]:
    careers = [c for c in build_career_sequences(records) if c.distance_m == model.basis.domain_m]
    return score_sequences(careers, model, design)
