"""Race records: CSV parsing, velocity normalization and career assembly.

A race is stored as the elapsed time for every 50 m segment.  Each segment
velocity is divided by the average velocity of the whole race, which removes
the overall boat speed (and with it most of the weather and water effects)
and leaves only the shape of the pacing profile.
"""

from __future__ import annotations

import csv
import datetime as dt
import enum
import io
import math
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import BadRow, DuplicateRace, EmptyFile, EmptyInput, GridMismatch, MalformedHeader

SEGMENT_M = 50
SUPPORTED_DISTANCES = (500, 1000)
FIXED_COLUMNS = ("athlete_id", "race_date", "distance_m", "age_group", "event_type", "race_phase")


class AgeGroup(str, enum.Enum):
    U18 = "U18"
    U21 = "U21"
    U23 = "U23"
    OPEN = "OPEN"


class EventType(str, enum.Enum):
    DOMESTIC = "DOM"
    WORLD_CUP_JUNIORS = "WCJ"
    WORLD_CHAMPS_OLYMPICS = "WCO"


class RacePhase(str, enum.Enum):
    HEAT = "HEAT"
    SEMI = "SEMI"
    FINAL = "FINAL"


# Same-day ordering; a missing phase sorts before a heat.
_PHASE_ORDER = {None: 0, RacePhase.HEAT: 1, RacePhase.SEMI: 2, RacePhase.FINAL: 3}


@dataclass(frozen=True)
class RaceRecord:
    athlete_id: str
    race_date: dt.date
    distance_m: int
    segment_times_s: tuple[float, ...]
    age_group: AgeGroup
    event_type: EventType
    race_phase: Optional[RacePhase] = None

    def __post_init__(self):
        object.__setattr__(self, "segment_times_s", tuple(float(t) for t in self.segment_times_s))
        problem = _record_problem(self.distance_m, self.segment_times_s)
        if problem:
            raise ValueError(problem)

    @property
    def n_segments(self) -> int:
        return len(self.segment_times_s)

    @property
    def total_time_s(self) -> float:
        return math.fsum(self.segment_times_s)


def _record_problem(distance_m: int, times: Sequence[float]) -> Optional[str]:
    if distance_m not in SUPPORTED_DISTANCES:
        return f"distance_m must be one of {SUPPORTED_DISTANCES}, got {distance_m}"
    expected = distance_m // SEGMENT_M
    if len(times) != expected:
        return f"{distance_m} m race needs {expected} split times, got {len(times)}"
    for k, t in enumerate(times, start=1):
        if not math.isfinite(t) or t <= 0:
            return f"split t{k} must be a positive finite number of seconds, got {t!r}"
    return None


@dataclass(frozen=True, eq=False)
class VelocityProfile:
    """Normalized segment velocities on the segment-midpoint grid."""

    grid_m: np.ndarray
    v_norm: np.ndarray
    distance_m: int

    def __post_init__(self):
        grid = np.asarray(self.grid_m, dtype=float)
        v = np.asarray(self.v_norm, dtype=float)
        if grid.shape != v.shape or grid.ndim != 1:
            raise ValueError("grid_m and v_norm must be 1-d arrays of equal length")
        grid.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "grid_m", grid)
        object.__setattr__(self, "v_norm", v)

    def __len__(self):
        return len(self.v_norm)


def segment_grid(distance_m: int) -> np.ndarray:
    """Segment midpoints 25, 75, ..., distance_m - 25."""
    return np.arange(SEGMENT_M / 2, distance_m, SEGMENT_M, dtype=float)


def normalize_profile(rec: RaceRecord) -> VelocityProfile:
    t = np.asarray(rec.segment_times_s, dtype=float)
    seg_v = SEGMENT_M / t
    avg_v = rec.distance_m / math.fsum(rec.segment_times_s)
    return VelocityProfile(segment_grid(rec.distance_m), seg_v / avg_v, rec.distance_m)


def mean_profile(profiles: Sequence[VelocityProfile]) -> VelocityProfile:
    """Pointwise mean of normalized velocities over profiles on a shared grid."""
    if len(profiles) == 0:
        raise EmptyInput("mean_profile needs at least one profile")
    first = profiles[0]
    for p in profiles[1:]:
        if p.distance_m != first.distance_m or not np.array_equal(p.grid_m, first.grid_m):
            raise GridMismatch("profiles do not share a distance grid")
    v = np.mean(np.stack([p.v_norm for p in profiles]), axis=0)
    return VelocityProfile(first.grid_m.copy(), v, first.distance_m)


# -- careers -----------------------------------------------------------------

@dataclass(frozen=True)
class CareerRace:
    record: RaceRecord
    profile: VelocityProfile

    @property
    def race_date(self) -> dt.date:
        return self.record.race_date


@dataclass(frozen=True)
class CareerSequence:
    """One athlete's time-ordered races over a single distance."""

    athlete_id: str
    distance_m: int
    races: tuple[CareerRace, ...] = field(default_factory=tuple)

    def __len__(self):
        return len(self.races)

    @property
    def records(self) -> list[RaceRecord]:
        return [r.record for r in self.races]

    @property
    def profiles(self) -> list[VelocityProfile]:
        return [r.profile for r in self.races]


def _career_sort_key(item):
    idx, rec = item
    return (rec.race_date, _PHASE_ORDER[rec.race_phase], idx)


def build_career_sequences(records: Iterable[RaceRecord]) -> list[CareerSequence]:
    """Group races by (athlete, distance) and order them in time.

    Same-day races are ordered heat, semi, final, then by input position.
    Exact duplicates of (athlete, date, phase) are kept but flagged with a
    :class:`DuplicateRace` warning.
    """
    groups: dict[tuple[str, int], list[tuple[int, RaceRecord]]] = defaultdict(list)
    for idx, rec in enumerate(records):
        groups[(rec.athlete_id, rec.distance_m)].append((idx, rec))

    careers = []
    for (athlete, distance), items in groups.items():
        items.sort(key=_career_sort_key)
        seen = set()
        for _, rec in items:
            key = (rec.race_date, rec.race_phase)
            if key in seen:
                phase = rec.race_phase.value if rec.race_phase else "NA"
                warnings.warn(
                    f"duplicate race for athlete {athlete!r} on {rec.race_date} ({phase})",
                    DuplicateRace,
                    stacklevel=2,
                )
            seen.add(key)
        races = tuple(CareerRace(rec, normalize_profile(rec)) for _, rec in items)
        careers.append(CareerSequence(athlete, distance, races))
    careers.sort(key=lambda c: (c.athlete_id, c.distance_m))
    return careers


# -- CSV ---------------------------------------------------------------------

def _split_columns(header: list[str]) -> int:
    if tuple(h.strip() for h in header[: len(FIXED_COLUMNS)]) != FIXED_COLUMNS:
        raise MalformedHeader(
            f"header must start with {','.join(FIXED_COLUMNS)}; got {','.join(header[:len(FIXED_COLUMNS)])}"
        )
    splits = [h.strip() for h in header[len(FIXED_COLUMNS):]]
    if not splits:
        raise MalformedHeader("header has no split columns t1..tN")
    for k, name in enumerate(splits, start=1):
        if name != f"t{k}":
            raise MalformedHeader(f"split column {k} must be named t{k}, got {name!r}")
    return len(splits)


def _parse_row(row: list[str], n_split_cols: int, line: int) -> RaceRecord:
    def bad(reason):
        return BadRow(line, reason)

    n_fixed = len(FIXED_COLUMNS)
    if len(row) < n_fixed:
        raise bad(f"expected at least {n_fixed} columns, got {len(row)}")
    if len(row) > n_fixed + n_split_cols:
        raise bad(f"row has {len(row)} columns but header declares {n_fixed + n_split_cols}")
    athlete_id, date_s, dist_s, age_s, event_s, phase_s = (c.strip() for c in row[:n_fixed])
    if not athlete_id:
        raise bad("empty athlete_id")
    try:
        race_date = dt.date.fromisoformat(date_s)
    except ValueError:
        raise bad(f"race_date {date_s!r} is not YYYY-MM-DD") from None
    try:
        distance = int(dist_s)
    except ValueError:
        raise bad(f"distance_m {dist_s!r} is not an integer") from None
    try:
        age = AgeGroup(age_s.upper())
    except ValueError:
        raise bad(f"unknown age_group {age_s!r}") from None
    try:
        event = EventType(event_s.upper())
    except ValueError:
        raise bad(f"unknown event_type {event_s!r}") from None
    phase_u = phase_s.upper()
    if phase_u in ("NA", ""):
        phase = None
    else:
        try:
            phase = RacePhase(phase_u)
        except ValueError:
            raise bad(f"unknown race_phase {phase_s!r}") from None

    cells = [c.strip() for c in row[n_fixed:]]
    while cells and cells[-1] == "":
        cells.pop()
    times = []
    for k, c in enumerate(cells, start=1):
        try:
            times.append(float(c))
        except ValueError:
            raise bad(f"split t{k} {c!r} is not a number") from None

    problem = _record_problem(distance, times)
    if problem:
        raise bad(problem)
    return RaceRecord(athlete_id, race_date, distance, tuple(times), age, event, phase)


def _decode(data: Union[bytes, str]) -> str:
    if isinstance(data, bytes):
        return data.decode("utf-8-sig")
    return data


def parse_race_csv_lenient(data: Union[bytes, str]) -> tuple[list[RaceRecord], list[BadRow]]:
    """Parse a race CSV, collecting bad rows instead of raising on them.

    Header problems and empty input still raise.
    """
    text = _decode(data)
    rows = csv.reader(io.StringIO(text))
    header = None
    header_line = 0
    for row in rows:
        header_line = rows.line_num
        if any(c.strip() for c in row):
            header = row
            break
    if header is None:
        raise EmptyFile("no header row")
    n_split_cols = _split_columns(header)

    records, errors = [], []
    for row in rows:
        line = rows.line_num
        if not any(c.strip() for c in row):
            continue
        try:
            records.append(_parse_row(row, n_split_cols, line))
        except BadRow as exc:
            errors.append(exc)
    if not records and not errors:
        raise EmptyFile(f"no data rows after header on line {header_line}")
    return records, errors


def parse_race_csv(data: Union[bytes, str]) -> list[RaceRecord]:
    """Parse race CSV text (UTF-8) into records.

    Raises
    ------
    EmptyFile
        No header, or a header with no data rows.
    MalformedHeader
        Header does not match ``athlete_id,race_date,...,t1..tN``.
    BadRow
        The first row that fails validation; ``line`` gives its position.
    """
    records, errors = parse_race_csv_lenient(data)
    if errors:
        raise errors[0]
    return records


def format_time(t: float) -> str:
    """Shortest round-tripping decimal, padded to at least 3 decimal places."""
    s = repr(float(t))
    if "e" in s or "E" in s:
        s = f"{t:.17f}".rstrip("0")
    whole, _, frac = s.partition(".")
    return f"{whole}.{frac.ljust(3, '0')}"


def serialize_race_csv(records: Sequence[RaceRecord]) -> str:
    """Write records in the race CSV schema.

    The header carries as many split columns as the longest race; shorter
    races leave the trailing cells empty.
    """
    n = max((r.n_segments for r in records), default=0)
    if n == 0:
        n = SUPPORTED_DISTANCES[0] // SEGMENT_M
    out = io.StringIO()
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(list(FIXED_COLUMNS) + [f"t{k}" for k in range(1, n + 1)])
    for r in records:
        times = [format_time(t) for t in r.segment_times_s]
        times += [""] * (n - len(times))
        writer.writerow(
            [
                r.athlete_id,
                r.race_date.isoformat(),
                str(r.distance_m),
                r.age_group.value,
                r.event_type.value,
                r.race_phase.value if r.race_phase else "NA",
            ]
            + times
        )
    return out.getvalue()
