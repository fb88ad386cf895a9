"""Inter-rater reliability for ordinal quality ratings.

ICCs follow the two-way random-effects, average-measures forms:

    consistency = (MS_R - MS_E) / MS_R
    agreement   = (MS_R - MS_E) / (MS_R + (MS_C - MS_E) / n)

with 95% intervals from the usual F-distribution bounds (McGraw & Wong, 1996).
"""
from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import stats

STARS = (1, 2, 3, 4, 5)


class DegenerateRatingsError(ValueError):
    pass


@dataclass
class RatingsMatrix:
    """n subjects x k raters; NaN marks a declined rating."""

    values: np.ndarray
    subjects: list[str]
    raters: list[str]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError("ratings must be a 2-D subjects x raters matrix")
        if not self.subjects:
            self.subjects = [str(i) for i in range(self.values.shape[0])]
        if not self.raters:
            self.raters = [str(j) for j in range(self.values.shape[1])]

    @classmethod
    def from_array(cls, values) -> "RatingsMatrix":
        return cls(np.asarray(values, dtype=float), [], [])

    def complete(self) -> "RatingsMatrix":
        """Listwise deletion of subjects with any missing rating."""
        keep = ~np.isnan(self.values).any(axis=1)
        return RatingsMatrix(self.values[keep], [s for s, k in zip(self.subjects, keep) if k], list(self.raters))

    def check_scale(self, scale=STARS) -> None:
        v = self.values[~np.isnan(self.values)]
        bad = {float(x) for x in np.unique(v)} - set(scale)
        if bad:
            raise ValueError(f"ratings outside the {min(scale)}-{max(scale)} star scale: {sorted(bad)}")


def load_ratings_csv(path: str | Path) -> RatingsMatrix:
    """Read ``image_id,rater_id,rating`` rows; an empty rating means the rater declined."""
    cells: dict[tuple[str, str], float] = {}
    subjects: list[str] = []
    raters: list[str] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = {"image_id", "rater_id", "rating"} - set(reader.fieldnames or [])
        if missing:
            raise ValueError(f"{path}: missing columns {sorted(missing)}")
        for line, row in enumerate(reader, start=2):
            sid, rid, raw = row["image_id"].strip(), row["rater_id"].strip(), (row["rating"] or "").strip()
            if sid not in subjects:
                subjects.append(sid)
            if rid not in raters:
                raters.append(rid)
            try:
                value = float(raw) if raw else math.nan
            except ValueError:
                raise ValueError(f"{path}:{line}: rating {raw!r} is not a number") from None
            if (sid, rid) in cells:
                raise ValueError(f"{path}:{line}: duplicate rating for image {sid}, rater {rid}")
            cells[sid, rid] = value
    values = np.full((len(subjects), len(raters)), np.nan)
    for (sid, rid), v in cells.items():
        values[subjects.index(sid), raters.index(rid)] = v
    return RatingsMatrix(values, subjects, raters)


@dataclass(frozen=True)
class AnovaTable:
    ms_r: float
    ms_c: float
    ms_e: float
    n: int
    k: int


@dataclass(frozen=True)
class ReliabilityResult:
    kind: str
    value: float
    band: str
    lower: float
    upper: float


def anova_two_way(r: RatingsMatrix | np.ndarray) -> AnovaTable:
    m = r if isinstance(r, RatingsMatrix) else RatingsMatrix.from_array(r)
    x = m.complete().values
    n, k = x.shape
    if n < 2 or k < 2:
        raise DegenerateRatingsError(f"need >= 2 complete subjects and >= 2 raters, have {n} x {k}")
    grand = x.mean()
    ss_rows = k * ((x.mean(axis=1) - grand) ** 2).sum()
    ss_cols = n * ((x.mean(axis=0) - grand) ** 2).sum()
    ss_total = ((x - grand) ** 2).sum()
    ss_err = max(ss_total - ss_rows - ss_cols, 0.0)
    t = AnovaTable(float(ss_rows / (n - 1)), float(ss_cols / (k - 1)), float(ss_err / ((n - 1) * (k - 1))), n, k)
    if t.ms_r == 0:
        raise DegenerateRatingsError("all subjects received identical mean ratings (MS_R = 0)")
    return t


def interpret_icc(v: float) -> str:
    if not -1 <= v <= 1:
        raise ValueError(f"ICC value {v} outside [-1, 1]")
    if v < 0.4:
        return "poor"
    if v < 0.75:
        return "moderate"
    return "excellent"


def _check(t: AnovaTable) -> None:
    if t.ms_r <= 0:
        raise DegenerateRatingsError("MS_R must be positive")


def _spearman_brown(r: float, k: int) -> float:
    """Single-rater to k-rater reliability; bounds below -1/(k-1) are unbounded."""
    d = 1 + r * (k - 1)
    return r * k / d if d > 0 else -math.inf


def icc_consistency(t: AnovaTable, confidence: float = 0.95) -> ReliabilityResult:
    _check(t)
    value = (t.ms_r - t.ms_e) / t.ms_r
    lo = hi = math.nan
    if t.ms_e > 0:
        alpha = 1 - confidence
        df1, df2 = t.n - 1, (t.n - 1) * (t.k - 1)
        f_obs = t.ms_r / t.ms_e
        f_l = f_obs / stats.f.ppf(1 - alpha / 2, df1, df2)
        f_u = f_obs * stats.f.ppf(1 - alpha / 2, df2, df1)
        lo, hi = 1 - 1 / f_l, 1 - 1 / f_u
    return ReliabilityResult("consistency", float(value), interpret_icc(max(-1.0, value)), float(lo), float(hi))


def icc_agreement(t: AnovaTable, confidence: float = 0.95) -> ReliabilityResult:
    _check(t)
    n, k = t.n, t.k
    denom = t.ms_r + (t.ms_c - t.ms_e) / n
    if denom <= 0:
        raise DegenerateRatingsError("agreement ICC undefined: MS_R + (MS_C - MS_E) / n is not positive")
    value = (t.ms_r - t.ms_e) / denom
    lo = hi = math.nan
    if t.ms_e > 0:
        alpha = 1 - confidence
        # single-measure agreement ICC and Satterthwaite df, then Spearman-Brown to k raters
        icc1 = (t.ms_r - t.ms_e) / (t.ms_r + (k - 1) * t.ms_e + k * (t.ms_c - t.ms_e) / n)
        fj = t.ms_c / t.ms_e
        a = k * icc1 * fj + n * (1 + (k - 1) * icc1) - k * icc1
        vd = (n - 1) * k**2 * icc1**2 * fj**2 + (n * (1 + (k - 1) * icc1) - k * icc1) ** 2
        v = (k - 1) * (n - 1) * a**2 / vd
        f_l = stats.f.ppf(1 - alpha / 2, n - 1, v)
        f_u = stats.f.ppf(1 - alpha / 2, v, n - 1)
        c = k * t.ms_c + (k * n - k - n) * t.ms_e
        lo1 = n * (t.ms_r - f_l * t.ms_e) / (f_l * c + n * t.ms_r)
        hi1 = n * (f_u * t.ms_r - t.ms_e) / (c + n * f_u * t.ms_r)
        lo, hi = _spearman_brown(lo1, k), _spearman_brown(hi1, k)
    return ReliabilityResult("agreement", float(value), interpret_icc(max(-1.0, value)), float(lo), float(hi))


def band_label(band) -> str:
    band = sorted(band)
    if len(band) == 1:
        return f"{band[0]} Star"
    return f"{band[0]}-{band[-1]} Star"


def star_distribution(r: RatingsMatrix) -> dict[str, dict[int, float]]:
    """Percentage of each star value per rater (declined ratings excluded)."""
    out = {}
    for j, rater in enumerate(r.raters):
        col = r.values[:, j]
        col = col[~np.isnan(col)]
        out[rater] = {s: (100.0 * np.count_nonzero(col == s) / col.size if col.size else 0.0) for s in STARS}
    return out


def rating_distribution(r: RatingsMatrix, band=(4, 5)) -> dict:
    """Per-rater share of ratings inside ``band`` plus pairwise agreement counts."""
    if r.values.size == 0:
        raise ValueError("empty ratings matrix")
    band = set(band)
    per_rater = {}
    for j, rater in enumerate(r.raters):
        col = r.values[:, j]
        col = col[~np.isnan(col)]
        per_rater[rater] = 100.0 * np.isin(col, list(band)).sum() / col.size if col.size else math.nan
    pairs = {}
    for a, b in itertools.combinations(range(len(r.raters)), 2):
        both = ~np.isnan(r.values[:, a]) & ~np.isnan(r.values[:, b])
        diff = np.abs(r.values[both, a] - r.values[both, b])
        pairs[(r.raters[a], r.raters[b])] = {
            "n": int(both.sum()),
            "exact": int((diff == 0).sum()),
            "off_by_one": int((diff == 1).sum()),
            "larger": int((diff > 1).sum()),
        }
    return {"band": band_label(band), "per_rater": per_rater, "pairs": pairs}


def improvement_table(baseline: RatingsMatrix, proposed: RatingsMatrix, band=(5,),
                      names=("DFUS", "CWS")) -> list[dict]:
    """Rows of ``Rater / <base> <band> / <new> <band> / Improvement %`` (percentage points)."""
    label = band_label(band)
    base = rating_distribution(baseline, band)["per_rater"]
    new = rating_distribution(proposed, band)["per_rater"]
    rows = []
    for rater in baseline.raters:
        if rater not in new:
            continue
        rows.append({
            "Rater": rater,
            f"{names[0]} {label}": base[rater],
            f"{names[1]} {label}": new[rater],
            "Improvement %": new[rater] - base[rater],
        })
    return rows
