"""Survey realizations: cell sample sizes, sampled outcome counts, seeding."""

import csv
from dataclasses import dataclass

import numpy as np

from ._validation import check_fraction, check_probabilities, readonly
from .exceptions import DataError


@dataclass(frozen=True)
class SampleRealization:
    """Effective sample sizes ``n`` and outcome counts ``y`` per cell."""

    f: float
    n: np.ndarray
    y: np.ndarray
    seed: object = None

    def __post_init__(self):
        n = np.asarray(self.n, dtype=np.int64)
        y = np.asarray(self.y, dtype=np.int64)
        if n.shape != y.shape:
            raise DataError("n and y must have the same shape")
        if np.any(n < 0) or np.any(y < 0) or np.any(y > n):
            raise DataError("sample counts must satisfy 0 <= y <= n")
        object.__setattr__(self, "n", readonly(n))
        object.__setattr__(self, "y", readonly(y))

    def check_against(self, pop):
        if self.n.shape != pop.N.shape:
            raise DataError(f"sample shape {self.n.shape} does not match population {pop.N.shape}")
        if np.any(self.n > pop.N):
            j, d = np.argwhere(self.n > pop.N)[0]
            raise DataError(f"cell ({pop.group_labels[j]}, {pop.area_ids[d]}): n exceeds N")
        return self


def replicate_seed(master_seed, *index):
    """Independent generator for replication ``index`` under ``master_seed``.

    Streams are derived by ``SeedSequence`` spawn keys, so any replication
    can be regenerated alone, in any order or process.
    """
    key = tuple(int(i) for i in index)
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=key)
    return np.random.Generator(np.random.PCG64(ss))


def draw_sample_sizes(pop, f, rng):
    """Cell-level binomial thinning, ``n_jd ~ Binomial(N_jd, f)``."""
    f = check_fraction(f)
    return rng.binomial(pop.N, f)


def draw_outcomes(n, p, rng):
    """``y_jd ~ Binomial(n_jd, p_jd)`` independently across cells."""
    n = np.asarray(n, dtype=np.int64)
    p = check_probabilities(p)
    if p.shape != n.shape:
        p = np.broadcast_to(p, n.shape)
    return rng.binomial(n, p)


def draw_sample(pop, f, rng, p=None, seed=None):
    """Draw a full realization; outcomes follow ``p`` or the true prevalence."""
    n = draw_sample_sizes(pop, f, rng)
    y = draw_outcomes(n, pop.prevalence if p is None else p, rng)
    return SampleRealization(float(f), n, y, seed)


SAMPLE_HEADER = ("area_id", "group_id", "n", "y")


def write_sample(sample, pop, path, header_comment=None):
    """Dump a realization as ``area_id,group_id,n,y`` rows."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SAMPLE_HEADER)
        for d, a in enumerate(pop.area_ids):
            for j, g in enumerate(pop.group_labels):
                w.writerow([a, g, int(sample.n[j, d]), int(sample.y[j, d])])


def load_sample(path, pop, f=float("nan")):
    """Read a realization aligned to ``pop``; cells not listed have ``n = 0``."""
    areas = {a: d for d, a in enumerate(pop.area_ids)}
    groups = {g: j for j, g in enumerate(pop.group_labels)}
    n = np.zeros(pop.N.shape, dtype=np.int64)
    y = np.zeros(pop.N.shape, dtype=np.int64)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [(i, r) for i, r in enumerate(csv.reader(fh), start=1) if r and not r[0].lstrip().startswith("#")]
    if not rows or [c.strip() for c in rows[0][1]] != list(SAMPLE_HEADER):
        raise DataError(f"{path}: expected header {','.join(SAMPLE_HEADER)}")
    for lineno, row in rows[1:]:
        if len(row) != 4:
            raise DataError(f"{path}: row {lineno}: expected 4 fields, got {len(row)}")
        a, g = row[0].strip(), row[1].strip()
        if a not in areas or g not in groups:
            raise DataError(f"{path}: row {lineno}: unknown cell (group {g}, area {a})")
        try:
            n[groups[g], areas[a]], y[groups[g], areas[a]] = int(row[2]), int(row[3])
        except ValueError:
            raise DataError(f"{path}: row {lineno}: n and y must be integers") from None
    return SampleRealization(f, n, y).check_against(pop)
