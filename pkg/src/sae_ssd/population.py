"""Finite population tables, area covariates and the contiguity graph.

Cell arrays are indexed ``[j, d]``: group ``j`` (e.g. age band) by area ``d``.
Flattened cell vectors use the same C order, so cell ``i = j * D + d``.
"""

import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from ._validation import readonly
from .exceptions import DataError

logger = logging.getLogger(__name__)

POPULATION_HEADER = ("area_id", "group_id", "N", "Y")


@dataclass(frozen=True)
class Population:
    """Complete area-by-group table of headcounts and outcome counts."""

    N: np.ndarray
    Y: np.ndarray
    area_ids: tuple
    group_labels: tuple

    def __post_init__(self):
        N = np.asarray(self.N)
        Y = np.asarray(self.Y)
        if N.ndim != 2 or N.shape != Y.shape:
            raise DataError(f"N and Y must be matching 2-D (J, D) arrays, got {N.shape} and {Y.shape}")
        J, D = N.shape
        if J < 1 or D < 1:
            raise DataError("population needs at least one area and one group")
        if len(self.area_ids) != D or len(self.group_labels) != J:
            raise DataError("area_ids/group_labels do not match table shape")
        if len(set(self.area_ids)) != D or len(set(self.group_labels)) != J:
            raise DataError("area_ids and group_labels must be unique")
        for name, a in (("N", N), ("Y", Y)):
            if not np.issubdtype(a.dtype, np.integer):
                if not np.all(np.isfinite(a)) or np.any(a != np.round(a)):
                    raise DataError(f"{name} must hold integer counts")
        violations = []
        for j, d in np.argwhere(N < 1):
            violations.append(f"cell ({self.group_labels[j]}, {self.area_ids[d]}): N={N[j, d]} < 1")
        for j, d in np.argwhere((Y < 0) | (Y > N)):
            violations.append(
                f"cell ({self.group_labels[j]}, {self.area_ids[d]}): Y={Y[j, d]} outside [0, N={N[j, d]}]"
            )
        if violations:
            raise DataError(violations[0], violations)
        object.__setattr__(self, "N", readonly(N.astype(np.int64)))
        object.__setattr__(self, "Y", readonly(Y.astype(np.int64)))
        object.__setattr__(self, "area_ids", tuple(str(a) for a in self.area_ids))
        object.__setattr__(self, "group_labels", tuple(str(g) for g in self.group_labels))

    @property
    def J(self):
        return self.N.shape[0]

    @property
    def D(self):
        return self.N.shape[1]

    @property
    def n_cells(self):
        return self.N.size

    @property
    def N_area(self):
        """Area totals ``N_d``."""
        return self.N.sum(axis=0)

    @property
    def total(self):
        """Grand population total ``N``."""
        return int(self.N.sum())

    @property
    def prevalence(self):
        """True cell prevalence ``Y_jd / N_jd``."""
        return self.Y / self.N

    def area_share(self):
        """True eligibility share ``Y_jd / N_d``."""
        return self.Y / self.N_area[None, :]


@dataclass(frozen=True)
class CovariateMatrix:
    X: np.ndarray
    names: tuple = ()
    scaled: bool = False

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2:
            raise DataError("covariates must be a 2-D (D, K) array")
        names = tuple(self.names) or tuple(f"x{k + 1}" for k in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise DataError("covariate names do not match the number of columns")
        object.__setattr__(self, "X", readonly(X))
        object.__setattr__(self, "names", names)

    @property
    def K(self):
        return self.X.shape[1]


@dataclass(frozen=True)
class AdjacencyGraph:
    """Undirected contiguity graph stored as a deduplicated edge list.

    Self-pairs are never stored as neighbours; the unit diagonal in the
    usual contiguity-matrix convention belongs to the precision builder.
    """

    area_ids: tuple
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))

    def __post_init__(self):
        D = len(self.area_ids)
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= D):
            raise DataError("edge endpoint out of range")
        e = e[e[:, 0] != e[:, 1]]
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if e.size else e.reshape(0, 2)
        object.__setattr__(self, "edges", readonly(e))
        object.__setattr__(self, "area_ids", tuple(str(a) for a in self.area_ids))

    @property
    def D(self):
        return len(self.area_ids)

    def adjacency_matrix(self):
        """Symmetric 0/1 ``W`` as CSR with empty diagonal."""
        D, e = self.D, self.edges
        rows = np.concatenate([e[:, 0], e[:, 1]])
        cols = np.concatenate([e[:, 1], e[:, 0]])
        W = sparse.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(D, D))
        return W

    @property
    def neighbor_counts(self):
        counts = np.zeros(self.D, dtype=np.int64)
        np.add.at(counts, self.edges.ravel(), 1)
        return counts

    @property
    def isolated(self):
        return self.neighbor_counts == 0

    def neighbors(self, d):
        e = self.edges
        return np.sort(np.concatenate([e[e[:, 0] == d, 1], e[e[:, 1] == d, 0]]))

    def components(self):
        """Return ``(n_components, labels)``."""
        n, labels = connected_components(self.adjacency_matrix(), directed=False)
        return int(n), labels


# ---------------------------------------------------------------------------
# File ingestion


def _read_rows(path):
    # lines starting with '#' carry provenance comments and are skipped
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if row and row[0].lstrip().startswith("#"):
                continue
            yield lineno, row


def load_population(path):
    """Read a population CSV with header ``area_id,group_id,N,Y``.

    Areas and groups keep their order of first appearance. Every
    (group, area) combination must be present exactly once.
    """
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: empty population file") from None
    header = [h.strip() for h in header]
    if header[:4] != list(POPULATION_HEADER):
        raise DataError(f"{path}: expected header {','.join(POPULATION_HEADER)}, got {','.join(header)}")
    areas, groups, cells = {}, {}, {}
    for lineno, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != 4:
            raise DataError(f"{path}: row {lineno}: expected 4 fields, got {len(row)}")
        a, g = row[0].strip(), row[1].strip()
        try:
            n, y = int(row[2]), int(row[3])
        except ValueError:
            raise DataError(f"{path}: row {lineno}: N and Y must be integers, got {row[2]!r}, {row[3]!r}") from None
        if not a or not g:
            raise DataError(f"{path}: row {lineno}: empty area_id or group_id")
        areas.setdefault(a, len(areas))
        groups.setdefault(g, len(groups))
        key = (groups[g], areas[a])
        if key in cells:
            raise DataError(f"{path}: row {lineno}: duplicate cell (group {g}, area {a})")
        cells[key] = (n, y)
    if not cells:
        raise DataError(f"{path}: no data rows")
    J, D = len(groups), len(areas)
    N = np.zeros((J, D), dtype=np.int64)
    Y = np.zeros((J, D), dtype=np.int64)
    area_ids, group_labels = list(areas), list(groups)
    missing = []
    for j in range(J):
        for d in range(D):
            if (j, d) not in cells:
                missing.append(f"missing cell (group {group_labels[j]}, area {area_ids[d]})")
                continue
            N[j, d], Y[j, d] = cells[(j, d)]
    if missing:
        raise DataError(f"{path}: incomplete table: {missing[0]}", missing)
    return Population(N, Y, tuple(area_ids), tuple(group_labels))


def write_population(pop, path):
    """Write the canonical CSV form (area-major, groups in table order)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(POPULATION_HEADER)
        for d, a in enumerate(pop.area_ids):
            for j, g in enumerate(pop.group_labels):
                w.writerow([a, g, int(pop.N[j, d]), int(pop.Y[j, d])])


def load_adjacency(path, area_ids):
    """Read an undirected edge list, one ``area_id_a,area_id_b`` pair per line.

    Direction is ignored, so asymmetric input is symmetrized; duplicate
    pairs are dropped, as are self-pairs. An optional header line
    ``area_id_a,area_id_b`` is skipped.
    """
    index = {str(a): i for i, a in enumerate(area_ids)}
    edges = []
    for lineno, row in _read_rows(path):
        row = [c.strip() for c in row]
        if not row or not any(row) or row[0].startswith("#"):
            continue
        if lineno == 1 and row == ["area_id_a", "area_id_b"]:
            continue
        if len(row) != 2:
            raise DataError(f"{path}: line {lineno}: expected 2 fields, got {len(row)}")
        for a in row:
            if a not in index:
                raise DataError(f"{path}: line {lineno}: unknown area_id {a!r}")
        edges.append((index[row[0]], index[row[1]]))
    graph = AdjacencyGraph(tuple(area_ids), np.array(edges, dtype=np.int64).reshape(-1, 2))
    n_iso = int(graph.isolated.sum())
    if not len(graph.edges):
        logger.warning("adjacency file %s has no edges; all %d areas are isolated", path, graph.D)
    elif n_iso:
        logger.warning("%d isolated area(s) in %s", n_iso, path)
    return graph


def write_adjacency(graph, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for a, b in graph.edges:
            w.writerow([graph.area_ids[a], graph.area_ids[b]])


def load_covariates(path, area_ids):
    """Read ``area_id,x1..xK`` rows, reordered to match ``area_ids``."""
    rows = _read_rows(path)
    try:
        _, header = next(rows)
    except StopIteration:
        raise DataError(f"{path}: empty covariate file") from None
    header = [h.strip() for h in header]
    if not header or header[0] != "area_id" or len(header) < 2:
        raise DataError(f"{path}: header must be area_id followed by covariate names")
    K = len(header) - 1
    values = {}
    for lineno, row in rows:
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != K + 1:
            raise DataError(f"{path}: row {lineno}: expected {K + 1} fields, got {len(row)}")
        try:
            values[row[0].strip()] = [float(v) for v in row[1:]]
        except ValueError:
            raise DataError(f"{path}: row {lineno}: non-numeric covariate value") from None
    missing = [a for a in area_ids if a not in values]
    if missing:
        raise DataError(f"{path}: no covariates for area {missing[0]!r}", [f"missing area {a}" for a in missing])
    X = np.array([values[a] for a in area_ids], dtype=float)
    if not np.all(np.isfinite(X)):
        raise DataError(f"{path}: non-finite covariate values")
    return CovariateMatrix(X, tuple(header[1:]), scaled=False)


def write_covariates(cov, area_ids, path):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["area_id", *cov.names])
        for a, x in zip(area_ids, cov.X):
            w.writerow([a, *(repr(float(v)) for v in x)])


def scale_covariates(X, names=None):
    """Standardize each column to sample mean 0 and sample SD 1 (ddof=1)."""
    if isinstance(X, CovariateMatrix):
        names = names or X.names
        X = X.X
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = tuple(names) if names else tuple(f"x{k + 1}" for k in range(X.shape[1]))
    if X.shape[0] < 2:
        raise DataError("scaling needs at least two areas")
    sd = X.std(axis=0, ddof=1)
    for k in range(X.shape[1]):
        if not sd[k] > 1e-12 * max(1.0, np.abs(X[:, k]).max()):
            raise DataError(f"covariate {names[k]!r} is constant and cannot be scaled")
    Z = (X - X.mean(axis=0)) / sd
    return CovariateMatrix(Z, names, scaled=True)


# ---------------------------------------------------------------------------
# Synthetic populations


def lattice_graph(D, area_ids=None):
    """Rook-contiguity lattice over ``D`` areas laid out row-major."""
    ncol = int(np.ceil(np.sqrt(D)))
    edges = []
    for d in range(D):
        r, c = divmod(d, ncol)
        if c + 1 < ncol and d + 1 < D:
            edges.append((d, d + 1))
        if d + ncol < D:
            edges.append((d, d + ncol))
    ids = area_ids or tuple(f"A{d + 1:04d}" for d in range(D))
    return AdjacencyGraph(ids, np.array(edges, dtype=np.int64).reshape(-1, 2))


def synth_population(
    D,
    J,
    prevalence_profile=None,
    headcount_range=(200, 2000),
    seed=0,
    n_covariates=2,
    covariate_effect=0.4,
    spatial_scale=0.3,
    cell_noise_sd=0.1,
):
    """Generate a reproducible synthetic population on a lattice.

    The true log-odds of each cell are ``logit(rate_j) + X_d @ b + s_d + e_jd``
    where ``s`` is a smooth surface over the lattice coordinates and ``e``
    small independent noise. Outcome counts are binomial given the truth.

    Returns
    -------
    (Population, CovariateMatrix, AdjacencyGraph)
        Covariates are returned scaled.
    """
    if D < 1 or J < 1:
        raise DataError("D and J must be at least 1")
    if prevalence_profile is None:
        prevalence_profile = np.linspace(0.05, 0.3, J)
    rates = np.asarray(prevalence_profile, dtype=float)
    if rates.shape != (J,) or np.any((rates <= 0) | (rates >= 1)):
        raise DataError("prevalence_profile must hold J rates in (0, 1)")
    lo, hi = headcount_range
    if not 1 <= lo <= hi:
        raise DataError("headcount_range must satisfy 1 <= min <= max")
    rng = np.random.default_rng(seed)
    graph = lattice_graph(D)
    ncol = int(np.ceil(np.sqrt(D)))
    r, c = np.divmod(np.arange(D), ncol)
    u, v = r / max(ncol, 1), c / max(ncol, 1)
    phase = rng.uniform(0, 2 * np.pi, size=2)
    surface = np.sin(2.5 * u + phase[0]) + np.cos(2.0 * v + phase[1])
    surface = spatial_scale * (surface - surface.mean()) / (surface.std() or 1.0)
    raw = rng.normal(size=(D, n_covariates))
    if n_covariates:
        # mild spatial trend in the first covariate
        raw[:, 0] += 0.5 * (u - u.mean())
    if D >= 2 and n_covariates:
        cov = scale_covariates(raw)
    else:
        cov = CovariateMatrix(np.zeros((D, n_covariates)), scaled=True)
    effects = covariate_effect * np.linspace(1.0, -0.5, n_covariates) if n_covariates else np.zeros(0)
    eta = (
        np.log(rates / (1 - rates))[:, None]
        + (cov.X @ effects)[None, :]
        + surface[None, :]
        + cell_noise_sd * rng.normal(size=(J, D))
    )
    N = rng.integers(lo, hi + 1, size=(J, D))
    Y = rng.binomial(N, 1.0 / (1.0 + np.exp(-eta)))
    pop = Population(N, Y, graph.area_ids, tuple(f"G{j + 1}" for j in range(J)))
    return pop, cov, graph
