"""Affine iterated function systems, attractor grids and branch structure.

Words are sequences of 1-based letters.  ``evaluate_word(ifs, (i1, ..., in), x)``
returns ``gamma_i1(gamma_i2(...gamma_in(x)))``: the first letter is the
outermost map.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from .errors import (
    InvalidInputError,
    NotInCographError,
    ResourceError,
    UnsupportedBranchStructureError,
)

DEFAULT_GRID_CAP = 10**7
DEFAULT_BRANCH_TOL = 1e-9


def as_points(x, dimension: int | None = None) -> np.ndarray:
    """Coerce a point or a batch of points to a float array of shape (N, k)."""
    pts = np.asarray(x, dtype=float)
    if pts.ndim == 0:
        pts = pts.reshape(1, 1)
    elif pts.ndim == 1:
        pts = pts.reshape(1, -1) if dimension is None or pts.size == dimension else pts.reshape(-1, 1)
    if pts.ndim != 2:
        raise InvalidInputError(f"points must be 1- or 2-dimensional, got shape {pts.shape}")
    if dimension is not None and pts.shape[1] != dimension:
        raise InvalidInputError(f"dimension mismatch: expected {dimension}, got {pts.shape[1]}")
    if not np.all(np.isfinite(pts)):
        raise InvalidInputError("points must be finite")
    return pts


def lex_order(points: np.ndarray) -> np.ndarray:
    """Indices sorting points lexicographically (first coordinate primary)."""
    if points.shape[0] == 0:
        return np.zeros(0, dtype=np.intp)
    return np.lexsort(points.T[::-1])


def merge_points(points: np.ndarray, tol: float) -> tuple[np.ndarray, np.ndarray]:
    """Merge points closer than ``tol``.

    Returns ``(unique, labels)`` where ``unique`` is sorted lexicographically,
    each cluster is represented by its lexicographically smallest member and
    ``unique[labels[i]]`` is the representative of ``points[i]``.
    """
    n = points.shape[0]
    if n == 0:
        return points.copy(), np.zeros(0, dtype=np.intp)
    order = lex_order(points)
    if points.shape[1] == 1:
        vals = points[order, 0]
        starts = np.empty(n, dtype=bool)
        starts[0] = True
        starts[1:] = np.diff(vals) > tol
        group_sorted = np.cumsum(starts) - 1
        labels = np.empty(n, dtype=np.intp)
        labels[order] = group_sorted
        return points[order[starts]].copy(), labels
    pairs = cKDTree(points).query_pairs(tol, output_type="ndarray")
    if len(pairs) == 0:
        labels = np.empty(n, dtype=np.intp)
        labels[order] = np.arange(n)
        return points[order].copy(), labels
    graph = coo_matrix((np.ones(len(pairs)), (pairs[:, 0], pairs[:, 1])), shape=(n, n))
    _, comp = connected_components(graph, directed=False)
    rank = np.empty(n, dtype=np.intp)
    rank[order] = np.arange(n)
    # representative = member with smallest lexicographic rank
    best = np.full(comp.max() + 1, n, dtype=np.intp)
    np.minimum.at(best, comp, rank)
    rep_order = np.sort(best)
    slot_of_comp = np.empty_like(best)
    slot_of_comp[np.argsort(best)] = np.arange(best.size)
    return points[order[rep_order]].copy(), slot_of_comp[comp]


@dataclass(frozen=True, eq=False)
class AffineMap:
    """``y -> matrix @ y + offset`` with a declared or computed contraction factor."""

    matrix: np.ndarray
    offset: np.ndarray
    contraction_factor: float

    @classmethod
    def create(cls, matrix, offset, contraction_factor: float | None = None) -> "AffineMap":
        A = np.atleast_2d(np.asarray(matrix, dtype=float))
        b = np.atleast_1d(np.asarray(offset, dtype=float))
        if A.shape != (b.size, b.size):
            raise InvalidInputError(f"matrix shape {A.shape} does not match offset length {b.size}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise InvalidInputError("map coefficients must be finite")
        norm = float(np.linalg.norm(A, 2))
        if norm >= 1.0:
            raise InvalidInputError(f"map is not a contraction (operator norm {norm:.6g})")
        if contraction_factor is None:
            contraction_factor = norm
        if not (0.0 < contraction_factor < 1.0) or contraction_factor < norm - 1e-12:
            raise InvalidInputError(
                f"contraction_factor {contraction_factor} must lie in [{norm:.6g}, 1)"
            )
        A.setflags(write=False)
        b.setflags(write=False)
        return cls(A, b, float(contraction_factor))

    @property
    def dimension(self) -> int:
        return self.offset.size

    def __call__(self, points: np.ndarray) -> np.ndarray:
        return points @ self.matrix.T + self.offset

    def fixed_point(self) -> np.ndarray:
        k = self.dimension
        return np.linalg.solve(np.eye(k) - self.matrix, self.offset)


class IFS:
    """A contractive affine iterated function system on R^k with d >= 2 maps."""

    def __init__(self, maps: Sequence[AffineMap], ambient_diameter: float | None = None,
                 name: str | None = None):
        maps = tuple(maps)
        if len(maps) < 2:
            raise InvalidInputError("an IFS needs at least two maps")
        k = maps[0].dimension
        if any(m.dimension != k for m in maps):
            raise InvalidInputError("all maps must act on the same dimension")
        self.maps = maps
        self.name = name
        self.dimension = k
        self.d = len(maps)
        self.contraction = max(m.contraction_factor for m in maps)
        if ambient_diameter is None:
            # K lies in the ball of radius max|gamma_j(p) - p| / (1 - c) around p = fix(gamma_1)
            p = maps[0].fixed_point()
            reach = max(float(np.linalg.norm(m(p[None, :])[0] - p)) for m in maps)
            # reach 0 means K is a single point; any positive bound is valid
            ambient_diameter = 2.0 * reach / (1.0 - self.contraction) if reach > 0 else 1.0
        if not ambient_diameter > 0:
            raise InvalidInputError("ambient_diameter must be positive")
        self.ambient_diameter = float(ambient_diameter)

    def __repr__(self):
        label = self.name or "custom"
        return f"IFS({label!r}, d={self.d}, k={self.dimension})"

    def images(self, points) -> np.ndarray:
        """All d images of each point: array of shape (d, N, k)."""
        pts = as_points(points, self.dimension)
        return np.stack([m(pts) for m in self.maps])

    def fixed_point(self, letter: int = 1) -> np.ndarray:
        return self.maps[self._check_letter(letter) - 1].fixed_point()

    def _check_letter(self, letter) -> int:
        letter = int(letter)
        if not 1 <= letter <= self.d:
            raise InvalidInputError(f"letter {letter} outside alphabet 1..{self.d}")
        return letter

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "dimension": self.dimension,
            "ambient_diameter": self.ambient_diameter,
            "maps": [
                {"matrix": m.matrix.tolist(), "offset": m.offset.tolist(),
                 "contraction_factor": m.contraction_factor}
                for m in self.maps
            ],
        }


def tent() -> IFS:
    """Inverse branches of the tent map: y/2 and 1 - y/2 on [0, 1]."""
    return IFS([AffineMap.create([[0.5]], [0.0]), AffineMap.create([[-0.5]], [1.0])],
               ambient_diameter=1.0, name="tent")


def cantor3() -> IFS:
    return IFS([AffineMap.create([[1 / 3]], [0.0]), AffineMap.create([[1 / 3]], [2 / 3])],
               ambient_diameter=1.0, name="cantor3")


def sierpinski() -> IFS:
    """Three half-scale maps towards the vertices of the unit equilateral triangle."""
    vertices = np.array([[0.0, 0.0], [1.0, 0.0], [0.5, math.sqrt(3) / 2]])
    half = 0.5 * np.eye(2)
    return IFS([AffineMap.create(half, v / 2) for v in vertices],
               ambient_diameter=1.0, name="sierpinski")


PRESETS = {"tent": tent, "cantor3": cantor3, "sierpinski": sierpinski}


def preset(name: str) -> IFS:
    try:
        return PRESETS[name]()
    except KeyError:
        raise InvalidInputError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None


def _word_tuple(ifs: IFS, word) -> tuple[int, ...]:
    return tuple(ifs._check_letter(letter) for letter in word)


def evaluate_word(ifs: IFS, word: Sequence[int], x) -> np.ndarray:
    """gamma_{w1} o ... o gamma_{wn} (x); the empty word is the identity."""
    pts = as_points(x, ifs.dimension)
    for letter in reversed(_word_tuple(ifs, word)):
        pts = ifs.maps[letter - 1](pts)
    return pts[0] if np.ndim(x) <= 1 and pts.shape[0] == 1 else pts


class AttractorGrid:
    """Deduplicated images of a base point under all words of a fixed depth.

    Points are sorted lexicographically.  ``words[i]`` is the representative
    word (1-based letters, first letter outermost) that produced ``points[i]``.
    Every point of the attractor lies within ``error_bound`` of the grid.
    """

    def __init__(self, ifs: IFS, depth: int, base: np.ndarray, points: np.ndarray,
                 words: np.ndarray, dedup_tol: float):
        self.ifs = ifs
        self.depth = depth
        self.base = base
        self.points = points
        self.words = words
        self.dedup_tol = dedup_tol
        self.error_bound = ifs.contraction**depth * ifs.ambient_diameter
        for arr in (self.points, self.words, self.base):
            arr.setflags(write=False)
        self._tree = None
        self._slots = None

    def __len__(self):
        return self.points.shape[0]

    def __repr__(self):
        return f"AttractorGrid(depth={self.depth}, size={len(self)}, error_bound={self.error_bound:.3g})"

    @property
    def word_index(self) -> dict[tuple[int, ...], int]:
        if self._slots is None:
            self._slots = {tuple(int(c) for c in w): i for i, w in enumerate(self.words)}
        return self._slots

    def nearest(self, points) -> tuple[np.ndarray, np.ndarray]:
        """Index of and distance to the nearest grid point for each query point."""
        pts = as_points(points, self.ifs.dimension)
        if self.ifs.dimension == 1:
            grid = self.points[:, 0]
            q = pts[:, 0]
            right = np.clip(np.searchsorted(grid, q), 0, grid.size - 1)
            left = np.clip(right - 1, 0, grid.size - 1)
            dl = np.abs(q - grid[left])
            dr = np.abs(grid[right] - q)
            take_left = dl <= dr
            return np.where(take_left, left, right), np.where(take_left, dl, dr)
        if self._tree is None:
            self._tree = cKDTree(self.points)
        dist, idx = self._tree.query(pts)
        return idx.astype(np.intp), dist

    def distance(self, points) -> np.ndarray:
        return self.nearest(points)[1]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x{i}" for i in range(self.ifs.dimension)])
            for row in self.points:
                writer.writerow([repr(float(v)) for v in row])


def attractor_grid(ifs: IFS, depth: int, base=None, dedup_tol: float | None = None,
                   cap: int = DEFAULT_GRID_CAP) -> AttractorGrid:
    """All distinct ``evaluate_word(ifs, w, base)`` over words of length ``depth``.

    ``base`` defaults to the fixed point of the first map, which makes grids
    of increasing depth nested.
    """
    depth = int(depth)
    if depth < 0:
        raise InvalidInputError("depth must be >= 0")
    if dedup_tol is None:
        dedup_tol = 1e-9 * ifs.ambient_diameter
    if not dedup_tol > 0:
        raise InvalidInputError("dedup_tol must be positive")
    base_pt = ifs.fixed_point(1) if base is None else as_points(base, ifs.dimension)[0]
    pts = base_pt[None, :].copy()
    words = np.zeros((1, 0), dtype=np.uint8)
    letters = np.arange(1, ifs.d + 1, dtype=np.uint8)
    for _ in range(depth):
        if pts.shape[0] * ifs.d > cap:
            raise ResourceError(
                f"attractor grid would exceed the cap of {cap} points at depth {depth}"
            )
        new_pts = np.concatenate([m(pts) for m in ifs.maps])
        new_words = np.concatenate(
            [np.column_stack([np.full(len(words), j, dtype=np.uint8), words]) for j in letters]
        )
        pts, labels = merge_points(new_pts, dedup_tol)
        # representative word: first producer in letter-major order
        _, first = np.unique(labels, return_index=True)
        words = new_words[first]
    return AttractorGrid(ifs, depth, base_pt.copy(), pts, words, dedup_tol)


@dataclass(frozen=True, eq=False)
class BranchData:
    """Branched values C, branched points B and the coinciding pairs at each y in C.

    ``pair_table[i]`` lists the 1-based index pairs ``(k, l)``, ``k < l``, with
    ``gamma_k(C[i]) == gamma_l(C[i])``.  ``c_grid_distance[i]`` is the distance
    of ``C[i]`` to the attractor grid used for the membership test.
    """

    branch_points: np.ndarray
    branch_values: np.ndarray
    pair_table: tuple[tuple[tuple[int, int], ...], ...]
    provenance: str
    tol: float
    c_grid_distance: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rejected_values: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))
    # (x, k, l) with x = gamma_k(y) = gamma_l(y) for some y in C
    coincidences: tuple = ()

    @property
    def B(self) -> np.ndarray:
        return self.branch_points

    @property
    def C(self) -> np.ndarray:
        return self.branch_values

    def distance_to_C(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        if self.branch_values.shape[0] == 0:
            return np.full(pts.shape[0], np.inf)
        diff = pts[:, None, :] - self.branch_values[None, :, :]
        return np.min(np.linalg.norm(diff, axis=2), axis=1)

    def to_dict(self) -> dict:
        return {
            "B": self.branch_points.tolist(),
            "C": self.branch_values.tolist(),
            "pairs": [[list(p) for p in pairs] for pairs in self.pair_table],
            "provenance": self.provenance,
            "tol": self.tol,
            "C_grid_distance": self.c_grid_distance.tolist(),
        }


def _assemble_branch(ifs, values, tables, tol, provenance, distances, rejected):
    k = ifs.dimension
    values = np.asarray(values, dtype=float).reshape(-1, k)
    if values.shape[0]:
        order = lex_order(values)
        values = values[order]
        tables = [tables[i] for i in order]
        distances = np.asarray(distances, dtype=float)[order]
    tables = [tuple(sorted(set(t))) for t in tables]
    images = [ifs.maps[i - 1](y[None, :])[0] for y, pairs in zip(values, tables)
              for pair in pairs for i in pair]
    if images:
        B, _ = merge_points(np.array(images), tol)
    else:
        B = np.zeros((0, k))
    coincidences = tuple(
        (tuple(ifs.maps[i - 1](y[None, :])[0].tolist()), i, j)
        for y, pairs in zip(values, tables) for i, j in pairs
    )
    return BranchData(B, values, tuple(tables), provenance, tol,
                      np.asarray(distances, dtype=float),
                      np.asarray(rejected, dtype=float).reshape(-1, k), coincidences)


def branch_sets(ifs: IFS, attractor: AttractorGrid, tol: float = DEFAULT_BRANCH_TOL,
                declared: dict | None = None) -> BranchData:
    """Solve gamma_i(y) = gamma_j(y) for every pair of affine maps.

    Solutions farther than ``tol + attractor.error_bound`` from the grid are
    not in K and are kept only in ``rejected_values``.  ``declared`` (with keys
    ``C`` and ``pairs``) bypasses the solver after validating each coincidence.
    """
    k = ifs.dimension
    if declared is not None:
        values = np.asarray(declared.get("C", []), dtype=float).reshape(-1, k)
        tables = [[tuple(sorted(map(int, p))) for p in pairs] for pairs in declared.get("pairs", [])]
        if len(tables) != values.shape[0]:
            raise InvalidInputError("declared branch data needs one pair list per branch value")
        for y, pairs in zip(values, tables):
            for i, j in pairs:
                gi = ifs.maps[ifs._check_letter(i) - 1](y[None, :])[0]
                gj = ifs.maps[ifs._check_letter(j) - 1](y[None, :])[0]
                if i == j or np.linalg.norm(gi - gj) > tol:
                    raise InvalidInputError(f"declared coincidence ({i}, {j}) fails at {y.tolist()}")
        dist = attractor.distance(values) if values.shape[0] else np.zeros(0)
        return _assemble_branch(ifs, values, tables, tol, "declared", dist, np.zeros((0, k)))

    found: list[np.ndarray] = []
    found_pairs: list[tuple[int, int]] = []
    for i in range(ifs.d):
        for j in range(i + 1, ifs.d):
            Mi, Mj = ifs.maps[i], ifs.maps[j]
            lhs = Mi.matrix - Mj.matrix
            rhs = Mj.offset - Mi.offset
            sol, _, rank, _ = np.linalg.lstsq(lhs, rhs, rcond=None)
            consistent = np.linalg.norm(lhs @ sol - rhs) <= tol
            if rank < k:
                if consistent:
                    raise UnsupportedBranchStructureError(
                        f"maps {i + 1} and {j + 1} coincide on an affine set of dimension "
                        f"{k - rank}; the finite branch condition fails"
                    )
                continue
            found.append(sol)
            found_pairs.append((i + 1, j + 1))
    if not found:
        return _assemble_branch(ifs, np.zeros((0, k)), [], tol, "computed", np.zeros(0),
                                np.zeros((0, k)))
    sols = np.array(found)
    dist = attractor.distance(sols)
    inside = dist <= tol + attractor.error_bound
    kept, kept_pairs, kept_dist = sols[inside], [p for p, ok in zip(found_pairs, inside) if ok], dist[inside]
    if kept.shape[0]:
        uniq, labels = merge_points(kept, tol)
        tables: list[list[tuple[int, int]]] = [[] for _ in range(uniq.shape[0])]
        dists = np.zeros(uniq.shape[0])
        for lab, pair, dd in zip(labels, kept_pairs, kept_dist):
            tables[lab].append(pair)
            dists[lab] = dd
    else:
        uniq, tables, dists = np.zeros((0, k)), [], np.zeros(0)
    return _assemble_branch(ifs, uniq, tables, tol, "computed", dists, sols[~inside])


def multiplicity(ifs: IFS, x, y, tol: float = DEFAULT_BRANCH_TOL) -> int:
    """e(x, y) = #{j : |gamma_j(y) - x| <= tol}."""
    xp = as_points(x, ifs.dimension)[0]
    imgs = ifs.images(as_points(y, ifs.dimension))[:, 0, :]
    count = int(np.sum(np.linalg.norm(imgs - xp, axis=1) <= tol))
    if count == 0:
        raise NotInCographError(f"({xp.tolist()}, {np.ravel(y).tolist()}) is not in the cograph")
    return count


def multiplicities(images: np.ndarray, tol: float = DEFAULT_BRANCH_TOL) -> np.ndarray:
    """Vectorised e(gamma_j(y), y) for images of shape (d, N, k); returns (d, N) ints."""
    d = images.shape[0]
    counts = np.zeros(images.shape[:2], dtype=np.int64)
    for j in range(d):
        for l in range(d):
            counts[j] += np.linalg.norm(images[j] - images[l], axis=1) <= tol
    return counts


def orbit_levels(ifs: IFS, x, max_depth: int, dedup_tol: float | None = None,
                 cap: int = DEFAULT_GRID_CAP):
    """Yield O_0(x), O_1(x), ..., O_max_depth(x), each deduplicated."""
    if max_depth < 0:
        raise InvalidInputError("max_depth must be >= 0")
    if dedup_tol is None:
        dedup_tol = 1e-9 * ifs.ambient_diameter
    level = as_points(x, ifs.dimension)[:1]
    yield level
    for _ in range(max_depth):
        if level.shape[0] * ifs.d > cap:
            raise ResourceError(f"orbit level would exceed the cap of {cap} points")
        level, _ = merge_points(np.concatenate([m(level) for m in ifs.maps]), dedup_tol)
        yield level


def orbit(ifs: IFS, x, max_depth: int, dedup_tol: float | None = None,
          cap: int = DEFAULT_GRID_CAP) -> np.ndarray:
    """Union of O_n(x) for n = 0..max_depth, deduplicated and sorted."""
    if dedup_tol is None:
        dedup_tol = 1e-9 * ifs.ambient_diameter
    levels = list(orbit_levels(ifs, x, max_depth, dedup_tol, cap))
    total = sum(lv.shape[0] for lv in levels)
    if total > cap:
        raise ResourceError(f"orbit would exceed the cap of {cap} points")
    return merge_points(np.concatenate(levels), dedup_tol)[0]


@dataclass(frozen=True)
class EscapeCertificate:
    """Finite-depth evidence for the escape condition; never a refutation."""

    holds: bool
    search_depth: int
    avoid_depth: int
    tol: float
    witnesses: tuple  # (branch value, escaping point) pairs, or None where not found

    @property
    def status(self) -> str:
        return "holds_at_depth" if self.holds else "unknown"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "search_depth": self.search_depth,
            "avoid_depth": self.avoid_depth,
            "tol": self.tol,
            "witnesses": [[y, x] for y, x in self.witnesses],
        }


def _avoids(ifs, x, C, avoid_depth, tol, cap) -> bool:
    for level in orbit_levels(ifs, x, avoid_depth, cap=cap):
        diff = level[:, None, :] - C[None, :, :]
        if np.min(np.linalg.norm(diff, axis=2)) <= tol:
            return False
    return True


def check_escape_condition(ifs: IFS, branch: BranchData, search_depth: int = 3,
                           avoid_depth: int = 12, tol: float = DEFAULT_BRANCH_TOL,
                           cap: int = DEFAULT_GRID_CAP) -> EscapeCertificate:
    """Look for escaping points in the orbit of every branch value.

    For each y in C, points of O(y) up to ``search_depth`` are tried in order
    of depth; a candidate escapes if its orbit up to ``avoid_depth`` stays
    farther than ``tol`` from C.
    """
    C = branch.branch_values
    witnesses = []
    holds = True
    for y in C:
        found = None
        for level in orbit_levels(ifs, y, search_depth, cap=cap):
            for cand in level:
                if _avoids(ifs, cand, C, avoid_depth, tol, cap):
                    found = cand
                    break
            if found is not None:
                break
        witnesses.append((y.tolist(), None if found is None else found.tolist()))
        holds = holds and found is not None
    return EscapeCertificate(holds, search_depth, avoid_depth, tol, tuple(witnesses))
