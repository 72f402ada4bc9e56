"""Discrete viewing-sphere geometry.

Camera poses live on an azimuth x elevation grid at a fixed radius. Azimuth
wraps around the object; elevation stops at the top and bottom rows. Flat
view indices follow lexicographic ``(azimuth, elevation)`` order, so sorting
flat indices sorts views lexicographically.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple, Sequence

import numpy as np

from .errors import ContractViolation, HorizonExceeded

DEFAULT_HORIZON_CAP = 8


class ViewIndex(NamedTuple):
    azimuth: int
    elevation: int


class RelativePose(NamedTuple):
    d_azimuth: int
    d_elevation: int


Path = tuple[ViewIndex, ...]


@dataclass(frozen=True)
class GridSpec:
    """Shape of the discretised viewing sphere.

    The default 12 x 5 grid covers the full azimuth circle and elevations
    from -60 to +60 degrees in 30 degree steps.
    """

    azimuth_steps: int = 12
    elevation_steps: int = 5
    step_degrees: float = 30.0

    def __post_init__(self):
        if int(self.azimuth_steps) != self.azimuth_steps or self.azimuth_steps < 3:
            raise ContractViolation(f"azimuth_steps must be an integer >= 3, got {self.azimuth_steps}")
        if int(self.elevation_steps) != self.elevation_steps or self.elevation_steps < 1:
            raise ContractViolation(f"elevation_steps must be an integer >= 1, got {self.elevation_steps}")
        if not self.step_degrees > 0:
            raise ContractViolation(f"step_degrees must be positive, got {self.step_degrees}")

    @property
    def n_views(self) -> int:
        return self.azimuth_steps * self.elevation_steps

    def contains(self, v: ViewIndex) -> bool:
        return 0 <= v[0] < self.azimuth_steps and 0 <= v[1] < self.elevation_steps

    def check(self, v: ViewIndex) -> ViewIndex:
        if not self.contains(v):
            raise ContractViolation(f"view {tuple(v)} is outside the {self.azimuth_steps}x{self.elevation_steps} grid")
        return ViewIndex(int(v[0]), int(v[1]))

    def index(self, v: ViewIndex) -> int:
        v = self.check(v)
        return v.azimuth * self.elevation_steps + v.elevation

    def view(self, i: int) -> ViewIndex:
        if not 0 <= i < self.n_views:
            raise ContractViolation(f"flat view index {i} out of range")
        return ViewIndex(*divmod(int(i), self.elevation_steps))

    def views(self) -> list[ViewIndex]:
        return [self.view(i) for i in range(self.n_views)]

    def unit_vectors(self) -> np.ndarray:
        """Cartesian positions of every view on the unit sphere, shape (V, 3)."""
        step = np.deg2rad(self.step_degrees)
        az = np.arange(self.azimuth_steps) * step
        el = (np.arange(self.elevation_steps) - (self.elevation_steps - 1) / 2) * step
        theta, phi = np.meshgrid(az, el, indexing="ij")
        xyz = np.stack([np.cos(phi) * np.cos(theta), np.cos(phi) * np.sin(theta), np.sin(phi)], axis=-1)
        return xyz.reshape(-1, 3)


def neighbors(grid: GridSpec, v: ViewIndex) -> tuple[ViewIndex, ...]:
    """Views one grid step away from ``v``, sorted lexicographically."""
    v = grid.check(v)
    out = set()
    for da in (-1, 0, 1):
        for de in (-1, 0, 1):
            if da == 0 and de == 0:
                continue
            e = v.elevation + de
            if 0 <= e < grid.elevation_steps:
                out.add(ViewIndex((v.azimuth + da) % grid.azimuth_steps, e))
    return tuple(sorted(out))


def wrap_azimuth(grid: GridSpec, d: int) -> int:
    """Reduce an azimuth offset to (-A/2, A/2]; the half-wrap tie goes positive."""
    a = grid.azimuth_steps
    d = d % a
    if 2 * d > a:
        d -= a
    return d


def relative_pose(grid: GridSpec, a: ViewIndex, b: ViewIndex) -> RelativePose:
    a, b = grid.check(a), grid.check(b)
    return RelativePose(wrap_azimuth(grid, b.azimuth - a.azimuth), b.elevation - a.elevation)


def inverse_pose(grid: GridSpec, pose: RelativePose) -> RelativePose:
    return RelativePose(wrap_azimuth(grid, -pose[0]), -pose[1])


def apply_pose(grid: GridSpec, v: ViewIndex, pose: RelativePose) -> ViewIndex | None:
    """Move ``v`` by ``pose``; None if the elevation leaves the grid."""
    v = grid.check(v)
    e = v.elevation + pose[1]
    if not 0 <= e < grid.elevation_steps:
        return None
    return ViewIndex((v.azimuth + pose[0]) % grid.azimuth_steps, e)


def realisable_poses(grid: GridSpec) -> tuple[RelativePose, ...]:
    """Every relative pose that occurs between two views of the grid, sorted."""
    return _realisable_poses(grid)


@lru_cache(maxsize=None)
def _realisable_poses(grid: GridSpec) -> tuple[RelativePose, ...]:
    views = grid.views()
    return tuple(sorted({relative_pose(grid, a, b) for a in views for b in views}))


@lru_cache(maxsize=None)
def pose_index_matrix(grid: GridSpec) -> np.ndarray:
    """(V, V) array: position of relative_pose(a, b) in ``realisable_poses``."""
    lookup = {p: i for i, p in enumerate(realisable_poses(grid))}
    views = grid.views()
    out = np.array([[lookup[relative_pose(grid, a, b)] for b in views] for a in views], dtype=np.intp)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def neighbor_table(grid: GridSpec) -> np.ndarray:
    """(V, 8) flat neighbour indices in lexicographic order, padded with -1."""
    out = np.full((grid.n_views, 8), -1, dtype=np.intp)
    for i, v in enumerate(grid.views()):
        nb = [grid.index(u) for u in neighbors(grid, v)]
        out[i, : len(nb)] = nb
    out.setflags(write=False)
    return out


def enumerate_paths(
    grid: GridSpec, start: ViewIndex, steps: int, horizon_cap: int = DEFAULT_HORIZON_CAP
) -> list[Path]:
    """All walks of exactly ``steps`` adjacency moves from ``start``.

    Revisits are allowed. The list grows like 8**steps, hence the cap.
    """
    start = grid.check(start)
    if steps < 0:
        raise ContractViolation(f"steps must be >= 0, got {steps}")
    if steps > horizon_cap:
        raise HorizonExceeded(f"{steps} steps exceeds the horizon cap of {horizon_cap}")
    paths: list[Path] = [(start,)]
    for _ in range(steps):
        paths = [p + (u,) for p in paths for u in neighbors(grid, p[-1])]
    return paths


UNIT_DIRECTIONS = tuple(
    RelativePose(da, de) for da in (-1, 0, 1) for de in (-1, 0, 1) if (da, de) != (0, 0)
)


def step_straight(grid: GridSpec, v: ViewIndex, direction: RelativePose) -> tuple[ViewIndex, RelativePose]:
    """One straight step; the elevation component reflects at the top/bottom rows."""
    da, de = direction
    e = v.elevation + de
    if not 0 <= e < grid.elevation_steps:
        de = -de
        e = v.elevation + de
        if not 0 <= e < grid.elevation_steps:
            # single-row grid: nothing to reflect into
            de, e = 0, v.elevation
    return ViewIndex((v.azimuth + da) % grid.azimuth_steps, e), RelativePose(da, de)


def straight_path(grid: GridSpec, start: ViewIndex, direction: RelativePose, steps: int) -> Path:
    start = grid.check(start)
    if tuple(direction) == (0, 0) or any(c not in (-1, 0, 1) for c in direction):
        raise ContractViolation(f"direction must be a non-zero unit grid step, got {tuple(direction)}")
    if steps < 0:
        raise ContractViolation(f"steps must be >= 0, got {steps}")
    path = [start]
    d = RelativePose(*direction)
    for _ in range(steps):
        v, d = step_straight(grid, path[-1], d)
        path.append(v)
    return tuple(path)


def random_path(rng: np.random.Generator, grid: GridSpec, start: ViewIndex, steps: int) -> Path:
    """Random walk; each move is uniform over the current view's neighbours."""
    start = grid.check(start)
    if steps < 0:
        raise ContractViolation(f"steps must be >= 0, got {steps}")
    path = [start]
    for _ in range(steps):
        nb = neighbors(grid, path[-1])
        path.append(nb[int(rng.integers(len(nb)))])
    return tuple(path)


def is_adjacent_path(grid: GridSpec, path: Sequence[ViewIndex]) -> bool:
    return all(b in neighbors(grid, a) for a, b in zip(path, path[1:]))
