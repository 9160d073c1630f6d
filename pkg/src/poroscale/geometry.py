"""Reference punctured cell and the perforated computational domain.

The reference cell is Q = (-1,1)^d with a closed obstacle strictly inside
the unit ball B_1; the perforated domain is the unit torus or unit box
[0,1]^d minus the epsilon-periodic copies of the obstacle.  Everything is
represented by sharp staircase masks on the staggered lattice of
:mod:`poroscale._ops`: cell-centered fluid indicators plus one face mask
per axis (a face is fluid iff both neighbouring cells are).
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage


@dataclass(frozen=True)
class Obstacle:
    """Level-set obstacle in the reference cell.

    ``clearance`` is the reported distance 1 - sup{|y| : y in O} to the unit
    sphere, a conservative lower bound for dist(O, dQ); it is the collar
    width used by the boundary corrector cutoff.
    """

    kind: str
    radius: float = 0.0
    exponent: float = 2.0
    semi_axes: tuple = ()
    clearance: float = 0.0

    def contains(self, points):
        """Indicator of the closed obstacle at reference coordinates (..., d)."""
        y = np.asarray(points, dtype=float)
        if self.kind == "none":
            return np.zeros(y.shape[:-1], dtype=bool)
        if self.kind == "ball":
            return np.sum(y**2, axis=-1) <= self.radius**2
        ax = np.asarray(self.semi_axes)
        return np.sum(np.abs(y / ax) ** self.exponent, axis=-1) <= 1.0


def make_obstacle(kind="ball", radius=0.5, exponent=4.0, semi_axes=None, dim=3):
    """Validate a shape descriptor and return the Obstacle.

    Rejects shapes that touch or leave the unit ball, or have empty
    interior; the origin is always an interior point of the shapes offered.
    """
    if kind == "none":
        return Obstacle(kind="none", clearance=1.0)
    if kind == "ball":
        if not 0.0 < radius < 1.0:
            raise ValueError(f"ball radius must lie in (0,1), got {radius}")
        return Obstacle(kind="ball", radius=radius, clearance=1.0 - radius)
    if kind == "superellipse":
        if semi_axes is None:
            semi_axes = (0.5,) * dim
        semi_axes = tuple(float(a) for a in semi_axes)
        if exponent < 1.0:
            raise ValueError("superellipse exponent must be >= 1 (Lipschitz level set)")
        if any(a <= 0.0 for a in semi_axes):
            raise ValueError("superellipse semi-axes must be positive")
        reach = _superellipse_reach(exponent, semi_axes)
        if reach >= 1.0:
            raise ValueError("superellipse must be strictly inside the unit ball")
        return Obstacle(kind="superellipse", exponent=exponent,
                        semi_axes=semi_axes, clearance=1.0 - reach)
    raise ValueError(f"unknown obstacle kind {kind!r}")


def _superellipse_reach(p, semi_axes):
    # sup of |y| over the boundary, by dense direction sampling
    d = len(semi_axes)
    rng = np.random.default_rng(0)
    dirs = rng.standard_normal((4096, d))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    dirs = np.concatenate([dirs, np.eye(d), -np.eye(d)])
    t = np.sum(np.abs(dirs / np.asarray(semi_axes)) ** p, axis=1) ** (-1.0 / p)
    return float(t.max())


def _connected(mask, periodic):
    """Is the True region of the mask connected (face adjacency)?"""
    if not mask.any():
        return False
    labels, nlab = ndimage.label(mask)
    if nlab == 1:
        return True
    if not periodic:
        return False
    parent = np.arange(nlab + 1)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for ax in range(mask.ndim):
        lo = np.take(labels, 0, axis=ax).ravel()
        hi = np.take(labels, -1, axis=ax).ravel()
        for a, b in zip(lo, hi):
            if a and b:
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[ra] = rb
    roots = {find(i) for i in range(1, nlab + 1)}
    return len(roots) == 1


def _face_masks(fluid_cell):
    return [fluid_cell & np.roll(fluid_cell, 1, axis=k) for k in range(fluid_cell.ndim)]


@dataclass(frozen=True)
class CellGrid:
    """Staggered discretization of the punctured reference cell Q \\ O."""

    dim: int
    n: int
    obstacle: Obstacle
    fluid_cell: np.ndarray
    fluid_face: tuple
    theta_h: float

    @property
    def h(self):
        return 2.0 / self.n

    def cell_centers(self):
        """Reference coordinates of cell centers, shape (n,)*d + (d,)."""
        x1 = -1.0 + (np.arange(self.n) + 0.5) * self.h
        grids = np.meshgrid(*([x1] * self.dim), indexing="ij")
        return np.stack(grids, axis=-1)

    def theta_analytic(self):
        """Porosity from the analytic obstacle volume, when available."""
        if self.obstacle.kind == "none":
            return 1.0
        if self.obstacle.kind == "ball":
            r = self.obstacle.radius
            vol = np.pi * r**2 if self.dim == 2 else 4.0 / 3.0 * np.pi * r**3
            return 1.0 - vol / 2.0**self.dim
        return None


def build_reference_cell(obstacle, dim, n):
    """Rasterize the obstacle into cell and face masks at resolution n.

    Requires n >= 16 and even (staggered layout); fails if the fluid region
    is disconnected at this resolution.
    """
    if dim not in (2, 3):
        raise ValueError("dim must be 2 or 3")
    if n < 16 or n % 2:
        raise ValueError("need even resolution n >= 16")
    h = 2.0 / n
    x1 = -1.0 + (np.arange(n) + 0.5) * h
    pts = np.stack(np.meshgrid(*([x1] * dim), indexing="ij"), axis=-1)
    solid = obstacle.contains(pts)
    fluid = ~solid
    if not _connected(fluid, periodic=True):
        raise ValueError(f"fluid region disconnected at resolution n={n}")
    theta_h = float(fluid.mean())
    return CellGrid(dim=dim, n=n, obstacle=obstacle, fluid_cell=fluid,
                    fluid_face=tuple(_face_masks(fluid)), theta_h=theta_h)


@dataclass(frozen=True)
class Domain:
    """Uniform N^d lattice over the unit torus or unit box [0,1]^d."""

    dim: int
    n: int
    kind: str = "torus"  # torus | box

    @property
    def h(self):
        return 1.0 / self.n

    @property
    def shape(self):
        return (self.n,) * self.dim

    def cell_centers(self):
        x1 = (np.arange(self.n) + 0.5) * self.h
        return np.stack(np.meshgrid(*([x1] * self.dim), indexing="ij"), axis=-1)

    def face_centers(self, axis):
        coords = []
        for ax in range(self.dim):
            x1 = np.arange(self.n) * self.h if ax == axis else (np.arange(self.n) + 0.5) * self.h
            coords.append(x1)
        return np.stack(np.meshgrid(*coords, indexing="ij"), axis=-1)

    def boundary_distance(self, points):
        """Exact distance to the box boundary (inf for the torus)."""
        if self.kind == "torus":
            return np.full(points.shape[:-1], np.inf)
        return np.min(np.minimum(points, 1.0 - points), axis=-1)

    def boundary_face_mask(self, axis):
        """True at face slots lying on the box wall (slot 0 of that axis)."""
        m = np.zeros(self.shape, dtype=bool)
        if self.kind == "box":
            sl = [slice(None)] * self.dim
            sl[axis] = 0
            m[tuple(sl)] = True
        return m


@dataclass(frozen=True)
class PerforatedGrid:
    """The unit domain minus epsilon-periodic obstacles, as staggered masks.

    The global lattice has ``n_per_cell`` grid cells across each homogenization
    cell of side 2*epsilon, so reference-cell lookups are pure index
    arithmetic (global index mod n_per_cell).
    """

    domain: Domain
    cell: CellGrid
    epsilon: float
    tiles_per_side: int
    obstacle_tiles: np.ndarray
    fluid_cell: np.ndarray
    fluid_face: tuple
    boundary_distance_field: np.ndarray = field(default=None, repr=False)

    @property
    def dim(self):
        return self.domain.dim

    @property
    def h(self):
        return self.domain.h

    @property
    def n_per_cell(self):
        return self.cell.n

    @property
    def fluid_fraction(self):
        return float(self.fluid_cell.mean())

    def tile_centers(self):
        """Centers x_i^eps of the homogenization cells, shape (m,)*d + (d,)."""
        m = self.tiles_per_side
        x1 = (2 * np.arange(m) + 1) * self.epsilon
        return np.stack(np.meshgrid(*([x1] * self.dim), indexing="ij"), axis=-1)


def build_perforated_grid(domain_kind, epsilon, obstacle, n_per_cell, dim=3):
    """Tile the reference cell across the unit domain.

    torus: requires 1/(2 epsilon) integer so the cells tile exactly and every
    cell carries an obstacle.  box: only cells not touching the wall carry
    obstacles, which leaves a hole-free collar of width 2 epsilon.
    """
    if domain_kind not in ("torus", "box"):
        raise ValueError("domain_kind must be 'torus' or 'box'")
    m_exact = 1.0 / (2.0 * epsilon)
    m = int(round(m_exact))
    if abs(m_exact - m) > 1e-9 or m < 1:
        raise ValueError(
            f"epsilon={epsilon} invalid: 1/(2 eps) = {m_exact} must be a positive integer")
    cell = build_reference_cell(obstacle, dim, n_per_cell)
    if domain_kind == "box" and m < 3:
        raise ValueError("box mode needs at least 3 cells per side (eps too large)")

    domain = Domain(dim=dim, n=m * n_per_cell, kind=domain_kind)
    tiles = np.ones((m,) * dim, dtype=bool)
    if domain_kind == "box":
        interior = [slice(1, m - 1)] * dim
        tiles = np.zeros((m,) * dim, dtype=bool)
        tiles[tuple(interior)] = True

    solid_tile = ~cell.fluid_cell
    reps = (m,) * dim
    solid = np.tile(solid_tile, reps)
    if not tiles.all():
        keep = np.kron(tiles, np.ones((n_per_cell,) * dim, dtype=bool))
        solid &= keep
    fluid = ~solid
    faces = _face_masks(fluid)
    if domain_kind == "box":
        for k in range(dim):
            faces[k] &= ~domain.boundary_face_mask(k)

    bdist = None
    if domain_kind == "box":
        bdist = domain.boundary_distance(domain.cell_centers())

    return PerforatedGrid(domain=domain, cell=cell, epsilon=epsilon,
                          tiles_per_side=m, obstacle_tiles=tiles,
                          fluid_cell=fluid, fluid_face=tuple(faces),
                          boundary_distance_field=bdist)
