"""Reference cell, structured meshes with phase tags, and eps-scaled domains.

Phase codes used throughout: ``SOLID = 1`` (inclusion ``Y1``, skeleton) and
``FLUID = 2`` (``Y2``). Meshes are uniform axis-aligned box grids; a cell gets
the phase of its centroid, there is no cut-cell geometry.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .ap_core import PoreDistribution
from .errors import EpsilonNotConforming, GeometryViolation

SOLID = 1
FLUID = 2

SHAPES = ("disk", "box", "laminate", "full")


@dataclass(frozen=True)
class CellGeometry:
    """Inclusion ``Y1`` inside the unit cell ``Y = (0, 1)^N``.

    ``kind`` is one of ``"disk"`` (ball in 3D), ``"box"``, ``"laminate"`` or
    ``"full"``. A laminate is the layer ``|y[axis] - 1/2| < thickness / 2``; it
    touches the cell boundary and is therefore a validation-only geometry (as
    is N = 1). ``"full"`` is a single solid material filling the cell, used as
    the contrast-free reference configuration.
    """

    dimension: int
    kind: str
    center: tuple = ()
    radius: float = 0.0
    corner: tuple = ()
    sides: tuple = ()
    axis: int = 0
    thickness: float = 0.0

    @property
    def validation_only(self) -> bool:
        return self.kind == "laminate" or self.dimension == 1

    @property
    def single_phase(self) -> bool:
        return self.kind == "full"

    def chi1(self, y) -> np.ndarray:
        """Solid indicator at points ``y`` (..., N); coordinates taken mod 1."""
        y = np.mod(np.asarray(y, dtype=float), 1.0)
        if self.dimension == 1 and y.shape[-1:] != (1,):
            y = y[..., None]
        if self.kind == "disk":
            r2 = np.sum((y - np.asarray(self.center)) ** 2, axis=-1)
            return (r2 < self.radius**2).astype(float)
        if self.kind == "box":
            lo = np.asarray(self.corner)
            hi = lo + np.asarray(self.sides)
            return np.all((y > lo) & (y < hi), axis=-1).astype(float)
        if self.kind == "full":
            return np.ones(y.shape[:-1])
        d = np.abs(y[..., self.axis] - 0.5)
        return (d < self.thickness / 2).astype(float)

    def chi2(self, y) -> np.ndarray:
        return 1.0 - self.chi1(y)

    def solid_measure(self) -> float:
        """Analytic ``|Y1|``."""
        if self.kind == "disk":
            n = self.dimension
            return math.pi ** (n / 2) / math.gamma(n / 2 + 1) * self.radius**n
        if self.kind == "box":
            return float(np.prod(self.sides))
        if self.kind == "full":
            return 1.0
        return float(self.thickness)

    def to_dict(self) -> dict:
        d = {"dimension": self.dimension, "kind": self.kind}
        if self.kind == "disk":
            d.update(center=list(self.center), radius=self.radius)
        elif self.kind == "box":
            d.update(corner=list(self.corner), sides=list(self.sides))
        elif self.kind == "laminate":
            d.update(axis=self.axis, thickness=self.thickness)
        return d


def build_cell(spec: dict, for_fluid: bool = True) -> CellGeometry:
    """Validate a shape specification and return the cell geometry.

    ``spec`` keys: ``kind`` plus ``dimension`` and the shape parameters
    (``center``/``radius``, ``corner``/``sides`` or ``axis``/``thickness``).
    With ``for_fluid`` set, inclusions touching the cell boundary are rejected;
    laminates are always accepted but flagged ``validation_only``.
    """
    kind = spec.get("kind")
    kind = {"axis_box": "box", "ball": "disk"}.get(kind, kind)
    if kind not in SHAPES:
        raise GeometryViolation(f"unknown inclusion kind {kind!r}")
    n = int(spec.get("dimension", len(spec.get("center", spec.get("corner", [0, 0])))))
    if n not in (1, 2, 3):
        raise GeometryViolation("dimension must be 1, 2 or 3")
    if kind == "disk":
        c = tuple(float(v) for v in spec.get("center", [0.5] * n))
        r = float(spec["radius"])
        if len(c) != n:
            raise GeometryViolation("center length does not match dimension")
        if r <= 0:
            raise GeometryViolation("radius must be positive")
        if for_fluid and any(ci - r <= 0 or ci + r >= 1 for ci in c):
            raise GeometryViolation(f"disk of radius {r} at {c} does not lie inside the cell")
        g = CellGeometry(n, kind, center=c, radius=r)
    elif kind == "box":
        lo = tuple(float(v) for v in spec["corner"])
        sd = tuple(float(v) for v in spec["sides"])
        if len(lo) != n or len(sd) != n or min(sd) <= 0:
            raise GeometryViolation("box corner/sides malformed")
        if for_fluid and any(a <= 0 or a + s >= 1 for a, s in zip(lo, sd)):
            raise GeometryViolation("box inclusion touches the cell boundary")
        g = CellGeometry(n, kind, corner=lo, sides=sd)
    elif kind == "full":
        return CellGeometry(n, kind)
    else:
        t = float(spec["thickness"])
        axis = int(spec.get("axis", 0))
        if not 0 < t < 1 or not 0 <= axis < n:
            raise GeometryViolation("laminate thickness must lie in (0, 1)")
        g = CellGeometry(n, kind, axis=axis, thickness=t)
    m1 = g.solid_measure()
    if not 0 < m1 < 1:
        raise GeometryViolation("both phases need positive measure")
    return g


def volume_fractions(g: CellGeometry, resolution: int) -> tuple:
    """Midpoint-rule ``(|Y1|, |Y2|)``; the pair sums to one exactly."""
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    t = (np.arange(resolution) + 0.5) / resolution
    if g.dimension == 1:
        rest = np.zeros((1, 0))
    else:
        rest = np.stack(np.meshgrid(*([t] * (g.dimension - 1)), indexing="ij"), axis=-1).reshape(
            -1, g.dimension - 1
        )
    count = 0.0
    for x0 in t:
        pts = np.concatenate([np.full((rest.shape[0], 1), x0), rest], axis=1)
        count += g.chi1(pts).sum()
    f1 = count / resolution**g.dimension
    return f1, 1.0 - f1


@dataclass
class StructuredMesh:
    """Uniform box mesh of ``[0, L_1] x ... x [0, L_N]`` with Q1 cells.

    For ``periodic`` meshes, nodes on the faces ``x_i = L_i`` are identified
    with their partners on ``x_i = 0``; ``vertices`` then only holds the
    ``prod(shape)`` distinct nodes and ``periodic_pairs`` lists the
    identification as (full-grid index on the far face, partner node id).
    ``phase`` holds one tag per cell (``SOLID`` or ``FLUID``).
    """

    shape: tuple
    lengths: tuple
    periodic: bool
    phase: np.ndarray
    vertices: np.ndarray = field(init=False, repr=False)
    cells: np.ndarray = field(init=False, repr=False)
    periodic_pairs: np.ndarray = field(init=False, repr=False)
    full_to_node: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.shape = tuple(int(s) for s in self.shape)
        self.lengths = tuple(float(v) for v in self.lengths)
        full_shape = tuple(s + 1 for s in self.shape)
        grids = np.meshgrid(
            *[np.arange(s) for s in full_shape], indexing="ij"
        )
        full_idx = np.stack(grids, axis=-1).reshape(-1, self.dimension)
        if self.periodic:
            wrapped = np.mod(full_idx, np.asarray(self.shape))
            self.full_to_node = np.ravel_multi_index(wrapped.T, self.shape)
            node_shape = self.shape
        else:
            self.full_to_node = np.arange(full_idx.shape[0])
            node_shape = full_shape
        node_idx = np.stack(
            np.meshgrid(*[np.arange(s) for s in node_shape], indexing="ij"), axis=-1
        ).reshape(-1, self.dimension)
        self.vertices = node_idx * np.asarray(self.h)
        cell_idx = np.stack(
            np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij"), axis=-1
        ).reshape(-1, self.dimension)
        corners = np.array(list(itertools.product((0, 1), repeat=self.dimension)))
        full = cell_idx[:, None, :] + corners[None, :, :]
        full_lin = np.ravel_multi_index(np.moveaxis(full, -1, 0), full_shape)
        self.cells = self.full_to_node[full_lin]
        if self.periodic:
            on_far = np.any(full_idx == np.asarray(self.shape), axis=1)
            far = np.flatnonzero(on_far)
            self.periodic_pairs = np.stack([far, self.full_to_node[far]], axis=1)
        else:
            self.periodic_pairs = np.zeros((0, 2), dtype=int)
        self.phase = np.asarray(self.phase, dtype=np.int8).reshape(-1)
        if self.phase.size != self.n_cells:
            raise ValueError("one phase tag per cell required")

    @property
    def dimension(self) -> int:
        return len(self.shape)

    @property
    def h(self) -> tuple:
        return tuple(L / n for L, n in zip(self.lengths, self.shape))

    @property
    def n_nodes(self) -> int:
        return self.vertices.shape[0]

    @property
    def n_cells(self) -> int:
        return self.cells.shape[0]

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.h))

    @property
    def volume(self) -> float:
        return float(np.prod(self.lengths))

    def centroids(self) -> np.ndarray:
        idx = np.stack(
            np.meshgrid(*[np.arange(s) for s in self.shape], indexing="ij"), axis=-1
        ).reshape(-1, self.dimension)
        return (idx + 0.5) * np.asarray(self.h)

    def full_vertices(self) -> np.ndarray:
        full_shape = tuple(s + 1 for s in self.shape)
        idx = np.stack(
            np.meshgrid(*[np.arange(s) for s in full_shape], indexing="ij"), axis=-1
        ).reshape(-1, self.dimension)
        return idx * np.asarray(self.h)

    def boundary_nodes(self) -> np.ndarray:
        """Nodes on the outer boundary (empty for periodic meshes)."""
        if self.periodic:
            return np.zeros(0, dtype=int)
        full_shape = np.asarray(self.shape) + 1
        idx = np.stack(
            np.meshgrid(*[np.arange(s) for s in full_shape], indexing="ij"), axis=-1
        ).reshape(-1, self.dimension)
        on = np.any((idx == 0) | (idx == full_shape - 1), axis=1)
        return np.flatnonzero(on)

    def phase_mask(self, tag: int) -> np.ndarray:
        return self.phase == tag

    def nodes_touching(self, cell_mask: np.ndarray) -> np.ndarray:
        """Boolean node mask: node belongs to at least one masked cell."""
        out = np.zeros(self.n_nodes, dtype=bool)
        out[self.cells[cell_mask].ravel()] = True
        return out

    def interior_nodes(self, tag: int) -> np.ndarray:
        """Nodes all of whose adjacent cells carry ``tag``."""
        return self.nodes_touching(self.phase == tag) & ~self.nodes_touching(self.phase != tag)

    def to_text(self) -> str:
        """Plain-text vertex and cell lists (for external visualization)."""
        lines = [f"# dimension {self.dimension} periodic {int(self.periodic)}"]
        lines.append(f"vertices {self.n_nodes}")
        lines += [" ".join(f"{c:.12g}" for c in v) for v in self.vertices]
        lines.append(f"cells {self.n_cells}")
        lines += [
            " ".join(str(i) for i in c) + f" {int(p)}" for c, p in zip(self.cells, self.phase)
        ]
        return "\n".join(lines) + "\n"


PeriodicMesh = StructuredMesh


def _phase_from_points(g: CellGeometry, y, theta: Optional[PoreDistribution]) -> np.ndarray:
    solid = g.chi1(y) > 0.5
    if theta is not None:
        k = np.floor(y).astype(int)
        solid &= theta.value(k) == 1
    return np.where(solid, SOLID, FLUID).astype(np.int8)


def mesh_cell(
    g: CellGeometry, resolution: int, theta: Optional[PoreDistribution] = None
) -> StructuredMesh:
    """Periodic mesh of the reference cell (or of the theta supercell).

    With ``theta`` given, the mesh covers ``[0, p_1) x ... x [0, p_N)`` where
    ``p`` is the pore period, ``resolution`` cells per unit length, and lattice
    cells with ``theta(k) = 0`` are entirely fluid.
    """
    if resolution < 4:
        raise ValueError("resolution must be >= 4")
    per = (1,) * g.dimension if theta is None else tuple(theta.period())
    shape = tuple(resolution * p for p in per)
    mesh = StructuredMesh(shape, per, True, np.zeros(int(np.prod(shape)), dtype=np.int8))
    mesh.phase = _phase_from_points(g, mesh.centroids(), theta)
    return mesh


@dataclass
class EpsilonDomain:
    """The perforated domain ``Omega`` at scale ``eps`` with its global mesh."""

    lengths: tuple
    eps: float
    theta: PoreDistribution
    geometry: CellGeometry
    resolution: int
    mesh: StructuredMesh
    layout: np.ndarray  # theta value per lattice cell

    @property
    def lattice_shape(self) -> tuple:
        return self.layout.shape


def build_epsilon_domain(
    g: CellGeometry,
    eps: float,
    theta: Optional[PoreDistribution] = None,
    resolution: int = 8,
    lengths=None,
) -> EpsilonDomain:
    """Tile ``Omega`` (unit box by default) with eps-cells carrying inclusions on theta = 1."""
    n = g.dimension
    lengths = (1.0,) * n if lengths is None else tuple(float(v) for v in lengths)
    theta = PoreDistribution.uniform(n) if theta is None else theta
    per = theta.period()
    counts = []
    for L, p in zip(lengths, per):
        m = L / eps
        mi = int(round(m))
        if abs(m - mi) > 1e-9 or mi < 1 or mi % p != 0:
            raise EpsilonNotConforming(
                f"L/eps = {m:g} is not an integer multiple of the pore period {p}"
            )
        counts.append(mi)
    shape = tuple(c * resolution for c in counts)
    mesh = StructuredMesh(shape, lengths, False, np.zeros(int(np.prod(shape)), dtype=np.int8))
    y = mesh.centroids() / eps
    mesh.phase = _phase_from_points(g, y, theta)
    kk = np.stack(np.meshgrid(*[np.arange(c) for c in counts], indexing="ij"), axis=-1)
    layout = theta.value(kk)
    return EpsilonDomain(lengths, float(eps), theta, g, resolution, mesh, layout)
