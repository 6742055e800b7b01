"""Meshes, field layouts, differential constraints and boundary encoding.

The discretization is deliberately minimal: continuous piecewise-linear
nodal fields for the primary unknown (displacement, pressure, electric
field), cellwise-constant flux fields (stress, velocity, magnetic
intensity), and independent trace values for the flux on boundary nodes.
The discrete divergence is defined as the exact adjoint of the discrete
gradient with respect to the lumped volume weights, so the
summation-by-parts identity

    sum_cells vol * Y . (B X)  +  sum_nodes w * X . div(Y, tr)
        = sum_boundary m * X . tr

holds to machine precision on every mesh.  All boundary-value formulas
downstream inherit that exactness.

Field quadruples use role names that are uniform across physics:

======================  ==================  ==================  ==============
component (home)        elastic             acoustic            electromagnetic
======================  ==================  ==================  ==============
primary (nodes)         u'                  P'                  E'
flux (cells)            sigma'              v''                 H''
trace (boundary)        traction tau'       nu'' = v''.n        theta'' = H''n
grad_part (cells)       strain e'           p''                 B''
div_part (nodes)        p''                 h''                 D'
======================  ==================  ==================  ==============

and the dual quadruple (imaginary counterparts) mirrors it with primary
u'', P'', E''; flux sigma'', v', H'; grad_part e'', p', B'; div_part
p', h', D''; trace tau'', nu', theta'.
"""

import dataclasses
import io

import numpy as np
import scipy.sparse as sp

from . import moduli as _moduli
from .moduli import ComplexModuli, OperatorL, PassivityError

__all__ = [
    "Mesh",
    "MaterialField",
    "FieldState",
    "DualState",
    "BoundarySpec",
    "SourceData",
    "SurfaceMismatch",
    "complete_trial_field",
    "apply_constitutive",
    "build_source_data",
    "boundary_residual",
    "reaction_traces",
    "write_field_table",
    "read_field_table",
]

_SQRT2 = np.sqrt(2.0)


def _fmt(x):
    """Shortest round-trip decimal form; parsing gives back the bits."""
    return repr(float(x))


class Mesh:
    """Conforming simplicial mesh in 1 or 2 dimensions.

    Parameters
    ----------
    nodes : (n, dim) array
        Node coordinates.
    cells : (nc, dim+1) int array
        Segment or triangle connectivity.
    region : (nc,) int array, optional
        Material region tag per cell, default all zero.
    boundary_tag_of : callable, optional
        Maps a node coordinate array to a tag string.  Defaults to
        ``left``/``right`` in 1D and ``left``/``right``/``bottom``/``top``
        (in that priority order at corners) for 2D bounding-box sides.

    Notes
    -----
    Immutable after construction.  Cells with volume below 1e-12 of the
    largest are rejected.
    """

    def __init__(self, nodes, cells, region=None, boundary_tag_of=None):
        nodes = np.asarray(nodes, dtype=float)
        if nodes.ndim == 1:
            nodes = nodes[:, None]
        cells = np.asarray(cells, dtype=int)
        dim = nodes.shape[1]
        if dim not in (1, 2):
            raise ValueError("only 1D and 2D meshes are supported")
        if cells.shape[1] != dim + 1:
            raise ValueError("cells must have dim+1 nodes each")
        self.dim = dim
        self.nodes = nodes
        self.cells = cells
        self.n_nodes = nodes.shape[0]
        self.n_cells = cells.shape[0]
        if region is None:
            region = np.zeros(self.n_cells, dtype=int)
        self.region = np.asarray(region, dtype=int)
        if self.region.shape != (self.n_cells,):
            raise ValueError("region must have one tag per cell")

        self._build_geometry()
        self._build_boundary(boundary_tag_of)
        self._layouts = {}

        self.nodes.flags.writeable = False
        self.cells.flags.writeable = False
        self.region.flags.writeable = False

    # ------------------------------------------------------------------
    # construction helpers

    @classmethod
    def interval(cls, n_cells, length=1.0, origin=0.0, region_of=None):
        """Uniform 1D mesh of ``n_cells`` segments."""
        x = origin + length * np.arange(n_cells + 1) / n_cells
        cells = np.column_stack([np.arange(n_cells), np.arange(1, n_cells + 1)])
        region = None
        if region_of is not None:
            mids = 0.5 * (x[:-1] + x[1:])
            region = np.array([region_of(float(c)) for c in mids], dtype=int)
        return cls(x, cells, region)

    @classmethod
    def rectangle(cls, nx, ny, lx=1.0, ly=1.0, origin=(0.0, 0.0), region_of=None):
        """Structured triangulation of a rectangle, two triangles per quad."""
        ox, oy = origin
        xs = ox + lx * np.arange(nx + 1) / nx
        ys = oy + ly * np.arange(ny + 1) / ny
        xv, yv = np.meshgrid(xs, ys, indexing="ij")
        nodes = np.column_stack([xv.ravel(), yv.ravel()])

        def nid(i, j):
            return i * (ny + 1) + j

        tris = []
        for i in range(nx):
            for j in range(ny):
                a, b = nid(i, j), nid(i + 1, j)
                c, d = nid(i + 1, j + 1), nid(i, j + 1)
                tris.append((a, b, c))
                tris.append((a, c, d))
        cells = np.asarray(tris, dtype=int)
        region = None
        if region_of is not None:
            centroids = nodes[cells].mean(axis=1)
            region = np.array([region_of(c) for c in centroids], dtype=int)
        return cls(nodes, cells, region)

    def _build_geometry(self):
        if self.dim == 1:
            p = self.nodes[:, 0]
            d = p[self.cells[:, 1]] - p[self.cells[:, 0]]
            vol = np.abs(d)
        else:
            p = self.nodes[self.cells]  # (nc, 3, 2)
            e1 = p[:, 1] - p[:, 0]
            e2 = p[:, 2] - p[:, 0]
            det = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
            vol = 0.5 * np.abs(det)
        if vol.size and vol.min() <= 1e-12 * vol.max():
            bad = int(np.argmin(vol))
            raise ValueError(f"degenerate cell {bad} (volume {vol.min():.3e})")
        self.volumes = vol

        # lumped nodal weights: each cell spreads its volume evenly
        w = np.zeros(self.n_nodes)
        np.add.at(w, self.cells, (vol / (self.dim + 1))[:, None])
        self.node_weights = w

        # per-cell P1 gradient coefficients g[c, vertex, axis]
        if self.dim == 1:
            p0 = self.nodes[self.cells[:, 0], 0]
            p1 = self.nodes[self.cells[:, 1], 0]
            h = p1 - p0
            g = np.empty((self.n_cells, 2, 1))
            g[:, 0, 0] = -1.0 / h
            g[:, 1, 0] = 1.0 / h
        else:
            pts = self.nodes[self.cells]
            e1 = pts[:, 1] - pts[:, 0]
            e2 = pts[:, 2] - pts[:, 0]
            det = (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])[:, None]
            g = np.empty((self.n_cells, 3, 2))
            # inverse-transpose of the edge matrix applied to barycentric grads
            g[:, 1, 0] = e2[:, 1] / det[:, 0]
            g[:, 1, 1] = -e2[:, 0] / det[:, 0]
            g[:, 2, 0] = -e1[:, 1] / det[:, 0]
            g[:, 2, 1] = e1[:, 0] / det[:, 0]
            g[:, 0] = -(g[:, 1] + g[:, 2])
        self._grad_coeff = g

    def _build_boundary(self, tag_of):
        if self.dim == 1:
            counts = np.zeros(self.n_nodes, dtype=int)
            np.add.at(counts, self.cells, 1)
            bnodes = np.flatnonzero(counts == 1)
            mass = np.ones(bnodes.size)
            lo = self.nodes[bnodes, 0].argmin()
            normals = np.ones((bnodes.size, 1))
            normals[lo, 0] = -1.0
            if tag_of is None:
                tags = np.where(np.arange(bnodes.size) == lo, "left", "right")
            else:
                tags = np.array([tag_of(self.nodes[j]) for j in bnodes])
        else:
            edges = {}
            for c, tri in enumerate(self.cells):
                for k in range(3):
                    a, b = int(tri[k]), int(tri[(k + 1) % 3])
                    opp = int(tri[(k + 2) % 3])
                    key = (min(a, b), max(a, b))
                    if key in edges:
                        del edges[key]
                    else:
                        edges[key] = (a, b, opp)
            bset = sorted({n for key in edges for n in key})
            index = {n: i for i, n in enumerate(bset)}
            bnodes = np.asarray(bset, dtype=int)
            mass = np.zeros(bnodes.size)
            normals = np.zeros((bnodes.size, 2))
            for a, b, opp in edges.values():
                pa, pb = self.nodes[a], self.nodes[b]
                ev = pb - pa
                length = float(np.hypot(*ev))
                n = np.array([ev[1], -ev[0]]) / length
                if n @ (self.nodes[opp] - pa) > 0:
                    n = -n
                for node in (a, b):
                    i = index[node]
                    mass[i] += 0.5 * length
                    normals[i] += 0.5 * length * n
            norms = np.linalg.norm(normals, axis=1, keepdims=True)
            normals = normals / np.where(norms > 0, norms, 1.0)
            if tag_of is None:
                lo = self.nodes.min(axis=0)
                hi = self.nodes.max(axis=0)
                tol = 1e-9 * max(np.abs(hi - lo).max(), 1.0)
                tags = []
                for j in bnodes:
                    x, y = self.nodes[j]
                    if abs(x - lo[0]) < tol:
                        tags.append("left")
                    elif abs(x - hi[0]) < tol:
                        tags.append("right")
                    elif abs(y - lo[1]) < tol:
                        tags.append("bottom")
                    else:
                        tags.append("top")
                tags = np.asarray(tags)
            else:
                tags = np.array([tag_of(self.nodes[j]) for j in bnodes])
        self.boundary_nodes = bnodes
        self.boundary_mass = mass
        self.boundary_normals = normals
        self.boundary_tags = tags
        self.n_boundary = bnodes.size

    # ------------------------------------------------------------------
    # averaging and tables

    def node_average(self, cell_values):
        """Volume-weighted average of a cellwise array onto nodes.

        Uses the same weights as the lumped nodal mass, so the averaged
        coefficient is the one the adjoint-divergence balance sees.
        """
        cell_values = np.asarray(cell_values)
        out = np.zeros((self.n_nodes,) + cell_values.shape[1:],
                       dtype=cell_values.dtype)
        share = self.volumes / (self.dim + 1)
        scale = share.reshape((-1,) + (1,) * (cell_values.ndim - 1))
        for k in range(self.dim + 1):
            np.add.at(out, self.cells[:, k], scale * cell_values)
        return out / self.node_weights.reshape((-1,) + (1,) * (cell_values.ndim - 1))

    def write_tables(self, node_path, cell_path):
        with open(node_path, "w") as f:
            f.write("id," + ",".join("xy"[: self.dim]) + "\n")
            for i, p in enumerate(self.nodes):
                f.write(",".join([str(i)] + [_fmt(v) for v in p]) + "\n")
        with open(cell_path, "w") as f:
            names = ",".join(f"n{k}" for k in range(self.dim + 1))
            f.write(f"id,{names},region\n")
            for i, (cell, reg) in enumerate(zip(self.cells, self.region)):
                f.write(",".join(map(str, [i, *cell, reg])) + "\n")

    @classmethod
    def from_tables(cls, node_path, cell_path):
        nodes = np.genfromtxt(node_path, delimiter=",", skip_header=1)
        nodes = np.atleast_2d(nodes)[:, 1:]
        raw = np.genfromtxt(cell_path, delimiter=",", skip_header=1, dtype=int)
        raw = np.atleast_2d(raw)
        return cls(nodes, raw[:, 1:-1], raw[:, -1])


# ----------------------------------------------------------------------
# discrete operator layout per physics


class _Layout:
    """Sparse operators and weights for one (mesh, physics) pair.

    Attributes
    ----------
    cx : components per node of the primary field and per trace entry.
    cy : components per cell of the flux field.
    B : csr matrix, (nc*cy, n*cx) discrete gradient.
    BT_V : csr, B.T with cell-volume weights folded in.
    M : csr, (n*cx, nb*cx) boundary scatter carrying the trace mass.
    """

    def __init__(self, mesh, physics):
        self.mesh = mesh
        self.physics = physics
        d = mesh.dim
        if physics == "elastic":
            self.cx = d
            self.kv = 1 if d == 1 else 3
            self.cy = self.kv
            self.B = self._sym_grad_matrix(mesh)
        elif physics == "acoustic":
            self.cx = 1
            self.cy = d
            self.B = self._grad_matrix(mesh)
        elif physics == "electromagnetic":
            if d != 1:
                raise ValueError("electromagnetic problems are 1D layered only")
            self.cx = 1
            self.cy = 1
            self.B = self._grad_matrix(mesh)
        else:
            raise ValueError(f"unknown physics {physics!r}")

        self.vol_rep = np.repeat(mesh.volumes, self.cy)
        self.w_rep = np.repeat(mesh.node_weights, self.cx)
        self.m_rep = np.repeat(mesh.boundary_mass, self.cx)
        self.BT_V = (self.B.T @ sp.diags(self.vol_rep)).tocsr()

        nb = mesh.n_boundary
        rows = (mesh.boundary_nodes[:, None] * self.cx
                + np.arange(self.cx)).ravel()
        cols = np.arange(nb * self.cx)
        self.M = sp.csr_matrix(
            (self.m_rep, (rows, cols)),
            shape=(mesh.n_nodes * self.cx, nb * self.cx))

    @staticmethod
    def _grad_matrix(mesh):
        d = mesh.dim
        nv = d + 1
        rows = np.repeat(np.arange(mesh.n_cells * d), nv)
        cols = np.tile(mesh.cells, d).ravel()
        vals = np.transpose(mesh._grad_coeff, (0, 2, 1)).ravel()
        return sp.csr_matrix((vals, (rows, cols)),
                             shape=(mesh.n_cells * d, mesh.n_nodes))

    @staticmethod
    def _sym_grad_matrix(mesh):
        g = mesh._grad_coeff
        nc, nv = mesh.n_cells, mesh.dim + 1
        if mesh.dim == 1:
            rows = np.repeat(np.arange(nc), nv)
            cols = mesh.cells.ravel()
            vals = g[:, :, 0].ravel()
            return sp.csr_matrix((vals, (rows, cols)), shape=(nc, mesh.n_nodes))
        rows, cols, vals = [], [], []
        for v in range(nv):
            node = mesh.cells[:, v]
            gx, gy = g[:, v, 0], g[:, v, 1]
            cell = np.arange(nc)
            # rows: (e_xx, e_yy, sqrt(2) e_xy) per cell
            rows += [3 * cell, 3 * cell + 1, 3 * cell + 2, 3 * cell + 2]
            cols += [2 * node, 2 * node + 1, 2 * node, 2 * node + 1]
            vals += [gx, gy, gy / _SQRT2, gx / _SQRT2]
        rows = np.concatenate(rows)
        cols = np.concatenate(cols)
        vals = np.concatenate(vals)
        return sp.csr_matrix((vals, (rows, cols)),
                             shape=(3 * nc, 2 * mesh.n_nodes))

    # dense field helpers -------------------------------------------------

    def apply_B(self, X):
        return (self.B @ np.asarray(X).ravel()).reshape(self.mesh.n_cells, self.cy)

    def div_trace(self, Y, trace):
        """Adjoint divergence of a flux field with explicit traces."""
        out = -(self.BT_V @ np.asarray(Y).ravel())
        out += self.M @ np.asarray(trace).ravel()
        return (out / self.w_rep).reshape(self.mesh.n_nodes, self.cx)

    def boundary_sum(self, X_boundary, trace):
        """sum over the boundary of m * X . trace (the SBP surface term)."""
        return float(np.sum(self.m_rep.reshape(-1, self.cx)
                            * np.asarray(X_boundary) * np.asarray(trace)))


def get_layout(mesh, physics):
    if physics not in mesh._layouts:
        mesh._layouts[physics] = _Layout(mesh, physics)
    return mesh._layouts[physics]


# ----------------------------------------------------------------------
# materials on a mesh


def _batch_block(mod, sign, name):
    """Vectorized real block construction for stacked complex matrices."""
    mr, mi = mod.real, sign * mod.imag
    eigs = np.linalg.eigvalsh(mi)
    scale = np.abs(eigs).max(axis=-1)
    bad = eigs[..., 0] <= _moduli.STRICT_TOL * np.maximum(scale, 1e-300)
    if np.any(bad):
        raise PassivityError(
            f"{name}: imaginary part not strictly definite on "
            f"{int(bad.sum())} of {bad.size} entities")
    # computing with the signed imaginary part gives the positive
    # definite block directly for both tensor families
    s = np.linalg.inv(mi)
    a = mi + mr @ s @ mr
    b = -mr @ s
    k = mod.shape[-1]
    out = np.empty(mod.shape[:-2] + (2 * k, 2 * k))
    out[..., :k, :k] = a
    out[..., :k, k:] = b
    out[..., k:, :k] = np.swapaxes(b, -1, -2)
    out[..., k:, k:] = s
    return out


class MaterialField:
    """Per-region complex moduli resolved onto a mesh.

    The block that lives on nodes is built from the volume-weighted nodal
    average of the complex modulus (not from averaged blocks), which is
    the coefficient the nodal balance equations see.

    Parameters
    ----------
    mesh : Mesh
    media : ComplexModuli or dict int -> ComplexModuli
        Either one medium for the whole mesh or one per region tag.
    """

    def __init__(self, mesh, media):
        if isinstance(media, ComplexModuli):
            media = {int(tag): media for tag in np.unique(mesh.region)}
        tags = sorted(media)
        first = media[tags[0]]
        self.mesh = mesh
        self.media = dict(media)
        self.physics = first.physics
        self.omega = first.omega
        for m in media.values():
            if m.physics != self.physics or m.omega != self.omega:
                raise ValueError("all regions must share physics and omega")
        missing = set(np.unique(mesh.region)) - set(tags)
        if missing:
            raise ValueError(f"regions {sorted(missing)} have no moduli")

        layout = get_layout(mesh, self.physics)
        kp = first.primal.shape[0]
        kd = first.dual.shape[0]
        if self.physics == "elastic":
            expect = (layout.cy, layout.cx)
        elif self.physics == "acoustic":
            expect = (1, layout.cy)
        else:
            expect = (1, 1)
        if (kp, kd) != expect:
            raise ValueError(
                f"moduli shapes ({kp}, {kd}) do not match the "
                f"{self.physics} layout on a {mesh.dim}D mesh "
                f"(expected {expect})")

        self.primal_cells = np.empty((mesh.n_cells, kp, kp), dtype=complex)
        self.dual_cells = np.empty((mesh.n_cells, kd, kd), dtype=complex)
        for tag in tags:
            mask = mesh.region == tag
            self.primal_cells[mask] = media[tag].primal
            self.dual_cells[mask] = media[tag].dual
        # nodal-home coefficient: rho for elastic, k for acoustics,
        # eps for electromagnetism
        if self.physics == "elastic":
            self.node_coeff = mesh.node_average(self.dual_cells)
        else:
            self.node_coeff = mesh.node_average(self.primal_cells)

    @property
    def lossless(self):
        return float(np.abs(self.dual_cells.imag).max()) == 0.0

    def passivity(self):
        """Per-region passivity reports keyed by tag."""
        return {tag: _moduli.check_passivity(m) for tag, m in self.media.items()}

    def block_arrays(self):
        """(blockA per entity, blockB per entity) real stacks.

        Block A lives on cells for elastic media and on nodes otherwise;
        block B on the complementary home.  Raises PassivityError if any
        entity is not strictly passive (use the reduced path for
        a lossless dual).
        """
        pname, dname, psign, dsign = _moduli._TENSOR_INFO[self.physics]
        if self.physics == "elastic":
            a = _batch_block(self.primal_cells, psign, pname)
            b = _batch_block(self.node_coeff, dsign, dname)
        else:
            a = _batch_block(self.node_coeff, psign, pname)
            b = _batch_block(self.dual_cells, dsign, dname)
        return a, b

    def blockA_array(self):
        """First block only; works for a lossless dual tensor."""
        pname, _, psign, _ = _moduli._TENSOR_INFO[self.physics]
        if self.physics == "elastic":
            return _batch_block(self.primal_cells, psign, pname)
        return _batch_block(self.node_coeff, psign, pname)

    def blockB_array(self):
        return self.block_arrays()[1]


def _material_blocks(L, mesh, physics):
    """Resolve an OperatorL or MaterialField into per-entity block stacks."""
    if isinstance(L, MaterialField):
        if L.mesh is not mesh:
            raise ValueError("material lives on a different mesh")
        return L.block_arrays()
    if isinstance(L, OperatorL):
        nA = mesh.n_cells if physics == "elastic" else mesh.n_nodes
        nB = mesh.n_nodes if physics == "elastic" else mesh.n_cells
        a = np.broadcast_to(L.blockA.matrix, (nA,) + L.blockA.matrix.shape)
        b = np.broadcast_to(L.blockB.matrix, (nB,) + L.blockB.matrix.shape)
        return a, b
    raise TypeError("expected OperatorL or MaterialField")


# ----------------------------------------------------------------------
# field states


@dataclasses.dataclass
class FieldState:
    """Constraint-complete trial quadruple (see module docstring table)."""

    physics: str
    mesh: Mesh
    omega: float
    primary: np.ndarray    # (n, cx)
    flux: np.ndarray       # (nc, cy)
    trace: np.ndarray      # (nb, cx)
    grad_part: np.ndarray  # (nc, cy)
    div_part: np.ndarray   # (n, cx)

    def pair_A(self):
        """Stacked first-block pairs, (nA, 2a)."""
        if self.physics == "elastic":
            return np.hstack([self.grad_part, self.flux])
        if self.physics == "acoustic":
            return np.hstack([-self.omega * self.primary, self.div_part])
        return np.hstack([self.primary, self.div_part])

    def pair_B(self):
        """Stacked second-block pairs, (nB, 2b)."""
        if self.physics == "elastic":
            return np.hstack([self.omega * self.primary, self.div_part])
        if self.physics == "acoustic":
            return np.hstack([self.omega * self.grad_part, self.omega * self.flux])
        return np.hstack([self.grad_part, self.flux])


@dataclasses.dataclass
class DualState:
    """Imaginary-counterpart quadruple (data G0 or constitutive image)."""

    physics: str
    mesh: Mesh
    omega: float
    primary: np.ndarray    # u'' / P'' / E''      (n, cx)
    flux: np.ndarray       # sigma'' / v' / H'    (nc, cy)
    grad_part: np.ndarray  # e'' / p' / B'        (nc, cy)
    div_part: np.ndarray   # p' / h' / D''        (n, cx)
    trace: np.ndarray = None  # tau'' / nu' / theta'  (nb, cx), optional

    def pair_A(self):
        if self.physics == "elastic":
            return np.hstack([self.flux, -self.grad_part])
        if self.physics == "acoustic":
            return np.hstack([self.div_part, -self.omega * self.primary])
        return np.hstack([self.div_part, -self.primary])

    def pair_B(self):
        if self.physics == "elastic":
            return np.hstack([self.div_part, self.omega * self.primary])
        if self.physics == "acoustic":
            return np.hstack([-self.omega * self.flux, self.omega * self.grad_part])
        return np.hstack([self.flux, -self.grad_part])


def _dual_from_pairs(physics, mesh, omega, gA, gB):
    """Invert pair_A / pair_B back into a DualState."""
    a = gA.shape[1] // 2
    b = gB.shape[1] // 2
    if physics == "elastic":
        return DualState(physics, mesh, omega,
                         primary=gB[:, b:] / omega, flux=gA[:, :a],
                         grad_part=-gA[:, a:], div_part=gB[:, :b])
    if physics == "acoustic":
        return DualState(physics, mesh, omega,
                         primary=-gA[:, a:] / omega, flux=-gB[:, :b] / omega,
                         grad_part=gB[:, b:] / omega, div_part=gA[:, :a])
    return DualState(physics, mesh, omega,
                     primary=-gA[:, a:], flux=gB[:, :b],
                     grad_part=-gB[:, b:], div_part=gA[:, :a])


# ----------------------------------------------------------------------
# boundary conditions and sources


class BoundarySpec:
    """Two independent selections per boundary node and component.

    Selection 1 either prescribes the real primary field (essential) or
    targets the imaginary-side trace (natural): u' vs tau''0 for elastic,
    P' vs nu'0 for acoustics, E' vs theta'0 for electromagnetism.
    Selection 2 either prescribes the real trace (essential) or targets
    the imaginary-side primary: tau' vs u''0, nu'' vs P''0,
    theta'' vs E''0.

    A full physical Dirichlet condition is (essential primary', target
    primary''); a full Neumann condition is (target trace'', essential
    trace') with the roles of real/imaginary parts set by the physics
    (`set_dirichlet` / `set_neumann` do the bookkeeping).
    """

    def __init__(self, mesh, physics):
        self.mesh = mesh
        self.physics = physics
        cx = get_layout(mesh, physics).cx
        self.cx = cx
        nb = mesh.n_boundary
        self.sel1 = np.zeros((nb, cx), dtype=bool)
        self.val1 = np.zeros((nb, cx))
        self.sel2 = np.zeros((nb, cx), dtype=bool)
        self.val2 = np.zeros((nb, cx))

    def mask(self, tag):
        m = self.mesh.boundary_tags == tag
        if not m.any():
            raise ValueError(f"no boundary nodes tagged {tag!r}")
        return m

    def _resolve(self, value, where):
        coords = self.mesh.nodes[self.mesh.boundary_nodes[where]]
        out = np.empty((where.sum(), self.cx), dtype=complex)
        if callable(value):
            for i, x in enumerate(coords):
                out[i] = np.asarray(value(x), dtype=complex)
        else:
            out[:] = np.asarray(value, dtype=complex)
        return out

    def set_dirichlet(self, tag, value):
        """Prescribe the complex primary field on a tagged side."""
        w = self.mask(tag)
        v = self._resolve(value, w)
        self.sel1[w], self.val1[w] = True, v.real
        self.sel2[w], self.val2[w] = False, v.imag
        return self

    def set_neumann(self, tag, value):
        """Prescribe the complex flux trace on a tagged side.

        The trial state carries the real trace part for elastic media
        but the imaginary part for acoustics and electromagnetism; the
        complementary part becomes the natural target.
        """
        w = self.mask(tag)
        v = self._resolve(value, w)
        if self.physics == "elastic":
            ess, nat = v.real, v.imag
        else:
            ess, nat = v.imag, v.real
        self.sel1[w], self.val1[w] = False, nat
        self.sel2[w], self.val2[w] = True, ess
        return self

    def set_selection(self, tag, primary_essential, value1,
                      trace_essential, value2, component=None):
        """Set the raw selection pair on a side (mixed conditions)."""
        w = self.mask(tag)
        cols = slice(None) if component is None else component
        self.sel1[w, cols] = primary_essential
        self.val1[w, cols] = value1
        self.sel2[w, cols] = trace_essential
        self.val2[w, cols] = value2
        return self


@dataclasses.dataclass
class SourceData:
    """Body force and admissible imaginary-side data.

    The dual quadruple ``g0`` satisfies the imaginary-side differential
    constraints with Im(f) by construction; its trace holds the natural
    targets of selection 1 and its primary the targets of selection 2.
    """

    physics: str
    mesh: Mesh
    omega: float
    f: np.ndarray          # complex; nodal for elastic/EM, cellwise acoustic
    bc: BoundarySpec
    g0: DualState

    @property
    def f_real(self):
        return self.f.real

    @property
    def f_imag(self):
        return self.f.imag


def _force_home(physics):
    return "cell" if physics == "acoustic" else "node"


def _normalize_force(f, mesh, layout, physics):
    n_home = mesh.n_cells if _force_home(physics) == "cell" else mesh.n_nodes
    comp = layout.cy if physics == "acoustic" else layout.cx
    shape = (n_home, comp)
    if f is None:
        return np.zeros(shape, dtype=complex)
    f = np.asarray(f, dtype=complex)
    if f.ndim <= 1 and f.size in (1, comp):
        return np.broadcast_to(f.reshape(-1), shape).astype(complex)
    f = f.reshape(-1, comp)
    if f.shape[0] == n_home:
        return f.copy()
    if physics != "acoustic" and f.shape[0] == mesh.n_cells:
        if mesh.n_cells == mesh.n_nodes:
            raise ValueError("ambiguous body-force shape; give nodal values")
        # lump cellwise forces to nodes with the volume shares
        out = np.zeros(shape, dtype=complex)
        share = (mesh.volumes / (mesh.dim + 1))[:, None]
        for k in range(mesh.dim + 1):
            np.add.at(out, mesh.cells[:, k], share * f)
        return out / mesh.node_weights[:, None]
    raise ValueError(f"body force shape {f.shape} does not fit the mesh")


def _complete_dual(physics, mesh, omega, primary, flux, trace, f):
    """Fill the constraint-derived components of a dual quadruple."""
    layout = get_layout(mesh, physics)
    fi = f.imag if physics != "electromagnetic" else None
    if physics == "elastic":
        grad = layout.apply_B(primary)
        div = (layout.div_trace(flux, trace) + fi) / omega
    elif physics == "acoustic":
        grad = (-layout.apply_B(primary) + fi) / omega
        div = layout.div_trace(flux, trace)
    else:
        grad = layout.apply_B(primary) / omega
        div = -(layout.div_trace(flux, trace) + f.real) / omega
    return DualState(physics, mesh, omega, primary=np.asarray(primary, float),
                     flux=np.asarray(flux, float), grad_part=grad,
                     div_part=div, trace=np.asarray(trace, float))


def build_source_data(f, bc, mesh, omega, dual_primary=None, dual_flux=None):
    """Assemble admissible source data from force and boundary targets.

    The canonical construction takes the imaginary flux field to be zero
    with trace values equal to the selection-1 natural targets, the
    imaginary primary field zero in the interior with the selection-2
    targets on the boundary, and derives the remaining components from
    the imaginary-side differential constraints.  Pass ``dual_primary``
    or ``dual_flux`` to override the zero fields with full arrays (their
    boundary values must match the targets).

    Returns
    -------
    SourceData
    """
    physics = bc.physics
    if bc.mesh is not mesh:
        raise ValueError("boundary spec lives on a different mesh")
    if not omega > 0:
        raise ValueError("omega must be positive")
    layout = get_layout(mesh, physics)
    f = _normalize_force(f, mesh, layout, physics)

    trace0 = np.where(bc.sel1, 0.0, bc.val1)
    if dual_flux is None:
        flux0 = np.zeros((mesh.n_cells, layout.cy))
    else:
        flux0 = np.asarray(dual_flux, dtype=float).reshape(mesh.n_cells, layout.cy)

    if dual_primary is None:
        prim0 = np.zeros((mesh.n_nodes, layout.cx))
        idx = mesh.boundary_nodes
        vals = np.where(bc.sel2, 0.0, bc.val2)
        prim0[idx] = vals
    else:
        prim0 = np.asarray(dual_primary, dtype=float).reshape(mesh.n_nodes, layout.cx)
        got = prim0[mesh.boundary_nodes]
        want = np.where(bc.sel2, got, bc.val2)
        scale = max(np.abs(prim0).max(), 1.0)
        if np.abs(got - want).max() > 1e-12 * scale:
            raise ValueError(
                "supplied dual primary field disagrees with the selection-2 "
                "targets on the boundary; no admissible extension")

    g0 = _complete_dual(physics, mesh, omega, prim0, flux0, trace0, f)
    return SourceData(physics, mesh, omega, f, bc, g0)


# ----------------------------------------------------------------------
# trial-field completion and constitutive checks


def complete_trial_field(primary_unknowns, src, mesh=None, omega=None):
    """Fill the dependent components of a trial field.

    Parameters
    ----------
    primary_unknowns : tuple (primary, flux, trace)
        Nodal primary field (essential values already imposed), cellwise
        flux, and boundary trace values.
    src : SourceData
        Supplies the body force entering the balance constraint.
    mesh, omega : optional
        Default to the ones carried by ``src``.

    Returns
    -------
    FieldState
        With ``grad_part`` computed from the discrete gradient and
        ``div_part`` from the trace-aware adjoint divergence, so the
        state satisfies its side of the differential constraints exactly.
    """
    mesh = src.mesh if mesh is None else mesh
    omega = src.omega if omega is None else omega
    if not omega > 0:
        raise ValueError("omega must be positive")
    physics = src.physics
    layout = get_layout(mesh, physics)
    X, Y, tr = primary_unknowns
    X = np.asarray(X, dtype=float).reshape(mesh.n_nodes, layout.cx)
    Y = np.asarray(Y, dtype=float).reshape(mesh.n_cells, layout.cy)
    tr = np.asarray(tr, dtype=float).reshape(mesh.n_boundary, layout.cx)
    fr = src.f_real if physics != "electromagnetic" else None
    if physics == "elastic":
        grad = layout.apply_B(X)
        div = -(layout.div_trace(Y, tr) + fr) / omega
    elif physics == "acoustic":
        grad = (layout.apply_B(X) - fr) / omega
        div = layout.div_trace(Y, tr)
    else:
        grad = -layout.apply_B(X) / omega
        div = (layout.div_trace(Y, tr) + src.f_imag) / omega
    return FieldState(physics, mesh, omega, X, Y, tr, grad, div)


def apply_constitutive(F, L):
    """Apply the real block operator pointwise: the dual image of ``F``.

    ``L`` may be a homogeneous OperatorL or a MaterialField.  The
    returned DualState has no trace (traces are not a pointwise image;
    see `reaction_traces`).
    """
    a, b = _material_blocks(L, F.mesh, F.physics)
    pa, pb = F.pair_A(), F.pair_B()
    if a.shape[1] != pa.shape[1] or b.shape[1] != pb.shape[1]:
        raise ValueError("operator block size does not match the field layout")
    gA = np.einsum("nij,nj->ni", a, pa)
    gB = np.einsum("nij,nj->ni", b, pb)
    return _dual_from_pairs(F.physics, F.mesh, F.omega, gA, gB)


def reaction_traces(G, src):
    """Variationally consistent dual traces at boundary nodes.

    Given the constitutive image G of a trial field, returns the
    imaginary-side boundary trace (tau'', nu', theta') that the trial
    field exerts, i.e. the quantity whose prescribed counterpart is the
    selection-1 natural target.
    """
    mesh, omega = G.mesh, G.omega
    layout = get_layout(mesh, G.physics)
    idx = mesh.boundary_nodes
    m = mesh.boundary_mass[:, None]
    w = mesh.node_weights[:, None]
    if G.physics == "elastic":
        num = (w * (omega * G.div_part - src.f_imag)
               + (layout.BT_V @ G.flux.ravel()).reshape(mesh.n_nodes, layout.cx))
    elif G.physics == "acoustic":
        num = (w * G.div_part
               + (layout.BT_V @ G.flux.ravel()).reshape(mesh.n_nodes, layout.cx))
    else:
        num = ((layout.BT_V @ G.flux.ravel()).reshape(mesh.n_nodes, layout.cx)
               - w * (omega * G.div_part + src.f_real))
    return num[idx] / m


@dataclasses.dataclass
class SurfaceMismatch:
    """Boundary residual table; NaN marks essential components."""

    nodes: np.ndarray
    flux_trace: np.ndarray  # reaction minus target, where primary is free
    primary: np.ndarray     # target minus dual primary, where trace is free

    def max_abs(self):
        vals = np.concatenate([self.flux_trace.ravel(), self.primary.ravel()])
        vals = vals[~np.isnan(vals)]
        return float(np.abs(vals).max()) if vals.size else 0.0


def boundary_residual(F, G, src):
    """Mismatch of the natural boundary targets for a trial pair (F, G).

    Where the primary field is free, reports reaction trace minus
    target; where the flux trace is free, reports target minus the dual
    primary field.  Both vanish at the exact solution.
    """
    bc = src.bc
    reaction = reaction_traces(G, src)
    r1 = np.where(bc.sel1, np.nan, reaction - bc.val1)
    prim_b = G.primary[F.mesh.boundary_nodes]
    r2 = np.where(bc.sel2, np.nan, bc.val2 - prim_b)
    return SurfaceMismatch(F.mesh.boundary_nodes.copy(), r1, r2)


# ----------------------------------------------------------------------
# field tables


def write_field_table(path, values, entity):
    """Write a field array as a (entity id, component, value) table.

    Floats are written in shortest round-trip form so that re-importing
    reproduces them bit-exactly.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] == 1 and values.size > 1:
        values = values.T
    buf = io.StringIO()
    buf.write(f"{entity},component,value\n")
    for i, row in enumerate(values):
        for c, v in enumerate(row):
            buf.write(f"{i},{c},{_fmt(v)}\n")
    with open(path, "w") as f:
        f.write(buf.getvalue())


def read_field_table(path):
    """Inverse of `write_field_table`; returns an (n, comps) array."""
    with open(path) as f:
        header = f.readline()
        if header.count(",") != 2:
            raise ValueError(f"{path}: not a field table")
        ids, comps, vals = [], [], []
        for line in f:
            if not line.strip():
                continue
            i, c, v = line.split(",")
            ids.append(int(i))
            comps.append(int(c))
            vals.append(float(v))
    out = np.zeros((max(ids) + 1, max(comps) + 1))
    out[ids, comps] = vals
    return out
