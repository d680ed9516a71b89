"""Discrete operators H, H_bot and P of the staggered scheme.

H acts on node vectors and combines the flux-form kinetic term with the
potential:

    H = (hbar^2 / 2m) D S'' (l')^{-1} D^T + V'' diag(U)

H_bot scatters hanging variables (outward-normal derivative samples on the
boundary) onto their collocated nodes:

    H_bot = (hbar^2 / 2m) L (n.) S''_b

Both are available assembled (scipy.sparse, for spectral analysis on small
grids) and matrix-free (numpy stencils, used for stepping).  The 2N x 2N
probability matrix is

    P = [[V'', -(dt/2 hbar) H], [-(dt/2 hbar) H, V'']].
"""

import numpy as np
import scipy.sparse as sp

from .grid import (FACES, FACE_SIGN, boundary_weights, face_node_slices,
                   metric_diagonals)

# Explicit sparse assembly is only intended for spectral analysis at desk
# scale; stepping always goes through the matrix-free path.
MAX_ASSEMBLY_NODES = 200_000


def _difference_matrix(m):
    """W_m = [0 | I] - [I | 0], shape m x (m+1)."""
    return sp.eye(m, m + 1, k=1, format="csr") - sp.eye(m, m + 1, k=0,
                                                        format="csr")


def build_incidence_D(grid):
    """Node-edge incidence matrix D, nodes x edges, blocks [Dx | Dy | Dz].

    Each column holds +1 at the tail node and -1 at the head node of the
    corresponding primary edge.
    """
    ix = sp.identity(grid.nx + 1, format="csr")
    iy = sp.identity(grid.ny + 1, format="csr")
    iz = sp.identity(grid.nz + 1, format="csr")
    wxt = _difference_matrix(grid.nx).T
    wyt = _difference_matrix(grid.ny).T
    wzt = _difference_matrix(grid.nz).T
    dx_blk = -sp.kron(iz, sp.kron(iy, wxt))
    dy_blk = -sp.kron(iz, sp.kron(wyt, ix))
    dz_blk = -sp.kron(wzt, sp.kron(iy, ix))
    return sp.hstack([dx_blk, dy_blk, dz_blk], format="csr")


def _basis_column(p, m):
    """e{p, m}: m x 1 sparse column with a 1 in (1-based) position p."""
    return sp.csr_matrix((np.ones(1), (np.array([p - 1]), np.array([0]))),
                         shape=(m, 1))


def build_boundary_L(grid):
    """Boundary collocation matrix L, nodes x hanging variables.

    Face blocks in W, E, S, N, B, T order; each column holds a single +1 at
    the node collocated with the hanging variable.
    """
    nx1, ny1, nz1 = grid.nx + 1, grid.ny + 1, grid.nz + 1
    ix = sp.identity(nx1, format="csr")
    iy = sp.identity(ny1, format="csr")
    iz = sp.identity(nz1, format="csr")
    blocks = {
        "W": sp.kron(iz, sp.kron(iy, _basis_column(1, nx1))),
        "E": sp.kron(iz, sp.kron(iy, _basis_column(nx1, nx1))),
        "S": sp.kron(iz, sp.kron(_basis_column(1, ny1), ix)),
        "N": sp.kron(iz, sp.kron(_basis_column(ny1, ny1), ix)),
        "B": sp.kron(_basis_column(1, nz1), sp.kron(iy, ix)),
        "T": sp.kron(_basis_column(nz1, nz1), sp.kron(iy, ix)),
    }
    return sp.hstack([blocks[f] for f in FACES], format="csr")


class DiscreteOperators:
    """Matrix-free operator applications plus optional sparse assembly."""

    def __init__(self, grid, potential, constants):
        if potential.values.size != grid.n_nodes:
            raise ValueError("potential does not match grid")
        self.grid = grid
        self.potential = potential
        self.constants = constants
        self.metrics = metric_diagonals(grid)

        kin = constants.kinetic_factor
        shape = grid.node_shape
        wx = boundary_weights(grid.nx + 1)
        wy = boundary_weights(grid.ny + 1)
        wz = boundary_weights(grid.nz + 1)

        # Secondary volumes and the local potential term, as 3D arrays.
        self.v3 = self.metrics.v.reshape(shape)
        self._uv3 = self.v3 * potential.values.reshape(shape)

        # Edge-flux coefficients kin * (secondary area / edge length), with
        # the transverse boundary weights baked in, shaped for broadcasting
        # against difference arrays along each axis.
        self._cx = kin * (grid.dy * grid.dz / grid.dx) \
            * wz[:, None, None] * wy[None, :, None]
        self._cy = kin * (grid.dx * grid.dz / grid.dy) \
            * wz[:, None, None] * wx[None, None, :]
        self._cz = kin * (grid.dx * grid.dy / grid.dz) \
            * wy[None, :, None] * wx[None, None, :]

        # Per-face boundary coefficients kin * sign * S''_b as 2D arrays.
        face_weights = {
            "W": grid.dy * grid.dz * wz[:, None] * wy[None, :],
            "E": grid.dy * grid.dz * wz[:, None] * wy[None, :],
            "S": grid.dx * grid.dz * wz[:, None] * wx[None, :],
            "N": grid.dx * grid.dz * wz[:, None] * wx[None, :],
            "B": grid.dx * grid.dy * wy[:, None] * wx[None, :],
            "T": grid.dx * grid.dy * wy[:, None] * wx[None, :],
        }
        self.face_coeff = {f: kin * FACE_SIGN[f] * face_weights[f]
                           for f in FACES}
        self._offsets = grid.hanging_offsets()

    # ---- hanging-variable vector layout -------------------------------

    def split_hanging(self, b):
        """Split a flat hanging-variable vector into per-face 2D arrays."""
        out = {}
        for f in FACES:
            o = self._offsets[f]
            n = self.grid.face_size(f)
            out[f] = b[o:o + n].reshape(self.grid.face_shape(f))
        return out

    def join_hanging(self, by_face):
        """Inverse of split_hanging."""
        return np.concatenate(
            [np.asarray(by_face[f], dtype=float).reshape(-1) for f in FACES])

    def zero_hanging(self):
        return np.zeros(self.grid.n_hanging)

    # ---- matrix-free applications --------------------------------------

    def apply_H(self, v):
        """H v for a flat node vector v, via stencil operations."""
        if v.size != self.grid.n_nodes:
            raise ValueError("vector length does not match node count")
        psi = v.reshape(self.grid.node_shape)
        out = self._uv3 * psi
        g = self._cx * np.diff(psi, axis=2)
        out[:, :, :-1] -= g
        out[:, :, 1:] += g
        g = self._cy * np.diff(psi, axis=1)
        out[:, :-1, :] -= g
        out[:, 1:, :] += g
        g = self._cz * np.diff(psi, axis=0)
        out[:-1, :, :] -= g
        out[1:, :, :] += g
        return out.reshape(-1)

    def apply_Hbot(self, b):
        """H_bot b: scatter hanging variables onto boundary nodes."""
        if b.size != self.grid.n_hanging:
            raise ValueError("vector length does not match hanging count")
        out = np.zeros(self.grid.node_shape)
        by_face = self.split_hanging(b)
        for f in FACES:
            out[face_node_slices(self.grid, f)] += \
                self.face_coeff[f] * by_face[f]
        return out.reshape(-1)

    def apply_Hbot_T(self, v):
        """H_bot^T v: gather boundary-node samples into hanging layout."""
        if v.size != self.grid.n_nodes:
            raise ValueError("vector length does not match node count")
        psi = v.reshape(self.grid.node_shape)
        return self.join_hanging(
            {f: self.face_coeff[f] * psi[face_node_slices(self.grid, f)]
             for f in FACES})

    def apply_sigma(self, v):
        """Sigma v with Sigma = (1/hbar) V''^{-1/2} H V''^{-1/2}."""
        vs = self._v_inv_sqrt()
        return vs * self.apply_H(vs * v) / self.constants.hbar

    def _v_inv_sqrt(self):
        if not hasattr(self, "_vis"):
            self._vis = 1.0 / np.sqrt(self.metrics.v)
        return self._vis

    # ---- sparse assembly ------------------------------------------------

    def _check_assembly_size(self):
        if self.grid.n_nodes > MAX_ASSEMBLY_NODES:
            raise ValueError(
                f"refusing to assemble operators for {self.grid.n_nodes} "
                f"nodes (limit {MAX_ASSEMBLY_NODES}); use the matrix-free "
                "path")

    def assemble_H(self):
        """Explicit sparse H (symmetric)."""
        self._check_assembly_size()
        d = build_incidence_D(self.grid)
        m = self.metrics
        kin = self.constants.kinetic_factor
        lap = d @ sp.diags(m.s / m.lprime) @ d.T
        return (kin * lap
                + sp.diags(m.v * self.potential.values)).tocsr()

    def assemble_Hbot(self):
        """Explicit sparse H_bot, nodes x hanging variables."""
        self._check_assembly_size()
        ell = build_boundary_L(self.grid)
        m = self.metrics
        kin = self.constants.kinetic_factor
        return (kin * ell @ sp.diags(m.nsign * m.sb)).tocsr()

    def assemble_P(self, dt):
        """Explicit sparse probability matrix P for a given time step."""
        if dt <= 0.0:
            raise ValueError("dt must be positive")
        self._check_assembly_size()
        h = self.assemble_H()
        vmat = sp.diags(self.metrics.v)
        c = dt / (2.0 * self.constants.hbar)
        return sp.bmat([[vmat, -c * h], [-c * h, vmat]], format="csr")

    def assemble_sigma_dense(self):
        """Dense Sigma = (1/hbar) V''^{-1/2} H V''^{-1/2} (small grids)."""
        self._check_assembly_size()
        h = self.assemble_H().toarray()
        vs = self._v_inv_sqrt()
        return (vs[:, None] * h * vs[None, :]) / self.constants.hbar


def dump_matrix_coo(matrix, path):
    """Debug dump of a sparse matrix as 'row col value' text lines.

    Indices are 1-based; values carry 17 significant digits.
    """
    coo = sp.coo_matrix(matrix)
    order = np.lexsort((coo.col, coo.row))
    with open(path, "w") as fh:
        fh.write(f"# {coo.shape[0]} {coo.shape[1]} {coo.nnz}\n")
        for r, c, val in zip(coo.row[order], coo.col[order],
                             coo.data[order]):
            fh.write(f"{r + 1} {c + 1} {val:.17g}\n")
