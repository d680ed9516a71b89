"""Time-step limits and spectral analysis of the scheme.

The conventional limit is the closed form

    dt_CFL = 2 / ((2 hbar / m)(1/dx^2 + 1/dy^2 + 1/dz^2) + max|U| / hbar)

and the exact positive-definiteness threshold of the probability matrix is
the generalized limit

    dt_CFL,gen = 2 / rho(Sigma),   Sigma = (1/hbar) V''^{-1/2} H V''^{-1/2}.

rho(Sigma) comes from a dense symmetric eigensolve on small grids and from
matrix-free Lanczos iteration on large ones; a deterministic power
iteration is kept alongside as an independent cross-check.  The per-cell
decomposition bounds dt_CFL <= min over cells of dt_CFL,gen(cell)
<= dt_CFL,gen, with a closed form for the single-cell spectrum under a
uniform potential.
"""

import json
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .constants import PhysicalConstants
from .grid import PotentialField, RegionGrid
from .operators import DiscreteOperators

DENSE_EIG_MAX_NODES = 4096


class StabilityError(RuntimeError):
    """Raised when an iterative eigenvalue estimate fails to converge."""

    def __init__(self, message, last_vector=None, last_estimate=None,
                 residual=None):
        super().__init__(message)
        self.last_vector = last_vector
        self.last_estimate = last_estimate
        self.residual = residual


def cfl_limit(grid, potential, constants):
    """Closed-form conventional time-step limit (seconds)."""
    hbar = constants.hbar
    kin = (2.0 * hbar / constants.mass) * (
        1.0 / grid.dx**2 + 1.0 / grid.dy**2 + 1.0 / grid.dz**2)
    return 2.0 / (kin + potential.max_abs / hbar)


def _lcg_start_vector(n, seed):
    """Deterministic start vector from a 64-bit linear congruential run."""
    state = np.uint64(seed)
    mult = np.uint64(6364136223846793005)
    inc = np.uint64(1442695040888963407)
    out = np.empty(n)
    with np.errstate(over="ignore"):
        for i in range(n):
            state = state * mult + inc
            out[i] = float(state) / 2.0**64 - 0.5
    norm = np.linalg.norm(out)
    return out / norm


def _grid_seed(grid, salt=0):
    return (1 + grid.nx + 1009 * grid.ny + 1009 * 1009 * grid.nz
            + 7919 * salt)


def power_iteration(apply_op, n, seed, tol=1e-13, max_iter=100_000):
    """Largest-magnitude eigenvalue of a symmetric operator.

    Converges when successive Rayleigh-quotient magnitudes agree to tol
    relative.  If the quotient keeps flipping sign (near-degenerate +/-
    pair), iteration switches to the squared operator.  Returns |lambda|.
    """
    v = _lcg_start_vector(n, seed)
    rq_prev = None
    flips = 0
    squared = False
    for it in range(max_iter):
        w = apply_op(v)
        if squared:
            w = apply_op(w)
        rq = float(v @ w)
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        v = w / norm
        if rq_prev is not None:
            if abs(abs(rq) - abs(rq_prev)) < tol * max(abs(rq), 1e-300):
                if not squared and rq * rq_prev < 0.0:
                    pass  # still oscillating, keep going
                else:
                    mag = abs(rq)
                    return float(np.sqrt(mag)) if squared else mag
            if not squared and rq * rq_prev < 0.0:
                flips += 1
                if flips > 50:
                    squared = True
                    rq_prev = None
                    continue
        rq_prev = rq
    raise StabilityError(
        f"power iteration did not converge in {max_iter} iterations",
        last_vector=v, last_estimate=rq_prev,
        residual=abs(abs(rq) - abs(rq_prev)) if rq_prev is not None else None)


def spectral_radius_power(ops, tol=1e-13, max_iter=100_000):
    """rho(Sigma) by deterministic power iteration; retries a second seed."""
    n = ops.grid.n_nodes
    try:
        return power_iteration(ops.apply_sigma, n, _grid_seed(ops.grid),
                               tol=tol, max_iter=max_iter)
    except StabilityError:
        return power_iteration(ops.apply_sigma, n,
                               _grid_seed(ops.grid, salt=1),
                               tol=tol, max_iter=max_iter)


def spectral_radius(ops, method="auto"):
    """rho(Sigma), the spectral radius of the symmetrized Hamiltonian.

    method "dense" forces a full symmetric eigensolve, "lanczos" the
    matrix-free route, "power" the power-iteration cross-check; "auto"
    picks dense up to 4096 nodes and Lanczos beyond.
    """
    n = ops.grid.n_nodes
    if method == "auto":
        method = "dense" if n <= DENSE_EIG_MAX_NODES else "lanczos"
    if method == "dense":
        vals = np.linalg.eigvalsh(ops.assemble_sigma_dense())
        return float(np.max(np.abs(vals)))
    if method == "power":
        return spectral_radius_power(ops)
    if method == "lanczos":
        op = spla.LinearOperator((n, n), matvec=ops.apply_sigma,
                                 dtype=float)
        v0 = _lcg_start_vector(n, _grid_seed(ops.grid))
        vals = spla.eigsh(op, k=1, which="LM", v0=v0, tol=0,
                          maxiter=100 * n, return_eigenvectors=False)
        return float(np.abs(vals[0]))
    raise ValueError(f"unknown method {method!r}")


def cfl_gen_limit(ops, method="auto"):
    """Generalized time-step limit 2 / rho(Sigma)."""
    return 2.0 / spectral_radius(ops, method=method)


def single_cell_sigma_eigvals(dx, dy, dz, u, constants):
    """Closed-form eigenvalues of Sigma for one cell with uniform U.

    Returns the 8 eigenvalues in ascending order of their kinetic part.
    """
    u = np.asarray(u, dtype=float)
    if u.ndim != 0:
        if not np.all(u == u.flat[0]):
            raise ValueError("closed form requires a uniform potential; "
                             "use the numeric per-cell path")
        u = u.flat[0]
    two_over = 2.0 * constants.hbar / constants.mass
    ax, ay, az = 1.0 / dx**2, 1.0 / dy**2, 1.0 / dz**2
    kinetic = two_over * np.array(
        [0.0, ax, ay, az, ay + az, ax + az, ax + ay, ax + ay + az])
    return kinetic + float(u) / constants.hbar


def _cell_kinetic_sigma(grid, constants):
    """Dense 8x8 kinetic part of Sigma for a single primary cell."""
    cell = RegionGrid(1, 1, 1, grid.dx, grid.dy, grid.dz)
    ops = DiscreteOperators(cell, PotentialField.uniform(cell), constants)
    return ops.assemble_sigma_dense()


def per_cell_cfl_gen(grid, potential, constants):
    """Generalized limit per primary cell; returns (min, 3D table).

    Each cell's Sigma is its single-cell kinetic matrix plus the diagonal
    of the cell-corner potential samples over hbar; the per-cell limit is
    2/rho of that 8x8 matrix.
    """
    kin = _cell_kinetic_sigma(grid, constants)
    u3 = potential.as_3d()
    ncells = grid.nx * grid.ny * grid.nz
    corners = np.empty((ncells, 8))
    for m in range(8):
        di, dj, dk = m & 1, (m >> 1) & 1, m >> 2
        corners[:, m] = u3[dk:dk + grid.nz, dj:dj + grid.ny,
                           di:di + grid.nx].reshape(-1)
    mats = np.broadcast_to(kin, (ncells, 8, 8)).copy()
    idx = np.arange(8)
    mats[:, idx, idx] += corners / constants.hbar
    vals = np.linalg.eigvalsh(mats)
    rho = np.max(np.abs(vals), axis=1)
    table = (2.0 / rho).reshape(grid.nz, grid.ny, grid.nx)
    return float(table.min()), table


def _block_extreme(ops, c, sign, which):
    """Extreme eigenvalue of V'' + sign * c * H (sign in {-1, +1})."""
    n = ops.grid.n_nodes
    if n <= DENSE_EIG_MAX_NODES:
        h = ops.assemble_H().toarray()
        mat = np.diag(ops.metrics.v) + sign * c * h
        vals = np.linalg.eigvalsh(mat)
        return float(vals[0] if which == "SA" else vals[-1])
    v = ops.metrics.v

    def matvec(x):
        return v * x + sign * c * ops.apply_H(x)

    op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
    v0 = _lcg_start_vector(n, _grid_seed(ops.grid, salt=2))
    vals = spla.eigsh(op, k=1, which=which, v0=v0, tol=0,
                      maxiter=200 * n, return_eigenvectors=False)
    return float(vals[0])


def lambda_min_P(ops, dt):
    """Smallest eigenvalue of the 2N x 2N probability matrix.

    Uses the orthogonal block-diagonalization P ~ diag(V'' - cH, V'' + cH)
    with c = dt / (2 hbar), reducing the problem to two N x N eigensolves.
    """
    if dt <= 0.0:
        raise ValueError("dt must be positive")
    c = dt / (2.0 * ops.constants.hbar)
    return min(_block_extreme(ops, c, -1.0, "SA"),
               _block_extreme(ops, c, +1.0, "SA"))


def kappa_P(ops, dt):
    """Condition number of the probability matrix (requires lambda_min > 0)."""
    c = dt / (2.0 * ops.constants.hbar)
    lo = min(_block_extreme(ops, c, -1.0, "SA"),
             _block_extreme(ops, c, +1.0, "SA"))
    hi = max(_block_extreme(ops, c, -1.0, "LA"),
             _block_extreme(ops, c, +1.0, "LA"))
    if lo <= 0.0:
        raise StabilityError(
            "probability matrix is not positive definite at this dt",
            last_estimate=lo)
    return hi / lo


@dataclass
class StabilityReport:
    """Time-step limits, spectral quantities and ordering verdicts."""

    dt: float
    dt_cfl: float
    dt_cfl_gen: float
    per_cell_min_dt_cfl_gen: float
    rho_sigma: float
    lambda_min_P: float
    kappa_P: float
    dt_below_cfl: bool
    dt_below_cfl_gen: bool
    P_positive_definite: bool
    ordering_holds: bool
    ordering_margin: float

    def as_dict(self):
        return {
            "dt_seconds": self.dt,
            "dt_cfl_seconds": self.dt_cfl,
            "dt_cfl_gen_seconds": self.dt_cfl_gen,
            "per_cell_min_dt_cfl_gen_seconds": self.per_cell_min_dt_cfl_gen,
            "rho_sigma_per_second": self.rho_sigma,
            "lambda_min_P": self.lambda_min_P,
            "kappa_P": self.kappa_P,
            "dt_below_cfl": self.dt_below_cfl,
            "dt_below_cfl_gen": self.dt_below_cfl_gen,
            "P_positive_definite": self.P_positive_definite,
            "ordering_holds": self.ordering_holds,
            "ordering_margin": self.ordering_margin,
        }

    def as_json(self):
        return json.dumps(self.as_dict(), indent=2)

    def as_text(self):
        rows = [
            ("dt", f"{self.dt:.17g} s"),
            ("dt_CFL", f"{self.dt_cfl:.17g} s"),
            ("dt_CFL,gen", f"{self.dt_cfl_gen:.17g} s"),
            ("per-cell min dt_CFL,gen",
             f"{self.per_cell_min_dt_cfl_gen:.17g} s"),
            ("rho(Sigma)", f"{self.rho_sigma:.17g} 1/s"),
            ("lambda_min(P)", f"{self.lambda_min_P:.17g}"),
            ("kappa(P)", f"{self.kappa_P:.17g}"
             if np.isfinite(self.kappa_P) else "undefined"),
            ("dt < dt_CFL", str(self.dt_below_cfl)),
            ("dt < dt_CFL,gen", str(self.dt_below_cfl_gen)),
            ("P positive definite", str(self.P_positive_definite)),
            ("ordering dt_CFL <= per-cell <= dt_CFL,gen",
             str(self.ordering_holds)),
            ("ordering margin (relative)", f"{self.ordering_margin:.3e}"),
        ]
        width = max(len(label) for label, _ in rows)
        return "\n".join(f"{label:<{width}}  {value}"
                         for label, value in rows)


def check_theorems(grid, potential, constants, dt):
    """Evaluate all limits and orderings for one region configuration."""
    ops = DiscreteOperators(grid, potential, constants)
    dt_cfl = cfl_limit(grid, potential, constants)
    rho = spectral_radius(ops)
    dt_gen = 2.0 / rho
    cell_min, _ = per_cell_cfl_gen(grid, potential, constants)
    lam = lambda_min_P(ops, dt)
    try:
        kappa = kappa_P(ops, dt)
    except StabilityError:
        kappa = float("inf")
    rel = 1e-12
    margin = min(cell_min - dt_cfl, dt_gen - cell_min) / dt_gen
    return StabilityReport(
        dt=dt, dt_cfl=dt_cfl, dt_cfl_gen=dt_gen,
        per_cell_min_dt_cfl_gen=cell_min, rho_sigma=rho,
        lambda_min_P=lam, kappa_P=kappa,
        dt_below_cfl=dt < dt_cfl, dt_below_cfl_gen=dt < dt_gen,
        P_positive_definite=lam > 0.0,
        ordering_holds=(dt_cfl <= cell_min * (1.0 + rel)
                        and cell_min <= dt_gen * (1.0 + rel)),
        ordering_margin=margin)
