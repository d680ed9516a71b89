"""Benchmark scenarios with analytic solutions.

Three setups are provided:

* a particle in an infinite potential well (closed box, lowest mode),
* a Gaussian wavepacket hitting a potential step, simulated on an open
  subregion driven through prescribed boundary derivatives, and
* proton tunneling through a barrier, simulated as three coupled regions
  (reactant, barrier, product) initialized from a superposition of
  bound tunneling modes with thermal weights.

Each scenario builds the grid, potential, boundary conditions, initial
staggered state and time step, and supplies analytic reference
observables where available.
"""

from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .constants import (BOLTZMANN, ELECTRON, EV, PROTON_1DA,
                        PhysicalConstants)
from .coupling import Interface, Region, RegionGraph
from .diagnostics import total_probability
from .grid import PotentialField, RegionGrid
from .operators import DiscreteOperators
from .stability import cfl_limit
from .stepper import (DIRICHLET0, INTERFACE, NEUMANN0, PRESCRIBED,
                      BoundaryCondition, StaggeredState)


@dataclass
class PreparedRun:
    """Everything needed to drive a single-region scenario."""

    ops: DiscreteOperators
    boundary: BoundaryCondition
    state: StaggeredState
    dt: float
    n_t: int
    norm_P: Optional[float] = None
    norm_H: Optional[float] = None


# ---------------------------------------------------------------------------
# Infinite potential well
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class InfiniteWellSpec:
    """Lowest mode of a cubic box with impenetrable walls."""

    a: float = 30e-9
    n_cells: int = 30
    constants: PhysicalConstants = ELECTRON
    phase: float = np.pi / 3.0
    dt_factor: float = 0.999

    def grid(self):
        h = self.a / self.n_cells
        return RegionGrid(self.n_cells, self.n_cells, self.n_cells, h, h, h)

    def potential(self, grid):
        return PotentialField.uniform(grid)

    @property
    def ground_energy(self):
        """E_1 = 3 hbar^2 pi^2 / (2 m a^2)."""
        c = self.constants
        return 3.0 * (np.pi * c.hbar / self.a)**2 / (2.0 * c.mass)

    def time_step(self):
        grid = self.grid()
        return self.dt_factor * cfl_limit(grid, self.potential(grid),
                                          self.constants)

    def horizon(self):
        """Physical duration matching 10^4 steps at the 30-cell time step."""
        ref = InfiniteWellSpec(a=self.a, n_cells=30,
                               constants=self.constants,
                               dt_factor=self.dt_factor)
        return 10_000 * ref.time_step()

    def default_n_t(self):
        return int(round(self.horizon() / self.time_step()))


def infinite_well_sample(spec, grid, dt, t=0.0, amplitude=None):
    """Sampled analytic state (psi_R at t, psi_I at t - dt/2).

    With amplitude None the state is normalized so its discrete total
    probability equals 1.
    """
    c = spec.constants
    x, y, z = grid.node_coordinates()
    f3 = (np.sin(np.pi * x[None, None, :] / spec.a)
          * np.sin(np.pi * y[None, :, None] / spec.a)
          * np.sin(np.pi * z[:, None, None] / spec.a))
    e1 = spec.ground_energy

    def pair(amp):
        theta_r = e1 * t / c.hbar + spec.phase
        theta_i = e1 * (t - 0.5 * dt) / c.hbar + spec.phase
        return (amp * (f3 * np.cos(theta_r)).reshape(-1),
                amp * (-f3 * np.sin(theta_i)).reshape(-1))

    if amplitude is not None:
        return pair(amplitude)
    psi_r, psi_i = pair(1.0)
    ops = DiscreteOperators(grid, spec.potential(grid), c)
    p0 = total_probability(psi_r, psi_i, ops, dt)
    return pair(1.0 / np.sqrt(p0))


def prepare_infinite_well(spec, n_t=None):
    grid = spec.grid()
    dt = spec.time_step()
    ops = DiscreteOperators(grid, spec.potential(grid), spec.constants)
    psi_r, psi_i = infinite_well_sample(spec, grid, dt)
    return PreparedRun(
        ops=ops, boundary=BoundaryCondition.all_dirichlet(),
        state=StaggeredState(psiR=psi_r, psiI=psi_i), dt=dt,
        n_t=spec.default_n_t() if n_t is None else n_t,
        norm_P=1.0, norm_H=spec.ground_energy)


# ---------------------------------------------------------------------------
# Gaussian wavepacket on a potential step
# ---------------------------------------------------------------------------

class GaussianBarrierSpec:
    """Wavepacket impinging on a step; open region [0, lx] x [0, ly] x [0, lz].

    The analytic solution is a superposition over a uniform k-grid of
    plane-wave modes with reflection and transmission coefficients of the
    step at x = a; the simulated region is driven through prescribed
    x-derivative samples on the west and east faces, uniform over y and z.
    """

    def __init__(self, x0=-200e-9, lambda_bar=30e-9, u0=1.5e-3 * EV,
                 a=100e-9, lx=200e-9, ly=2e-9, lz=2e-9, cell=1e-9,
                 constants=ELECTRON, dt_factor=0.999, horizon=35e-12):
        self.x0 = x0
        self.u0 = u0
        self.a = a
        self.lx, self.ly, self.lz = lx, ly, lz
        self.cell = cell
        self.constants = constants
        self.dt_factor = dt_factor
        self.horizon = horizon

        kbar = 2.0 * np.pi / lambda_bar
        sigma = kbar / 10.0
        self.kbar, self.sigma = kbar, sigma
        # 2001 modes: [kbar - 10 sigma, kbar + 10 sigma], spacing sigma/100.
        self.k = np.linspace(kbar - 10.0 * sigma, kbar + 10.0 * sigma, 2001)
        self.amps = np.exp(-0.25 * ((self.k - kbar) / sigma)**2)
        hbar, m = constants.hbar, constants.mass
        self.omega = hbar * self.k**2 / (2.0 * m)
        self.K = np.sqrt((2.0 * m * (hbar * self.omega - u0)).astype(
            complex)) / hbar
        self.R = (self.k - self.K) / (self.k + self.K)
        self.T = 2.0 * self.k / (self.k + self.K)

    def grid(self):
        c = self.cell
        return RegionGrid(int(round(self.lx / c)), int(round(self.ly / c)),
                          int(round(self.lz / c)), c, c, c)

    def potential(self, grid):
        a, u0 = self.a, self.u0
        tol = 1e-6 * self.cell

        def fn(x, y, z):
            ux = np.where(x < a - tol, 0.0,
                          np.where(np.abs(x - a) <= tol, 0.5 * u0, u0))
            return ux + 0.0 * y + 0.0 * z

        return PotentialField.from_function(grid, fn)

    def time_step(self):
        grid = self.grid()
        return self.dt_factor * cfl_limit(grid, self.potential(grid),
                                          self.constants)

    def default_n_t(self):
        return int(round(self.horizon / self.time_step()))

    def cross_section(self):
        return self.ly * self.lz


def _barrier_eval(spec, x, t, derivative):
    """Analytic wavepacket (or its x-derivative) at positions x, time t."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    weights = spec.amps * np.exp(-1j * spec.omega * t)
    out = np.zeros(x.shape, dtype=complex)
    left = x <= spec.a
    if np.any(left):
        xl = x[left]
        inc = np.exp(1j * np.outer(xl - spec.x0, spec.k))
        ref = np.exp(1j * np.outer(2.0 * spec.a - spec.x0 - xl, spec.k))
        if derivative:
            inc = inc * (1j * spec.k)
            ref = ref * (-1j * spec.k)
        out[left] = inc @ weights + ref @ (spec.R * weights)
    right = ~left
    if np.any(right):
        xr = x[right]
        tran = np.exp(1j * np.outer(xr - spec.a, spec.K))
        if derivative:
            tran = tran * (1j * spec.K)
        coef = spec.T * np.exp(1j * spec.k * (spec.a - spec.x0))
        out[right] = tran @ (coef * weights)
    return out


def barrier_wavefunction(spec, x, t):
    """Analytic wavepacket psi(x, t) (independent of y and z)."""
    return _barrier_eval(spec, x, t, derivative=False)


def barrier_gradient_x(spec, x, t):
    """x-derivative of the analytic wavepacket."""
    return _barrier_eval(spec, x, t, derivative=True)


def barrier_sources(spec):
    """Prescribed hanging-variable sources for the west and east faces."""

    def west(face, t):
        return barrier_gradient_x(spec, 0.0, t)[0]

    def east(face, t):
        return barrier_gradient_x(spec, spec.lx, t)[0]

    return {"W": west, "E": east}


def barrier_sample(spec, grid, dt, t=0.0):
    """Sampled analytic state (psi_R at t, psi_I at t - dt/2)."""
    x, _, _ = grid.node_coordinates()
    shape = grid.node_shape
    line_r = barrier_wavefunction(spec, x, t)
    line_i = barrier_wavefunction(spec, x, t - 0.5 * dt)
    psi_r = np.broadcast_to(line_r.real[None, None, :], shape)
    psi_i = np.broadcast_to(line_i.imag[None, None, :], shape)
    return (np.ascontiguousarray(psi_r).reshape(-1),
            np.ascontiguousarray(psi_i).reshape(-1))


def _barrier_midpoints(spec, intervals):
    h = spec.lx / intervals
    return (np.arange(intervals) + 0.5) * h, h


def analytic_region_probability(spec, times, intervals=1000,
                                chunk=256):
    """Midpoint Riemann sum of |psi|^2 over the region, per time."""
    xm, h = _barrier_midpoints(spec, intervals)
    phi = _barrier_spatial_matrix(spec, xm, derivative=False)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.empty(times.shape)
    area = spec.cross_section()
    for s in range(0, times.size, chunk):
        tt = times[s:s + chunk]
        w = spec.amps[None, :] * np.exp(-1j * np.outer(tt, spec.omega))
        vals = w @ phi.T
        out[s:s + chunk] = area * h * np.sum(np.abs(vals)**2, axis=1)
    return out


def analytic_region_energy(spec, times, intervals=1000, chunk=256):
    """Midpoint Riemann sum of the energy density over the region.

    Density: (hbar^2 / 2m) |dpsi/dx|^2 + U |psi|^2 (transverse gradients
    vanish).
    """
    xm, h = _barrier_midpoints(spec, intervals)
    phi = _barrier_spatial_matrix(spec, xm, derivative=False)
    phi_g = _barrier_spatial_matrix(spec, xm, derivative=True)
    u = np.where(xm < spec.a, 0.0,
                 np.where(xm == spec.a, 0.5 * spec.u0, spec.u0))
    kin = spec.constants.kinetic_factor
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.empty(times.shape)
    area = spec.cross_section()
    for s in range(0, times.size, chunk):
        tt = times[s:s + chunk]
        w = spec.amps[None, :] * np.exp(-1j * np.outer(tt, spec.omega))
        vals = w @ phi.T
        grads = w @ phi_g.T
        dens = kin * np.abs(grads)**2 + u[None, :] * np.abs(vals)**2
        out[s:s + chunk] = area * h * np.sum(dens, axis=1)
    return out


def _barrier_spatial_matrix(spec, x, derivative):
    """Per-mode spatial factors at positions x, shape (len(x), n_modes)."""
    x = np.asarray(x, dtype=float)
    phi = np.empty((x.size, spec.k.size), dtype=complex)
    left = x <= spec.a
    xl = x[left]
    inc = np.exp(1j * np.outer(xl - spec.x0, spec.k))
    ref = np.exp(1j * np.outer(2.0 * spec.a - spec.x0 - xl, spec.k))
    if derivative:
        inc = inc * (1j * spec.k)
        ref = ref * (-1j * spec.k)
    phi[left] = inc + ref * spec.R[None, :]
    right = ~left
    xr = x[right]
    tran = np.exp(1j * np.outer(xr - spec.a, spec.K))
    if derivative:
        tran = tran * (1j * spec.K)
    phi[right] = tran * (spec.T * np.exp(
        1j * spec.k * (spec.a - spec.x0)))[None, :]
    return phi


def prepare_barrier(spec, n_t=None):
    grid = spec.grid()
    dt = spec.time_step()
    ops = DiscreteOperators(grid, spec.potential(grid), spec.constants)
    psi_r, psi_i = barrier_sample(spec, grid, dt)
    boundary = BoundaryCondition(
        kinds={"W": PRESCRIBED, "E": PRESCRIBED, "S": NEUMANN0,
               "N": NEUMANN0, "B": NEUMANN0, "T": NEUMANN0},
        sources=barrier_sources(spec))
    return PreparedRun(
        ops=ops, boundary=boundary,
        state=StaggeredState(psiR=psi_r, psiI=psi_i), dt=dt,
        n_t=spec.default_n_t() if n_t is None else n_t)


# ---------------------------------------------------------------------------
# Proton tunneling through a barrier (three coupled regions)
# ---------------------------------------------------------------------------

# Mode table: phases (units of pi), which of the four x-energies each mode
# uses, transverse wavenumber multipliers, and the barrier symmetry (even
# modes have B != 0, C = 0; odd modes B = 0, C != 0).
TUNNELING_EX_MEV = (18.858713602402805, 18.858842481348997,
                    75.369931622707597, 75.370616971460279)
TUNNELING_MODE_DELTAS = (0.15, 0.95, 0.25, 1.1, 0.0, 1.3, 0.0, 0.7)
TUNNELING_MODE_EX = (0, 1, 2, 3, 0, 1, 0, 1)
TUNNELING_MODE_KY = (1, 1, 1, 1, 2, 2, 1, 1)
TUNNELING_MODE_KZ = (1, 1, 1, 1, 1, 1, 2, 2)
TUNNELING_MODE_EVEN = (True, False, True, False, True, False, True, False)

TUNNELING_REGIONS = ("reactant", "barrier", "product")

# Barrier-region time-step limit used to fix the default barrier height.
_BARRIER_DT_CFL = 55.844895610996282e-18


@dataclass(frozen=True)
class TunnelingSpec:
    """Three-region tunneling setup and its bound-mode superposition."""

    lx_reactant: float = 1e-10
    lx_barrier: float = 0.5e-10
    lx_product: float = 1e-10
    ly: float = 1e-10
    lz: float = 0.9e-10
    cell: float = (1.0 / 30.0) * 1e-10
    temperature: float = 298.0
    constants: PhysicalConstants = PROTON_1DA
    dt_factor: float = 0.999
    u0: Optional[float] = None

    @property
    def barrier_height(self):
        """Barrier potential (J); the default inverts the closed-form
        time-step limit of the barrier region."""
        if self.u0 is not None:
            return self.u0
        c = self.constants
        kin = (2.0 * c.hbar / c.mass) * 3.0 / self.cell**2
        return c.hbar * (2.0 / _BARRIER_DT_CFL - kin)

    def region_length(self, region):
        return {"reactant": self.lx_reactant, "barrier": self.lx_barrier,
                "product": self.lx_product}[region]

    def region_grid(self, region):
        c = self.cell
        return RegionGrid(int(round(self.region_length(region) / c)),
                          int(round(self.ly / c)),
                          int(round(self.lz / c)), c, c, c)

    def region_potential(self, region, grid):
        value = self.barrier_height if region == "barrier" else 0.0
        return PotentialField.uniform(grid, value)

    def time_step(self):
        grid = self.region_grid("barrier")
        return self.dt_factor * cfl_limit(
            grid, self.region_potential("barrier", grid), self.constants)


@dataclass(frozen=True)
class TunnelingMode:
    """One bound mode of the superposition."""

    index: int
    e_x: float
    k_x: float
    kappa_x: float
    coef_a: float
    coef_b: float
    coef_c: float
    coef_d: float
    k_y: float
    k_z: float
    energy: float
    weight: complex


def _matching_residual(spec, e_x, even):
    """Zero when e_x satisfies the interface matching condition."""
    c = spec.constants
    if not spec.lx_reactant == spec.lx_product:
        raise ValueError("matching condition assumes equal outer lengths")
    l = spec.lx_reactant
    w = spec.lx_barrier
    k = np.sqrt(2.0 * c.mass * e_x) / c.hbar
    kap = np.sqrt(2.0 * c.mass * (spec.barrier_height - e_x)) / c.hbar
    cot = np.cos(k * l) / np.sin(k * l)
    hyp = np.tanh(0.5 * kap * w) if even else 1.0 / np.tanh(0.5 * kap * w)
    return k * cot + kap * hyp


def tunneling_mode_energies(spec, bracket_rel=5e-3):
    """The four x-energies (J), root-solved near the tabulated values."""
    out = []
    for i, e_mev in enumerate(TUNNELING_EX_MEV):
        even = (i % 2 == 0)
        e0 = e_mev * 1e-3 * EV
        lo, hi = e0 * (1.0 - bracket_rel), e0 * (1.0 + bracket_rel)
        f_lo = _matching_residual(spec, lo, even)
        f_hi = _matching_residual(spec, hi, even)
        if f_lo * f_hi > 0.0:
            raise ValueError(
                f"no sign change in bracket for x-energy {i + 1}; "
                "geometry inconsistent with the tabulated values")
        out.append(brentq(lambda e: _matching_residual(spec, e, even),
                          lo, hi, xtol=1e-30, rtol=1e-15))
    return np.array(out)


def tunneling_modes(spec):
    """All 8 modes with matched, x-normalized coefficients and weights."""
    c = spec.constants
    e_x4 = tunneling_mode_energies(spec)
    l = spec.lx_reactant
    w = spec.lx_barrier
    modes = []
    for m in range(8):
        e_x = e_x4[TUNNELING_MODE_EX[m]]
        even = TUNNELING_MODE_EVEN[m]
        k = np.sqrt(2.0 * c.mass * e_x) / c.hbar
        kap = np.sqrt(2.0 * c.mass * (spec.barrier_height - e_x)) / c.hbar
        if even:
            b_c, c_c = 1.0, 0.0
            a_c = np.cosh(0.5 * kap * w) / np.sin(k * l)
            d_c = -a_c
            bar_sq = 0.5 * w + np.sinh(kap * w) / (2.0 * kap)
        else:
            b_c, c_c = 0.0, 1.0
            a_c = -np.sinh(0.5 * kap * w) / np.sin(k * l)
            d_c = a_c
            bar_sq = -0.5 * w + np.sinh(kap * w) / (2.0 * kap)
        outer_sq = 0.5 * l - np.sin(2.0 * k * l) / (4.0 * k)
        norm = np.sqrt(a_c**2 * outer_sq + bar_sq + d_c**2 * outer_sq)
        a_c, b_c, c_c, d_c = (v / norm for v in (a_c, b_c, c_c, d_c))

        k_y = TUNNELING_MODE_KY[m] * np.pi / spec.ly
        k_z = TUNNELING_MODE_KZ[m] * np.pi / spec.lz
        e_y = (c.hbar * k_y)**2 / (2.0 * c.mass)
        e_z = (c.hbar * k_z)**2 / (2.0 * c.mass)
        energy = e_x + e_y + e_z
        delta = TUNNELING_MODE_DELTAS[m] * np.pi
        weight = np.exp(-energy / (2.0 * spec.temperature * BOLTZMANN)
                        + 1j * delta)
        modes.append(TunnelingMode(
            index=m + 1, e_x=e_x, k_x=k, kappa_x=kap,
            coef_a=a_c, coef_b=b_c, coef_c=c_c, coef_d=d_c,
            k_y=k_y, k_z=k_z, energy=energy, weight=weight))
    scale = 1.0 / np.sqrt(sum(abs(md.weight)**2 for md in modes))
    return [replace(md, weight=md.weight * scale) for md in modes]


def tunneling_mode_fx(spec, mode, region, x):
    """Per-region x-profile of a mode; x is local to the region."""
    x = np.asarray(x, dtype=float)
    if region == "reactant":
        return mode.coef_a * np.sin(mode.k_x * x)
    if region == "barrier":
        arg = mode.kappa_x * (x - 0.5 * spec.lx_barrier)
        return mode.coef_b * np.cosh(arg) + mode.coef_c * np.sinh(arg)
    if region == "product":
        return mode.coef_d * np.sin(mode.k_x * (x - spec.lx_product))
    raise ValueError(f"unknown region {region!r}")


def tunneling_mode_dfx(spec, mode, region, x):
    """x-derivative of a mode's per-region profile; x local to the region."""
    x = np.asarray(x, dtype=float)
    if region == "reactant":
        return mode.coef_a * mode.k_x * np.cos(mode.k_x * x)
    if region == "barrier":
        arg = mode.kappa_x * (x - 0.5 * spec.lx_barrier)
        return mode.kappa_x * (mode.coef_b * np.sinh(arg)
                               + mode.coef_c * np.cosh(arg))
    if region == "product":
        return mode.coef_d * mode.k_x * np.cos(mode.k_x * (x - spec.lx_product))
    raise ValueError(f"unknown region {region!r}")


def analytic_total_energy(spec, modes=None):
    """Thermally weighted mean mode energy (J)."""
    if modes is None:
        modes = tunneling_modes(spec)
    wsum = sum(abs(md.weight)**2 for md in modes)
    return sum(abs(md.weight)**2 * md.energy for md in modes) / wsum


def shortest_mode_period(spec, modes=None):
    """Period of the fastest mode, 2 pi hbar / max E."""
    if modes is None:
        modes = tunneling_modes(spec)
    return 2.0 * np.pi * spec.constants.hbar / max(md.energy
                                                   for md in modes)


def tunneling_sample(spec, region, grid, dt, t=0.0, modes=None,
                     amplitude=1.0):
    """Sampled analytic state of one region (psi_R at t, psi_I at t - dt/2)."""
    if modes is None:
        modes = tunneling_modes(spec)
    c = spec.constants
    x, y, z = grid.node_coordinates()
    gy_base = np.sqrt(2.0 / spec.ly)
    gz_base = np.sqrt(2.0 / spec.lz)
    psi_r = np.zeros(grid.node_shape)
    psi_i = np.zeros(grid.node_shape)
    for md in modes:
        fx = tunneling_mode_fx(spec, md, region, x)
        gy = gy_base * np.sin(md.k_y * y)
        hz = gz_base * np.sin(md.k_z * z)
        shape3 = fx[None, None, :] * gy[None, :, None] * hz[:, None, None]
        w_r = md.weight * np.exp(-1j * md.energy * t / c.hbar)
        w_i = md.weight * np.exp(-1j * md.energy * (t - 0.5 * dt) / c.hbar)
        psi_r += shape3 * w_r.real
        psi_i += shape3 * w_i.imag
    return (amplitude * psi_r.reshape(-1), amplitude * psi_i.reshape(-1))


def _tunneling_boundary(region):
    kinds = {f: DIRICHLET0 for f in ("S", "N", "B", "T")}
    if region == "reactant":
        kinds.update({"W": DIRICHLET0, "E": INTERFACE})
    elif region == "barrier":
        kinds.update({"W": INTERFACE, "E": INTERFACE})
    else:
        kinds.update({"W": INTERFACE, "E": DIRICHLET0})
    return BoundaryCondition(kinds)


def build_tunneling_graph(spec, t=0.0, modes=None):
    """Three-region graph with the normalized sampled initial state.

    Returns (graph, dt).  The state is scaled so that the summed discrete
    probability over the regions equals 1 at the initial step.
    """
    if modes is None:
        modes = tunneling_modes(spec)
    dt = spec.time_step()
    ops, samples = {}, {}
    for region in TUNNELING_REGIONS:
        grid = spec.region_grid(region)
        ops[region] = DiscreteOperators(
            grid, spec.region_potential(region, grid), spec.constants)
        samples[region] = tunneling_sample(spec, region, grid, dt, t=t,
                                           modes=modes)
    total = sum(total_probability(samples[r][0], samples[r][1],
                                  ops[r], dt)
                for r in TUNNELING_REGIONS)
    amp = 1.0 / np.sqrt(total)
    regions = []
    for region in TUNNELING_REGIONS:
        psi_r, psi_i = samples[region]
        regions.append(Region(
            name=region, ops=ops[region],
            boundary=_tunneling_boundary(region),
            state=StaggeredState(psiR=amp * psi_r, psiI=amp * psi_i)))
    interfaces = [Interface("reactant", "E", "barrier", "W"),
                  Interface("barrier", "E", "product", "W")]
    return RegionGraph(regions, interfaces), dt
