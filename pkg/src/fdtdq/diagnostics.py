"""Quadratic-form observables and their conservation-balance residuals.

Probability and energy are evaluated from the staggered state,

    P^n = psiR^T V'' psiR + psiI^T V'' psiI - (dt/hbar) psiI^T H psiR
    H^n = psiR^T H psiR + psiI^T H psiI
          + (hbar/dt) (psiR^n - psiR^{n-1})^T V'' (psiI^{n+1/2}
                                                   - psiI^{n-1/2})

with psiI meaning psi_I^{n-1/2}.  The "simple" variants drop the staggered
correction terms; they do not satisfy the discrete balance identities.
The boundary flux observables are the probability current I_P^{n+1/2} and
the supplied power s^{n+1/2}; the balances read

    (P^{n+1} - P^n)/dt = -I_P^{n+1/2},      (H^{n+1} - H^n)/dt = s^{n+1/2}.

All reductions are plain numpy sums (pairwise, fixed order) so repeated
runs produce identical digits.
"""

import csv as _csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .grid import FACES, face_node_slices

CSV_COLUMNS = ("n", "t_seconds", "P", "P_simple",
               "I_P_total", "I_P_W", "I_P_E", "I_P_S", "I_P_N", "I_P_B",
               "I_P_T", "H", "H_simple", "s", "residual_P", "residual_H")


def _dot(a, b):
    """Deterministic inner product (pairwise summation)."""
    return float(np.sum(a * b))


def total_probability(psiR, psiI, ops, dt, h_psiR=None):
    """P^n for the staggered pair (psi_R^n, psi_I^{n-1/2})."""
    if h_psiR is None:
        h_psiR = ops.apply_H(psiR)
    v = ops.metrics.v
    return (_dot(psiR, v * psiR) + _dot(psiI, v * psiI)
            - (dt / ops.constants.hbar) * _dot(psiI, h_psiR))


def probability_simple(psiR, psiI, ops):
    """Direct discretization of the probability integral."""
    v = ops.metrics.v
    return _dot(psiR, v * psiR) + _dot(psiI, v * psiI)


def energy_simple(psiR, psiI, ops, h_psiR=None, h_psiI=None):
    """Direct discretization of the energy integral."""
    if h_psiR is None:
        h_psiR = ops.apply_H(psiR)
    if h_psiI is None:
        h_psiI = ops.apply_H(psiI)
    return _dot(psiR, h_psiR) + _dot(psiI, h_psiI)


def total_energy(psiR, psiR_prev, psiI, psiI_next, ops, dt,
                 h_psiR=None, h_psiI=None):
    """H^n; psiI/psiI_next are psi_I^{n-1/2} and psi_I^{n+1/2}."""
    simple = energy_simple(psiR, psiI, ops, h_psiR=h_psiR, h_psiI=h_psiI)
    v = ops.metrics.v
    corr = (ops.constants.hbar / dt) * _dot(psiR - psiR_prev,
                                            v * (psiI_next - psiI))
    return simple + corr


def probability_current_by_face(ops, psiR_avg, psiI_avg, grad_r, grad_i):
    """Per-face probability current I_P^{n+1/2}; returns dict face -> value.

    psiR_avg = (psi_R^{n+1} + psi_R^n)/2, psiI_avg likewise for the
    imaginary half steps; grad_r and grad_i are the hanging vectors at n
    and n+1/2.
    """
    grid = ops.grid
    r3 = psiR_avg.reshape(grid.node_shape)
    i3 = psiI_avg.reshape(grid.node_shape)
    gr = ops.split_hanging(grad_r)
    gi = ops.split_hanging(grad_i)
    two_over_hbar = 2.0 / ops.constants.hbar
    out = {}
    for f in FACES:
        sl = face_node_slices(grid, f)
        coeff = ops.face_coeff[f]
        out[f] = two_over_hbar * float(
            np.sum(coeff * (r3[sl] * gi[f] - i3[sl] * gr[f])))
    return out


def supplied_power(ops, dpsiR, dpsiI, grad_r_avg, grad_i_avg, dt):
    """s^{n+1/2} from the step differences and time-averaged boundary data.

    dpsiR = psi_R^{n+1} - psi_R^n, dpsiI = psi_I^{n+1/2} - psi_I^{n-1/2};
    grad_r_avg = (gradR^{n+1} + gradR^n)/2 and similarly for grad_i_avg.
    """
    return (2.0 / dt) * (_dot(dpsiR, ops.apply_Hbot(grad_r_avg))
                         + _dot(dpsiI, ops.apply_Hbot(grad_i_avg)))


def energy_lower_bound(ops, dt, p_max, lambda_min=None):
    """A priori lower bound on H^n given the peak probability p_max."""
    if lambda_min is None:
        from .stability import lambda_min_P
        lambda_min = lambda_min_P(ops, dt)
    grid = ops.grid
    u_min = min(ops.potential.min, 0.0)
    hbar = ops.constants.hbar
    return grid.cell_volume * (p_max / lambda_min) * (u_min - 4.0 * hbar / dt)


@dataclass
class DiagnosticsSeries:
    """Per-step observables of a run.

    P and P_simple are defined for n = 0..n_t; H and H_simple for
    n = 1..n_t-1; I_P (total and per face) for half steps n+1/2 with
    n = 0..n_t-1; s for n = 1..n_t-2.  Entries outside the validity
    windows are NaN.
    """

    dt: float
    n_t: int
    P: np.ndarray
    P_simple: np.ndarray
    H: np.ndarray
    H_simple: np.ndarray
    I_P: np.ndarray            # shape (n_t,), total
    I_P_faces: np.ndarray      # shape (n_t, 6), order W E S N B T
    s: np.ndarray              # shape (n_t,), index n means s^{n+1/2}
    steps_completed: int = 0
    residual_P: Optional[np.ndarray] = None
    residual_H: Optional[np.ndarray] = None

    def compute_residuals(self, norm_P=None, norm_H=None):
        """Balance residuals of the summed-flux identities.

        residual_P[n] = (P^n - P^0 + dt * sum_{n'<n} I_P^{n'+1/2}) / norm_P
        residual_H[n] = (H^n - H^1 - dt * sum_{1<=n'<n} s^{n'+1/2}) / norm_H

        Norms default to the peak |P| and |H| of the run; scenarios pass
        their analytic maxima instead.
        """
        m = self.steps_completed
        res_p = np.full(self.P.shape, np.nan)
        if m >= 0:
            flux = np.concatenate([[0.0], np.cumsum(self.I_P[:m])])
            res_p[:m + 1] = self.P[:m + 1] - self.P[0] + self.dt * flux
        if norm_P is None:
            with np.errstate(invalid="ignore"):
                norm_P = np.nanmax(np.abs(self.P)) or 1.0
        res_p /= norm_P

        res_h = np.full(self.H.shape, np.nan)
        valid_h = min(m, self.n_t - 1)
        if valid_h >= 1:
            acc = 0.0
            res_h[1] = 0.0
            for n in range(2, valid_h + 1):
                acc += self.s[n - 1]
                res_h[n] = self.H[n] - self.H[1] - self.dt * acc
        if norm_H is None:
            with np.errstate(invalid="ignore"):
                norm_H = np.nanmax(np.abs(self.H))
                if not np.isfinite(norm_H) or norm_H == 0.0:
                    norm_H = 1.0
        res_h /= norm_H

        self.residual_P = res_p
        self.residual_H = res_h
        return res_p, res_h

    def times(self):
        return self.dt * np.arange(self.n_t + 1)

    def write_csv(self, path, stride=1):
        """One row per recorded step; 17 significant digits; fields outside
        their validity window are left empty."""
        if stride < 1:
            raise ValueError("stride must be >= 1")
        res_p = self.residual_P
        res_h = self.residual_H

        def fmt(value):
            if value is None or not np.isfinite(value):
                return ""
            return f"{value:.17g}"

        with open(path, "w", newline="") as fh:
            writer = _csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            if self.n_t == 0:
                return
            for n in range(0, self.steps_completed + 1, stride):
                half = self.I_P[n] if n < self.steps_completed else np.nan
                faces = (self.I_P_faces[n]
                         if n < self.steps_completed else [np.nan] * 6)
                row = [str(n), fmt(n * self.dt), fmt(self.P[n]),
                       fmt(self.P_simple[n]), fmt(half)]
                row += [fmt(x) for x in faces]
                h_n = self.H[n] if n < self.H.size else np.nan
                hs_n = self.H_simple[n] if n < self.H_simple.size else np.nan
                row += [fmt(h_n), fmt(hs_n),
                        fmt(self.s[n] if n < self.s.size else np.nan),
                        fmt(res_p[n] if res_p is not None
                            and n < res_p.size else None),
                        fmt(res_h[n] if res_h is not None
                            and n < res_h.size else None)]
                writer.writerow(row)


class SeriesBuilder:
    """Accumulates a DiagnosticsSeries from step windows, in step order."""

    def __init__(self, ops, dt, n_t):
        self.ops = ops
        self.dt = dt
        self.n_t = n_t
        self.P = np.full(n_t + 1, np.nan)
        self.P_simple = np.full(n_t + 1, np.nan)
        self.H = np.full(max(n_t, 1), np.nan)
        self.H_simple = np.full(max(n_t, 1), np.nan)
        self.I_P = np.full(max(n_t, 1), np.nan)
        self.I_P_faces = np.full((max(n_t, 1), 6), np.nan)
        self.s = np.full(max(n_t, 1), np.nan)
        self._prev = None        # previous window
        self._prev_h_psiI = None  # H psi_I^{n-1/2} for the current window
        self._steps = 0

    def record(self, window):
        ops = self.ops
        dt = self.dt
        n = window.n
        v = ops.metrics.v

        self.P[n] = total_probability(window.psiR_n, window.psiI_nm, ops,
                                      dt, h_psiR=window.h_psiR_n)
        self.P_simple[n] = probability_simple(window.psiR_n, window.psiI_nm,
                                              ops)

        avg_r = 0.5 * (window.psiR_np1 + window.psiR_n)
        avg_i = 0.5 * (window.psiI_np + window.psiI_nm)
        by_face = probability_current_by_face(
            ops, avg_r, avg_i, window.gradR_n, window.gradI_np)
        self.I_P_faces[n] = [by_face[f] for f in FACES]
        self.I_P[n] = float(sum(by_face[f] for f in FACES))

        prev = self._prev
        if prev is not None:
            # Energy at step n (needs psi_R^{n-1} and H psi_I^{n-1/2}).
            h_psiI_nm = prev.h_psiI_np
            simple = _dot(window.psiR_n, window.h_psiR_n) \
                + _dot(window.psiI_nm, h_psiI_nm)
            corr = (ops.constants.hbar / dt) * _dot(
                window.psiR_n - prev.psiR_n,
                v * (window.psiI_np - window.psiI_nm))
            if n < max(self.n_t, 1):
                self.H[n] = simple + corr
                self.H_simple[n] = simple
            # Supplied power at n - 1/2 ... s^{(n-1)+1/2} needs this
            # window's gradR^n; valid once gradI^{n-3/2} exists.
            m = n - 1
            if m >= 1 and prev.n == m and self._prevprev_gradI is not None:
                grad_r_avg = 0.5 * (window.gradR_n + prev.gradR_n)
                grad_i_avg = 0.5 * (prev.gradI_np + self._prevprev_gradI)
                self.s[m] = supplied_power(
                    ops, prev.psiR_np1 - prev.psiR_n,
                    prev.psiI_np - prev.psiI_nm,
                    grad_r_avg, grad_i_avg, dt)
        self._prevprev_gradI = prev.gradI_np if prev is not None else None
        self._prev = window
        self._steps = n + 1

    _prevprev_gradI = None

    def finish(self, final_state):
        """Close the series, evaluating the final-step probability."""
        m = self._steps
        if m > 0 and m <= self.n_t:
            h_r = self.ops.apply_H(final_state.psiR)
            self.P[m] = total_probability(
                final_state.psiR, final_state.psiI, self.ops, self.dt,
                h_psiR=h_r)
            self.P_simple[m] = probability_simple(
                final_state.psiR, final_state.psiI, self.ops)
        elif m == 0:
            h_r = self.ops.apply_H(final_state.psiR)
            self.P[0] = total_probability(
                final_state.psiR, final_state.psiI, self.ops, self.dt,
                h_psiR=h_r)
            self.P_simple[0] = probability_simple(
                final_state.psiR, final_state.psiI, self.ops)
        return DiagnosticsSeries(
            dt=self.dt, n_t=self.n_t, P=self.P, P_simple=self.P_simple,
            H=self.H, H_simple=self.H_simple, I_P=self.I_P,
            I_P_faces=self.I_P_faces, s=self.s, steps_completed=m)
